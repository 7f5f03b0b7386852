from django.core.management.base import BaseCommand

from cli.services.errors import federation_errors
from cli.services.runs import join


class Command(BaseCommand):
    help = "Join a running federation server as one client"

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True)
        parser.add_argument("--client-id", type=int, default=None, help="Requested client id")

    def handle(self, *args, **options):
        with federation_errors():
            trained = join(options["config"], options["client_id"])
        self.stdout.write(f"Trained {trained} rounds")
