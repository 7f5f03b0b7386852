from django.core.management.base import BaseCommand

from cli.services.errors import federation_errors
from cli.services.runs import inspect


class Command(BaseCommand):
    help = "Check a metrics file; --summary prints final accuracy figures"

    def add_arguments(self, parser):
        parser.add_argument("--metrics", required=True)
        parser.add_argument("--summary", action="store_true")

    def handle(self, *args, **options):
        with federation_errors():
            self.stdout.write(inspect(options["metrics"], options["summary"]))
