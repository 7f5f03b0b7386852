from django.core.management.base import BaseCommand

from cli.services.errors import federation_errors
from cli.services.runs import serve


class Command(BaseCommand):
    help = "Run the federation server for a networked deployment"

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True)
        parser.add_argument("--out", default=".")

    def handle(self, *args, **options):
        with federation_errors():
            result = serve(options["config"], options["out"])
        self.stdout.write(f"Finished {result.rounds} rounds; outputs in {options['out']}")
