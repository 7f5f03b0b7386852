from django.core.management.base import BaseCommand

from cli.services.errors import federation_errors
from cli.services.runs import export


class Command(BaseCommand):
    help = "Write each client's data shard as an FLDS file"

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True)
        parser.add_argument("--out", required=True)

    def handle(self, *args, **options):
        with federation_errors():
            paths = export(options["config"], options["out"])
        for path in paths:
            self.stdout.write(str(path))
