from django.core.management.base import BaseCommand

from cli.services.errors import federation_errors
from cli.services.runs import simulate


class Command(BaseCommand):
    help = "Run an experiment in-process, serially or on a pool of workers"

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="Experiment config JSON")
        parser.add_argument("--parallel", type=int, default=None, help="Worker count (simulate-parallel)")
        parser.add_argument("--out", default=".", help="Directory for model.flmd and metrics.jsonl")

    def handle(self, *args, **options):
        with federation_errors():
            result = simulate(options["config"], options["out"], options["parallel"])
        self.stdout.write(f"Finished {result.rounds} rounds; outputs in {options['out']}")
