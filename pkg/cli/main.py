"""
Entry point returning an exit code instead of calling sys.exit
"""
import os
import sys
from typing import List, Optional

SUBCOMMANDS = ("simulate", "server", "client", "partition", "inspect")


def main(argv: Optional[List[str]] = None) -> int:
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "flkernel.settings")
    import django
    from django.core.management import call_command
    from django.core.management.base import CommandError

    django.setup()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in SUBCOMMANDS:
        sys.stderr.write(f"usage: flkernel {{{','.join(SUBCOMMANDS)}}} [options]\n")
        return 1
    try:
        call_command(argv[0], *argv[1:])
    except CommandError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.returncode
    return 0


if __name__ == "__main__":
    sys.exit(main())
