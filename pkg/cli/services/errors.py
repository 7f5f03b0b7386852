"""
Exit codes: 1 config error, 2 runtime error, 3 protocol or auth error
"""
from contextlib import contextmanager

from django.core.management.base import CommandError

from comm.services.codec import ProtocolError
from core.exceptions import ConfigError, FederationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_PROTOCOL = 3


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ProtocolError):
        return EXIT_PROTOCOL
    return EXIT_RUNTIME


@contextmanager
def federation_errors():
    """Re-raise kernel and I/O failures as CommandError with the mapped exit code."""
    try:
        yield
    except (FederationError, OSError) as exc:
        raise CommandError(str(exc), returncode=exit_code_for(exc)) from exc
