"""
Hook registry: ordered callbacks per lifecycle event
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from .context import ClientContext, ServerContext
from .events import HookCallbackError, HookError, HookEvent, as_event
from .metrics_store import SERVER_SCOPE

logger = logging.getLogger(__name__)

HOOK_ERROR_COUNT = "hook_error_count"

Callback = Callable[[ServerContext, Optional[ClientContext]], None]


@dataclass(frozen=True)
class HookRegistration:
    event: HookEvent
    callback: Callback
    priority: int
    sequence: int

    @property
    def name(self) -> str:
        return getattr(self.callback, "__name__", repr(self.callback))


class HookRegistry:
    """
    Callbacks run in ascending priority, ties in registration order. The
    registry is frozen once the experiment starts.
    """

    def __init__(self, strict: bool = False):
        self.strict = strict
        self._hooks: Dict[HookEvent, List[HookRegistration]] = {event: [] for event in HookEvent}
        self._sequence = itertools.count()
        self._frozen = False

    def register_hook(self, event, callback: Callback, priority: int = 0) -> HookRegistration:
        event = as_event(event)
        if self._frozen:
            raise HookError("Hook registry is frozen; register callbacks before the experiment starts")
        if not callable(callback):
            raise HookError(f"Callback for {event.value} is not callable")
        registration = HookRegistration(event, callback, int(priority), next(self._sequence))
        self._hooks[event].append(registration)
        self._hooks[event].sort(key=lambda r: (r.priority, r.sequence))
        return registration

    def on_event(self, event, priority: int = 0):
        """Decorator form of ``register_hook``."""
        def decorator(callback: Callback) -> Callback:
            self.register_hook(event, callback, priority)
            return callback
        return decorator

    def callbacks(self, event) -> Tuple[HookRegistration, ...]:
        return tuple(self._hooks[as_event(event)])

    def freeze(self) -> "HookRegistry":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def emit(
        self,
        event,
        server_context: ServerContext,
        client_context: Optional[ClientContext] = None,
    ) -> int:
        """
        Run every callback for ``event``; returns the number that failed.
        Failures are counted under scope "server" as hook_error_count.
        """
        event = as_event(event)
        if event.client_side and client_context is None:
            raise HookError(f"{event.value} needs a client context")
        failures = 0
        for registration in self._hooks[event]:
            try:
                registration.callback(server_context, client_context)
            except Exception as exc:
                if self.strict:
                    raise HookCallbackError(
                        f"Hook {registration.name} failed on {event.value}: {exc}"
                    ) from exc
                failures += 1
                logger.exception("Hook %s failed on %s", registration.name, event.value)
                server_context.metrics.increment(SERVER_SCOPE, server_context.round, HOOK_ERROR_COUNT)
        return failures
