"""
The nine lifecycle events and the hook error family
"""
from enum import Enum

from core.exceptions import FederationError


class HookError(FederationError):
    """Base exception for hook errors"""
    pass


class UnknownHookEventError(HookError):
    """Exception for registration against an event that does not exist"""
    pass


class HookCallbackError(HookError):
    """Exception for a callback failure in strict mode"""
    pass


class HookEvent(str, Enum):
    ON_SERVER_START = "on_server_start"
    BEFORE_CLIENT_SELECTION = "before_client_selection"
    BEFORE_AGGREGATION = "before_aggregation"
    AFTER_AGGREGATION = "after_aggregation"
    ON_EXPERIMENT_END = "on_experiment_end"
    ON_CLIENT_START = "on_client_start"
    BEFORE_LOCAL_TRAIN = "before_local_train"
    AFTER_LOCAL_TRAIN = "after_local_train"
    BEFORE_MODEL_UPLOAD = "before_model_upload"

    @property
    def client_side(self) -> bool:
        return self in CLIENT_EVENTS


CLIENT_EVENTS = frozenset({
    HookEvent.ON_CLIENT_START,
    HookEvent.BEFORE_LOCAL_TRAIN,
    HookEvent.AFTER_LOCAL_TRAIN,
    HookEvent.BEFORE_MODEL_UPLOAD,
})


def as_event(event) -> HookEvent:
    try:
        return HookEvent(event)
    except ValueError:
        raise UnknownHookEventError(f"Unknown hook event '{event}'") from None
