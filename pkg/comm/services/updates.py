"""
LocalUpdate <-> UPDATE message. Training loss and wall time travel inside
the metrics JSON under reserved keys.
"""
from core.types import LocalUpdate
from .codec import ProtocolError, UpdateMessage

TRAIN_LOSS = "train_loss"
WALL_TIME = "wall_time_sec"
HOOK_ERROR_COUNT = "hook_error_count"
TERMINATED = "terminated"

RESERVED_METRICS = frozenset({TRAIN_LOSS, WALL_TIME, HOOK_ERROR_COUNT, TERMINATED})


def update_to_message(update: LocalUpdate) -> UpdateMessage:
    clash = {TRAIN_LOSS, WALL_TIME} & set(update.metrics)
    if clash:
        raise ProtocolError(f"Update metrics use reserved names: {sorted(clash)}")
    metrics = dict(update.metrics)
    metrics[TRAIN_LOSS] = float(update.train_loss)
    metrics[WALL_TIME] = float(update.wall_time_sec)
    return UpdateMessage(
        client_id=update.client_id,
        round=update.round,
        sample_count=update.sample_count,
        masked=update.masked,
        payload=update.payload,
        metrics=metrics,
    )


def message_to_update(message: UpdateMessage) -> LocalUpdate:
    metrics = dict(message.metrics)
    train_loss = metrics.pop(TRAIN_LOSS, 0.0)
    wall_time = metrics.pop(WALL_TIME, 0.0)
    return LocalUpdate(
        client_id=message.client_id,
        round=message.round,
        sample_count=message.sample_count,
        payload=message.payload,
        masked=message.masked,
        train_loss=train_loss,
        wall_time_sec=wall_time,
        metrics=metrics,
    )
