"""
Configuration builders used by the test suites of every app
"""
import copy

from .services.config_loader import validate_config

SMOKE_DOCUMENT = {
    "seed": 7,
    "rounds": 5,
    "clients": 4,
    "client_fraction": 1.0,
    "local_epochs": 1,
    "batch_size": 16,
    "learning_rate": 0.1,
    "task": {"kind": "logreg", "n_per_class": 200, "n_classes": 2, "feature_dim": 10, "class_sep": 4.0},
    "partition": {"scheme": "dirichlet", "dirichlet_alpha": 0.5},
    "comm": {"auth_token": "test-token"},
}


def make_document(**overrides):
    """
    Copy of the smoke document; section overrides are merged key by key
    """
    document = copy.deepcopy(SMOKE_DOCUMENT)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(document.get(key), dict):
            document[key] = {**document[key], **value}
        else:
            document[key] = value
    return document


def make_config(**overrides):
    return validate_config(make_document(**overrides))
