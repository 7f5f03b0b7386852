"""
Django settings for the flkernel project.

The kernel has no HTTP surface: Django provides settings, logging
configuration, management commands and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.1/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    "FLK_SECRET_KEY",
    "django-insecure-flk-0b7e2d9c41a84f6f9c1d3e5a7b9c0d2e4f6a8b0c",
)

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Third-party apps
    "rest_framework",
    # Kernel apps
    "core",
    "partition",
    "trainer",
    "aggregation",
    "privacy",
    "hooks",
    "comm",
    "orchestrator",
    "cli",
]


# Database
# The kernel keeps no relational state; the setting is kept because Django
# expects one. Nothing opens this file.

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}


# Logging
# FLK_LOG selects diagnostic verbosity on standard error. Metrics are written
# to their own JSONL stream and never go through logging.

FLK_LOG_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}
FLK_LOG_LEVEL = FLK_LOG_LEVELS.get(os.environ.get("FLK_LOG", "info").lower(), "INFO")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
        },
    },
    "handlers": {
        "stderr": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "plain",
        },
    },
    "root": {
        "handlers": ["stderr"],
        "level": FLK_LOG_LEVEL,
    },
}


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"
