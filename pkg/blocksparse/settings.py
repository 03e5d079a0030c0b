"""
Django settings for the blocksparse project.

The project has no web surface: Django provides configuration, logging,
the management-command CLI and the test runner for the attack toolkit.
Every tunable is read through python-decouple, so values can come from the
environment, a ``.env`` file or ``settings.ini``.
"""

import os
from pathlib import Path

from decouple import Csv, config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals (signing); no sessions or cookies are served.
SECRET_KEY = config("SECRET_KEY", default="blocksparse-local-only")

DEBUG = config("DEBUG", default=False, cast=bool)

ALLOWED_HOSTS = config("ALLOWED_HOSTS", default="localhost,127.0.0.1", cast=Csv())

# Application definition

INSTALLED_APPS = [
    "numerics",
    "vocab",
    "classifier",
    "attack",
    "harness",
]

# Artefacts (checkpoints, vocabularies, datasets, reports) are plain files.
DATABASES = {}

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Classifier architecture and training
MODEL_DIM = config("MODEL_DIM", default=32, cast=int)
MODEL_LAYERS = config("MODEL_LAYERS", default=2, cast=int)
MODEL_HEADS = config("MODEL_HEADS", default=2, cast=int)
MODEL_MAX_LEN = config("MODEL_MAX_LEN", default=64, cast=int)
VOCAB_MIN_COUNT = config("VOCAB_MIN_COUNT", default=1, cast=int)

TRAIN_EPOCHS = config("TRAIN_EPOCHS", default=10, cast=int)
TRAIN_BATCH_SIZE = config("TRAIN_BATCH_SIZE", default=32, cast=int)
TRAIN_LR = config("TRAIN_LR", default=0.005, cast=float)
TRAIN_SEED = config("TRAIN_SEED", default=0, cast=int)

# Attack defaults (overridable per run by a config file or CLI flags)
ATTACK_ALPHA_SET = tuple(config("ATTACK_ALPHA_SET", default="10,8,5,2", cast=Csv(float)))
ATTACK_LR_SET = tuple(config("ATTACK_LR_SET", default="0.15,0.3", cast=Csv(float)))
ATTACK_MAX_ITERS = config("ATTACK_MAX_ITERS", default=500, cast=int)
ATTACK_ITERS_PER_POINT = config("ATTACK_ITERS_PER_POINT", default=0, cast=int)
ATTACK_SIM_THRESHOLD = config("ATTACK_SIM_THRESHOLD", default=0.8, cast=float)
ATTACK_GRADIENT_SCALE = config("ATTACK_GRADIENT_SCALE", default=2.0, cast=float)
ATTACK_SEED = config("ATTACK_SEED", default=0, cast=int)

PROGRESS_BARS = config("PROGRESS_BARS", default=True, cast=bool)

# Slow end-to-end suites (full-size corpus training, oracle sweeps)
RUN_ACCEPTANCE_TESTS = config("RUN_ACCEPTANCE_TESTS", default=False, cast=bool)

# Async jobs (distributed per-example attacks)
_REDIS_PASSWORD = config("REDIS_PASSWORD", default="")
_REDIS_HOST = config("REDIS_HOST", default="localhost")
_REDIS_PORT = config("REDIS_PORT", default=6379, cast=int)
_REDIS_BROKER_DB = config("REDIS_BROKER_DB", default=0, cast=int)
_REDIS_RESULT_DB = config("REDIS_RESULT_DB", default=1, cast=int)
_DEFAULT_REDIS_URL = f"redis://:{_REDIS_PASSWORD}@{_REDIS_HOST}:{_REDIS_PORT}"
CELERY_BROKER_URL = config(
    "CELERY_BROKER_URL",
    default=f"{_DEFAULT_REDIS_URL}/{_REDIS_BROKER_DB}",
)
CELERY_RESULT_BACKEND = config(
    "CELERY_RESULT_BACKEND",
    default=f"{_DEFAULT_REDIS_URL}/{_REDIS_RESULT_DB}",
)
CELERY_ACCEPT_CONTENT = ["json"]
CELERY_TASK_SERIALIZER = "json"
CELERY_RESULT_SERIALIZER = "json"
CELERY_TIMEZONE = config("CELERY_TIMEZONE", default="UTC")
CELERY_TASK_ALWAYS_EAGER = config("CELERY_TASK_ALWAYS_EAGER", default=False, cast=bool)
# one attack per worker process at a time
CELERY_WORKER_PREFETCH_MULTIPLIER = 1
CELERY_TASK_ACKS_LATE = True

ATTACK_QUEUE = config("ATTACK_QUEUE", default="attack")
ATTACK_TASK_NAME = "harness.attack_example"
CELERY_TASK_ROUTES = {
    ATTACK_TASK_NAME: {"queue": ATTACK_QUEUE},
}

# Logging Configuration
LOG_LEVEL = config("LOG_LEVEL", default="DEBUG" if DEBUG else "INFO")
LOG_DIR = Path(config("LOG_DIR", default=str(BASE_DIR / "logs")))

_APP_LOGGER = {
    "handlers": ["console", "file"],
    "level": "DEBUG",
    "propagate": False,
}

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "{levelname} {message}",
            "style": "{",
        },
        "detailed": {
            "format": "[{asctime}] {levelname} {name} {funcName}:{lineno} - {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "detailed",
            "level": LOG_LEVEL,
        },
        "file": {
            "class": "logging.FileHandler",
            "filename": LOG_DIR / "blocksparse.log",
            "formatter": "detailed",
            "level": LOG_LEVEL,
        },
    },
    "loggers": {
        "django": {
            "handlers": ["console", "file"],
            "level": "INFO",
            "propagate": False,
        },
        "celery": {
            "handlers": ["console", "file"],
            "level": "INFO",
            "propagate": False,
        },
        "numerics": dict(_APP_LOGGER),
        "vocab": dict(_APP_LOGGER),
        "classifier": dict(_APP_LOGGER),
        "attack": dict(_APP_LOGGER),
        "harness": dict(_APP_LOGGER),
    },
    "root": {
        "handlers": ["console", "file"],
        "level": "INFO",
    },
}

# In production, keep framework noise down but our app logs verbose
if not DEBUG:
    LOGGING["loggers"]["django"]["level"] = "WARNING"

os.makedirs(LOG_DIR, exist_ok=True)
