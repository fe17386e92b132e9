"""
Django settings for the moebench workbench.

The project has no database and no HTTP surface: Django provides settings,
logging configuration, management commands and signals.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


SECRET_KEY = os.environ.get('MOEBENCH_SECRET_KEY', 'moebench-local-only')

DEBUG = os.environ.get('MOEBENCH_DEBUG', '0') == '1'

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'workbench',
    'cli',
]

DATABASES = {}

# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {
            "format": "%(levelname)s %(name)s %(message)s",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "plain",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "DEBUG" if DEBUG else "INFO",
    },
}

DOMAIN_EVENTS_BROKER = "workbench.shared.events.DjangoSignalDomainEventBroker"

CHECKPOINT_REPOSITORY = "workbench.micro_model.repository.FileCheckpointRepository"

# Desk-scale guard for models the micro trainer will build
WORKBENCH_PARAMETER_CEILING = 10**8

WORKBENCH_PRESETS_DIR = BASE_DIR / 'cli' / 'presets'

# Carried by every JSON output and the CSV header line
WORKBENCH_OUTPUT_SCHEMA_VERSION = 1
