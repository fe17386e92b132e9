from django.apps import AppConfig


class CliConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'cli'

    def ready(self):
        from . import listeners  # noqa: F401
