from django.apps import AppConfig


class CommConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'comm'
    verbose_name = 'Server communicator and client proxy'
