from django.apps import AppConfig


class AttackAppConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "attack"
    label = "attack"
    verbose_name = "Block-sparse attack"
