"""Celery app for ``attack --distributed``; workers only run per-example attack tasks."""

import os

from celery import Celery


os.environ.setdefault("DJANGO_SETTINGS_MODULE", "blocksparse.settings")

app = Celery("blocksparse")
app.config_from_object("django.conf:settings", namespace="CELERY")
app.autodiscover_tasks(["harness"])
