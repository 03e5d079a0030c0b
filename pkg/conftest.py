import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "blocksparse.settings")
django.setup()
