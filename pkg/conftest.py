import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "flkernel.settings")
django.setup()
