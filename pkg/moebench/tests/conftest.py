import os
import django
import pytest


os.environ.setdefault("DJANGO_SETTINGS_MODULE", "moebench.settings")
django.setup()


@pytest.fixture
def rng():
    from workbench.shared.numerics import make_rng
    return make_rng(1234)
