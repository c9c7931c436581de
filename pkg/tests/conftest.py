import os

import pytest

from mmsynth.corpus import load_database

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


@pytest.fixture(scope="session")
def mini():
    return load_database(fixture_path("mini.mm"))


@pytest.fixture(scope="session")
def mini_text():
    with open(fixture_path("mini.mm")) as fh:
        return fh.read()
