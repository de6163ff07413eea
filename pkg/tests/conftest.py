"""
Shared fixtures for the sparse-mud test suite.
"""

import pytest

from sparse_mud.model import qpsk
from sparse_mud.numerics import RandomStream

from .factories import random_instance


@pytest.fixture
def qpsk_constellation():
    return qpsk()


@pytest.fixture
def stream():
    return RandomStream(1234)


@pytest.fixture
def instance_factory():
    return random_instance
