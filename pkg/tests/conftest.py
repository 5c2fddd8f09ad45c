import math

import pytest

from src.kalman_sync import GridImpedance
from src.lqr import LclParams
from src.schema import SCHEMA_ID, validate_document


@pytest.fixture
def filter_params():
    """500 µH / 100 µF / 500 µH LCL on a 415 V, 110 kVA base"""
    return LclParams()


@pytest.fixture
def weak_impedance():
    return GridImpedance.polar(2.0, math.radians(70.0))


@pytest.fixture
def make_document():
    def _make(**sections):
        document = {"schema": SCHEMA_ID, "scenario": {"name": "test", "duration": 0.02}}
        for key, value in sections.items():
            if key == "scenario":
                document["scenario"].update(value)
            else:
                document[key] = value
        return document

    return _make


@pytest.fixture
def make_config(make_document):
    def _make(**sections):
        return validate_document(make_document(**sections))

    return _make
