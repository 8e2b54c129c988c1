from __future__ import annotations

import json
from pathlib import Path

import pytest

from dicke_lab.params import PhysicalParams

DATA = Path(__file__).with_name("data")


@pytest.fixture(scope="session")
def frozen() -> dict:
    """Oracle values frozen by make_oracle_values.py."""
    return json.loads((DATA / "oracle_values.json").read_text())


@pytest.fixture(scope="session")
def p() -> PhysicalParams:
    return PhysicalParams()
