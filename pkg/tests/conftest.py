import json
from pathlib import Path

import pytest

from cpsdss.model import parse_model
from cpsdss.scoring import EpssSnapshot

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def snapshot() -> EpssSnapshot:
    return EpssSnapshot.from_csv(FIXTURES / "epss_snapshot.csv")


@pytest.fixture(scope="session")
def solar_model():
    return parse_model((FIXTURES / "solar_pv.json").read_text())


@pytest.fixture(scope="session")
def blackenergy_model():
    return parse_model((FIXTURES / "blackenergy.json").read_text())


@pytest.fixture(scope="session")
def cbtc_model():
    return parse_model((FIXTURES / "cbtc.json").read_text())


@pytest.fixture(scope="session")
def solar_document() -> dict:
    return json.loads((FIXTURES / "solar_pv.json").read_text())
