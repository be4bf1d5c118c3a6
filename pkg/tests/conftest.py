import numpy as np
import pytest

from koopman_rds.config import get_settings
from koopman_rds.domain.enums import ModelKind
from koopman_rds.domain.models import ModelSpec


@pytest.fixture(autouse=True)
def _isolated_settings(tmp_path, monkeypatch):
    monkeypatch.setenv("KOOPMAN_RDS_OUTPUT_DIR", str(tmp_path / "runs"))
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ou_model():
    return ModelSpec(kind=ModelKind.OU_LINEAR_SDE, params={"mu": -0.5, "sigma": 0.1})


@pytest.fixture
def switching_model():
    return ModelSpec(kind=ModelKind.SWITCHING_LINEAR_RDE)
