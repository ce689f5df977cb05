import math
import os
import sys
from pathlib import Path

import pytest


ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

# Keep bytecode inside the workspace so test runs do not depend on system cache permissions.
os.environ.setdefault("PYTHONPYCACHEPREFIX", str(ROOT / ".pycache_local"))

from alarm_thresholds.metrics import ErrorBudget  # noqa: E402
from alarm_thresholds.network import Area, CalibratedCdf, Deployment, Device, SensingModel  # noqa: E402

SQUARE_W = 2 * 50 * 50 / math.pi


@pytest.fixture
def square():
    return Area(length=50.0, height=50.0)


@pytest.fixture
def model():
    return SensingModel(eta=1.0, alpha=0.1)


@pytest.fixture
def budget(model):
    return ErrorBudget.for_model(0.08, model)


@pytest.fixture
def make_cals():
    def build(ws, z_max=200.0):
        return [CalibratedCdf(device_id=i, w=float(w), z_max=z_max, tolerance=0.0) for i, w in enumerate(ws)]

    return build


@pytest.fixture
def make_deployment(square):
    def build(points, area=None):
        devices = tuple(Device(id=i, x=float(x), y=float(y)) for i, (x, y) in enumerate(points))
        return Deployment(area=area or square, devices=devices)

    return build


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs over N=25 deployments")
