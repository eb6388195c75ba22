import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from fusetrack import kernels
from fusetrack.geometry import Box3D, BoxImage, CameraModel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

KITTI_K = np.array([[721.5377, 0.0, 609.5593], [0.0, 721.5377, 172.854], [0.0, 0.0, 1.0]])

finite = st.floats(-50.0, 50.0, allow_nan=False)
positive = st.floats(0.1, 10.0, allow_nan=False)
angles = st.floats(-10.0, 10.0, allow_nan=False)


@st.composite
def boxes3d(draw):
    return Box3D((draw(finite), draw(finite), draw(finite)), (draw(positive), draw(positive), draw(positive)), draw(angles))


@st.composite
def image_boxes(draw, camera_id="cam2"):
    l = draw(st.floats(0, 1000))
    t = draw(st.floats(0, 300))
    return BoxImage(camera_id, l, t, l + draw(st.floats(1, 300)), t + draw(st.floats(1, 200)))


def random_box_array(rng, n, spread=10.0):
    b = np.empty((n, 7))
    b[:, 0:3] = rng.uniform(-spread, spread, (n, 3))
    b[:, 3] = rng.uniform(-math.pi, math.pi, n)
    b[:, 4:7] = rng.uniform(0.5, 5.0, (n, 3))
    return b


def overlapping_pair(rng):
    a = random_box_array(rng, 1, spread=1.0)[0]
    b = a.copy()
    b[:3] += rng.uniform(-0.4, 0.4, 3) * a[4:7].min()
    b[3] = rng.uniform(-math.pi, math.pi)
    b[4:7] *= rng.uniform(0.7, 1.3, 3)
    return a, b


@pytest.fixture
def cam():
    return CameraModel("cam2", KITTI_K, np.eye(4), (1242.0, 375.0))


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test under each kernel backend, restoring the default afterwards."""
    previous = kernels.backend
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


# -- acceptance reporting ------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else ""))
