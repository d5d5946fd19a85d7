import numpy as np
import pytest

from partsplat.scene import Camera, GaussianScene
from partsplat.sh import num_coeffs


def random_scene(n=10, degree=3, seed=0, spread=0.4, scale=(0.05, 0.15), dtype=np.float64):
    """Small random scene in front of :func:`front_camera`."""
    rng = np.random.default_rng(seed)
    k = num_coeffs(degree)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    scene = GaussianScene(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        scales=np.log(rng.uniform(*scale, size=(n, 3))),
        rotations=q,
        opacities=rng.normal(0.0, 1.0, size=n),
        color_sh=rng.normal(0.0, 0.3, size=(n, k, 3)),
        label_sh=rng.normal(0.0, 0.3, size=(n, k, 3)),
    )
    if dtype != np.float64:
        for name in ("positions", "scales", "rotations", "opacities", "color_sh", "label_sh"):
            setattr(scene, name, getattr(scene, name).astype(dtype))
    return scene


def front_camera(size=32, distance=2.5, fov_deg=50.0):
    return Camera.look_at((0.0, -distance, 0.3), (0.0, 0.0, 0.0), width=size, height=size, fov_deg=fov_deg)


@pytest.fixture
def scene10():
    return random_scene(10)


@pytest.fixture
def camera32():
    return front_camera(32)


# PASS/FAIL lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
