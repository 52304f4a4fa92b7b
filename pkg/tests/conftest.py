import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from anomsynth.frameio import Frame, SceneSpec, default_scene_doc, gen_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_scene_doc(length=60, anomaly_fraction=0.0, seed=0):
    """An 64x48 scene with one bright square moving right inside a horizontal band."""
    return {
        "background": {"width": 64, "height": 48, "base": 90, "gradient": 0, "texture": 0,
                       "bands": [[10, 40, 80]]},
        "sprites": [{"shape": "rect", "size": [8, 8], "intensity": 220,
                     "corridor": [0, 12, 64, 26], "velocity": [2.0, 0.0]}],
        "anomaly_fraction": anomaly_fraction,
        "length": length,
        "seed": seed,
        "noise_std": 0.0,
        "warmup_frames": 1,
    }


@pytest.fixture(scope="session")
def street_scene():
    return gen_scene(SceneSpec.from_dict(default_scene_doc(length=120, seed=3)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_frame(rng, h=5, w=7, channels=1):
    shape = (h, w) if channels == 1 else (h, w, 3)
    return Frame(rng.integers(0, 256, size=shape, dtype=np.uint8))


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
