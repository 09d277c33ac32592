import numpy as np
import pytest

from visprobe.backends.clients import local_testbed_suite
from visprobe.core import ActionChunk, Image, PipelineConfig, RegionKind, RegionMask
from visprobe.scenes import make_standard_scene
from visprobe.testbed import render


@pytest.fixture(scope="session")
def standard_scene():
    return make_standard_scene()


@pytest.fixture(scope="session")
def quiet_scene(standard_scene):
    # same geometry/gains, zero action noise
    from dataclasses import replace

    return replace(standard_scene, sigma_a=0.0)


@pytest.fixture(scope="session")
def standard_render(standard_scene):
    img, masks = render(standard_scene)
    return img, masks


@pytest.fixture()
def cfg():
    return PipelineConfig()


@pytest.fixture()
def noise_image():
    rng = np.random.default_rng(1234)
    return Image(rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8))


@pytest.fixture()
def suite_factory(standard_scene):
    def make(scene=None, seed=0, **kw):
        return local_testbed_suite(scene or standard_scene, seed=seed, **kw)

    return make


class ConstantPolicy:
    """Pixel-blind policy: always the same chunk, regardless of the image."""

    def __init__(self, chunk_len=4, value=0.0):
        steps = np.zeros((chunk_len, 7))
        steps[:, 0] = value
        steps[:, 6] = 0.1
        self.chunk = ActionChunk(steps)
        self.calls = 0
        self.chunks_served = 0

    def predict(self, image, instruction, k):
        self.calls += 1
        self.chunks_served += k
        return [self.chunk] * k


@pytest.fixture()
def constant_policy():
    return ConstantPolicy()


def make_region(mask, label="region", kind=RegionKind.OBJECT):
    return RegionMask(label=label, kind=kind, mask=mask)
