import numpy as np
import pytest

from iconmat.backend.toy import ToyBackend, ToyConfig
from iconmat.core import ImagePlane
from iconmat.head import TOY_HEAD, HeadConfig, apply_parameters, build_head, init_parameters


@pytest.fixture(scope="session")
def toy_backend():
    return ToyBackend(ToyConfig())


@pytest.fixture(scope="session")
def color_backend():
    """Toy backend with positional encoding switched off: matching is
    driven purely by cell color."""
    return ToyBackend(ToyConfig(w_pos=0.0))


@pytest.fixture()
def toy_head():
    config = HeadConfig(**TOY_HEAD)
    head = build_head(config)
    apply_parameters(head, init_parameters(config))
    return head


@pytest.fixture()
def toy_head_config():
    return HeadConfig(**TOY_HEAD)


def random_matte(rng, shape=(32, 32)):
    return rng.uniform(0.0, 1.0, size=shape)


@pytest.fixture()
def checker_image():
    """64x64 RGB plane with a bright square on dark ground."""
    img = np.full((64, 64, 3), 0.15)
    img[16:48, 16:48] = (0.9, 0.6, 0.2)
    return ImagePlane(img)
