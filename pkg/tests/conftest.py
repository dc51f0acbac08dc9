import numpy as np
import pytest

from endodepth.camera import REFERENCE_FISHEYE, CameraIntrinsics
from endodepth.experiments import SIMPLE_CAMERA
from endodepth.photomodel import PhotometricModel


@pytest.fixture(scope="session")
def reference_camera():
    return CameraIntrinsics(**REFERENCE_FISHEYE)


@pytest.fixture(scope="session")
def simple_camera():
    return SIMPLE_CAMERA


@pytest.fixture(scope="session")
def small_camera():
    """The simple-dataset camera at half resolution, for fast solver tests."""
    return SIMPLE_CAMERA.scaled(0.5)


@pytest.fixture(scope="session")
def scene_model():
    return PhotometricModel(2.5, 2.2, (0.01,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
