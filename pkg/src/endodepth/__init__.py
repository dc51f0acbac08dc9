"""Single-view photometric depth reconstruction for endoscope-like camera/light rigs."""
from .camera import CameraIntrinsics, PinholeIntrinsics, project, unproject, undistort_image
from .photomodel import (
    BrdfTable,
    Lambertian,
    PhotometricModel,
    SpecularLobe,
    canonical_intensity,
    predict_intensity,
    spread,
)

__version__ = "0.1.0"
