"""Experiment configuration files and the built-in synthetic experiments.

Configs are INI files.  A scene experiment has ``[experiment]``, ``[scene]``,
``[camera]``, ``[model]``, ``[render]`` and ``[solver]`` sections; a
calibration experiment has ``[experiment]``, ``[sequence]`` and
``[calibration]``.  Relative paths are resolved against the config's folder.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .calib import CalibOptions
from .camera import CameraIntrinsics
from .depth import EnergyConfig
from .errors import CalibrationError, FormatError
from .photomodel import Lambertian, PhotometricModel, SpecularLobe
from .render import (
    CalibrationPattern,
    CurvedSheet,
    RotatedPlane,
    Scene,
    StepPlanes,
    Tube,
    auto_gain,
    make_trajectory,
    render_calibration_sequence,
)

SIMPLE_CAMERA = CameraIntrinsics(200.0, 200.0, 99.5, 99.5,
                                 (-0.13893, -1.2396e-3, 9.1258e-4, -4.0716e-5), 200, 200)
SURFACES = {
    "plane": (RotatedPlane, {"distance": float, "tilt_x_deg": float, "tilt_y_deg": float}),
    "sheet": (CurvedSheet, {"distance": float, "amplitude": float, "period": float}),
    "tube": (Tube, {"radius": float, "length": float, "tilt_x_deg": float, "tilt_y_deg": float,
                    "cap_length": float, "haustra_amplitude": float, "haustra_period": float}),
    "steps": (StepPlanes, {"near": float, "far": float, "edge_slope": float}),
}


def _surface(kind, params):
    try:
        cls, schema = SURFACES[kind]
    except KeyError:
        raise FormatError(f"unknown scene kind '{kind}' (expected one of {', '.join(SURFACES)})") from None
    kwargs = {}
    for key, value in params.items():
        if key not in schema:
            raise FormatError(f"unknown {kind} parameter '{key}'")
        if key.endswith("_deg"):
            kwargs[key[:-4]] = np.radians(float(value))
        else:
            kwargs[key] = schema[key](value)
    return cls(**kwargs)


@dataclass(frozen=True)
class SceneExperiment:
    """One synthetic depth experiment: scene, camera, light model, solver settings."""

    name: str
    scene: Scene
    intrinsics: CameraIntrinsics = SIMPLE_CAMERA
    model: PhotometricModel = PhotometricModel(2.5, 2.2, (0.01,))
    noise_sigma: float = 0.0
    seed: int = 0
    solver: EnergyConfig = field(default_factory=EnergyConfig)
    cross_section_row: int = 100

    @property
    def calibration(self):
        """The calibrated model the depth solver should use (scene albedo included)."""
        return self.model.with_brdf(self.scene.brdf)


@dataclass(frozen=True)
class CalibrationExperiment:
    """A synthetic calibration sequence and the options used to fit it."""

    name: str
    frames: int = 30
    points_per_frame: int = 500
    noise_sigma: float = 3.2
    k: float = 2.5
    gamma: float = 2.2
    sigma_o: float = 1.7e-3
    gain_low: float = 1.0
    gain_high: float = 3.0
    max_tilt_deg: float = 25.0
    lobe_strength: float = 0.0
    lobe_width_deg: float = 15.0
    seed: int = 1
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(717.21, 717.48, 735.37, 552.80,
                                                 (-0.13893, -1.2396e-3, 9.1258e-4, -4.0716e-5),
                                                 1440, 1080))
    options: CalibOptions = field(default_factory=lambda: CalibOptions(estimate_gamma=True))

    @property
    def brdf(self):
        if self.lobe_strength > 0:
            return SpecularLobe(1.0, self.lobe_strength, np.radians(self.lobe_width_deg))
        return Lambertian(1.0)

    def ground_truth(self):
        poses, distances = make_trajectory(self.frames, max_tilt=np.radians(self.max_tilt_deg))
        gains = auto_gain(distances, self.gain_low, self.gain_high)
        # Keep intensities in range when a lobe brightens normal incidence.
        sigma_o = self.sigma_o * (1 / np.pi) / (1 / np.pi + self.lobe_strength)
        model = PhotometricModel(self.k, self.gamma, tuple(gains), self.brdf, sigma_o)
        return model, poses

    def generate(self):
        """``(observations, ground-truth model)``; observations carry no normals."""
        model, poses = self.ground_truth()
        pattern = CalibrationPattern(n_points=self.points_per_frame, brdf=self.brdf)
        obs = render_calibration_sequence(pattern, poses, model, self.intrinsics,
                                          noise_sigma=self.noise_sigma, seed=self.seed)
        obs.normals = None
        return obs, model


PRESETS = {
    "scene01": SceneExperiment(
        "scene01", Scene(RotatedPlane(0.05, np.radians(10.0), np.radians(25.0)), 0.6, "scene01")),
    "scene02": SceneExperiment(
        "scene02", Scene(CurvedSheet(0.05, 0.01, 0.08), 0.6, "scene02")),
    "scene03": SceneExperiment(
        "scene03", Scene(Tube(0.025, 0.055, np.radians(5.0), np.radians(8.0), cap_length=0.065),
                         0.6, "scene03")),
}


def _parser(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError("config file not found", path)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise FormatError(str(exc).splitlines()[0], path) from exc
    return parser


def _convert(value, kind, key, path):
    try:
        if kind is bool:
            lowered = value.strip().lower()
            if lowered not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(value)
            return lowered in ("true", "yes", "1", "on")
        return kind(value)
    except ValueError:
        raise FormatError(f"bad value for '{key}': {value!r}", path) from None


def _dataclass_kwargs(cls, section, path, skip=()):
    kinds = {f.name: f.type for f in fields(cls)}
    casts = {"int": int, "int | None": int, "float": float, "bool": bool, "str": str}
    out = {}
    for key, value in section.items():
        if key in skip:
            continue
        if key not in kinds:
            raise FormatError(f"unknown key '{key}' in [{section.name}]", path)
        out[key] = _convert(value, casts.get(str(kinds[key]), str), key, path)
    return out


def _resolve(base, value):
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_experiment(path):
    """Parse a config file into a :class:`SceneExperiment` or :class:`CalibrationExperiment`."""
    from .io import read_calibration, read_intrinsics

    path = Path(path)
    parser = _parser(path)
    base = path.parent
    name = parser.get("experiment", "name", fallback=path.stem)
    seed = _convert(parser.get("experiment", "seed", fallback="0"), int, "seed", path)
    try:
        if parser.has_section("sequence"):
            kwargs = _dataclass_kwargs(CalibrationExperiment, parser["sequence"], path,
                                       skip=("intrinsics",))
            if parser.has_option("sequence", "intrinsics"):
                kwargs["intrinsics"] = read_intrinsics(_resolve(base, parser["sequence"]["intrinsics"]))
            options = CalibOptions(**_dataclass_kwargs(CalibOptions, parser["calibration"], path)) \
                if parser.has_section("calibration") else CalibOptions(estimate_gamma=True)
            return CalibrationExperiment(name, options=options, **kwargs)

        if not parser.has_section("scene"):
            raise FormatError("config needs a [scene] or [sequence] section", path)
        scene_sec = dict(parser["scene"])
        kind = scene_sec.pop("kind", None)
        if kind is None:
            raise FormatError("[scene] needs 'kind'", path)
        albedo = float(scene_sec.pop("albedo", "1.0"))
        scene = Scene(_surface(kind, scene_sec), albedo, name)
        intr = SIMPLE_CAMERA
        if parser.has_option("camera", "intrinsics"):
            intr = read_intrinsics(_resolve(base, parser["camera"]["intrinsics"]))
        model = PhotometricModel(2.5, 2.2, (0.01,))
        if parser.has_option("model", "calibration"):
            model = read_calibration(_resolve(base, parser["model"]["calibration"]))
        elif parser.has_section("model"):
            m = parser["model"]
            model = PhotometricModel(float(m.get("k", 2.5)), float(m.get("gamma", 2.2)),
                                     (float(m.get("gain", 1.0)),))
        solver = EnergyConfig(**_dataclass_kwargs(EnergyConfig, parser["solver"], path)) \
            if parser.has_section("solver") else EnergyConfig()
        noise = float(parser.get("render", "noise_sigma", fallback="0"))
        row = int(parser.get("output", "cross_section_row", fallback=str(intr.height // 2)))
        return SceneExperiment(name, scene, intr, model, noise, seed, solver, row)
    except (ValueError, TypeError, CalibrationError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(str(exc), path) from exc
