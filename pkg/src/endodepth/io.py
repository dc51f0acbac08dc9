"""File formats: intrinsics, photometric calibration, float grids, PNGs, observations.

* Intrinsics and calibration files are flat ``key = value`` text, one key per line.
* Float grids (depth, normals) are little-endian float32 after a 16-byte
  header: magic ``EDF1`` then width, height, channels as little-endian uint32.
* Observations are CSV with header ``t,j,I,x,y,z`` or a binary table: magic
  ``EDOB``, a little-endian uint32 row count, then packed rows of
  ``<i4 t, <i4 j, <f8 I, x, y, z``.
"""
from __future__ import annotations

import configparser
import csv
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics
from .errors import DomainError, FormatError
from .photomodel import N_KNOTS, BrdfTable, Lambertian, PhotometricModel
from .render import Observations

FLOAT_MAGIC = b"EDF1"
OBS_MAGIC = b"EDOB"
OBS_COLUMNS = ("t", "j", "I", "x", "y", "z")
_OBS_DTYPE = np.dtype([("t", "<i4"), ("j", "<i4"), ("I", "<f8"),
                       ("x", "<f8"), ("y", "<f8"), ("z", "<f8")])
_SECTION = "values"


def _read_keys(path):
    parser = configparser.ConfigParser(interpolation=None)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read file ({exc.strerror})", path) from exc
    try:
        parser.read_string(f"[{_SECTION}]\n{text}", source=str(path))
    except configparser.Error as exc:
        raise FormatError(str(exc).splitlines()[0], path) from exc
    return dict(parser[_SECTION])


def _write_keys(path, items):
    Path(path).write_text("".join(f"{key} = {value}\n" for key, value in items))


def _number(keys, name, path, kind=float):
    if name not in keys:
        raise FormatError(f"missing key '{name}'", path)
    try:
        return kind(keys[name])
    except ValueError:
        raise FormatError(f"key '{name}' is not a number: {keys[name]!r}", path) from None


def _numbers(keys, name, path):
    if name not in keys:
        raise FormatError(f"missing key '{name}'", path)
    try:
        return tuple(float(v) for v in keys[name].split(","))
    except ValueError:
        raise FormatError(f"key '{name}' must be comma-separated numbers", path) from None


def _fmt(value):
    return repr(float(value))


def read_intrinsics(path):
    keys = _read_keys(path)
    fx, fy, cx, cy = (_number(keys, k, path) for k in ("fx", "fy", "cx", "cy"))
    k = tuple(_number(keys, f"k{i}", path) for i in range(1, 5))
    width, height = (_number(keys, k, path, int) for k in ("width", "height"))
    try:
        return CameraIntrinsics(fx, fy, cx, cy, k, width, height)
    except DomainError as exc:
        raise FormatError(str(exc), path) from exc


def write_intrinsics(path, intr):
    items = [("fx", _fmt(intr.fx)), ("fy", _fmt(intr.fy)),
             ("cx", _fmt(intr.cx)), ("cy", _fmt(intr.cy))]
    items += [(f"k{i + 1}", _fmt(v)) for i, v in enumerate(intr.k)]
    items += [("width", str(intr.width)), ("height", str(intr.height))]
    _write_keys(path, items)


def read_calibration(path):
    keys = _read_keys(path)
    k, gamma, sigma_o = (_number(keys, name, path) for name in ("k", "gamma", "sigma_o"))
    gains = _numbers(keys, "gains", path)
    kind = keys.get("brdf_type", "lambertian").strip().lower()
    try:
        if kind == "lambertian":
            brdf = Lambertian(_number(keys, "brdf_albedo", path))
        elif kind == "table":
            knots = _numbers(keys, "brdf_knots", path)
            if len(knots) != N_KNOTS:
                raise FormatError(f"brdf_knots needs {N_KNOTS} values, got {len(knots)}", path)
            brdf = BrdfTable(knots)
        else:
            raise FormatError(f"unknown brdf_type '{kind}'", path)
        return PhotometricModel(k, gamma, gains, brdf, sigma_o)
    except DomainError as exc:
        raise FormatError(str(exc), path) from exc


def write_calibration(path, model):
    items = [("k", _fmt(model.k)), ("gamma", _fmt(model.gamma)), ("sigma_o", _fmt(model.sigma_o))]
    if isinstance(model.brdf, Lambertian):
        items += [("brdf_type", "lambertian"), ("brdf_albedo", _fmt(model.brdf.albedo))]
    else:
        table = model.brdf if isinstance(model.brdf, BrdfTable) else BrdfTable.sample(model.brdf)
        items += [("brdf_type", "table"), ("brdf_knots", ",".join(map(_fmt, table.knots)))]
    items.append(("gains", ",".join(map(_fmt, model.gains))))
    _write_keys(path, items)


def write_float_grid(path, values):
    """Write an (H, W) or (H, W, C) array as float32."""
    values = np.asarray(values, dtype="<f4")
    if values.ndim == 2:
        values = values[..., None]
    if values.ndim != 3:
        raise DomainError("float grids must be (H, W) or (H, W, C)")
    height, width, channels = values.shape
    with open(path, "wb") as fh:
        fh.write(FLOAT_MAGIC + struct.pack("<III", width, height, channels))
        fh.write(np.ascontiguousarray(values).tobytes())


def read_float_grid(path):
    """Read a float grid; single-channel grids come back as (H, W)."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FLOAT_MAGIC:
        raise FormatError("not a float grid file", path)
    width, height, channels = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * width * height * channels
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes, found {len(data)}", path)
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(height, width, channels)
    values = values.astype(float)
    return values[..., 0] if channels == 1 else values


def write_png(path, img, bits=8):
    """Write a grayscale or RGB image with values in [0, 1] at 8 or 16 bits."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    if bits == 8:
        Image.fromarray(np.round(img * 255).astype(np.uint8)).save(path)
    elif bits == 16:
        if img.ndim != 2:
            raise DomainError("16-bit PNGs must be single channel")
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    else:
        raise DomainError("PNG bit depth must be 8 or 16")


def read_png(path):
    """Read a PNG as floats in [0, 1] (gray: (H, W); colour: (H, W, 3))."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
            mode = im.mode
    except OSError as exc:
        raise FormatError(f"cannot read image ({exc})", path) from exc
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        return arr.astype(float) / 65535.0
    arr = arr.astype(float) / 255.0
    if arr.ndim == 3:
        arr = arr[..., :3]
    return arr


def write_mask(path, mask):
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def read_mask(path):
    return read_png(path) > 0.5


def write_observations(path, obs):
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(OBS_COLUMNS)
            for t, j, value, p in zip(obs.frame, obs.point, obs.intensity, obs.points):
                writer.writerow([int(t), int(j), _fmt(value), _fmt(p[0]), _fmt(p[1]), _fmt(p[2])])
        return
    table = np.zeros(len(obs), dtype=_OBS_DTYPE)
    table["t"], table["j"], table["I"] = obs.frame, obs.point, obs.intensity
    table["x"], table["y"], table["z"] = obs.points.T
    with open(path, "wb") as fh:
        fh.write(OBS_MAGIC + struct.pack("<I", len(obs)))
        fh.write(table.tobytes())


def _observations_from(table):
    points = np.stack([table["x"], table["y"], table["z"]], axis=1).astype(float)
    return Observations(table["t"].astype(int), table["j"].astype(int),
                        table["I"].astype(float), points)


def read_observations(path):
    """Read observations from CSV (``.csv``) or the binary table format."""
    path = Path(path)
    if not path.exists():
        raise FormatError("file not found", path)
    if path.suffix != ".csv":
        data = path.read_bytes()
        if data[:4] != OBS_MAGIC:
            raise FormatError("not an observation table", path)
        (count,) = struct.unpack("<I", data[4:8])
        if len(data) != 8 + count * _OBS_DTYPE.itemsize:
            raise FormatError("truncated observation table", path)
        return _observations_from(np.frombuffer(data, dtype=_OBS_DTYPE, offset=8, count=count))
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != OBS_COLUMNS:
            raise FormatError(f"header must be {','.join(OBS_COLUMNS)}", path, 1)
        for number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(OBS_COLUMNS):
                raise FormatError(f"expected {len(OBS_COLUMNS)} fields, got {len(row)}", path, number)
            try:
                rec = (int(row[0]), int(row[1])) + tuple(float(v) for v in row[2:])
            except ValueError:
                raise FormatError(f"malformed row {row!r}", path, number) from None
            if not all(np.isfinite(rec[2:])):
                raise FormatError("non-finite value", path, number)
            rows.append(rec)
    if not rows:
        raise FormatError("no observations", path)
    return _observations_from(np.array(rows, dtype=_OBS_DTYPE))
