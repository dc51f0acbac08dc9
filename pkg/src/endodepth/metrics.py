"""Depth and normal accuracy against rendered ground truth, and result tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .depth import Parameterization, convert_parameterization
from .errors import DomainError

MIN_OVERLAP = 0.10
CSV_COLUMNS = (
    "scene", "xi", "reg", "iters",
    "depth_mm_mean", "depth_mm_median",
    "depth_pct_mean", "depth_pct_median",
    "norm_deg_mean", "norm_deg_median",
    "pixels_evaluated",
)
REG_LABELS = {1: "grad", 2: "lap"}


def nearest_rank_median(values):
    """The ceil(n/2)-th smallest value (an element of ``values``, never interpolated)."""
    values = np.sort(np.asarray(values, dtype=float).ravel())
    if values.size == 0:
        raise DomainError("median of an empty set")
    return float(values[math.ceil(values.size / 2) - 1])


class Summary(NamedTuple):
    mean: float
    median: float

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls(float("nan"), float("nan"))
        return cls(float(values.mean()), nearest_rank_median(values))


@dataclass(frozen=True)
class EvalResult:
    depth_err_mm: Summary
    depth_err_pct: Summary
    normal_err_deg: Summary
    pixels: int
    fraction: float
    iterations: int = 0
    scale: float = 1.0


def depth_errors(est, gt):
    """Per-pixel absolute error in mm and percent of ground-truth distance (metres in)."""
    err = np.abs(np.asarray(est, dtype=float) - np.asarray(gt, dtype=float))
    return err * 1e3, err / gt * 100.0


def normal_errors(est, gt):
    """Per-pixel angle in degrees between unit normals."""
    cos = np.clip(np.sum(np.asarray(est) * np.asarray(gt), axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(cos))


def evaluate(depth, normals, gt, intr=None, align_scale=False, iterations=0):
    """Compare an estimate with a :class:`~endodepth.render.RenderedFrame`.

    Errors are Euclidean-distance errors over pixels valid in both the
    estimate and the ground truth. With ``align_scale`` the estimate is first
    multiplied by the median of ``d_gt / d_est`` (for unknown-gain data,
    where depth is only known up to scale).
    """
    if depth.parameterization is not Parameterization.EUCLIDEAN:
        if intr is None:
            raise DomainError("intrinsics are needed to convert a non-Euclidean depth map")
        depth = convert_parameterization(depth, Parameterization.EUCLIDEAN, intr)
    if depth.shape != gt.mask.shape or normals.mask.shape != gt.mask.shape:
        raise DomainError(f"estimate grid {depth.shape} does not match ground truth {gt.mask.shape}")
    both = depth.mask & gt.mask
    count = int(both.sum())
    if count == 0:
        raise DomainError("estimate and ground truth have no valid pixels in common")
    fraction = count / max(int(gt.mask.sum()), 1)
    if fraction < MIN_OVERLAP:
        raise DomainError(f"only {fraction:.1%} of ground-truth pixels have an estimate")
    est = depth.values[both]
    ref = gt.gt_depth_euclidean[both]
    scale = nearest_rank_median(ref / est) if align_scale else 1.0
    mm, pct = depth_errors(est * scale, ref)
    with_normals = both & normals.mask
    ang = normal_errors(normals.vectors[with_normals], gt.gt_normals[with_normals])
    return EvalResult(Summary.of(mm), Summary.of(pct), Summary.of(ang),
                      count, fraction, int(iterations), scale)


def _row(scene, xi, reg, result):
    reg = REG_LABELS.get(reg, reg)
    return {
        "scene": scene, "xi": str(xi), "reg": str(reg), "iters": result.iterations,
        "depth_mm_mean": result.depth_err_mm.mean,
        "depth_mm_median": result.depth_err_mm.median,
        "depth_pct_mean": result.depth_err_pct.mean,
        "depth_pct_median": result.depth_err_pct.median,
        "norm_deg_mean": result.normal_err_deg.mean,
        "norm_deg_median": result.normal_err_deg.median,
        "pixels_evaluated": result.pixels,
    }


def report_csv(rows):
    """CSV text for ``(scene, xi, reg, EvalResult)`` rows; floats round-trip exactly."""
    if not rows:
        raise DomainError("no results to report")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for scene, xi, reg, result in rows:
        writer.writerow({k: repr(float(v)) if isinstance(v, float) else v
                         for k, v in _row(scene, xi, reg, result).items()})
    return buf.getvalue()


def read_report_csv(text):
    """Parse :func:`report_csv` output back into dicts with typed values."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise DomainError(f"unexpected columns {reader.fieldnames}")
    out = []
    for rec in reader:
        parsed = dict(rec)
        for key in CSV_COLUMNS[4:10]:
            parsed[key] = float(rec[key])
        parsed["iters"] = int(rec["iters"])
        parsed["pixels_evaluated"] = int(rec["pixels_evaluated"])
        out.append(parsed)
    return out


def _pair(summary):
    return f"{summary.mean:.2f} / {summary.median:.2f}"


def report_text(rows):
    """Aligned text table: scene, xi, reg, iterations, then mean/median pairs."""
    if not rows:
        raise DomainError("no results to report")
    header = ["Scene", "xi", "Reg.", "# iter.", "Depth [mm]", "Depth [%]", "Normals [deg]", "Pixels"]
    lines = [header]
    for scene, xi, reg, result in rows:
        lines.append([scene, str(xi), str(REG_LABELS.get(reg, reg)), str(result.iterations),
                      _pair(result.depth_err_mm), _pair(result.depth_err_pct),
                      _pair(result.normal_err_deg), str(result.pixels)])
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    text = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in lines]
    text.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(text) + "\n"


def report_table(rows):
    """Both renderings of the result rows: ``(csv_text, aligned_text)``."""
    return report_csv(rows), report_text(rows)
