import csv

import numpy as np
import pytest

from endodepth import figures, io
from endodepth.depth import ConvergenceReport, ray_grid
from endodepth.errors import DomainError
from endodepth.experiments import PRESETS
from endodepth.render import render


@pytest.fixture(scope="module")
def tube(small_camera):
    exp = PRESETS["scene03"]
    return render(exp.scene, small_camera, exp.model)


def test_normal_png_round_trip_within_quantisation(tmp_path, tube):
    path = tmp_path / "normals.png"
    io.write_png(path, figures.normal_colours(tube.gt_normals, tube.mask))
    rgb = io.read_png(path)
    m = tube.mask
    encoded = figures.normal_colours(tube.gt_normals, m)
    assert np.abs(rgb[m] - encoded[m]).max() <= 1 / 255
    assert np.all(rgb[~m] == 0)
    decoded = figures.decode_normals(rgb)
    cos = np.clip(np.sum(decoded[m] * tube.gt_normals[m], axis=-1), -1, 1)
    assert np.degrees(np.arccos(cos)).max() < 1.0


def test_depth_colours_black_outside_mask(tube):
    rgb = figures.depth_colours(tube.gt_depth_z, tube.mask)
    assert rgb.shape == tube.mask.shape + (3,)
    assert np.all(rgb[~tube.mask] == 0)
    assert np.all(figures.depth_colours(tube.gt_depth_z, np.zeros_like(tube.mask)) == 0)


def test_cross_section_csv(tmp_path, tube, small_camera):
    rays, _ = ray_grid(small_camera)
    row = tube.mask.shape[0] // 2
    section = figures.cross_section(tube.gt_depth_euclidean, tube.mask, rays, row)
    path = tmp_path / "section.csv"
    figures.write_cross_section(path, section)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == tube.mask[row].sum()
    for rec, u, d in zip(rows, section["u"], section["d"]):
        assert int(rec["u"]) == u
        assert float(rec["d"]) == d
        assert float(rec["inv_d"]) == pytest.approx(1 / d, rel=1e-15)
    np.testing.assert_allclose(np.hypot(np.hypot(section["x"], section["y"]), section["z"]),
                               section["d"], rtol=1e-12)
    with pytest.raises(DomainError, match="row"):
        figures.cross_section(tube.gt_depth_euclidean, tube.mask, rays, 10_000)


def test_figures_are_written(tmp_path, tube, small_camera):
    rays, _ = ray_grid(small_camera)
    section = figures.cross_section(tube.gt_depth_euclidean, tube.mask, rays, 50)
    report = ConvergenceReport(energies=[4.0, 2.0, 1.0], iterations=2, reason="converged")
    figures.save_triptych(tmp_path / "a.png", tube.image, tube.gt_depth_z, tube.gt_normals,
                          tube.mask, title="tube")
    figures.save_comparison(tmp_path / "b.png", tube.gt_depth_z * 1.01, tube.gt_depth_z, tube.mask)
    figures.plot_cross_section(tmp_path / "c.png", section, truth=section, row=50)
    figures.plot_convergence(tmp_path / "d.png", report)
    figures.plot_residual_histogram(tmp_path / "e.png", np.array([-1.2, 0.3, 2.5]))
    for name in "abcde":
        assert (tmp_path / f"{name}.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_figures_are_deterministic(tmp_path, tube):
    for name in ("a.png", "b.png"):
        figures.save_triptych(tmp_path / name, tube.image, tube.gt_depth_z, tube.gt_normals, tube.mask)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
