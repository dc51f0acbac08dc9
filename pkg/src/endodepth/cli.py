"""Command-line interface: simulate, calibrate, preprocess, depth, eval.

Exit codes: 0 success, 2 input/config error, 3 calibration failure,
4 solver divergence.
"""
from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import figures
from . import io as fio
from .calib import CalibOptions, CalibProblem, evaluate_model, solve_calibration
from .depth import DepthMap, EnergyConfig, NormalMap, Parameterization, ray_grid, solve_depth
from .errors import CalibrationError, DivergenceError, EndoDepthError
from .experiments import PRESETS, CalibrationExperiment, load_experiment
from .metrics import REG_LABELS, evaluate, report_table
from .prep import preprocess
from .render import RenderedFrame, render

EXIT_OK, EXIT_INPUT, EXIT_CALIBRATION, EXIT_DIVERGENCE = 0, 2, 3, 4
log = logging.getLogger("endodepth")

# Files written for each simulated scene.
GT_FILES = ("image.png", "image.bin", "depth.bin", "zdepth.bin", "normals.bin", "mask.png",
            "depth.png", "normals.png", "triptych.png", "intrinsics.txt", "calibration.txt")


class InputError(EndoDepthError):
    """Bad command-line input: missing files, mismatched grids."""


def _mkdir(path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path, what="file"):
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _read_image(path):
    path = _require(path, "image")
    if path.suffix == ".bin":
        return fio.read_float_grid(path)
    img = fio.read_png(path)
    if img.ndim == 3:  # luminance, for colour inputs
        img = img @ np.array([0.2126, 0.7152, 0.0722])
    return img


def _write_keyvalues(path, items):
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in items))


def _read_keyvalues(path):
    out = {}
    for line in _require(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------------------- simulate

def _simulate_scene(exp, out, seed):
    frame = render(exp.scene, exp.intrinsics, exp.model, noise_sigma=exp.noise_sigma, seed=seed)
    folder = _mkdir(out / exp.name)
    fio.write_png(folder / "image.png", frame.image, bits=16)
    fio.write_float_grid(folder / "image.bin", frame.image)
    fio.write_float_grid(folder / "depth.bin", np.where(frame.mask, frame.gt_depth_euclidean, 0.0))
    fio.write_float_grid(folder / "zdepth.bin", np.where(frame.mask, frame.gt_depth_z, 0.0))
    fio.write_float_grid(folder / "normals.bin", np.where(frame.mask[..., None], frame.gt_normals, 0.0))
    fio.write_mask(folder / "mask.png", frame.mask)
    fio.write_png(folder / "depth.png", figures.depth_colours(frame.gt_depth_z, frame.mask))
    fio.write_png(folder / "normals.png", figures.normal_colours(frame.gt_normals, frame.mask))
    figures.save_triptych(folder / "triptych.png", frame.image, frame.gt_depth_z,
                          frame.gt_normals, frame.mask, title=exp.name)
    fio.write_intrinsics(folder / "intrinsics.txt", exp.intrinsics)
    fio.write_calibration(folder / "calibration.txt", exp.calibration)
    log.info("wrote %s", folder)


def _simulate_calibration(exp, out, seed):
    if seed is not None:
        exp = replace(exp, seed=seed)
    obs, truth = exp.generate()
    folder = _mkdir(out / exp.name)
    fio.write_observations(folder / "observations.csv", obs)
    fio.write_calibration(folder / "truth.txt", truth)
    fio.write_intrinsics(folder / "intrinsics.txt", exp.intrinsics)
    log.info("wrote %s (%d observations)", folder, len(obs))


def cmd_simulate(args):
    experiments = [load_experiment(p) for p in args.config] if args.config else list(PRESETS.values())
    out = _mkdir(args.out)
    for exp in experiments:
        if isinstance(exp, CalibrationExperiment):
            _simulate_calibration(exp, out, args.seed)
        else:
            _simulate_scene(exp, out, exp.seed if args.seed is None else args.seed)
    return EXIT_OK


# --------------------------------------------------------------------------- calibrate

def _calib_options(args):
    options = CalibOptions(estimate_gamma=True)
    if args.config:
        exp = load_experiment(args.config[0])
        if not isinstance(exp, CalibrationExperiment):
            raise InputError(f"{args.config[0]} is not a calibration config")
        options = exp.options
    if args.estimate_gamma is not None:
        options = replace(options, estimate_gamma=args.estimate_gamma)
    if args.brdf is not None:
        options = replace(options, brdf_mode=args.brdf)
    return options


def cmd_calibrate(args):
    obs = fio.read_observations(_require(args.observations, "observations file"))
    options = _calib_options(args)
    result = solve_calibration(CalibProblem(obs, options))
    out = _mkdir(args.out)
    fio.write_calibration(out / "calibration.txt", result.model)
    ev = evaluate_model(result.model, obs, result.frames)
    counts, edges = ev.histogram
    _write_keyvalues(out / "residuals.txt", [
        ("observations", len(obs)),
        ("frames", ",".join(str(int(f)) for f in result.frames)),
        ("mean", repr(float(ev.mean))),
        ("std", repr(float(ev.std))),
        ("iterations", result.iterations),
        ("converged", result.converged),
        ("max_alpha_deg", repr(float(np.degrees(ev.max_alpha)))),
    ])
    with open(out / "residual_histogram.csv", "w") as fh:
        fh.write("bin_low,bin_high,count\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")
    with open(out / "spread_profile.csv", "w") as fh:
        fh.write("alpha_low_deg,alpha_high_deg,relative_error,unsampled\n")
        for i, err in enumerate(ev.spread_error):
            lo, hi = np.degrees(ev.alpha_bins[i:i + 2])
            fh.write(f"{lo:.6g},{hi:.6g},{float(err)!r},{int(ev.unsampled[i])}\n")
    figures.plot_residual_histogram(out / "residual_histogram.png", ev.residuals)
    print(f"k = {result.model.k:.6g}  gamma = {result.model.gamma:.6g}  "
          f"residual mean {ev.mean:.3f} std {ev.std:.3f} gray levels")
    return EXIT_OK


# --------------------------------------------------------------------------- preprocess / depth

def _load_rig(args):
    model = fio.read_calibration(_require(args.calibration, "calibration file"))
    intr = fio.read_intrinsics(_require(args.intrinsics, "intrinsics file"))
    return model, intr


def _write_prep(folder, prep):
    scale = max(float(prep.canonical.max()), 1e-12)
    fio.write_float_grid(folder / "canonical.bin", prep.canonical)
    fio.write_png(folder / "canonical.png", prep.canonical / scale, bits=16)
    fio.write_float_grid(folder / "inpainted.bin", prep.image)
    fio.write_png(folder / "inpainted.png", prep.image / scale, bits=16)
    fio.write_mask(folder / "highlights.png", prep.report.highlight_mask)
    (folder / "prep_report.txt").write_text("\n".join(prep.report.lines()) + "\n")


def cmd_preprocess(args):
    model, intr = _load_rig(args)
    raw = _read_image(args.image)
    prep = preprocess(raw, model, intr, args.frame)
    _write_prep(_mkdir(args.out), prep)
    return EXIT_OK


def _energy_config(args):
    config = EnergyConfig()
    name = Path(args.image).parent.name
    row = None
    if args.config:
        exp = load_experiment(args.config[0])
        if isinstance(exp, CalibrationExperiment):
            raise InputError(f"{args.config[0]} is not a scene config")
        config, name, row = exp.solver, exp.name, exp.cross_section_row
    overrides = {k: v for k, v in (("parameterization", args.xi), ("order", args.order),
                                   ("lam", args.lam), ("max_iter", args.max_iter)) if v is not None}
    return replace(config, **overrides), name, row


def cmd_depth(args):
    model, intr = _load_rig(args)
    raw = _read_image(args.image)
    config, scene_name, row = _energy_config(args)
    row = args.row if args.row is not None else (row if row is not None else intr.height // 2)
    out = _mkdir(args.out)
    prep = preprocess(raw, model, intr, args.frame)
    _write_prep(out, prep)
    mask = prep.report.valid
    if args.mask:
        mask = mask & fio.read_mask(_require(args.mask, "mask"))
    try:
        sol = solve_depth(prep.sensor, model, intr, config, t=args.frame, mask=mask)
    except DivergenceError as exc:
        log_path = out / "convergence.log"
        log_path.write_text("iteration,energy\n" + "".join(
            f"{i},{float(e)!r}\n" for i, e in enumerate(exc.trace)))
        print(f"error: depth solver diverged ({exc}); convergence log: {log_path}", file=sys.stderr)
        return EXIT_DIVERGENCE
    fio.write_float_grid(out / "depth.bin", sol.depth.values)
    fio.write_float_grid(out / "depth_euclidean.bin", sol.euclidean.values)
    fio.write_float_grid(out / "normals.bin", sol.normals.vectors)
    rays, _ = ray_grid(intr)
    zdepth = sol.euclidean.values * rays[..., 2]
    fio.write_png(out / "depth.png", figures.depth_colours(zdepth, sol.euclidean.mask))
    fio.write_png(out / "normals.png", figures.normal_colours(sol.normals.vectors, sol.normals.mask))
    (out / "convergence.log").write_text("\n".join(sol.report.lines()) + "\n")
    figures.plot_convergence(out / "convergence.png", sol.report)
    section = figures.cross_section(sol.euclidean.values, sol.euclidean.mask, rays, row)
    figures.write_cross_section(out / "cross_section.csv", section)
    figures.plot_cross_section(out / "cross_section.png", section, row=row)
    _write_keyvalues(out / "run.txt", [
        ("scene", scene_name),
        ("xi", config.parameterization),
        ("reg", REG_LABELS[config.order]),
        ("lam", repr(float(config.lam))),
        ("iterations", sol.report.iterations),
        ("converged", sol.report.converged),
        ("reason", sol.report.reason),
    ])
    print(f"{sol.report.iterations} iterations ({sol.report.reason}); outputs in {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- eval

def _load_truth(folder):
    folder = _require(folder, "ground-truth folder")
    depth = fio.read_float_grid(_require(folder / "depth.bin"))
    zdepth = fio.read_float_grid(_require(folder / "zdepth.bin"))
    normals = fio.read_float_grid(_require(folder / "normals.bin"))
    mask = fio.read_mask(_require(folder / "mask.png"))
    image = fio.read_float_grid(folder / "image.bin") if (folder / "image.bin").exists() else depth * 0
    return RenderedFrame(image, depth, zdepth, normals, mask)


def _evaluate_folder(est_dir, gt_dir, align_scale):
    est_dir = _require(est_dir, "estimate folder")
    run = _read_keyvalues(est_dir / "run.txt")
    truth = _load_truth(gt_dir)
    values = fio.read_float_grid(_require(est_dir / "depth_euclidean.bin"))
    vectors = fio.read_float_grid(_require(est_dir / "normals.bin"))
    if values.shape != truth.mask.shape or vectors.shape[:2] != truth.mask.shape:
        raise InputError(f"grid of {est_dir} does not match ground truth {gt_dir}")
    depth = DepthMap(values, Parameterization.EUCLIDEAN, values > 0)
    normals = NormalMap(vectors, np.linalg.norm(vectors, axis=-1) > 0)
    result = evaluate(depth, normals, truth, align_scale=align_scale,
                      iterations=int(run.get("iterations", 0)))
    return run.get("scene", Path(gt_dir).name), run.get("xi", "?"), run.get("reg", "?"), result


def cmd_eval(args):
    if args.batch:
        runs = sorted(Path(args.estimate).rglob("run.txt"))
        if not runs:
            raise InputError(f"no depth runs (run.txt) under {args.estimate}")
        jobs = [(r.parent, Path(args.truth) / _read_keyvalues(r)["scene"]) for r in runs]
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(lambda job: _evaluate_folder(*job, args.align_scale), jobs))
    else:
        rows = [_evaluate_folder(args.estimate, args.truth, args.align_scale)]
    csv_text, table = report_table(rows)
    out = _mkdir(args.out)
    (out / "eval.csv").write_text(csv_text)
    (out / "eval.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", metavar="PATH",
                        help="experiment config file (simulate accepts several)")
    common.add_argument("--seed", type=int, default=None, help="noise seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker threads for batch work")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="endodepth",
                                     description="Photometric depth for endoscope-like rigs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="render synthetic scenes or a calibration sequence")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="fit a photometric model to observations")
    p.add_argument("observations", help="observations file (.csv or binary table)")
    p.add_argument("--estimate-gamma", dest="estimate_gamma", action="store_true", default=None)
    p.add_argument("--fixed-gamma", dest="estimate_gamma", action="store_false")
    p.add_argument("--brdf", choices=("lambertian", "knots"), default=None)
    p.set_defaults(func=cmd_calibrate)

    for name, func, text in (("preprocess", cmd_preprocess, "compensate and remove highlights"),
                             ("depth", cmd_depth, "estimate depth and normals from one image")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("image", help="image (.png or float .bin)")
        p.add_argument("--calibration", required=True, help="photometric calibration file")
        p.add_argument("--intrinsics", required=True, help="camera intrinsics file")
        p.add_argument("--frame", type=int, default=0, help="frame index selecting the gain")
        p.set_defaults(func=func)
        if name == "depth":
            p.add_argument("--mask", help="optional 8-bit mask PNG restricting the solve")
            p.add_argument("--row", type=int, help="image row for the cross-section")
            p.add_argument("--xi", choices=("1/z", "d", "1/d"), help="depth parameterization")
            p.add_argument("--order", type=int, choices=(1, 2), help="regularizer order")
            p.add_argument("--lam", type=float, help="regularizer weight")
            p.add_argument("--max-iter", dest="max_iter", type=int, help="iteration cap")

    p = sub.add_parser("eval", parents=[common], help="score depth estimates against ground truth")
    p.add_argument("estimate", help="depth output folder (or root of many with --batch)")
    p.add_argument("truth", help="simulated scene folder (or root of scene folders with --batch)")
    p.add_argument("--batch", action="store_true", help="evaluate every depth run under ESTIMATE")
    p.add_argument("--align-scale", dest="align_scale", action="store_true",
                   help="median-scale the estimate first (unknown gain)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"error: calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except DivergenceError as exc:
        print(f"error: depth solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (EndoDepthError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
