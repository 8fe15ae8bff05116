"""File-to-file pipeline stages: simulate, preprocess, fit, fuse, eval, full.

A run directory holds ``scene.glr`` and ``dcr.glf`` plus one sub-directory per
scan fraction (``f1.00``, ``f0.25``, ...). Every stage writes a
``<stage>.manifest.json`` listing the config, seed and SHA-256 of each input
and output, so a stage can be re-run in isolation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import evaluation, formats, plotting
from .acquisition import CountCube, depth_to_gate_index, gate_index_to_depth, simulate
from .config import RunConfig
from .fitting import FitResult, apply_edge_correction, fit_cube, write_fit_report
from .fusion import (build_weights, fuse, nearest_valid_fill, rescale_rgb, subsample_scan_positions,
                     write_objective_csv)
from .preprocessing import preprocess
from .scene import build_panel_board_scene, load_scene, save_scene

log = logging.getLogger(__name__)

STAGES = ("simulate", "preprocess", "fit", "fuse", "eval", "full")


class StageInputError(RuntimeError):
    """A stage input is missing or incompatible with the configuration."""


def fraction_dir(out: Path, fraction: float) -> Path:
    return Path(out) / f"f{fraction:.2f}"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(*paths: Path) -> None:
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise StageInputError("missing stage input(s): " + ", ".join(missing))


def _manifest(cfg: RunConfig, where: Path, stage: str, fraction, inputs, outputs) -> Path:
    root = where
    doc = {
        "stage": stage,
        "fraction": fraction,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {_rel(p, root): _sha256(Path(p)) for p in inputs},
        "outputs": {_rel(p, root): _sha256(Path(p)) for p in outputs},
    }
    path = Path(where) / f"{stage}.manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _rel(p, root) -> str:
    p = Path(p).resolve()
    try:
        return str(p.relative_to(Path(root).resolve()))
    except ValueError:
        return str(Path("..") / p.relative_to(Path(root).resolve().parent))


def _scene(cfg: RunConfig):
    return build_panel_board_scene(cfg.board, cfg.width, cfg.height)


# ------------------------------------------------------------------ stages --

def cmd_simulate(cfg: RunConfig, out, fraction: float = 1.0) -> Path:
    out = Path(out)
    fdir = fraction_dir(out, fraction)
    fdir.mkdir(parents=True, exist_ok=True)
    scene = _scene(cfg)
    scene_path = out / "scene.glr"
    save_scene(scene, scene_path)
    dcr = cfg.dcr_map()
    dcr_path = out / "dcr.glf"
    formats.write_float_stack(dcr_path, dcr)

    if fraction >= 1.0:
        positions = np.arange(cfg.scan.num_positions)
    else:
        positions = subsample_scan_positions(cfg.scan, fraction, cfg.seed, cfg.height, cfg.width).positions
    noise = cfg.noise_with_dcr()
    cube = simulate(scene, cfg.gate, cfg.scan, noise, positions=positions)
    coverage = cube.exposures // cfg.scan.bitplanes_per_position
    if coverage.max(initial=0) > 255:
        raise StageInputError("more than 255 overlapping spots per pixel cannot be stored")
    formats.write_count_cube(fdir / "cube.glc", cube.counts, cube.max_count)
    formats.write_mask(fdir / "coverage.glm", coverage)
    (fdir / "positions.txt").write_text("\n".join(str(int(q)) for q in positions) + "\n")
    outputs = [scene_path, dcr_path, fdir / "cube.glc", fdir / "coverage.glm", fdir / "positions.txt"]
    log.info("simulate f=%.2f: %d positions, coverage %.1f%%", fraction, len(positions),
             100 * float((coverage > 0).mean()))
    return _manifest(cfg, fdir, "simulate", fraction, [], outputs)


def _load_cube(cfg: RunConfig, fdir: Path) -> CountCube:
    _require(fdir / "cube.glc", fdir / "coverage.glm")
    counts, max_count = formats.read_count_cube(fdir / "cube.glc")
    coverage = formats.read_mask(fdir / "coverage.glm").astype(np.int64)
    if counts.shape[1:] != coverage.shape:
        raise StageInputError("cube and coverage dimensions disagree")
    if counts.shape != (cfg.gate.num_gates, cfg.height, cfg.width):
        raise StageInputError(f"cube shape {counts.shape} does not match the configuration")
    return CountCube(counts, coverage * cfg.scan.bitplanes_per_position, max_count)


def cmd_preprocess(cfg: RunConfig, out, fraction: float = 1.0) -> Path:
    out = Path(out)
    fdir = fraction_dir(out, fraction)
    cube = _load_cube(cfg, fdir)
    inputs = [fdir / "cube.glc", fdir / "coverage.glm"]
    dcr = None
    if cfg.preprocess["use_dcr_map"]:
        _require(out / "dcr.glf")
        dcr = formats.read_float_stack(out / "dcr.glf")[0]
        inputs.append(out / "dcr.glf")
    cleaned, background, hot = preprocess(
        cube,
        calib_gate_indices=cfg.preprocess["calib_gates"],
        dcr_map=dcr,
        exposure_s=cfg.noise.exposure_s,
        threshold_hz=cfg.preprocess["hot_threshold_hz"],
        linearize=cfg.preprocess["linearize"],
    )
    formats.write_float_stack(fdir / "cleaned.glf", cleaned.counts)
    formats.write_float_stack(fdir / "background.glf", background)
    formats.write_mask(fdir / "hot.glm", hot)
    log.info("preprocess f=%.2f: %.2f%% hot pixels", fraction, 100 * hot.mean())
    outputs = [fdir / "cleaned.glf", fdir / "background.glf", fdir / "hot.glm"]
    return _manifest(cfg, fdir, "preprocess", fraction, inputs, outputs)


def _load_cleaned(cfg: RunConfig, fdir: Path) -> CountCube:
    _require(fdir / "cleaned.glf", fdir / "hot.glm", fdir / "coverage.glm")
    counts = formats.read_float_stack(fdir / "cleaned.glf").astype(float)
    hot = formats.read_mask(fdir / "hot.glm") > 0
    coverage = formats.read_mask(fdir / "coverage.glm").astype(np.int64)
    if counts.shape[1:] != hot.shape or hot.shape != coverage.shape:
        raise StageInputError("cleaned cube and masks disagree in size")
    return CountCube(counts, coverage * cfg.scan.bitplanes_per_position, valid=~hot)


def cmd_fit(cfg: RunConfig, out, fraction: float = 1.0, report: bool = False) -> Path:
    fdir = fraction_dir(Path(out), fraction)
    cleaned = _load_cleaned(cfg, fdir)
    result = fit_cube(cleaned, cfg.fit)
    if not result.valid.any():
        log.warning("fit f=%.2f: no pixel produced a valid fit", fraction)
    depth = apply_edge_correction(result.depth_m(cfg.gate), result.valid, cfg.edge_correction_m)
    formats.write_float_stack(fdir / "fit.glf", np.stack(
        [result.d, result.r, result.residual_ss, result.valid.astype(float)]))
    formats.write_float_stack(fdir / "depth.glf", depth)
    outputs = [fdir / "fit.glf", fdir / "depth.glf"]
    if report:
        write_fit_report(fdir / "fit_report.csv", result)
        outputs.append(fdir / "fit_report.csv")
    log.info("fit f=%.2f: %.2f%% valid", fraction, 100 * result.validity_fraction)
    inputs = [fdir / "cleaned.glf", fdir / "hot.glm", fdir / "coverage.glm"]
    return _manifest(cfg, fdir, "fit", fraction, inputs, outputs)


def _load_fit(fdir: Path) -> FitResult:
    _require(fdir / "fit.glf")
    d, r, sse, valid = formats.read_float_stack(fdir / "fit.glf").astype(float)
    return FitResult(d, r, sse, valid > 0.5)


def cmd_fuse(cfg: RunConfig, out, fraction: float = 1.0) -> Path:
    out = Path(out)
    fdir = fraction_dir(out, fraction)
    cleaned = _load_cleaned(cfg, fdir)
    fit = _load_fit(fdir)
    _require(out / "scene.glr")
    rgb = load_scene(out / "scene.glr").rgb
    rgb = rescale_rgb(rgb, cleaned.height, cleaned.width)
    fc = cfg.fusion
    w_d, w_r = build_weights(rgb, fc.field_side, fc.sigma_c, fc.sigma_s, fc.color_space)
    observed = formats.read_mask(fdir / "coverage.glm") > 0
    if not (observed & cleaned.valid).any():
        raise StageInputError("no observed pixels to anchor the fusion")
    if not fit.valid.any():
        raise StageInputError("no valid fitted pixels to initialise the fusion")
    t0 = time.perf_counter()
    res = fuse(cleaned, observed, w_d, w_r, fit.d, fit.r, fit.valid, fc, h=cfg.fit.h,
               edge=cfg.fit.edge_function)
    log.info("fuse f=%.2f: %d iterations in %.1f s, objective %.6g -> %.6g", fraction, res.iterations,
             time.perf_counter() - t0, res.objective[0], res.objective[-1])
    depth = gate_index_to_depth(res.d, cfg.gate) + cfg.edge_correction_m
    formats.write_float_stack(fdir / "fused.glf", np.stack([res.d, res.r]))
    formats.write_float_stack(fdir / "fused_depth.glf", depth)
    write_objective_csv(fdir / "objective.csv", res.objective)
    inputs = [fdir / "cleaned.glf", fdir / "hot.glm", fdir / "coverage.glm", fdir / "fit.glf", out / "scene.glr"]
    outputs = [fdir / "fused.glf", fdir / "fused_depth.glf", fdir / "objective.csv"]
    return _manifest(cfg, fdir, "fuse", fraction, inputs, outputs)


def evaluate(cfg: RunConfig, out, fraction: float = 1.0):
    """Compute metrics reports for one fraction directory (no files written)."""
    out = Path(out)
    fdir = fraction_dir(out, fraction)
    scene = _scene(cfg)
    truth = scene.depth_m.astype(float)
    _require(fdir / "depth.glf", fdir / "fit.glf", fdir / "coverage.glm")
    fit = _load_fit(fdir)
    depth = formats.read_float_stack(fdir / "depth.glf")[0].astype(float)
    observed = formats.read_mask(fdir / "coverage.glm") > 0
    try:
        patches = evaluation.panel_patches(scene.panel_ids, cfg.evaluation["patch_px"],
                                           cfg.evaluation["border_px"], exclude=scene.blob_mask)
    except ValueError as exc:
        log.warning("panel patches unavailable: %s", exc)
        patches = None
    reports = []

    fit_rep = evaluation.MetricsReport(label=f"fit f{fraction:.2f}")
    fit_rep.coverage_fraction = evaluation.coverage(observed)
    fit_rep.validity_fraction = fit.validity_fraction
    if fit.valid.any():
        fit_rep.rmse_cm = evaluation.depth_rmse(depth, truth, fit.valid)
        if patches is not None:
            try:
                fit_rep.patch_std_cm = [evaluation.patch_stddev(depth, p, fit.valid) for p in patches]
                fit_rep.panel_mean_diff_cm = evaluation.panel_mean_differences(depth, patches, fit.valid)
            except ValueError as exc:
                log.warning("panel metrics unavailable for f=%.2f: %s", fraction, exc)
    reports.append(fit_rep)

    fused_depth = None
    if (fdir / "fused_depth.glf").exists():
        fused_depth = formats.read_float_stack(fdir / "fused_depth.glf")[0].astype(float)
        fused_d = formats.read_float_stack(fdir / "fused.glf")[0].astype(float)
        baseline = nearest_valid_fill(depth, fit.valid) if fit.valid.any() else np.full_like(depth, np.nan)
        rep = evaluation.MetricsReport(label=f"fused f{fraction:.2f}")
        rep.coverage_fraction = evaluation.coverage(observed)
        rep.validity_fraction = float(np.isfinite(fused_depth).mean())
        rep.rmse_cm = evaluation.depth_rmse(fused_depth, truth)
        rep.baseline_rmse_cm = evaluation.depth_rmse(baseline, truth)
        if patches is not None:
            rep.patch_std_cm = [evaluation.patch_stddev(fused_depth, p) for p in patches]
            rep.panel_mean_diff_cm = evaluation.panel_mean_differences(fused_depth, patches)
        if scene.blob_mask is not None and scene.blob_mask.any():
            blob = scene.blob_mask
            truth_idx = depth_to_gate_index(truth, cfg.gate)
            rep.blob_mean_error_steps = float(abs(fused_d[blob].mean() - truth_idx[blob].mean()))
            rep.blob_observed_fraction = float(observed[blob].mean())
        reports.append(rep)
    return reports, {"truth": truth, "depth": depth, "fit": fit, "fused_depth": fused_depth,
                     "patches": patches, "scene": scene}


def cmd_eval(cfg: RunConfig, out, fraction: float = 1.0) -> Path:
    out = Path(out)
    fdir = fraction_dir(out, fraction)
    t0 = time.perf_counter()
    reports, arrays = evaluate(cfg, out, fraction)
    elapsed = time.perf_counter() - t0
    for rep in reports:
        rep.runtime_s = elapsed
    (fdir / "metrics.json").write_text(
        json.dumps([r.to_dict(include_runtime=False) for r in reports], indent=2, sort_keys=True) + "\n")
    evaluation.write_reports_csv(fdir / "metrics.csv", reports)
    truth, depth, fit = arrays["truth"], arrays["depth"], arrays["fit"]
    lo, hi = float(truth.min()), float(truth.max())
    scene = arrays["scene"]
    evaluation.render(depth, fdir / "depth.png", fit.valid, vmin=lo, vmax=hi)
    evaluation.render(depth, fdir / "overlay_spad.png", fit.valid, overlay=fit.r, vmin=lo, vmax=hi)
    evaluation.render(depth, fdir / "overlay_rgb.png", fit.valid, overlay=scene.rgb, vmin=lo, vmax=hi)
    outputs = [fdir / "metrics.json", fdir / "metrics.csv", fdir / "depth.png", fdir / "overlay_spad.png",
               fdir / "overlay_rgb.png"]
    panels = [("fit", depth, fit.valid)]
    if arrays["fused_depth"] is not None:
        evaluation.render(arrays["fused_depth"], fdir / "fused.png", vmin=lo, vmax=hi)
        outputs.append(fdir / "fused.png")
        panels.append(("fused", arrays["fused_depth"], None))
    elif arrays["patches"] is not None:
        plotting.plot_patch_histograms(fdir / "patches.png", depth, arrays["patches"], fit.valid)
        outputs.append(fdir / "patches.png")
    plotting.plot_reconstruction(fdir / "report.png", truth, panels, lo, hi)
    outputs.append(fdir / "report.png")
    inputs = [fdir / "depth.glf", fdir / "fit.glf", fdir / "coverage.glm"]
    if arrays["fused_depth"] is not None:
        inputs += [fdir / "fused_depth.glf", fdir / "fused.glf"]
    for rep in reports:
        log.info("%s", json.dumps(rep.to_dict(include_runtime=False), sort_keys=True))
    return _manifest(cfg, fdir, "eval", fraction, inputs, outputs)


def cmd_full(cfg: RunConfig, out, fit_report: bool = False) -> Path:
    """Full-scan reconstruction followed by every configured subsampled fusion."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    manifests = []

    def timed(name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        result = fn(*args, **kwargs)
        timings[name] = round(time.perf_counter() - t0, 3)
        return result

    for fraction in [1.0] + list(cfg.fractions):
        tag = f"f{fraction:.2f}"
        manifests.append(timed(f"{tag}/simulate", cmd_simulate, cfg, out, fraction))
        manifests.append(timed(f"{tag}/preprocess", cmd_preprocess, cfg, out, fraction))
        manifests.append(timed(f"{tag}/fit", cmd_fit, cfg, out, fraction, report=fit_report))
        if fraction < 1.0:
            manifests.append(timed(f"{tag}/fuse", cmd_fuse, cfg, out, fraction))
        manifests.append(timed(f"{tag}/eval", cmd_eval, cfg, out, fraction))

    reports, histories, panels = [], {}, []
    truth = None
    for fraction in [1.0] + list(cfg.fractions):
        fdir = fraction_dir(out, fraction)
        reps, arrays = evaluate(cfg, out, fraction)
        reports.extend(reps)
        truth = arrays["truth"]
        if fraction == 1.0:
            panels.append(("full scan fit", arrays["depth"], arrays["fit"].valid))
        else:
            panels.append((f"{100 * fraction:g}% scan, fit", arrays["depth"], arrays["fit"].valid))
            panels.append((f"{100 * fraction:g}% scan, fused", arrays["fused_depth"], None))
            hist = np.loadtxt(fdir / "objective.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1]
            histories[f"{100 * fraction:g}%"] = hist
    evaluation.write_reports_csv(out / "summary.csv", reports)
    plotting.plot_reconstruction(out / "report.png", truth, panels)
    outputs = [out / "summary.csv", out / "report.png"]
    if histories:
        plotting.plot_objective(out / "objective.png", histories)
        outputs.append(out / "objective.png")
    (out / "timing.json").write_text(json.dumps(timings, indent=2, sort_keys=True) + "\n")
    return _manifest(cfg, out, "full", None, manifests, outputs)


def run_stage(cfg: RunConfig, stage: str, out, fraction: float = 1.0, fit_report: bool = False) -> Path:
    if stage == "simulate":
        return cmd_simulate(cfg, out, fraction)
    if stage == "preprocess":
        return cmd_preprocess(cfg, out, fraction)
    if stage == "fit":
        return cmd_fit(cfg, out, fraction, report=fit_report)
    if stage == "fuse":
        return cmd_fuse(cfg, out, fraction)
    if stage == "eval":
        return cmd_eval(cfg, out, fraction)
    if stage == "full":
        return cmd_full(cfg, out, fit_report=fit_report)
    raise ValueError(f"unknown stage {stage!r}")
