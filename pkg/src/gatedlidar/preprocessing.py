"""Background removal, hot-pixel masking and binary-count linearisation."""

from __future__ import annotations

import numpy as np

from .acquisition import CountCube

DEFAULT_CALIB_GATES = (0, 1, 2)


def linearize_counts(cube: CountCube) -> CountCube:
    """Convert binary-frame counts to photon-rate estimates.

    A pixel that fired in ``y`` of ``N`` frames saw on average
    ``-ln(1 - y/N)`` photons per frame; the result is scaled back by ``N`` so
    values stay in count units. Saturated pixels are capped at ``y = N - 1/2``.
    """
    n = cube.exposures.astype(float)[None]
    y = np.minimum(cube.counts.astype(float), np.maximum(n - 0.5, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        lin = np.where(n > 0, -n * np.log1p(-y / np.where(n > 0, n, 1.0)), 0.0)
    return CountCube(lin, cube.exposures, cube.max_count, valid=cube.valid)


def estimate_background(cube: CountCube, calib_gate_indices=DEFAULT_CALIB_GATES) -> np.ndarray:
    """Per-pixel median of the counts at gates that precede every target return."""
    idx = np.asarray(list(calib_gate_indices), dtype=int)
    if idx.size == 0:
        raise ValueError("calib_gate_indices must not be empty")
    if idx.min() < 0 or idx.max() >= cube.num_gates:
        raise ValueError(f"calibration gates must lie in [0, {cube.num_gates})")
    return np.median(cube.counts[idx].astype(float), axis=0)


def detect_hot_pixels(dcr_map=None, threshold_hz=10_000.0, *, background=None,
                      exposures=None, exposure_s=None) -> np.ndarray:
    """Mask pixels whose dark count rate exceeds ``threshold_hz``.

    Either pass a measured ``dcr_map`` (Hz) or a background map together with
    the per-pixel number of frames and the frame exposure; the rate is then
    estimated as background counts over total exposure per gate sample.
    """
    if threshold_hz <= 0:
        raise ValueError("threshold_hz must be positive")
    if dcr_map is None:
        if background is None or exposures is None or exposure_s is None:
            raise ValueError("need dcr_map or background + exposures + exposure_s")
        t = np.asarray(exposures, dtype=float) * exposure_s
        with np.errstate(divide="ignore", invalid="ignore"):
            dcr_map = np.where(t > 0, np.asarray(background, dtype=float) / t, 0.0)
    return np.asarray(dcr_map, dtype=float) > threshold_hz


def subtract_background(cube: CountCube, background, mask=None) -> CountCube:
    """Clamped subtraction ``max(0, y - background)``; masked pixels become invalid.

    Clamping biases near-zero samples slightly upwards. The fit keys on the
    edge position so the bias is tolerated.
    """
    background = np.asarray(background, dtype=float)
    if background.shape != cube.counts.shape[1:]:
        raise ValueError("background map does not match cube dimensions")
    cleaned = np.maximum(cube.counts.astype(float) - background[None], 0.0)
    valid = np.ones(background.shape, dtype=bool) if cube.valid is None else cube.valid.copy()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != background.shape:
            raise ValueError("hot-pixel mask does not match cube dimensions")
        valid &= ~mask
    cleaned[:, ~valid] = 0.0
    return CountCube(cleaned, cube.exposures, cube.max_count, valid=valid)


def preprocess(cube: CountCube, *, calib_gate_indices=DEFAULT_CALIB_GATES, dcr_map=None,
               exposure_s=None, threshold_hz=10_000.0, linearize=True):
    """Linearise, estimate the floor, mask hot pixels and subtract.

    Returns ``(cleaned_cube, background_map, hot_mask)``.
    """
    work = linearize_counts(cube) if linearize else cube
    background = estimate_background(work, calib_gate_indices)
    if dcr_map is not None:
        hot = detect_hot_pixels(dcr_map, threshold_hz)
    elif exposure_s is not None:
        hot = detect_hot_pixels(threshold_hz=threshold_hz, background=background,
                                exposures=cube.exposures, exposure_s=exposure_s)
    else:
        hot = np.zeros(background.shape, dtype=bool)
    return subtract_background(work, background, hot), background, hot
