"""Per-pixel least-squares fit of the leading-edge model to cleaned count profiles."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .acquisition import CountCube, GateConfig, gate_index_to_depth
from .model import edge_shape, edge_slope, erf_model

# edge_shape >= 0.95 once (k - d) / h exceeds this
_PLATEAU_U = 1.1631


@dataclass(frozen=True)
class FitConfig:
    h: float = 1.0
    max_iters: int = 100
    convergence_tol: float = 1e-10
    min_amplitude: float = 3.0
    edge_function: str = "erf"
    min_plateau_samples: int = 3

    def __post_init__(self):
        if self.h < 0:
            raise ValueError("h must be non-negative")
        if self.convergence_tol <= 0 or self.max_iters < 1:
            raise ValueError("tolerances and iteration counts must be positive")


@dataclass
class PixelEstimate:
    d: float
    r: float
    b: float = 0.0
    residual_ss: float = float("nan")
    valid: bool = False


@dataclass
class FitResult:
    """Fitted rasters; ``d`` and ``r`` are NaN wherever ``valid`` is False."""

    d: np.ndarray  # gate-index units
    r: np.ndarray  # counts
    residual_ss: np.ndarray
    valid: np.ndarray

    def depth_m(self, gate: GateConfig) -> np.ndarray:
        return gate_index_to_depth(self.d, gate)

    @property
    def validity_fraction(self) -> float:
        return float(self.valid.mean()) if self.valid.size else 0.0


def _initial_guess(y: np.ndarray):
    K = y.shape[1]
    q = max(1, int(np.ceil(K / 4)))
    plateau = np.sort(y, axis=1)[:, -q:].mean(axis=1)
    above = y > (plateau / 2)[:, None]
    first = np.where(above.any(axis=1), above.argmax(axis=1), K // 2)
    return first.astype(float), plateau


def _closed_form_r(y, g):
    den = (g * g).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(den > 0, (y * g).sum(axis=1) / np.where(den > 0, den, 1.0), 0.0)
    return np.maximum(r, 0.0)


def _fit_step_edge(y, cfg: FitConfig):
    """h == 0: the model is piecewise constant in d, so search the breakpoints."""
    K = y.shape[1]
    k = np.arange(K, dtype=float)
    cands = np.arange(-1, 2 * K + 1) / 2.0
    best = np.full(y.shape[0], np.inf)
    d = np.zeros(y.shape[0])
    r = np.zeros(y.shape[0])
    for c in cands:
        g = np.broadcast_to(edge_shape(k, c, 0.0), y.shape)
        rc = _closed_form_r(y, g)
        sse = ((y - rc[:, None] * g) ** 2).sum(axis=1)
        better = sse < best
        best = np.where(better, sse, best)
        d = np.where(better, max(c, 0.0), d)
        r = np.where(better, rc, r)
    return d, r, best, np.ones(y.shape[0], dtype=bool)


def fit_profiles(y, cfg: FitConfig = FitConfig()):
    """Fit ``(d, r)`` for each row of ``y`` (pixels x gates), with ``b = 0``.

    Damped Gauss-Newton on the 2-parameter least-squares problem with
    projection onto ``d, r >= 0``. Returns ``(d, r, sse, valid)``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    P, K = y.shape
    if K < 3:
        raise ValueError("profiles need at least 3 gate samples")
    k = np.arange(K, dtype=float)[None, :]
    h, edge = cfg.h, cfg.edge_function

    if h == 0:
        d, r, sse, converged = _fit_step_edge(y, cfg)
    else:
        d, r = _initial_guess(y)
        mu = np.full(P, 1e-3)
        g = edge_shape(k, d[:, None], h, edge)
        sse = ((y - r[:, None] * g) ** 2).sum(axis=1)
        converged = np.zeros(P, dtype=bool)
        active = np.ones(P, dtype=bool)
        for _ in range(cfg.max_iters):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            ya, da, ra = y[idx], d[idx], r[idx]
            g = edge_shape(k, da[:, None], h, edge)
            jd = ra[:, None] * edge_slope(k, da[:, None], h, edge)
            res = ya - ra[:, None] * g
            a11 = (jd * jd).sum(1)
            a12 = (jd * g).sum(1)
            a22 = (g * g).sum(1)
            b1 = (jd * res).sum(1)
            b2 = (g * res).sum(1)
            m = mu[idx]
            A11 = a11 * (1 + m) + 1e-300
            A22 = a22 * (1 + m) + 1e-300
            det = A11 * A22 - a12 * a12
            det = np.where(np.abs(det) > 1e-300, det, 1e-300)
            step_d = (A22 * b1 - a12 * b2) / det
            step_r = (A11 * b2 - a12 * b1) / det
            nd = np.maximum(da + step_d, 0.0)
            nr = np.maximum(ra + step_r, 0.0)
            ng = edge_shape(k, nd[:, None], h, edge)
            nsse = ((ya - nr[:, None] * ng) ** 2).sum(1)
            ok = nsse <= sse[idx]
            d[idx] = np.where(ok, nd, da)
            r[idx] = np.where(ok, nr, ra)
            small = (np.abs(nd - da) <= cfg.convergence_tol * np.maximum(1.0, np.abs(da))) & (
                np.abs(nr - ra) <= cfg.convergence_tol * np.maximum(1.0, np.abs(ra))
            )
            stalled = ~ok & (m > 1e12)
            sse[idx] = np.where(ok, nsse, sse[idx])
            mu[idx] = np.where(ok, m / 3.0, m * 4.0)
            done = (ok & small) | stalled | (sse[idx] == 0)
            converged[idx[done]] = True
            active[idx[done]] = False

    valid = converged & (r >= cfg.min_amplitude) & np.isfinite(d) & np.isfinite(r)
    if h == 0:
        n_plateau = (k > d[:, None]).sum(1)
        n_base = (k < d[:, None]).sum(1)
    else:
        n_plateau = (k >= d[:, None] + _PLATEAU_U * h).sum(1)
        n_base = (k <= d[:, None] - _PLATEAU_U * h).sum(1)
    valid &= (n_plateau >= cfg.min_plateau_samples) & (n_base >= 1)
    return d, r, sse, valid


def fit_pixel(profile, cfg: FitConfig = FitConfig()) -> PixelEstimate:
    d, r, sse, valid = fit_profiles(np.asarray(profile, dtype=float)[None], cfg)
    return PixelEstimate(float(d[0]), float(r[0]), 0.0, float(sse[0]), bool(valid[0]))


def fit_cube(cube: CountCube, cfg: FitConfig = FitConfig(), mask=None, chunk: int = 16384) -> FitResult:
    """Fit every pixel of a cleaned cube; ``mask`` marks excluded pixels."""
    K, H, W = cube.counts.shape
    excluded = np.zeros((H, W), dtype=bool)
    if cube.valid is not None:
        excluded |= ~cube.valid
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (H, W):
            raise ValueError("mask does not match cube dimensions")
        excluded |= mask
    y = cube.counts.reshape(K, -1).T.astype(float)
    d = np.full(H * W, np.nan)
    r = np.full(H * W, np.nan)
    sse = np.full(H * W, np.nan)
    valid = np.zeros(H * W, dtype=bool)
    todo = np.flatnonzero(~excluded.ravel() & (y.max(axis=1) > 0))
    for start in range(0, todo.size, chunk):
        idx = todo[start : start + chunk]
        d[idx], r[idx], sse[idx], valid[idx] = fit_profiles(y[idx], cfg)
    d[~valid] = np.nan
    r[~valid] = np.nan
    return FitResult(d.reshape(H, W), r.reshape(H, W), sse.reshape(H, W), valid.reshape(H, W))


def model_cube(d, r, num_gates: int, h: float, b=0.0, edge: str = "erf") -> np.ndarray:
    k = np.arange(num_gates, dtype=float)[:, None, None]
    return erf_model(k, np.asarray(d)[None], np.asarray(r)[None], h, b, edge)


def apply_edge_correction(depth_m, valid, correction=0.0) -> np.ndarray:
    """Add a per-pixel (or global) depth correction in metres to valid pixels."""
    depth_m = np.asarray(depth_m, dtype=float)
    correction = np.broadcast_to(np.asarray(correction, dtype=float), depth_m.shape) \
        if np.ndim(correction) == 0 else np.asarray(correction, dtype=float)
    if correction.shape != depth_m.shape:
        raise ValueError("correction map does not match depth raster")
    out = depth_m.copy()
    valid = np.asarray(valid, dtype=bool)
    out[valid] = depth_m[valid] + correction[valid]
    return out


def calibrate_edge_correction(measured_depth_m, valid, reference_depth_m, model: str = "plane"):
    """Offset map that maps a measured reference target onto its known depth.

    ``model="plane"`` fits ``a + b*row + c*col`` to the offsets of valid
    pixels, which suppresses per-pixel noise; ``"pixel"`` keeps raw offsets
    (zero where the reference was invalid).
    """
    measured = np.asarray(measured_depth_m, dtype=float)
    valid = np.asarray(valid, dtype=bool) & np.isfinite(measured)
    ref = np.broadcast_to(np.asarray(reference_depth_m, dtype=float), measured.shape)
    offset = np.where(valid, ref - np.where(valid, measured, 0.0), 0.0)
    if model == "pixel":
        return offset
    if model != "plane":
        raise ValueError("model must be 'plane' or 'pixel'")
    if valid.sum() < 3:
        raise ValueError("need at least 3 valid reference pixels")
    rows, cols = np.nonzero(valid)
    A = np.column_stack([np.ones(rows.size), rows, cols])
    coef, *_ = np.linalg.lstsq(A, offset[valid], rcond=None)
    rr, cc = np.mgrid[0 : measured.shape[0], 0 : measured.shape[1]]
    return coef[0] + coef[1] * rr + coef[2] * cc


def write_fit_report(path, result: FitResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "d", "r", "residual_ss", "valid"])
        H, W = result.valid.shape
        for i in range(H):
            for j in range(W):
                w.writerow([i, j, f"{result.d[i, j]:.9g}", f"{result.r[i, j]:.9g}",
                            f"{result.residual_ss[i, j]:.9g}", int(result.valid[i, j])])
