"""RGB-guided non-local fusion of sparse depth/intensity estimates.

Weights come from a co-registered colour image: for every pixel ``n`` and
every offset ``m`` of a square field around it, the mean absolute RGB
difference becomes an intensity weight ``w_r[n, m] = exp(-diff / sigma_c)``.
Depth weights additionally decay with the normalised offset length.

The fused rasters minimise

    NLL(d, r) + tau_d * sum w_d[n, m] |d_n - d_{n+m}|
              + tau_r * sum w_r[n, m] |r_n - r_{n+m}|,   d, r >= 0,

where NLL is the Poisson negative log-likelihood of the observed pixels.
The solver alternates a depth block and an intensity block. Each block builds
a quadratic model of the likelihood, solves the model plus the weighted-l1
term with a diagonally preconditioned primal-dual method, and accepts the
candidate only after a backtracking search confirms the full objective did not
increase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .acquisition import CountCube, ScanPattern
from .model import edge_shape, edge_slope

NLL_EPS = 1e-12


# ---------------------------------------------------------------- weights --

def field_offsets(field_side: int) -> np.ndarray:
    """(field_side**2, 2) array of (drow, dcol), row-major over the field."""
    if field_side < 1 or field_side % 2 == 0:
        raise ValueError("field_side must be a positive odd integer")
    R = field_side // 2
    dr, dc = np.mgrid[-R : R + 1, -R : R + 1]
    return np.stack([dr.ravel(), dc.ravel()], axis=1)


def rescale_rgb(rgb, height: int, width: int) -> np.ndarray:
    """Bilinear resample with corner-aligned sampling, channels independent."""
    if height < 1 or width < 1:
        raise ValueError("target dimensions must be positive")
    src = np.asarray(rgb, dtype=float)
    if src.ndim != 3 or src.shape[0] < 1 or src.shape[1] < 1:
        raise ValueError("rgb must be (H, W, C) with H, W >= 1")
    Hs, Ws = src.shape[:2]
    if (Hs, Ws) == (height, width):
        return np.asarray(rgb).copy()

    def axis(n_src, n_dst):
        if n_dst == 1 or n_src == 1:
            pos = np.zeros(n_dst)
        else:
            pos = np.arange(n_dst) * (n_src - 1) / (n_dst - 1)
        lo = np.clip(np.floor(pos).astype(int), 0, n_src - 1)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    r_lo, r_hi, fr = axis(Hs, height)
    c_lo, c_hi, fc = axis(Ws, width)
    top = src[r_lo][:, c_lo] * (1 - fc)[None, :, None] + src[r_lo][:, c_hi] * fc[None, :, None]
    bot = src[r_hi][:, c_lo] * (1 - fc)[None, :, None] + src[r_hi][:, c_hi] * fc[None, :, None]
    out = top * (1 - fr)[:, None, None] + bot * fr[:, None, None]
    out = np.clip(out, 0, 255)
    if np.issubdtype(np.asarray(rgb).dtype, np.integer):
        return np.rint(out).astype(np.asarray(rgb).dtype)
    return out


def transform_colors(rgb, space: str = "rgb") -> np.ndarray:
    """Optional colour-space change applied before computing differences."""
    x = np.asarray(rgb, dtype=float)
    if space == "rgb":
        return x
    if space == "yuv":
        m = np.array([[0.299, 0.587, 0.114], [-0.14713, -0.28886, 0.436], [0.615, -0.51499, -0.10001]])
        return x @ m.T
    if space == "ycrcb":
        m = np.array([[0.299, 0.587, 0.114], [0.5, -0.418688, -0.081312], [-0.168736, -0.331264, 0.5]])
        return x @ m.T + np.array([0.0, 128.0, 128.0])
    raise ValueError(f"unknown colour space {space!r}")


def compute_color_differences(rgb, field_side: int = 15) -> np.ndarray:
    """Mean absolute channel difference to every field offset, NaN out of bounds.

    Returns an (H, W, field_side**2) float array.
    """
    offsets = field_offsets(field_side)
    R = field_side // 2
    img = np.asarray(rgb, dtype=float)
    H, W, C = img.shape
    padded = np.full((H + 2 * R, W + 2 * R, C), np.nan)
    padded[R : R + H, R : R + W] = img
    out = np.empty((H, W, len(offsets)))
    for m, (dr, dc) in enumerate(offsets):
        shifted = padded[R + dr : R + dr + H, R + dc : R + dc + W]
        out[:, :, m] = np.abs(img - shifted).mean(axis=2)
    return out


def compute_intensity_weights(diff, sigma_c: float = 10.0) -> np.ndarray:
    if sigma_c <= 0:
        raise ValueError("sigma_c must be positive")
    diff = np.asarray(diff, dtype=float)
    w = np.exp(-np.where(np.isnan(diff), np.inf, diff) / sigma_c)
    w[:, :, diff.shape[2] // 2] = 0.0
    return w


def compute_depth_weights(w_r, field_side: int = 15, sigma_s: float = 0.5) -> np.ndarray:
    """Scale intensity weights by ``exp(-(dist / dist_max) / sigma_s)``."""
    if sigma_s <= 0:
        raise ValueError("sigma_s must be positive")
    offsets = field_offsets(field_side)
    dist = np.hypot(offsets[:, 0], offsets[:, 1])
    dmax = dist.max() if dist.max() > 0 else 1.0
    return np.asarray(w_r) * np.exp(-(dist / dmax) / sigma_s)[None, None, :]


def build_weights(rgb, field_side=15, sigma_c=10.0, sigma_s=0.5, color_space="rgb"):
    """Return ``(w_d, w_r)`` for an RGB image already at depth resolution."""
    diff = compute_color_differences(transform_colors(rgb, color_space), field_side)
    w_r = compute_intensity_weights(diff, sigma_c)
    return compute_depth_weights(w_r, field_side, sigma_s), w_r


# ------------------------------------------------------------ graph terms --

class PairGraph:
    """Unordered pixel pairs within the field, with summed ordered-pair weights.

    Each pair ``(n, n + m)`` for ``m`` in the positive half of the field carries
    ``w[n, m] + w[n + m, -m]``, so summing over pairs equals summing over all
    ordered (pixel, offset) terms. ``coupling`` is zero where ``n + m`` falls
    outside the image.
    """

    def __init__(self, weights: np.ndarray):
        H, W, M = weights.shape
        side = int(round(math.sqrt(M)))
        if side * side != M:
            raise ValueError("weights must have field_side**2 entries per pixel")
        self.shape = (H, W)
        offsets = field_offsets(side)
        half = [m for m, (dr, dc) in enumerate(offsets) if dr > 0 or (dr == 0 and dc > 0)]
        self.offsets = offsets[half].astype(np.int64)
        self.coupling = np.zeros((len(half), H, W), dtype=np.float32)
        for j, m in enumerate(half):
            dr, dc = offsets[m]
            rs = slice(max(0, -dr), H - max(0, dr))
            cs = slice(max(0, -dc), W - max(0, dc))
            rt = slice(max(0, dr), H - max(0, -dr))
            ct = slice(max(0, dc), W - max(0, -dc))
            self.coupling[j][rs, cs] = weights[rs, cs, m] + weights[rt, ct, M - 1 - m]
        self.degree = _adjoint(self.coupling, self.offsets, True)  # weighted degree

    def zeros(self) -> np.ndarray:
        return np.zeros_like(self.coupling)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Pair differences ``x[n + m] - x[n]`` (zero where out of bounds)."""
        return _forward(np.ascontiguousarray(x, dtype=float), self.offsets)

    def adjoint(self, p: np.ndarray) -> np.ndarray:
        return _adjoint(p, self.offsets, False)

    def penalty(self, x: np.ndarray) -> float:
        return _penalty(np.ascontiguousarray(x, dtype=float), self.coupling, self.offsets)


# Kernels walk one offset at a time and take row views so the inner loop is a
# unit-stride sweep; dual and coupling stacks are float32 to halve traffic.

@njit(cache=True, boundscheck=False)
def _forward(x, offsets):
    H, W = x.shape
    out = np.zeros((offsets.shape[0], H, W))
    for j in range(offsets.shape[0]):
        dr = offsets[j, 0]
        dc = offsets[j, 1]
        for i in range(max(0, -dr), H - max(0, dr)):
            src = x[i]
            dst = x[i + dr]
            o = out[j, i]
            for k in range(max(0, -dc), W - max(0, dc)):
                o[k] = dst[k + dc] - src[k]
    return out


@njit(cache=True, boundscheck=False)
def _adjoint(p, offsets, absolute):
    H, W = p.shape[1], p.shape[2]
    out = np.zeros((H, W))
    for j in range(offsets.shape[0]):
        dr = offsets[j, 0]
        dc = offsets[j, 1]
        for i in range(max(0, -dr), H - max(0, dr)):
            pj = p[j, i]
            here = out[i]
            there = out[i + dr]
            for k in range(max(0, -dc), W - max(0, dc)):
                v = pj[k]
                if absolute:
                    here[k] += v
                else:
                    here[k] -= v
                there[k + dc] += v
    return out


@njit(cache=True, boundscheck=False)
def _penalty(x, coupling, offsets):
    H, W = x.shape
    total = 0.0
    for j in range(offsets.shape[0]):
        dr = offsets[j, 0]
        dc = offsets[j, 1]
        for i in range(max(0, -dr), H - max(0, dr)):
            src = x[i]
            dst = x[i + dr]
            cj = coupling[j, i]
            for k in range(max(0, -dc), W - max(0, dc)):
                total += cj[k] * abs(dst[k + dc] - src[k])
    return total


@njit(cache=True, boundscheck=False)
def _primal_dual(x, target, curv, step, coupling, tau, offsets, dual, iters, sigma):
    H, W = x.shape
    adj = _adjoint(dual, offsets, False)
    x_new = np.empty_like(x)
    x_bar = np.empty_like(x)
    for _ in range(iters):
        for i in range(H):
            for k in range(W):
                s = step[i, k]
                v = (x[i, k] - s * adj[i, k] + s * curv[i, k] * target[i, k]) / (1.0 + s * curv[i, k])
                v = max(v, 0.0)
                x_bar[i, k] = 2.0 * v - x[i, k]
                x_new[i, k] = v
                adj[i, k] = 0.0
        for j in range(offsets.shape[0]):
            dr = offsets[j, 0]
            dc = offsets[j, 1]
            for i in range(max(0, -dr), H - max(0, dr)):
                src = x_bar[i]
                dst = x_bar[i + dr]
                here = adj[i]
                there = adj[i + dr]
                dj = dual[j, i]
                cj = coupling[j, i]
                for k in range(max(0, -dc), W - max(0, dc)):
                    b = tau * cj[k]
                    v = dj[k] + sigma * b * (dst[k + dc] - src[k])
                    v = min(max(v, -b), b)
                    dj[k] = v
                    here[k] -= v
                    there[k + dc] += v
        x, x_new = x_new, x
    return x


def weighted_difference_sum(x, weights) -> float:
    """Direct ordered-pair sum ``sum_n sum_m w[n, m] |x_n - x_{n+m}|``."""
    x = np.asarray(x, dtype=float)
    H, W, M = weights.shape
    side = int(round(math.sqrt(M)))
    R = side // 2
    padded = np.pad(x, R)
    win = sliding_window_view(padded, (side, side)).reshape(H, W, M)
    diffs = np.abs(x[:, :, None] - win)
    return float(np.where(weights > 0, weights * diffs, 0.0).sum())


# ------------------------------------------------------------- likelihood --

def negative_log_likelihood(d, r, counts, observed, h, floor=0.0, edge="erf") -> float:
    """Poisson NLL ``sum lambda - y ln(lambda + eps)`` over observed pixels."""
    d = np.asarray(d, dtype=float)
    r = np.asarray(r, dtype=float)
    counts = np.asarray(counts, dtype=float)
    observed = np.asarray(observed, dtype=bool)
    if d.shape != r.shape or counts.shape[1:] != d.shape or observed.shape != d.shape:
        raise ValueError("raster, cube and mask dimensions disagree")
    floor = np.broadcast_to(np.asarray(floor, dtype=float), d.shape)
    y = counts[:, observed]
    k = np.arange(counts.shape[0], dtype=float)[:, None]
    lam = r[observed][None] * edge_shape(k, d[observed][None], h, edge) + floor[observed][None]
    return float((lam - y * np.log(lam + NLL_EPS)).sum())


class _Likelihood:
    """NLL restricted to observed pixels, with per-block derivatives."""

    def __init__(self, counts, observed, h, floor, edge):
        self.observed = observed
        self.y = counts[:, observed].astype(float)
        self.k = np.arange(counts.shape[0], dtype=float)[:, None]
        self.h, self.edge = h, edge
        self.floor = np.broadcast_to(np.asarray(floor, dtype=float), observed.shape)[observed][None]

    def value(self, d, r) -> float:
        do, ro = d[self.observed][None], r[self.observed][None]
        lam = ro * edge_shape(self.k, do, self.h, self.edge) + self.floor
        return float((lam - self.y * np.log(lam + NLL_EPS)).sum())

    def depth_model(self, d, r):
        """Gradient and Fisher curvature with respect to each observed depth."""
        do, ro = d[self.observed][None], r[self.observed][None]
        g = edge_shape(self.k, do, self.h, self.edge)
        dl = ro * edge_slope(self.k, do, self.h, self.edge)
        lam = ro * g + self.floor + NLL_EPS
        grad = ((1.0 - self.y / lam) * dl).sum(0)
        curv = (dl * dl / lam).sum(0)
        return grad, curv

    def intensity_model(self, d, r):
        do, ro = d[self.observed][None], r[self.observed][None]
        g = edge_shape(self.k, do, self.h, self.edge)
        lam = ro * g + self.floor + NLL_EPS
        grad = (g - self.y * g / lam).sum(0)
        curv = (self.y * g * g / (lam * lam)).sum(0)
        return grad, curv


# ----------------------------------------------------------------- solver --

@dataclass(frozen=True)
class FusionConfig:
    tau_d: float = 0.1
    tau_r: float = 0.003
    sigma_c: float = 10.0
    sigma_s: float = 0.5
    field_side: int = 15
    color_space: str = "rgb"
    max_iters: int = 40
    rel_tol: float = 1e-7
    inner_iters: int = 30
    max_newton_step: float = 2.0  # gate steps, caps the depth model step
    backtracks: int = 12
    floor: float | str = "auto"  # residual floor added to the model inside the NLL

    def __post_init__(self):
        if self.tau_d < 0 or self.tau_r < 0:
            raise ValueError("regularisation strengths must be non-negative")
        if self.sigma_c <= 0 or self.sigma_s <= 0:
            raise ValueError("weight scales must be positive")
        if self.max_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be positive")


@dataclass
class FusionResult:
    d: np.ndarray
    r: np.ndarray
    objective: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def depth_m(self, gate) -> np.ndarray:
        from .acquisition import gate_index_to_depth

        return gate_index_to_depth(self.d, gate)


def nearest_valid_fill(values, valid) -> np.ndarray:
    """Copy each invalid pixel's value from its nearest valid pixel."""
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise ValueError("no valid pixels to fill from")
    _, (ri, ci) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return np.asarray(values, dtype=float)[ri, ci]


def residual_floor(counts, observed, d0, h) -> np.ndarray:
    """Mean cleaned count on gates well before the initial edge estimate.

    Clamped background subtraction leaves a small positive residue; adding it
    to the model keeps ``ln(lambda)`` finite where the edge model is ~0.
    """
    K = counts.shape[0]
    k = np.arange(K, dtype=float)[:, None, None]
    pre = k <= (d0[None] - 3.0 * max(h, 0.5))
    none = ~pre.any(axis=0)
    pre[:3, none] = True
    n = pre.sum(0)
    floor = np.where(pre, counts, 0.0).sum(0) / np.maximum(n, 1)
    return np.where(observed, floor, 0.0)


def _solve_block(x0, target, curv, graph: PairGraph, tau, dual, iters):
    """Approximately minimise ``sum curv/2 (x - target)^2 + tau * TV(x)`` over ``x >= 0``.

    Primal-dual iterations with diagonal preconditioning scaled by the pair
    weights (dual step ``tau*c/2`` per pair, primal step ``1/(tau * weighted
    degree)``), warm-started from ``dual`` which is updated in place.
    """
    if tau == 0:
        return np.maximum(np.where(curv > 0, target, x0), 0.0)
    step = 1.0 / np.maximum(tau * graph.degree, 1e-6)
    return _primal_dual(x0.copy(), target, curv, step, graph.coupling, float(tau),
                        graph.offsets, dual, iters, 0.5)


def fuse(cube: CountCube, observed, w_d, w_r, d_init, r_init, init_valid=None,
         config: FusionConfig = FusionConfig(), h: float = 1.0, edge: str = "erf",
         callback=None) -> FusionResult:
    """Estimate complete depth and intensity rasters.

    ``d_init``/``r_init`` are per-pixel fits (NaN where unknown);
    ``init_valid`` defaults to their finite entries. Unknown pixels start from
    their nearest valid neighbour.
    """
    observed = np.asarray(observed, dtype=bool)
    if cube.valid is not None:
        observed = observed & cube.valid
    H, W = observed.shape
    if cube.counts.shape[1:] != (H, W) or w_d.shape[:2] != (H, W) or w_r.shape[:2] != (H, W):
        raise ValueError("cube, mask and weight dimensions disagree")
    if not observed.any():
        raise ValueError("observation mask is empty; nothing anchors the solution")
    d_init = np.asarray(d_init, dtype=float)
    r_init = np.asarray(r_init, dtype=float)
    if init_valid is None:
        init_valid = np.isfinite(d_init) & np.isfinite(r_init)
    init_valid = np.asarray(init_valid, dtype=bool) & np.isfinite(d_init) & np.isfinite(r_init)
    if not init_valid.any():
        raise ValueError("no valid initial estimates to start from")
    d = np.maximum(nearest_valid_fill(d_init, init_valid), 0.0)
    r = np.maximum(nearest_valid_fill(r_init, init_valid), 0.0)

    counts = cube.counts.astype(float)
    if config.floor == "auto":
        floor = residual_floor(counts, observed, d, h)
    else:
        floor = float(config.floor)
    lik = _Likelihood(counts, observed, h, floor, edge)
    gd, gr = PairGraph(w_d), PairGraph(w_r)

    def objective(dd, rr):
        val = lik.value(dd, rr)
        if config.tau_d:
            val += config.tau_d * gd.penalty(dd)
        if config.tau_r:
            val += config.tau_r * gr.penalty(rr)
        return val

    cur = objective(d, r)
    history = [cur]
    dual_d = gd.zeros()
    dual_r = gr.zeros()
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        start = cur
        # depth block
        grad, curv = lik.depth_model(d, r)
        target = d.copy()
        c_full = np.zeros((H, W))
        c_full[observed] = np.maximum(curv, 1e-9)
        step = np.clip(-grad / c_full[observed], -config.max_newton_step, config.max_newton_step)
        target[observed] = d[observed] + step
        cand = _solve_block(d, target, c_full, gd, config.tau_d, dual_d, config.inner_iters)
        d, cur = _line_search(lambda x: objective(x, r), d, cand, cur, config.backtracks)
        # intensity block
        grad, curv = lik.intensity_model(d, r)
        target = r.copy()
        c_full = np.zeros((H, W))
        c_full[observed] = np.maximum(curv, 1e-9)
        target[observed] = r[observed] - grad / c_full[observed]
        cand = _solve_block(r, target, c_full, gr, config.tau_r, dual_r, config.inner_iters)
        r, cur = _line_search(lambda x: objective(d, x), r, cand, cur, config.backtracks)

        if cur > history[-1]:
            raise AssertionError(f"objective increased at iteration {it}: {history[-1]} -> {cur}")
        history.append(cur)
        if callback is not None:
            callback(it, d, r, cur)
        if abs(start - cur) <= config.rel_tol * max(abs(start), 1.0):
            converged = True
            break
    return FusionResult(d, r, history, it, converged)


def _line_search(f, x, cand, current, backtracks):
    direction = cand - x
    alpha = 1.0
    for _ in range(backtracks + 1):
        trial = np.maximum(x + alpha * direction, 0.0)
        val = f(trial)
        if val <= current:
            return trial, val
        alpha *= 0.5
    return x, current


def write_objective_csv(path, history) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,objective\n")
        for i, v in enumerate(history):
            fh.write(f"{i},{v:.17g}\n")


# ------------------------------------------------------------ subsampling --

@dataclass
class ScanSubset:
    positions: np.ndarray
    mask: np.ndarray
    coverage: float


def subsample_scan_positions(pattern: ScanPattern, fraction: float, seed: int,
                             height: int = 228, width: int = 228) -> ScanSubset:
    """Uniformly random ``ceil(fraction * N)`` positions.

    The subset is a prefix of one seeded permutation, so smaller fractions are
    nested inside larger ones for the same seed.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = pattern.num_positions
    order = np.random.default_rng(seed).permutation(n)
    take = np.sort(order[: math.ceil(fraction * n - 1e-9)])
    mask = pattern.coverage_count(height, width, take) > 0
    return ScanSubset(take, mask, float(mask.mean()))
