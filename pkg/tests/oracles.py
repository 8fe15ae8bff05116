"""Independent reference computations used by the unit and acceptance tests."""

import numpy as np
from scipy.special import erf


def grid_fit(profile, h, step=0.01, d_max=None):
    """Brute-force least squares: scan d on a grid, solve r in closed form."""
    y = np.asarray(profile, dtype=float)
    k = np.arange(y.size, dtype=float)
    d_max = y.size - 1 if d_max is None else d_max
    ds = np.arange(0.0, d_max + step / 2, step)
    g = 0.5 * (1 + erf((k[None, :] - ds[:, None]) / h))
    r = np.maximum((g @ y) / (g * g).sum(1), 0.0)
    sse = ((y[None, :] - r[:, None] * g) ** 2).sum(1)
    i = int(np.argmin(sse))
    return ds[i], r[i]


def color_differences_loop(rgb, field_side):
    """Double loop over every pixel and every in-field neighbour."""
    rgb = np.asarray(rgb, dtype=float)
    H, W, _ = rgb.shape
    half = field_side // 2
    out = np.full((H, W, field_side * field_side), np.nan)
    for i in range(H):
        for j in range(W):
            m = 0
            for di in range(-half, half + 1):
                for dj in range(-half, half + 1):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < H and 0 <= jj < W:
                        out[i, j, m] = np.abs(rgb[i, j] - rgb[ii, jj]).sum() / 3.0
                    m += 1
    return out


def bilinear_corner_aligned(img, H, W):
    """Per-pixel bilinear interpolation with corners mapped to corners."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    out = np.empty((H, W) + img.shape[2:])
    for i in range(H):
        y = i * (h - 1) / (H - 1) if H > 1 else 0.0
        y0 = min(int(np.floor(y)), h - 1)
        y1 = min(y0 + 1, h - 1)
        fy = y - y0
        for j in range(W):
            x = j * (w - 1) / (W - 1) if W > 1 else 0.0
            x0 = min(int(np.floor(x)), w - 1)
            x1 = min(x0 + 1, w - 1)
            fx = x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


def poisson_nll_loop(d, r, counts, observed, h, eps=1e-12):
    K = counts.shape[0]
    total = 0.0
    for i, j in zip(*np.nonzero(observed)):
        for k in range(K):
            lam = 0.5 * r[i, j] * (1 + erf((k - d[i, j]) / h))
            total += lam - counts[k, i, j] * np.log(lam + eps)
    return total
