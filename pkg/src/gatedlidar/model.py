"""Leading-edge count model shared by the simulator, the fitter and the fusion solver."""

from __future__ import annotations

import numpy as np
from scipy.special import erf

EDGE_FUNCTIONS = ("erf", "arctan")
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


def edge_shape(k, d, h, edge: str = "erf"):
    """Normalised edge in [0, 1]: 0.5 * (1 + f((k - d) / h)).

    ``h == 0`` gives the ideal step (0 before ``d``, 1/2 at ``d``, 1 after).
    """
    k = np.asarray(k, dtype=float)
    d = np.asarray(d, dtype=float)
    if edge not in EDGE_FUNCTIONS:
        raise ValueError(f"unknown edge function {edge!r}")
    if h == 0:
        return 0.5 * (1.0 + np.sign(k - d))
    u = (k - d) / h
    if edge == "erf":
        return 0.5 * (1.0 + erf(u))
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(u))


def edge_slope(k, d, h, edge: str = "erf"):
    """Derivative of :func:`edge_shape` with respect to ``d``."""
    k = np.asarray(k, dtype=float)
    d = np.asarray(d, dtype=float)
    if h == 0:
        return np.zeros(np.broadcast(k, d).shape)
    u = (k - d) / h
    if edge == "erf":
        return -_INV_SQRT_PI / h * np.exp(-u * u)
    return -1.0 / (np.pi * h) / (1.0 + u * u)


def erf_model(k, d, r, h, b=0.0, edge: str = "erf"):
    """Expected counts ``(r/2) * (1 + erf((k - d)/h)) + b``."""
    if h < 0:
        raise ValueError("h must be non-negative")
    return np.asarray(r, dtype=float) * edge_shape(k, d, h, edge) + b
