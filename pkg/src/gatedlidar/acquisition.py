"""Forward model of time-gated, beam-scanned binary SPAD acquisition.

A scan position illuminates a square footprint of the sensor. For every gate
delay the camera records ``bitplanes_per_position`` binary frames; a pixel
fires in a frame with probability ``1 - exp(-rate)``, where ``rate`` is the
edge model evaluated at that gate. Summing the frames over all positions
gives the count cube ``counts[k, row, col]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import edge_shape
from .scene import GroundTruthScene

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class GateConfig:
    gate_width_ns: float = 18.0
    gate_step_ns: float = 0.25
    num_gates: int = 51
    edge_width_h: float = 1.0
    range_per_step_m: float = 0.075
    # "nominal" uses range_per_step_m; "round_trip" uses c * step / 2
    ranging: str = "nominal"
    index_offset: float = 10.0
    base_range_m: float = 150.0

    def __post_init__(self):
        if self.gate_step_ns <= 0:
            raise ValueError("gate_step_ns must be positive")
        if self.num_gates < 2:
            raise ValueError("num_gates must be at least 2")
        if self.edge_width_h < 0:
            raise ValueError("edge_width_h must be non-negative")
        if self.ranging not in ("nominal", "round_trip"):
            raise ValueError("ranging must be 'nominal' or 'round_trip'")
        if self.metres_per_step <= 0:
            raise ValueError("range per gate step must be positive")

    @property
    def metres_per_step(self) -> float:
        if self.ranging == "round_trip":
            return SPEED_OF_LIGHT * self.gate_step_ns * 1e-9 / 2.0
        return self.range_per_step_m


def depth_to_gate_index(depth_m, gate: GateConfig, base_range_m: float | None = None):
    base = gate.base_range_m if base_range_m is None else base_range_m
    return (np.asarray(depth_m, dtype=float) - base) / gate.metres_per_step + gate.index_offset


def gate_index_to_depth(index, gate: GateConfig, base_range_m: float | None = None):
    base = gate.base_range_m if base_range_m is None else base_range_m
    return (np.asarray(index, dtype=float) - gate.index_offset) * gate.metres_per_step + base


@dataclass(frozen=True)
class ScanPattern:
    grid_rows: int = 20
    grid_cols: int = 20
    spot_px: int = 50
    pitch_px: float = 17.5
    center_rc: tuple[float, float] | None = None  # None centres the grid on the sensor
    bitplanes_per_position: int = 256
    spot_profile: str = "tophat"  # or "gaussian"

    def __post_init__(self):
        if self.grid_rows < 1 or self.grid_cols < 1 or self.spot_px < 1:
            raise ValueError("scan grid and spot size must be positive")
        if self.bitplanes_per_position < 1:
            raise ValueError("bitplanes_per_position must be positive")
        if self.spot_profile not in ("tophat", "gaussian"):
            raise ValueError("spot_profile must be 'tophat' or 'gaussian'")

    @property
    def num_positions(self) -> int:
        return self.grid_rows * self.grid_cols

    def spot_centers(self, height: int, width: int) -> np.ndarray:
        """(num_positions, 2) array of spot centres, row-major over the grid."""
        cr, cc = self.center_rc if self.center_rc is not None else (height / 2, width / 2)
        rows = cr + (np.arange(self.grid_rows) - (self.grid_rows - 1) / 2) * self.pitch_px
        cols = cc + (np.arange(self.grid_cols) - (self.grid_cols - 1) / 2) * self.pitch_px
        rr, cc_ = np.meshgrid(rows, cols, indexing="ij")
        return np.stack([rr.ravel(), cc_.ravel()], axis=1)

    def footprint(self, position: int, height: int, width: int):
        """Clipped ``(row_slice, col_slice, weights)`` for one position, or None if off-sensor."""
        cr, cc = self.spot_centers(height, width)[position]
        r0 = math.floor(cr - self.spot_px / 2)
        c0 = math.floor(cc - self.spot_px / 2)
        r_lo, r_hi = max(r0, 0), min(r0 + self.spot_px, height)
        c_lo, c_hi = max(c0, 0), min(c0 + self.spot_px, width)
        if r_lo >= r_hi or c_lo >= c_hi:
            return None
        if self.spot_profile == "tophat":
            weights = np.ones((r_hi - r_lo, c_hi - c_lo))
        else:
            sigma = self.spot_px / 4.0
            rr = np.arange(r_lo, r_hi) + 0.5 - cr
            cc_ = np.arange(c_lo, c_hi) + 0.5 - cc
            weights = np.exp(-(rr[:, None] ** 2 + cc_[None, :] ** 2) / (2 * sigma**2))
        return slice(r_lo, r_hi), slice(c_lo, c_hi), weights

    def coverage_count(self, height: int, width: int, positions=None) -> np.ndarray:
        """Number of footprints covering each pixel."""
        count = np.zeros((height, width), dtype=np.int64)
        for q in range(self.num_positions) if positions is None else positions:
            fp = self.footprint(int(q), height, width)
            if fp is not None:
                count[fp[0], fp[1]] += 1
        return count


@dataclass(frozen=True)
class NoiseConfig:
    mean_signal_pp: float = 0.03
    background_pp: float = 5e-4
    dcr_map: np.ndarray | None = None  # Hz per pixel; None means no dark counts
    exposure_s: float = 215e-6 / 256
    rng_seed: int = 0

    def __post_init__(self):
        if self.mean_signal_pp < 0 or self.background_pp < 0 or self.exposure_s < 0:
            raise ValueError("noise rates must be non-negative")
        if self.dcr_map is not None and np.any(np.asarray(self.dcr_map) < 0):
            raise ValueError("dark count rates must be non-negative")

    def background_rate(self, height: int, width: int) -> np.ndarray:
        """Per-pixel background photons per bit plane (ambient plus dark counts)."""
        b = np.full((height, width), float(self.background_pp))
        if self.dcr_map is not None:
            dcr = np.asarray(self.dcr_map, dtype=float)
            if dcr.shape != (height, width):
                raise ValueError("dcr_map shape does not match the scene")
            b = b + dcr * self.exposure_s
        return b


def make_dcr_map(height, width, median_hz=1000.0, spread=0.6, hot_fraction=0.05,
                 hot_range_hz=(5e4, 2e5), seed=0):
    """Log-normal dark count map with a small population of hot pixels."""
    rng = np.random.default_rng(seed)
    dcr = median_hz * np.exp(spread * rng.standard_normal((height, width)))
    n_hot = int(round(hot_fraction * height * width))
    hot = rng.choice(height * width, n_hot, replace=False)
    dcr.flat[hot] = rng.uniform(*hot_range_hz, size=n_hot)
    return dcr


@dataclass
class CountCube:
    counts: np.ndarray  # (num_gates, H, W); integer when sampled, float otherwise
    exposures: np.ndarray  # (H, W) number of bit planes summed per pixel
    max_count: int = 0
    valid: np.ndarray | None = None  # (H, W); False marks excluded pixels

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        self.exposures = np.asarray(self.exposures, dtype=np.int64)
        if self.counts.ndim != 3 or self.counts.shape[1:] != self.exposures.shape:
            raise ValueError("counts must be (gates, H, W) matching exposures (H, W)")
        if not self.max_count:
            self.max_count = int(self.exposures.max(initial=0))
        if self.valid is not None:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.exposures.shape:
                raise ValueError("valid mask does not match cube dimensions")

    @property
    def num_gates(self) -> int:
        return self.counts.shape[0]

    @property
    def height(self) -> int:
        return self.counts.shape[1]

    @property
    def width(self) -> int:
        return self.counts.shape[2]


def true_gate_index(scene: GroundTruthScene, gate: GateConfig, gate_skew=None) -> np.ndarray:
    d = depth_to_gate_index(scene.depth_m, gate)
    if gate_skew is not None:
        d = d + gate_skew
    return d


def expected_rate(scene, gate: GateConfig, noise: NoiseConfig, k=None, pixel=None, gate_skew=None):
    """Expected photons per bit plane under full illumination.

    With ``pixel=(row, col)`` and scalar ``k`` this is a single value; with
    both omitted the full (num_gates, H, W) stack is returned.
    """
    d = true_gate_index(scene, gate, gate_skew)
    signal = scene.reflectivity.astype(float) * noise.mean_signal_pp
    b = noise.background_rate(scene.height, scene.width)
    if pixel is not None:
        d, signal, b = d[pixel], signal[pixel], b[pixel]
    if k is None:
        ks = np.arange(gate.num_gates, dtype=float).reshape((-1,) + (1,) * np.ndim(d))
    else:
        ks = np.asarray(k, dtype=float)
    return signal * edge_shape(ks, d, gate.edge_width_h) + b


def simulate(scene: GroundTruthScene, gate: GateConfig, scan: ScanPattern, noise: NoiseConfig,
             positions=None, noiseless: bool = False, gate_skew=None) -> CountCube:
    """Simulate the gated count cube for the given (or all) scan positions.

    Each position draws from its own generator seeded by ``(rng_seed, position)``
    so a subset of positions reproduces exactly that subset of the full scan.
    ``noiseless=True`` returns expected counts as floats instead of samples.
    """
    h, w = scene.height, scene.width
    nb = scan.bitplanes_per_position
    positions = range(scan.num_positions) if positions is None else positions
    d = true_gate_index(scene, gate, gate_skew)
    signal = scene.reflectivity.astype(float) * noise.mean_signal_pp
    b = noise.background_rate(h, w)
    ks = np.arange(gate.num_gates, dtype=float)[:, None, None]
    counts = np.zeros((gate.num_gates, h, w), dtype=float if noiseless else np.int64)
    exposures = np.zeros((h, w), dtype=np.int64)
    for q in positions:
        fp = scan.footprint(int(q), h, w)
        if fp is None:
            continue
        rs, cs, weights = fp
        lam = signal[rs, cs] * weights * edge_shape(ks, d[rs, cs], gate.edge_width_h) + b[rs, cs]
        p = -np.expm1(-lam)
        if noiseless:
            counts[:, rs, cs] += nb * p
        else:
            rng = np.random.default_rng([noise.rng_seed, int(q)])
            counts[:, rs, cs] += rng.binomial(nb, p)
        exposures[rs, cs] += nb
    return CountCube(counts, exposures, max_count=int(exposures.max(initial=0)))
