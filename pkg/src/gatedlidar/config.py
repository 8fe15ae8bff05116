"""Run configuration: YAML text with unit-suffixed keys, validated into dataclasses."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .acquisition import GateConfig, NoiseConfig, ScanPattern, make_dcr_map
from .fitting import FitConfig
from .fusion import FusionConfig
from .scene import PanelBoardSpec, mannequin_blobs


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


REFERENCE = {
    "seed": 42,
    "fractions": [0.25, 0.10, 0.05],
    "scene": {
        "width_px": 228,
        "height_px": 228,
        "base_range_m": 150.0,
        "panel_offsets_m": [0.0, 0.10, 0.20, 0.30],
        "board_px": 208,
        "mannequin": True,
    },
    "gate": {
        "gate_width_ns": 18.0,
        "gate_step_ns": 0.25,
        "num_gates": 51,
        "edge_width_h": 1.0,
        "range_per_step_m": 0.075,
        "ranging": "nominal",
        "index_offset": 10.0,
    },
    "scan": {
        "grid_rows": 20,
        "grid_cols": 20,
        "spot_px": 50,
        "pitch_px": 17.5,
        "bitplanes_per_position": 256,
        "spot_profile": "tophat",
    },
    "noise": {
        "mean_signal_pp": 0.09,
        "background_pp": 5e-4,
        "dcr_median_hz": 1000.0,
        "dcr_spread": 0.6,
        "hot_fraction": 0.05,
        "hot_min_hz": 5e4,
        "hot_max_hz": 2e5,
        "exposure_s": 215e-6 / 256,
    },
    "preprocess": {
        "calib_gates": [0, 1, 2],
        "hot_threshold_hz": 10_000.0,
        "linearize": True,
        "use_dcr_map": True,
    },
    "fit": {
        "h": 1.0,
        "max_iters": 100,
        "convergence_tol": 1e-10,
        "min_amplitude": 3.0,
        "edge_function": "erf",
    },
    "fusion": {
        "tau_d": 0.1,
        "tau_r": 0.003,
        "sigma_c": 10.0,
        "sigma_s": 0.5,
        "field_side": 15,
        "color_space": "rgb",
        "max_iters": 40,
        "rel_tol": 1e-7,
        "inner_iters": 40,
        "floor": "auto",
    },
    "correction": {"edge_correction_m": 0.0},
    "evaluation": {"patch_px": 25, "border_px": 10},
}


@dataclass
class RunConfig:
    seed: int
    fractions: list
    width: int
    height: int
    board: PanelBoardSpec
    gate: GateConfig
    scan: ScanPattern
    noise: NoiseConfig
    dcr: dict
    preprocess: dict
    fit: FitConfig
    fusion: FusionConfig
    edge_correction_m: float = 0.0
    evaluation: dict = field(default_factory=lambda: dict(REFERENCE["evaluation"]))
    raw: dict = field(default_factory=dict, repr=False)

    def dcr_map(self) -> np.ndarray:
        return make_dcr_map(
            self.height, self.width,
            median_hz=self.dcr["dcr_median_hz"], spread=self.dcr["dcr_spread"],
            hot_fraction=self.dcr["hot_fraction"],
            hot_range_hz=(self.dcr["hot_min_hz"], self.dcr["hot_max_hz"]),
            seed=[self.seed, 1],
        )

    def noise_with_dcr(self) -> NoiseConfig:
        return dataclasses.replace(self.noise, dcr_map=self.dcr_map())

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.raw, sort_keys=True)


def reference_dict() -> dict:
    return copy.deepcopy(REFERENCE)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _typed(section: str, values: dict, template: dict) -> dict:
    out = {}
    for key, val in values.items():
        ref = template[key]
        where = f"{section}.{key}"
        if isinstance(ref, bool):
            if not isinstance(val, bool):
                raise ConfigError(f"{where}: expected true/false, got {val!r}")
        elif isinstance(ref, int) and not isinstance(ref, bool):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{where}: expected an integer, got {val!r}")
        elif isinstance(ref, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{where}: expected a number, got {val!r}")
            val = float(val)
        elif isinstance(ref, list):
            if not isinstance(val, list):
                raise ConfigError(f"{where}: expected a list, got {val!r}")
        out[key] = val
    return out


def _build(section, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def from_dict(data: dict | None) -> RunConfig:
    raw = _merge(REFERENCE, data or {})
    ref = REFERENCE
    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    fractions = raw["fractions"]
    if not isinstance(fractions, list) or not all(
        isinstance(f, (int, float)) and not isinstance(f, bool) and 0 < f <= 1 for f in fractions
    ):
        raise ConfigError(f"fractions: expected numbers in (0, 1], got {fractions!r}")

    sc = _typed("scene", raw["scene"], ref["scene"])
    if sc["width_px"] < 1 or sc["height_px"] < 1:
        raise ConfigError("scene.width_px/height_px: must be positive")
    blobs = mannequin_blobs(sc["width_px"], sc["height_px"], sc["base_range_m"]) if sc["mannequin"] else ()
    board = _build("scene", PanelBoardSpec, base_range_m=sc["base_range_m"],
                   panel_offsets_m=tuple(sc["panel_offsets_m"]), board_px=sc["board_px"], blobs=blobs)
    if board.board_px > min(sc["width_px"], sc["height_px"]):
        raise ConfigError("scene.board_px: board larger than the scene")

    g = _typed("gate", raw["gate"], ref["gate"])
    gate = _build("gate", GateConfig, base_range_m=sc["base_range_m"], **g)
    s = _typed("scan", raw["scan"], ref["scan"])
    scan = _build("scan", ScanPattern, **s)
    n = _typed("noise", raw["noise"], ref["noise"])
    dcr = {k: n.pop(k) for k in ("dcr_median_hz", "dcr_spread", "hot_fraction", "hot_min_hz", "hot_max_hz")}
    if any(v < 0 for v in dcr.values()) or dcr["hot_fraction"] > 1:
        raise ConfigError("noise: dark-count parameters must be non-negative, hot_fraction <= 1")
    noise = _build("noise", NoiseConfig, rng_seed=seed, **n)

    pp = _typed("preprocess", raw["preprocess"], ref["preprocess"])
    gates = pp["calib_gates"]
    if not gates or not all(isinstance(k, int) and 0 <= k < gate.num_gates for k in gates):
        raise ConfigError(f"preprocess.calib_gates: need gate indices in [0, {gate.num_gates})")
    if pp["hot_threshold_hz"] <= 0:
        raise ConfigError("preprocess.hot_threshold_hz: must be positive")

    f = _typed("fit", raw["fit"], ref["fit"])
    fit = _build("fit", FitConfig, **f)
    fu = dict(raw["fusion"])
    floor = fu.pop("floor")
    fu = _typed("fusion", fu, ref["fusion"])
    if floor != "auto" and (isinstance(floor, bool) or not isinstance(floor, (int, float))):
        raise ConfigError(f"fusion.floor: expected 'auto' or a number, got {floor!r}")
    fusion = _build("fusion", FusionConfig, floor=floor, **fu)
    if fusion.field_side % 2 == 0:
        raise ConfigError("fusion.field_side: must be odd")
    corr = _typed("correction", raw["correction"], ref["correction"])
    ev = _typed("evaluation", raw["evaluation"], ref["evaluation"])
    if ev["patch_px"] < 2 or ev["border_px"] < 0:
        raise ConfigError("evaluation: patch_px must be >= 2 and border_px >= 0")

    return RunConfig(seed, [float(x) for x in fractions], sc["width_px"], sc["height_px"], board,
                     gate, scan, noise, dcr, pp, fit, fusion, corr["edge_correction_m"], ev, raw)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return from_dict(data)


def reference_config(**overrides) -> RunConfig:
    return from_dict(overrides)
