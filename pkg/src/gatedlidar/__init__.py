"""Time-gated single-photon depth imaging with RGB-guided non-local fusion."""

from .acquisition import (CountCube, GateConfig, NoiseConfig, ScanPattern, depth_to_gate_index,
                          gate_index_to_depth, simulate)
from .fitting import FitConfig, FitResult, fit_cube, fit_pixel
from .fusion import FusionConfig, build_weights, fuse, subsample_scan_positions
from .model import erf_model
from .scene import GroundTruthScene, PanelBoardSpec, build_panel_board_scene, load_scene, save_scene

__version__ = "0.1.0"

__all__ = [
    "CountCube", "GateConfig", "NoiseConfig", "ScanPattern", "depth_to_gate_index",
    "gate_index_to_depth", "simulate", "FitConfig", "FitResult", "fit_cube", "fit_pixel",
    "FusionConfig", "build_weights", "fuse", "subsample_scan_positions", "erf_model",
    "GroundTruthScene", "PanelBoardSpec", "build_panel_board_scene", "load_scene", "save_scene",
]
