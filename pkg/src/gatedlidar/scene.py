"""Synthetic ground-truth scenes: a four-panel depth board plus foreground blobs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import formats

# clockwise from the top-left panel
PANEL_NAMES = ("top-left", "top-right", "bottom-right", "bottom-left")


@dataclass(frozen=True)
class Blob:
    """Filled ellipse drawn in front of (or behind) the board."""

    center_rc: tuple[float, float]
    semi_axes: tuple[float, float]  # (rows, cols) before rotation
    depth_m: float
    color: tuple[int, int, int]
    reflectivity: float = 0.5
    angle_deg: float = 0.0

    def mask(self, height: int, width: int) -> np.ndarray:
        rows, cols = np.mgrid[0:height, 0:width].astype(float)
        dr = rows - self.center_rc[0]
        dc = cols - self.center_rc[1]
        a = np.deg2rad(self.angle_deg)
        u = dr * np.cos(a) + dc * np.sin(a)
        v = -dr * np.sin(a) + dc * np.cos(a)
        return (u / self.semi_axes[0]) ** 2 + (v / self.semi_axes[1]) ** 2 <= 1.0


@dataclass(frozen=True)
class PanelBoardSpec:
    base_range_m: float = 150.0
    panel_offsets_m: tuple[float, ...] = (0.0, 0.10, 0.20, 0.30)
    panel_colors: tuple[tuple[int, int, int], ...] = (
        (196, 150, 96),
        (142, 96, 52),
        (222, 196, 150),
        (104, 66, 40),
    )
    panel_reflectivity: tuple[float, ...] = (0.8, 0.8, 0.8, 0.8)
    board_px: int = 208
    board_origin: tuple[int, int] | None = None  # top-left corner; None centers the board
    backdrop_offset_m: float = 1.0
    backdrop_color: tuple[int, int, int] = (54, 60, 58)
    backdrop_reflectivity: float = 0.3
    blobs: tuple[Blob, ...] = ()

    def __post_init__(self):
        if len(self.panel_offsets_m) != 4:
            raise ValueError("panel_offsets_m must have exactly 4 entries")
        if len(self.panel_colors) != 4 or len(self.panel_reflectivity) != 4:
            raise ValueError("panel_colors and panel_reflectivity need 4 entries")
        if self.board_px <= 0 or self.board_px % 2:
            raise ValueError("board_px must be a positive even number")


@dataclass
class GroundTruthScene:
    depth_m: np.ndarray  # float32 (H, W)
    reflectivity: np.ndarray  # float32 (H, W)
    rgb: np.ndarray  # uint8 (H, W, 3)
    panel_ids: np.ndarray | None = field(default=None, compare=False)
    blob_mask: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.depth_m = np.asarray(self.depth_m, dtype=np.float32)
        self.reflectivity = np.asarray(self.reflectivity, dtype=np.float32)
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        h, w = self.depth_m.shape
        if self.reflectivity.shape != (h, w) or self.rgb.shape != (h, w, 3):
            raise ValueError("depth, reflectivity and rgb dimensions disagree")
        if not np.all(np.isfinite(self.depth_m)) or np.any(self.depth_m < 0):
            raise ValueError("depth must be finite and non-negative")
        if np.any(self.reflectivity < 0) or np.any(self.reflectivity > 1):
            raise ValueError("reflectivity must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.depth_m.shape[0]

    @property
    def width(self) -> int:
        return self.depth_m.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GroundTruthScene):
            return NotImplemented
        return (
            np.array_equal(self.depth_m, other.depth_m)
            and np.array_equal(self.reflectivity, other.reflectivity)
            and np.array_equal(self.rgb, other.rgb)
        )


def board_origin(spec: PanelBoardSpec, width: int, height: int) -> tuple[int, int]:
    if spec.board_origin is not None:
        return spec.board_origin
    return (height - spec.board_px) // 2, (width - spec.board_px) // 2


def panel_id_raster(spec: PanelBoardSpec, width: int, height: int) -> np.ndarray:
    """Panel index per pixel (0..3 clockwise from top-left), -1 off the board."""
    r0, c0 = board_origin(spec, width, height)
    half = spec.board_px // 2
    ids = np.full((height, width), -1, dtype=np.int8)
    # (row block, col block) for TL, TR, BR, BL
    for pid, (rb, cb) in enumerate(((0, 0), (0, 1), (1, 1), (1, 0))):
        ids[r0 + rb * half : r0 + (rb + 1) * half, c0 + cb * half : c0 + (cb + 1) * half] = pid
    return ids


def build_panel_board_scene(spec: PanelBoardSpec, width: int, height: int) -> GroundTruthScene:
    r0, c0 = board_origin(spec, width, height)
    if r0 < 0 or c0 < 0 or r0 + spec.board_px > height or c0 + spec.board_px > width:
        raise ValueError(
            f"board of {spec.board_px}px at {(r0, c0)} does not fit in {width}x{height} raster"
        )
    ids = panel_id_raster(spec, width, height)
    depth = np.full((height, width), spec.base_range_m + spec.backdrop_offset_m)
    refl = np.full((height, width), spec.backdrop_reflectivity)
    rgb = np.empty((height, width, 3), dtype=np.uint8)
    rgb[:] = spec.backdrop_color
    for pid in range(4):
        sel = ids == pid
        depth[sel] = spec.base_range_m + spec.panel_offsets_m[pid]
        refl[sel] = spec.panel_reflectivity[pid]
        rgb[sel] = spec.panel_colors[pid]

    any_blob = np.zeros((height, width), dtype=bool)
    for blob in spec.blobs:
        sel = blob.mask(height, width) & (blob.depth_m < depth)
        depth[sel] = blob.depth_m
        refl[sel] = blob.reflectivity
        rgb[sel] = blob.color
        any_blob |= sel
    return GroundTruthScene(depth, refl, rgb, panel_ids=ids, blob_mask=any_blob)


def mannequin_blobs(width: int = 228, height: int = 228, base_range_m: float = 150.0) -> tuple[Blob, ...]:
    """Head, torso and a raised arm standing about 40 cm in front of the board."""
    cx = width / 2
    s = min(width, height) / 228.0
    camo = (78, 96, 52)
    return (
        Blob((height * 0.50, cx), (62 * s, 26 * s), base_range_m - 0.38, camo, 0.45),
        Blob((height * 0.16, cx), (15 * s, 12 * s), base_range_m - 0.42, (214, 178, 150), 0.6),
        Blob((height * 0.36, cx + 42 * s), (40 * s, 8 * s), base_range_m - 0.45, camo, 0.45, angle_deg=35.0),
    )


def reference_scene_spec(width: int = 228, height: int = 228) -> PanelBoardSpec:
    return PanelBoardSpec(blobs=mannequin_blobs(width, height))


def save_scene(scene: GroundTruthScene, path) -> None:
    formats.write_scene_raster(path, scene.depth_m, scene.reflectivity, scene.rgb)


def load_scene(path) -> GroundTruthScene:
    depth, refl, rgb = formats.read_scene_raster(path)
    return GroundTruthScene(depth, refl, rgb)
