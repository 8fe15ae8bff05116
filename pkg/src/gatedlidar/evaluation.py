"""Depth-quality metrics against ground truth and pixel-exact raster rendering."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

PATCH_PX = 25
PANEL_BORDER_PX = 10
# clockwise adjacent pairs starting at the top-left panel: TL-TR, TR-BR, BR-BL, BL-TL
ADJACENT_PAIRS = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass
class MetricsReport:
    label: str = ""
    patch_std_cm: list = field(default_factory=list)
    panel_mean_diff_cm: list = field(default_factory=list)
    rmse_cm: float = float("nan")
    baseline_rmse_cm: float = float("nan")
    blob_mean_error_steps: float = float("nan")
    blob_observed_fraction: float = float("nan")
    coverage_fraction: float = float("nan")
    validity_fraction: float = float("nan")
    runtime_s: float = float("nan")

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = asdict(self)
        if not include_runtime:
            d.pop("runtime_s")
        return {k: _jsonable(v) for k, v in d.items()}

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True) + "\n"

    def csv_header(self, include_runtime: bool = True) -> list:
        return list(self._flat(include_runtime))

    def csv_row(self, include_runtime: bool = True) -> list:
        return list(self._flat(include_runtime).values())

    def _flat(self, include_runtime):
        flat = {}
        for k, v in self.to_dict(include_runtime).items():
            if isinstance(v, list):
                for i, x in enumerate(v):
                    flat[f"{k}_{i}"] = x
            else:
                flat[k] = v
        return flat


def _jsonable(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if not np.isfinite(v) else round(v, 6)
    return v


def write_reports_csv(path, reports, include_runtime: bool = False) -> None:
    if not reports:
        raise ValueError("no reports to write")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(reports[0].csv_header(include_runtime))
        for rep in reports:
            w.writerow(["" if x is None else x for x in rep.csv_row(include_runtime)])


# ------------------------------------------------------------------ regions --

def panel_patches(panel_ids, patch_px=PATCH_PX, border_px=PANEL_BORDER_PX, exclude=None):
    """One ``(row_slice, col_slice)`` patch per panel (0..3).

    Patches start centred in the panel. If ``exclude`` (e.g. a foreground
    mask) overlaps, the patch moves to the nearest clear placement that stays
    ``border_px`` inside the panel.
    """
    patches = []
    for pid in range(4):
        rows, cols = np.nonzero(panel_ids == pid)
        if rows.size == 0:
            raise ValueError(f"panel {pid} is empty")
        r_lo, r_hi = rows.min() + border_px, rows.max() - border_px - patch_px + 1
        c_lo, c_hi = cols.min() + border_px, cols.max() - border_px - patch_px + 1
        if r_hi < r_lo or c_hi < c_lo:
            raise ValueError("panel too small for the patch and border")
        r0 = (rows.min() + rows.max() + 1 - patch_px) // 2
        c0 = (cols.min() + cols.max() + 1 - patch_px) // 2
        best = (r0, c0)
        if exclude is not None and exclude[r0 : r0 + patch_px, c0 : c0 + patch_px].any():
            best, best_dist = None, np.inf
            for rr in range(r_lo, r_hi + 1):
                for cc in range(c_lo, c_hi + 1):
                    dist = (rr - r0) ** 2 + (cc - c0) ** 2
                    if dist < best_dist and not exclude[rr : rr + patch_px, cc : cc + patch_px].any():
                        best, best_dist = (rr, cc), dist
            if best is None:
                raise ValueError(f"no clear patch placement in panel {pid}")
        patches.append((slice(best[0], best[0] + patch_px), slice(best[1], best[1] + patch_px)))
    return patches


# ------------------------------------------------------------------ metrics --

def patch_stddev(depth_m, patch, valid=None) -> float:
    """Sample standard deviation (cm) of valid depths inside ``patch``."""
    depth_m = np.asarray(depth_m, dtype=float)
    rs, cs = patch
    if rs.start < 0 or cs.start < 0 or rs.stop > depth_m.shape[0] or cs.stop > depth_m.shape[1]:
        raise ValueError("patch extends outside the raster")
    vals = depth_m[rs, cs]
    ok = np.isfinite(vals)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)[rs, cs]
    if ok.sum() < 2:
        raise ValueError("patch needs at least 2 valid pixels")
    return float(np.std(vals[ok], ddof=1) * 100.0)


def panel_mean_differences(depth_m, regions, valid=None) -> list:
    """|mean(a) - mean(b)| in cm for clockwise adjacent panel pairs."""
    depth_m = np.asarray(depth_m, dtype=float)
    means = []
    for region in regions:
        if isinstance(region, tuple):
            sel = np.zeros(depth_m.shape, dtype=bool)
            sel[region] = True
        else:
            sel = np.asarray(region, dtype=bool)
        sel = sel & np.isfinite(depth_m)
        if valid is not None:
            sel &= np.asarray(valid, dtype=bool)
        if not sel.any():
            raise ValueError("panel region has no valid pixels")
        means.append(depth_m[sel].mean())
    return [float(abs(means[a] - means[b]) * 100.0) for a, b in ADJACENT_PAIRS]


def depth_rmse(estimate_m, truth_m, valid=None) -> float:
    """Root-mean-square depth error in cm over valid, finite pixels."""
    est = np.asarray(estimate_m, dtype=float)
    tru = np.asarray(truth_m, dtype=float)
    if est.shape != tru.shape:
        raise ValueError("estimate and truth dimensions disagree")
    ok = np.isfinite(est) & np.isfinite(tru)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    if not ok.any():
        raise ValueError("no valid pixels")
    return float(np.sqrt(np.mean((est[ok] - tru[ok]) ** 2)) * 100.0)


def coverage(mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    return float(mask.mean()) if mask.size else 0.0


# ---------------------------------------------------------------- rendering --

SENTINEL_RGB = (255, 0, 255)


def depth_to_rgb(depth, valid=None, vmin=None, vmax=None, cmap="viridis", overlay=None,
                 overlay_strength=0.6) -> np.ndarray:
    """Colour-map a depth raster to uint8 RGB; invalid pixels get the sentinel colour.

    ``overlay`` may be an intensity raster (H, W) or an RGB image (H, W, 3);
    it modulates the colour-mapped depth.
    """
    from matplotlib import colormaps

    depth = np.asarray(depth, dtype=float)
    ok = np.isfinite(depth)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    lo = np.nanmin(depth[ok]) if vmin is None and ok.any() else (vmin or 0.0)
    hi = np.nanmax(depth[ok]) if vmax is None and ok.any() else (vmax if vmax is not None else 1.0)
    span = hi - lo if hi > lo else 1.0
    norm = np.clip((np.where(ok, depth, lo) - lo) / span, 0.0, 1.0)
    rgb = colormaps[cmap](norm)[..., :3]
    if overlay is not None:
        ov = np.asarray(overlay, dtype=float)
        if ov.ndim == 2:
            fin = np.isfinite(ov) & ok
            top = np.nanpercentile(ov[fin], 99) if fin.any() else 1.0
            shade = np.clip(np.where(fin, ov, 0.0) / (top if top > 0 else 1.0), 0, 1)
            rgb = rgb * ((1 - overlay_strength) + overlay_strength * shade[..., None])
        else:
            rgb = (1 - overlay_strength) * rgb + overlay_strength * ov[..., :3] / 255.0
    out = np.rint(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    out[~ok] = SENTINEL_RGB
    return out


def render(depth, path, valid=None, overlay=None, vmin=None, vmax=None, cmap="viridis") -> np.ndarray:
    """Write the colour-mapped depth (optionally overlaid) as a PNG, one pixel per raster cell."""
    import matplotlib.image as mpimg

    img = depth_to_rgb(depth, valid, vmin, vmax, cmap, overlay)
    try:
        mpimg.imsave(path, img, format="png", metadata={"Software": None})
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return img


def report_table(reports) -> str:
    """CSV text of several reports, without runtimes."""
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(reports[0].csv_header(False))
    for rep in reports:
        w.writerow(["" if x is None else x for x in rep.csv_row(False)])
    return buf.getvalue()
