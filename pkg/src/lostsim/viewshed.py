"""Line-of-sight viewsheds and steering toward preferred visible land cover.

A target cell is visible when the straight sightline from the observer's eye
(cell centre, ground + eye height) to the target's ground surface stays on
or above the terrain at every sample taken half a cell apart along it.
Terrain between cell centres is bilinearly interpolated. The kernel is
compiled with numba; its arithmetic is written so that a plain-Python
re-implementation of the same rule gives bit-identical masks.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numba
import numpy as np

from .errors import MissingInputError, NodataError, OutOfBoundsError
from .gis import LAND_COVER_IDS, LAND_COVER_NAMES, RasterGrid

EYE_HEIGHT = 1.6
DEFAULT_RADIUS = 300.0
# sightline sample spacing, in cells
SAMPLE_STEP = 0.5


@dataclass(frozen=True, eq=False)
class ViewshedMask:
    """Visibility over the square window around ``center``.

    ``visible[i, j]`` refers to cell ``(col0 + j, row0 + i)``.
    """

    center: tuple[int, int]
    radius: float
    col0: int
    row0: int
    visible: np.ndarray

    def cells(self) -> np.ndarray:
        """Visible cells as an ``(n, 2)`` array of ``(col, row)``."""
        rows, cols = np.nonzero(self.visible)
        return np.column_stack((cols + self.col0, rows + self.row0))

    def to_full(self, shape: tuple[int, int]) -> np.ndarray:
        full = np.zeros(shape, dtype=bool)
        h, w = self.visible.shape
        full[self.row0:self.row0 + h, self.col0:self.col0 + w] = self.visible
        return full


@numba.njit(cache=True)
def _los_window(z, valid, oc, orow, rc, r2max, eye, step):
    nrows, ncols = z.shape
    c_lo = max(oc - rc, 0)
    c_hi = min(oc + rc, ncols - 1)
    r_lo = max(orow - rc, 0)
    r_hi = min(orow + rc, nrows - 1)
    out = np.zeros((r_hi - r_lo + 1, c_hi - c_lo + 1), dtype=np.bool_)
    h0 = z[orow, oc] + eye
    for r in range(r_lo, r_hi + 1):
        dr = r - orow
        for c in range(c_lo, c_hi + 1):
            dc = c - oc
            d2 = dc * dc + dr * dr
            if d2 > r2max or not valid[r, c]:
                continue
            if d2 == 0:
                out[r - r_lo, c - c_lo] = True
                continue
            dist = math.sqrt(float(d2))
            h1 = z[r, c]
            seen = True
            j = 1
            while True:
                s = j * step
                if s >= dist:
                    break
                f = s / dist
                fc = oc + dc * f
                fr = orow + dr * f
                ci = int(math.floor(fc))
                ri = int(math.floor(fr))
                wx = fc - ci
                wy = fr - ri
                ci1 = min(ci + 1, ncols - 1)
                ri1 = min(ri + 1, nrows - 1)
                zt = (z[ri, ci] * (1.0 - wx) + z[ri, ci1] * wx) * (1.0 - wy) + (
                    z[ri1, ci] * (1.0 - wx) + z[ri1, ci1] * wx
                ) * wy
                if zt > h0 + (h1 - h0) * f:
                    seen = False
                    break
                j += 1
            out[r - r_lo, c - c_lo] = seen
    return out, c_lo, r_lo


def _dem_arrays(dem: RasterGrid):
    valid = dem.valid
    if valid.all():
        return dem.values, valid
    low = dem.values[valid].min() if valid.any() else 0.0
    return np.where(valid, dem.values, low), valid


def viewshed_from_arrays(z: np.ndarray, valid: np.ndarray, observer, radius_cells: float,
                         eye_height: float) -> tuple[np.ndarray, int, int]:
    """Kernel entry point on pre-filled arrays; returns ``(window, col0, row0)``."""
    rc = int(math.floor(radius_cells))
    return _los_window(z, valid, int(observer[0]), int(observer[1]), rc,
                       float(radius_cells) ** 2, float(eye_height), SAMPLE_STEP)


def compute_viewshed(dem: RasterGrid, observer: tuple[int, int], radius: float = DEFAULT_RADIUS,
                     eye_height: float = EYE_HEIGHT) -> ViewshedMask:
    """Visibility mask of all cells within ``radius`` metres of ``observer``.

    Raises:
        OutOfBoundsError: observer outside the grid.
        NodataError: observer on a nodata cell.
    """
    col, row = observer
    if not dem.in_bounds(col, row):
        raise OutOfBoundsError(f"observer {observer} outside the DEM")
    if dem.is_nodata(col, row):
        raise NodataError(f"observer {observer} is on a nodata cell")
    if not radius > 0:
        raise ValueError("radius must be positive")
    z, valid = _dem_arrays(dem)
    window, c0, r0 = viewshed_from_arrays(z, valid, observer, radius / dem.cell_size, eye_height)
    return ViewshedMask((col, row), radius, c0, r0, window)


# ---------------------------------------------------------------------------
# Weights and steering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ViewshedWeights:
    """Preference weight per land cover id for one behaviour."""

    behavior: str
    weights: dict[int, float]

    def __post_init__(self):
        for lc, w in self.weights.items():
            if not 0 < w <= 1:
                raise ValueError(f"{self.behavior}: weight for land cover {lc} must be in (0, 1], got {w}")

    def lookup(self, size: int | None = None) -> np.ndarray:
        """Dense array ``w[land_cover_id]``; 0 for ids without a weight."""
        size = max(max(self.weights, default=0), max(LAND_COVER_NAMES)) + 1 if size is None else size
        out = np.zeros(size)
        for lc, w in self.weights.items():
            if lc < size:
                out[lc] = w
        return out


def load_viewshed_weights(path=None) -> dict[str, ViewshedWeights]:
    """Parse a weights file; the bundled default table when ``path`` is None."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path is None:
        cp.read_string(resources.files("lostsim").joinpath("data/viewshed_weights.ini").read_text())
    else:
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"weights file not found: {path}")
        cp.read(path)
    tables = {}
    for section in cp.sections():
        weights = {}
        for name, value in cp[section].items():
            if name not in LAND_COVER_IDS:
                raise ValueError(f"{section}: unknown land cover '{name}'")
            weights[LAND_COVER_IDS[name]] = float(value)
        missing = set(LAND_COVER_NAMES) - set(weights)
        if missing:
            raise ValueError(f"{section}: no weight for land cover ids {sorted(missing)}")
        tables[section] = ViewshedWeights(section, weights)
    return tables


def max_weight_visible_cells(mask: ViewshedMask, land_cover, weights: ViewshedWeights) -> np.ndarray:
    """Visible cells whose land cover carries the highest weight in view.

    ``land_cover`` is a :class:`RasterGrid` or an integer id array aligned
    with the DEM. Returns an ``(n, 2)`` array of ``(col, row)``; empty when
    no visible cell has a weighted cover.
    """
    ids = land_cover
    if isinstance(land_cover, RasterGrid):
        ids = np.where(land_cover.valid, land_cover.values, -1).astype(np.int64)
    h, w = mask.visible.shape
    window_ids = ids[mask.row0:mask.row0 + h, mask.col0:mask.col0 + w]
    lut = weights.lookup()
    safe = np.where((window_ids >= 0) & (window_ids < len(lut)), window_ids, 0)
    wv = np.where(mask.visible & (window_ids >= 0) & (window_ids < len(lut)), lut[safe], 0.0)
    top = wv.max() if wv.size else 0.0
    if top <= 0:
        return np.zeros((0, 2), dtype=np.int64)
    rows, cols = np.nonzero(wv == top)
    return np.column_stack((cols + mask.col0, rows + mask.row0))


def mean_angle(p, cells_xy) -> float | None:
    """Arithmetic mean of the bearings from ``p`` to each target.

    Bearings use ``atan2(dy, dx)`` with east = 0, counter-clockwise
    positive. Angles are averaged directly, so targets straddling due west
    (the +/-pi seam) average to a misleading direction. Returns ``None``
    when there are no targets.
    """
    cells_xy = np.asarray(cells_xy, dtype=float).reshape(-1, 2)
    if len(cells_xy) == 0:
        return None
    ang = np.arctan2(cells_xy[:, 1] - p[1], cells_xy[:, 0] - p[0])
    return float(np.mean(ang))
