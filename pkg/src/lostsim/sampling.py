"""Mobility-time sampling of simulated paths and PDM rasterisation."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, special

from .behaviors import BEHAVIOR_ORDER, BehaviorKind
from .errors import EmptyInputError, MissingInputError, OutOfBoundsError
from .geometry import points_along
from .gis import RasterGrid
from .metrics import skl_vectors

WALKING_SPEED_KMH = 3.87
# moving-time mean and spread (hours) reported for the Hiker (solo) profile
MOBILITY_MEAN_H = 1.06
MOBILITY_STD_H = 1.01
SAMPLES_PER_PATH = 820


@dataclass(frozen=True)
class MobilityModel:
    """Shifted log-normal over moving time plus a constant walking speed."""

    s: float
    mu_loc: float = 0.0
    lambda_scale: float = 1.0
    speed: float = WALKING_SPEED_KMH

    def __post_init__(self):
        if not (self.s > 0 and self.lambda_scale > 0 and self.speed > 0):
            raise ValueError("shape, scale and speed must be positive")

    @classmethod
    def from_moments(cls, mean: float, std: float, speed: float = WALKING_SPEED_KMH) -> "MobilityModel":
        s2 = math.log1p((std / mean) ** 2)
        return cls(math.sqrt(s2), 0.0, mean / math.exp(s2 / 2), speed)

    @property
    def mean(self) -> float:
        return self.mu_loc + self.lambda_scale * math.exp(self.s ** 2 / 2)

    def pdf(self, x):
        return lognormal_pdf(x, self)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        y = (x - self.mu_loc) / self.lambda_scale
        with np.errstate(divide="ignore"):
            z = np.log(np.where(y > 0, y, 1.0)) / self.s
        return np.where(y > 0, special.ndtr(z), 0.0)

    def sample_times(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mu_loc + self.lambda_scale * np.exp(self.s * rng.standard_normal(n))

    def distance_m(self, hours):
        """Walking distance in metres after ``hours`` at the model speed."""
        return np.asarray(hours) * self.speed * 1000.0


DEFAULT_MOBILITY = MobilityModel.from_moments(MOBILITY_MEAN_H, MOBILITY_STD_H)


def lognormal_pdf(x, model: MobilityModel):
    """Density of the shifted log-normal; zero on and below ``mu_loc``."""
    x = np.asarray(x, dtype=float)
    y = (x - model.mu_loc) / model.lambda_scale
    pos = y > 0
    ys = np.where(pos, y, 1.0)
    f = np.exp(-np.log(ys) ** 2 / (2 * model.s ** 2)) / (model.s * ys * model.lambda_scale * math.sqrt(2 * math.pi))
    out = np.where(pos, f, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def bin_edges(centers) -> np.ndarray:
    """Edges halfway between sorted bin centres; the first edge is floored at 0."""
    c = np.asarray(centers, dtype=float)
    if len(c) < 2:
        raise ValueError("need at least two bins")
    mid = (c[1:] + c[:-1]) / 2
    first = max(0.0, c[0] - (c[1] - c[0]) / 2)
    last = c[-1] + (c[-1] - c[-2]) / 2
    return np.concatenate(([first], mid, [last]))


def _histogram_arrays(histogram):
    h = np.asarray(histogram, dtype=float).reshape(-1, 2)
    h = h[np.argsort(h[:, 0])]
    if np.count_nonzero(h[:, 1] > 0) < 3:
        raise ValueError("histogram needs at least three non-empty bins")
    return h[:, 0], h[:, 1]


def _fit_two_parameter(counts, mass_fn, a_grid, b_grid, rounds: int = 3):
    """Grid search then alternating bounded 1-D refinement of SKL."""

    def loss(a, b):
        m = mass_fn(a, b)
        if not np.all(np.isfinite(m)) or m.sum() <= 0:
            return np.inf
        return skl_vectors(counts, m)

    scores = np.array([[loss(a, b) for b in b_grid] for a in a_grid])
    i, j = np.unravel_index(np.argmin(scores), scores.shape)
    a, b = a_grid[i], b_grid[j]
    a_lo, a_hi = a_grid[max(i - 1, 0)], a_grid[min(i + 1, len(a_grid) - 1)]
    b_lo, b_hi = b_grid[max(j - 1, 0)], b_grid[min(j + 1, len(b_grid) - 1)]
    for _ in range(rounds):
        a = optimize.minimize_scalar(lambda v: loss(v, b), bounds=(a_lo, a_hi), method="bounded",
                                     options={"xatol": 1e-8}).x
        b = optimize.minimize_scalar(lambda v: loss(a, v), bounds=(b_lo, b_hi), method="bounded",
                                     options={"xatol": 1e-8}).x
    return float(a), float(b), loss(a, b)


def lognormal_bin_masses(edges, s, scale, loc=0.0) -> np.ndarray:
    m = MobilityModel(s, loc, scale)
    return np.diff(m.cdf(edges))


def fit_mobility(histogram, speed: float = WALKING_SPEED_KMH) -> MobilityModel:
    """Fit shape and scale (location fixed at 0) by minimising SKL.

    ``histogram`` is a sequence of ``(bin_centre_hours, count)`` pairs.
    """
    centers, counts = _histogram_arrays(histogram)
    edges = bin_edges(centers)
    s_grid = np.geomspace(0.05, 4.0, 60)
    lam_grid = np.geomspace(max(edges[1], 1e-3) / 4, edges[-1] * 2, 60)
    s, lam, _ = _fit_two_parameter(counts, lambda s, lam: lognormal_bin_masses(edges, s, lam),
                                   s_grid, lam_grid)
    return MobilityModel(s, 0.0, lam, speed)


def normal_bin_masses(edges, mean, std) -> np.ndarray:
    return np.diff(special.ndtr((np.asarray(edges) - mean) / std))


def fit_normal(histogram) -> tuple[float, float, float]:
    """Best normal fit under the same SKL criterion: ``(mean, std, skl)``."""
    centers, counts = _histogram_arrays(histogram)
    edges = bin_edges(centers)
    span = edges[-1] - edges[0]
    mean_grid = np.linspace(edges[0] - span / 2, edges[-1], 60)
    std_grid = np.geomspace(span / 200, span * 2, 60)
    return _fit_two_parameter(counts, lambda m, sd: normal_bin_masses(edges, m, sd), mean_grid, std_grid)


def mobility_skl(histogram, model: MobilityModel) -> float:
    centers, counts = _histogram_arrays(histogram)
    edges = bin_edges(centers)
    return skl_vectors(counts, lognormal_bin_masses(edges, model.s, model.lambda_scale, model.mu_loc))


def load_histogram(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"histogram not found: {path}")
    return np.loadtxt(path, comments="#", ndmin=2)


# ---------------------------------------------------------------------------
# Found samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoundSample:
    position: tuple[float, float]
    time: float
    path_index: int
    behavior: BehaviorKind


@dataclass(eq=False)
class FoundSamples:
    """Column store of found samples."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    path_index: np.ndarray
    behavior_code: np.ndarray  # index into BEHAVIOR_ORDER

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i) -> FoundSample:
        return FoundSample((float(self.x[i]), float(self.y[i])), float(self.t[i]),
                           int(self.path_index[i]), BEHAVIOR_ORDER[int(self.behavior_code[i])])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack((self.x, self.y))

    @classmethod
    def empty(cls) -> "FoundSamples":
        z = np.zeros(0)
        return cls(z, z, z, np.zeros(0, np.int64), np.zeros(0, np.int64))

    @classmethod
    def concat(cls, parts) -> "FoundSamples":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("x", "y", "t", "path_index", "behavior_code")))


def sample_found(path, model: MobilityModel, m_samples: int, rng: np.random.Generator) -> FoundSamples:
    """Found locations for one path.

    Draws ``m_samples`` moving times, converts them to distances and keeps
    those not beyond the end of the path.
    """
    if m_samples < 1:
        raise ValueError("m_samples must be >= 1")
    t = model.sample_times(rng, m_samples)
    d = model.distance_m(t)
    cum = path.cumulative_lengths
    keep = d <= cum[-1]
    t, d = t[keep], d[keep]
    xy = points_along(path.vertices, cum, d)
    n = len(t)
    code = BEHAVIOR_ORDER.index(path.behavior)
    return FoundSamples(xy[:, 0], xy[:, 1], t, np.full(n, path.index, np.int64), np.full(n, code, np.int64))


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, index)))


def sample_paths(paths, model: MobilityModel, m_samples: int, seed: int) -> FoundSamples:
    """Sample every path with its own index-derived stream."""
    return FoundSamples.concat(sample_found(p, model, m_samples, sample_rng(seed, p.index)) for p in paths)


SAMPLES_HEADER = "x,y,t,behavior,path_index"


def write_samples(samples: FoundSamples, out) -> None:
    names = [b.value for b in BEHAVIOR_ORDER]
    buf = io.StringIO()
    buf.write(SAMPLES_HEADER + "\n")
    for x, y, t, b, i in zip(samples.x.tolist(), samples.y.tolist(), samples.t.tolist(),
                             samples.behavior_code.tolist(), samples.path_index.tolist()):
        buf.write(f"{x:.6f},{y:.6f},{t:.6f},{names[b]},{i}\n")
    Path(out).write_text(buf.getvalue())


def read_samples(src) -> FoundSamples:
    src = Path(src)
    if not src.exists():
        raise MissingInputError(f"samples file not found: {src}")
    codes = {b.value: i for i, b in enumerate(BEHAVIOR_ORDER)}
    body = src.read_text().partition("\n")[2]
    if not body.strip():
        raise EmptyInputError(f"samples file {src} has no rows")
    cols = np.loadtxt(io.StringIO(body), delimiter=",", usecols=(0, 1, 2), ndmin=2)
    meta = np.loadtxt(io.StringIO(body), delimiter=",", usecols=(3, 4), dtype=str, ndmin=2)
    beh = np.array([codes[b] for b in meta[:, 0]], dtype=np.int64)
    return FoundSamples(cols[:, 0], cols[:, 1], cols[:, 2], meta[:, 1].astype(np.int64), beh)


# ---------------------------------------------------------------------------
# PDM
# ---------------------------------------------------------------------------

PDM_NODATA = -9999.0


@dataclass(frozen=True, eq=False)
class PDM:
    grid: RasterGrid
    n_samples: int
    config_hash: str = ""


def build_pdm(samples_xy, template: RasterGrid, out_cell_size: float | None = None) -> PDM:
    """Histogram sample positions over the template's extent, summing to 1.

    With ``out_cell_size`` equal to the template's, template nodata cells
    are kept at 0 and samples falling on them are not counted.
    """
    xy = np.asarray(samples_xy, dtype=float).reshape(-1, 2)
    if len(xy) == 0:
        raise EmptyInputError("no samples to rasterise")
    cs = template.cell_size if out_cell_size is None else float(out_cell_size)
    n_cols = max(1, math.ceil(template.width / cs - 1e-9))
    n_rows = max(1, math.ceil(template.height / cs - 1e-9))
    grid = RasterGrid(n_cols, n_rows, cs, template.origin, PDM_NODATA, np.zeros((n_rows, n_cols)))
    col, row, inside = grid.cells_of(xy)
    if cs == template.cell_size:
        ok = np.zeros(len(xy), dtype=bool)
        ok[inside] = template.valid[row[inside], col[inside]]
        inside = ok
    if not inside.any():
        raise OutOfBoundsError("every sample lies outside the PDM extent")
    flat = row[inside] * n_cols + col[inside]
    counts = np.bincount(flat, minlength=n_rows * n_cols).astype(float)
    n = int(inside.sum())
    return PDM(RasterGrid.like(grid, (counts / n).reshape(n_rows, n_cols)), n)


def log_view(pdm_grid: RasterGrid) -> RasterGrid:
    """Natural log of each positive cell; zero cells become nodata."""
    v = pdm_grid.values
    with np.errstate(divide="ignore"):
        out = np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), PDM_NODATA)
    return RasterGrid.like(pdm_grid, out, nodata=PDM_NODATA)


def from_log_view(log_grid: RasterGrid) -> RasterGrid:
    v = np.where(log_grid.valid, np.exp(log_grid.values), 0.0)
    return RasterGrid.like(log_grid, v / v.sum(), nodata=PDM_NODATA)


def save_png(grid: RasterGrid, path) -> None:
    """Greyscale image of a raster, nodata black, north up."""
    from PIL import Image

    v = np.where(grid.valid, grid.values, np.nan)
    lo, hi = np.nanmin(v), np.nanmax(v)
    scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
    img = np.nan_to_num(scaled[::-1] * 255.0, nan=0.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
