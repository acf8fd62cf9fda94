"""Seeded synthetic island used as a stand-in for licensed GIS layers.

The island is small enough for tests to run a whole pipeline in minutes,
yet has every feature the behaviours react to: hills that block sight
lines, woodland, two villages, a lake, streams carved from a flow
accumulation model, sea all round, and a road and path network.
"""

from __future__ import annotations

import configparser
import hashlib
import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gis import LAND_COVER_IDS, RasterGrid, TerrainStack, WaterSurface, save_path_network, save_raster
from .metrics import HIKER_SOLO_REFERENCE
from .sampling import DEFAULT_MOBILITY, bin_edges

NODATA = -9999.0
SEA_CATCHMENT = 100_000.0
LAKE_CATCHMENT = 3_000.0
RIVER_THRESHOLD = 250

_D8 = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


@dataclass(eq=False)
class Island:
    terrain: TerrainStack
    lines: list  # (coordinates, path_type)
    villages: list  # world-coordinate centres
    pls_heatmap: RasterGrid


def _smooth_noise(rng, shape, passes: int = 6) -> np.ndarray:
    v = rng.standard_normal(shape)
    for _ in range(passes):
        v = (v + np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1)) / 5
    return v / (v.std() or 1.0)


def flow_model(z: np.ndarray, sink: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flow direction (radians) and upstream cell count per cell.

    Depressions are filled by priority flood from the ``sink`` cells so
    every land cell drains to a sink; directions follow the steepest D8
    descent over the filled surface.
    """
    rows, cols = z.shape
    filled = np.full(z.shape, np.inf)
    order = []
    heap = []
    for r, c in zip(*np.nonzero(sink)):
        filled[r, c] = z[r, c]
        heapq.heappush(heap, (z[r, c], r, c))
    done = np.zeros(z.shape, dtype=bool)
    down = np.full(z.shape + (2,), -1, dtype=np.int64)
    while heap:
        h, r, c = heapq.heappop(heap)
        if done[r, c]:
            continue
        done[r, c] = True
        order.append((r, c))
        for dc, dr in _D8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols and not done[rr, cc]:
                # tiny rise keeps flats draining toward the flood front
                nh = max(z[rr, cc], h + 1e-6)
                if nh < filled[rr, cc]:
                    filled[rr, cc] = nh
                    down[rr, cc] = (r, c)
                    heapq.heappush(heap, (nh, rr, cc))
    acc = np.ones(z.shape)
    angle = np.zeros(z.shape)
    for r, c in reversed(order):
        dr, dc = down[r, c]
        if dr >= 0:
            acc[dr, dc] += acc[r, c]
            angle[r, c] = math.atan2(dr - r, dc - c)
    return angle, acc


def _ring(center, radius, n, wobble, rng):
    t = np.linspace(0, 2 * math.pi, n, endpoint=False)
    rad = radius * (1 + wobble * np.sin(3 * t + rng.uniform(0, 2 * math.pi)))
    return np.column_stack((center[0] + rad * np.cos(t), center[1] + rad * np.sin(t)))


def _polyline(a, b, n, bend, rng):
    t = np.linspace(0, 1, n)[:, None]
    a, b = np.asarray(a), np.asarray(b)
    normal = np.array([-(b - a)[1], (b - a)[0]])
    pts = a + t * (b - a) + bend * np.sin(math.pi * t) * normal
    pts[1:-1] += rng.normal(0, 2.0, pts[1:-1].shape)
    pts[0], pts[-1] = a, b
    return pts


def make_island(seed: int = 7, size: int = 200, cell_size: float = 5.0,
                origin=(10_000.0, 20_000.0), heatmap_cell: float = 100.0) -> Island:
    rng = np.random.default_rng(seed)
    x0, y0 = origin
    extent = size * cell_size
    c = (np.arange(size) + 0.5) * cell_size
    X, Y = np.meshgrid(c, c)
    cx = cy = extent / 2
    R = extent * 0.44
    r = np.hypot(X - cx, Y - cy) / R
    theta = np.arctan2(Y - cy, X - cx)
    shore = 1 + 0.08 * np.sin(3 * theta + 1.0) + 0.05 * _smooth_noise(rng, (size, size), 20)
    base = 1 - (r / shore) ** 2
    hills = np.zeros_like(base)
    for _ in range(5):
        hx, hy = rng.uniform(0.3, 0.7, 2) * extent
        w = rng.uniform(60, 140)
        hills += rng.uniform(15, 45) * np.exp(-((X - hx) ** 2 + (Y - hy) ** 2) / (2 * w * w))
    land = base > 0
    z = np.where(land, 60 * base + hills + 1.5 * _smooth_noise(rng, (size, size)), 0.0)
    z = np.where(land, np.maximum(z, 0.5), 0.0)

    # lake: a basin on the island's west side
    lx, ly = cx - 0.45 * R, cy + 0.1 * R
    lake = land & (np.hypot(X - lx, Y - ly) < 45)
    z = np.where(lake, z.min(where=lake, initial=np.inf) if lake.any() else z, z)

    # land cover bands by elevation, then patches
    lc = np.full(z.shape, LAND_COVER_IDS["Acid grassland"], dtype=float)
    zl = np.where(land, z, 0)
    high = np.percentile(zl[land], [40, 70, 88])
    lc[land & (zl > high[0])] = LAND_COVER_IDS["Heather grassland"]
    lc[land & (zl > high[1])] = LAND_COVER_IDS["Heather"]
    lc[land & (zl > high[2])] = LAND_COVER_IDS["Rock"]
    lc[land & (r > 0.85)] = LAND_COVER_IDS["Neutral grassland"]
    bog = _smooth_noise(rng, z.shape, 12) > 1.2
    lc[land & bog] = LAND_COVER_IDS["Bog"]
    wood = _smooth_noise(rng, z.shape, 10) > 1.0
    lc[land & wood & (zl < high[1])] = LAND_COVER_IDS["Woodland"]

    villages = []
    for ang in (0.4, 0.4 + math.pi * 0.95):
        vx, vy = cx + 0.62 * R * math.cos(ang), cy + 0.62 * R * math.sin(ang)
        villages.append((x0 + vx, y0 + vy))
        d = np.hypot(X - vx, Y - vy)
        lc[land & (d < 110)] = LAND_COVER_IDS["Arable and horticulture"]
        lc[land & (d < 140) & (d > 110) & (rng.random(z.shape) < 0.3)] = LAND_COVER_IDS["Improved grassland"]
        lc[land & (d < 45)] = LAND_COVER_IDS["Urban"]

    sea = ~land
    water = np.zeros(z.shape)
    water[sea] = WaterSurface.SEA
    angle, acc = flow_model(z, sea)
    river = land & ~lake & (acc >= RIVER_THRESHOLD)
    water[river] = WaterSurface.RIVER
    water[lake] = WaterSurface.LAKE
    lc[sea | lake] = LAND_COVER_IDS["Water"]
    lc[land & (r > 0.97) & (zl < 2)] = LAND_COVER_IDS["Saltmarsh"]
    catchment = acc.copy()
    catchment[sea] = SEA_CATCHMENT
    catchment[lake] = LAKE_CATCHMENT
    angle[sea] = theta[sea]

    def grid(v):
        return RasterGrid(size, size, cell_size, origin, NODATA, v)

    terrain = TerrainStack(grid(np.round(z, 3)), grid(lc), grid(catchment), grid(water),
                           grid(np.round(angle, 6)))

    lines = _network(rng, (cx, cy), R, villages, origin)
    heat = _pls_heatmap(rng, extent, heatmap_cell, origin, villages, lines, land[:: int(heatmap_cell / cell_size), :: int(heatmap_cell / cell_size)])
    return Island(terrain, lines, villages, heat)


def _network(rng, center, R, villages, origin):
    x0, y0 = origin
    ring = _ring(center, 0.62 * R, 48, 0.0, rng) + (x0, y0)
    ring_angle = np.arctan2(ring[:, 1] - y0 - center[1], ring[:, 0] - x0 - center[0]) % (2 * math.pi)

    def vertex_at(a):
        return int(np.argmin(np.abs(ring_angle - a % (2 * math.pi))))

    # junctions at both villages and at the trunk road's two ends
    village_a, village_b = vertex_at(0.4), vertex_at(0.4 + math.pi * 0.95)
    trunk_a, trunk_b = vertex_at(1.9), vertex_at(4.6)
    cuts = sorted({village_a, village_b, trunk_a, trunk_b})
    lines = []
    n = len(ring)
    for i, a in enumerate(cuts):
        b = cuts[(i + 1) % len(cuts)]
        idx = list(range(a, b + 1)) if b > a else list(range(a, n)) + list(range(0, b + 1))
        lines.append((ring[idx].tolist(), "Major road"))
    trunk = _polyline(ring[trunk_a], ring[trunk_b], 20, 0.1, rng)
    mid = len(trunk) // 2
    lines.append((trunk[: mid + 1].tolist(), "Trunk road"))
    lines.append((trunk[mid:].tolist(), "Trunk road"))
    hub = trunk[mid]
    lines.append((_polyline(hub, ring[village_a], 15, -0.15, rng).tolist(), "Path"))
    lines.append((_polyline(hub, ring[village_b], 15, 0.2, rng).tolist(), "Path"))
    # a dead-end track toward the coast
    coast = np.array(center) + 0.85 * R * np.array([math.cos(3.3), math.sin(3.3)]) + (x0, y0)
    lines.append((_polyline(ring[village_b], coast, 10, 0.1, rng).tolist(), "Path"))
    return lines


def _pls_heatmap(rng, extent, cell, origin, villages, lines, land_coarse):
    n = int(round(extent / cell))
    c = (np.arange(n) + 0.5) * cell + np.array(origin)[:, None]
    X, Y = np.meshgrid(c[0], c[1])
    intensity = np.zeros((n, n))
    anchors = list(villages) + [tuple(lines[-1][0][-1])]
    for (ax, ay), a in zip(anchors, (10.0, 7.0, 5.0)):
        w = 1.6 * cell
        intensity += a * np.exp(-((X - ax) ** 2 + (Y - ay) ** 2) / (2 * w * w))
    counts = np.where(intensity >= 0.5, np.round(intensity), 0.0)
    counts[~land_coarse[:n, :n]] = 0.0
    return RasterGrid(n, n, cell, origin, NODATA, counts)


def clustered_heatmap(n: int = 16, cell: float = 100.0, origin=(0.0, 0.0), seed: int = 0,
                      clusters: int = 3) -> RasterGrid:
    """Sparse count heatmap built from a few Gaussian clusters."""
    rng = np.random.default_rng(seed)
    c = np.arange(n) + 0.5
    X, Y = np.meshgrid(c, c)
    intensity = np.zeros((n, n))
    for _ in range(clusters):
        cx, cy = rng.uniform(2, n - 2, 2)
        w = rng.uniform(1.0, 2.0) * n / 16
        intensity += rng.uniform(4, 12) * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))
    return RasterGrid(n, n, cell, origin, NODATA, np.where(intensity >= 0.5, np.round(intensity), 0.0))


def synthetic_mobility_histogram(n_total: int = 132, bin_width: float = 0.5, n_bins: int = 10) -> np.ndarray:
    """Expected bin counts of the default mobility model (not observed data)."""
    centers = (np.arange(n_bins) + 0.5) * bin_width
    mass = np.diff(DEFAULT_MOBILITY.cdf(bin_edges(centers)))
    return np.column_stack((centers, np.round(mass * n_total)))


LAYER_FILES = {
    "dem": "synthetic_island.asc",
    "land_cover": "synthetic_island_landcover.asc",
    "catchment": "synthetic_island_catchment.asc",
    "water_surface": "synthetic_island_water_surface.asc",
    "outflow_dir": "synthetic_island_outflow.asc",
}
NETWORK_FILE = "synthetic_island_network.geojson"
HEATMAP_FILE = "pls_heatmap_100m.asc"
SPARSE_HEATMAP_FILE = "sparse_heatmap_16.asc"
REFERENCE_FILE = "hiker_solo_reference.tsv"
HISTOGRAM_FILE = "mobility_histogram_synthetic.txt"
CONFIG_FILE = "island.ini"


def write_fixture(out_dir, seed: int = 7) -> dict[str, Path]:
    """Write the island and companion inputs; returns written paths by role."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    island = make_island(seed)
    written = {}
    for layer, name in LAYER_FILES.items():
        save_raster(getattr(island.terrain, layer), out / name)
        written[layer] = out / name
    idx = configparser.ConfigParser()
    idx["terrain"] = dict(LAYER_FILES)
    with open(out / "terrain.ini", "w") as fh:
        idx.write(fh)
    written["terrain_index"] = out / "terrain.ini"
    save_path_network(island.lines, out / NETWORK_FILE)
    written["network"] = out / NETWORK_FILE
    save_raster(island.pls_heatmap, out / HEATMAP_FILE)
    written["pls_heatmap"] = out / HEATMAP_FILE
    save_raster(clustered_heatmap(seed=0), out / SPARSE_HEATMAP_FILE)
    written["sparse_heatmap"] = out / SPARSE_HEATMAP_FILE

    ref = ["# Hiker (solo) found-location land cover counts", "category\tcount"]
    ref += [f"{k}\t{v}" for k, v in HIKER_SOLO_REFERENCE.items()]
    (out / REFERENCE_FILE).write_text("\n".join(ref) + "\n")
    written["reference"] = out / REFERENCE_FILE

    hist = synthetic_mobility_histogram()
    lines = ["# SYNTHETIC stand-in, not observed data: expected counts of the default",
             "# mobility model over 132 cases. Columns: bin centre (hours), count."]
    lines += [f"{c:g}\t{int(n)}" for c, n in hist]
    (out / HISTOGRAM_FILE).write_text("\n".join(lines) + "\n")
    written["mobility_histogram"] = out / HISTOGRAM_FILE

    (out / CONFIG_FILE).write_text(ISLAND_CONFIG)
    written["config"] = out / CONFIG_FILE

    sums = [f"{hashlib.sha256(p.read_bytes()).hexdigest()}  {p.name}" for p in sorted(written.values())]
    (out / "SHA256SUMS").write_text("\n".join(sums) + "\n")
    return written


ISLAND_CONFIG = """\
# Run configuration for the synthetic island.
[simulation]
d_max = 10000
n_gen = 2000
paths_per_start = 200
sigma_xx = 10000
sigma_yy = 10000
sigma_xy = 0
eye_height = 1.6

[behaviors]
crossing_b = 8000
lambda_max = 5
k_nearest = 3
viewshed_radius = 300
viewshed_cadence = 10

[sampling]
samples_per_path = 820
speed_kmh = 3.87

[gp]
iterations = 500
learning_rate = 0.05
out_cell_size = 20
"""


def bundled_fixture_dir() -> Path:
    return Path(__file__).parent / "data" / "island"
