"""Raster and vector inputs: ASCII grids, the terrain stack, the path graph.

Raster convention: ``values[row, col]`` with row 0 the *southernmost* row, so
cell ``(col, row)`` has its lower-left corner at
``origin + (col, row) * cell_size``. On disk the northernmost row comes
first, as usual for ASCII grids; :func:`load_raster` and :func:`save_raster`
flip between the two.
"""

from __future__ import annotations

import configparser
import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    MissingInputError,
    NetworkFormatError,
    OutOfBoundsError,
    RasterFormatError,
    RasterMisalignedError,
    RasterTruncationError,
)
from .geometry import drop_repeated, polyline_length

logger = logging.getLogger(__name__)

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")

# Land cover legend; names match the viewshed weight table.
LAND_COVER_NAMES = {
    1: "Acid grassland",
    2: "Arable and horticulture",
    3: "Bog",
    4: "Calcareous grassland",
    5: "Fen, March, Swamp",
    6: "Heather",
    7: "Heather grassland",
    8: "Improved grassland",
    9: "Neutral grassland",
    10: "Rock",
    11: "Saltmarsh",
    12: "Urban",
    13: "Water",
    14: "Woodland",
}
LAND_COVER_IDS = {name: i for i, name in LAND_COVER_NAMES.items()}
URBAN = LAND_COVER_IDS["Urban"]
WATER = LAND_COVER_IDS["Water"]
WOODLAND = LAND_COVER_IDS["Woodland"]


class WaterSurface(enum.IntEnum):
    NONE = 0
    LAKE = 1
    SEA = 2
    RIVER = 3


BLOCKING_WATER = (WaterSurface.LAKE, WaterSurface.SEA, WaterSurface.RIVER)


class LandCoverCategory(str, enum.Enum):
    OPEN_GROUND = "open_ground"
    ROAD = "road"
    BUILDING = "building"
    TREES = "trees"
    WATER = "water"


# ---------------------------------------------------------------------------
# Rasters
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RasterGrid:
    """Square-cell georeferenced grid.

    ``values`` is a 2-D float array indexed ``[row, col]``, row 0 south.
    """

    n_cols: int
    n_rows: int
    cell_size: float
    origin: tuple[float, float]
    nodata: float
    values: np.ndarray

    def __post_init__(self):
        if self.n_cols <= 0 or self.n_rows <= 0:
            raise RasterFormatError(f"grid must have positive size, got {self.n_cols}x{self.n_rows}")
        if not self.cell_size > 0:
            raise RasterFormatError(f"cellsize must be positive, got {self.cell_size}")
        values = np.asarray(self.values, dtype=float)
        if values.size != self.n_cols * self.n_rows:
            raise RasterTruncationError(
                f"expected {self.n_cols * self.n_rows} values, got {values.size}"
            )
        object.__setattr__(self, "values", values.reshape(self.n_rows, self.n_cols))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def like(cls, template: "RasterGrid", values, nodata: float | None = None) -> "RasterGrid":
        return cls(
            template.n_cols,
            template.n_rows,
            template.cell_size,
            template.origin,
            template.nodata if nodata is None else nodata,
            values,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def width(self) -> float:
        return self.n_cols * self.cell_size

    @property
    def height(self) -> float:
        return self.n_rows * self.cell_size

    @cached_property
    def valid(self) -> np.ndarray:
        """Boolean mask of cells that are not nodata."""
        v = self.values
        return ~(np.isnan(v) | (v == self.nodata))

    def in_bounds(self, col: int, row: int) -> bool:
        return 0 <= col < self.n_cols and 0 <= row < self.n_rows

    def cell_to_world(self, col: int, row: int) -> tuple[float, float]:
        """Centre of cell ``(col, row)``."""
        return (
            self.origin[0] + (col + 0.5) * self.cell_size,
            self.origin[1] + (row + 0.5) * self.cell_size,
        )

    def world_to_cell(self, x: float, y: float) -> tuple[int, int] | None:
        """Cell containing ``(x, y)``, or ``None`` when outside the grid."""
        col = math.floor((x - self.origin[0]) / self.cell_size)
        row = math.floor((y - self.origin[1]) / self.cell_size)
        if self.in_bounds(col, row):
            return (col, row)
        return None

    def cells_of(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorised :meth:`world_to_cell`; returns ``(col, row, inside)``."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        col = np.floor((xy[:, 0] - self.origin[0]) / self.cell_size).astype(np.int64)
        row = np.floor((xy[:, 1] - self.origin[1]) / self.cell_size).astype(np.int64)
        inside = (col >= 0) & (col < self.n_cols) & (row >= 0) & (row < self.n_rows)
        return col, row, inside

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """``(x, y)`` arrays of cell centres, each shaped like ``values``."""
        xs = self.origin[0] + (np.arange(self.n_cols) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.n_rows) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    def value(self, col: int, row: int) -> float:
        return float(self.values[row, col])

    def is_nodata(self, col: int, row: int) -> bool:
        return not self.valid[row, col]

    def aligned_with(self, other: "RasterGrid") -> bool:
        return (
            self.n_cols == other.n_cols
            and self.n_rows == other.n_rows
            and self.cell_size == other.cell_size
            and self.origin == other.origin
        )


def world_to_cell(grid: RasterGrid, p) -> tuple[int, int] | None:
    return grid.world_to_cell(float(p[0]), float(p[1]))


def _format_number(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def load_raster(path) -> RasterGrid:
    """Read an ASCII grid (6-line header, northernmost row first)."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"raster not found: {path}")
    lines = path.read_text().splitlines()
    header: dict[str, str] = {}
    for i, key in enumerate(HEADER_KEYS):
        if i >= len(lines):
            raise RasterFormatError(f"{path}: missing header key '{key}'")
        parts = lines[i].split()
        if len(parts) != 2:
            raise RasterFormatError(f"{path}: malformed header line {i + 1}: {lines[i]!r}")
        name = parts[0].lower()
        if name not in HEADER_KEYS:
            raise RasterFormatError(f"{path}: unknown header key '{parts[0]}'")
        header[name] = parts[1]
    for key in HEADER_KEYS:
        if key not in header:
            raise RasterFormatError(f"{path}: missing header key '{key}'")

    def parse(key, kind):
        try:
            return kind(header[key])
        except ValueError:
            raise RasterFormatError(f"{path}: bad value for '{key}': {header[key]!r}") from None

    n_cols, n_rows = parse("ncols", int), parse("nrows", int)
    if n_cols <= 0:
        raise RasterFormatError(f"{path}: 'ncols' must be positive, got {n_cols}")
    if n_rows <= 0:
        raise RasterFormatError(f"{path}: 'nrows' must be positive, got {n_rows}")
    cell = parse("cellsize", float)
    if not cell > 0:
        raise RasterFormatError(f"{path}: 'cellsize' must be positive, got {cell}")
    try:
        body = np.array(" ".join(lines[6:]).split(), dtype=float)
    except ValueError as exc:
        raise RasterFormatError(f"{path}: non-numeric cell value ({exc})") from None
    if body.size != n_cols * n_rows:
        raise RasterTruncationError(
            f"{path}: expected {n_cols * n_rows} values ({n_rows} rows of {n_cols}), got {body.size}"
        )
    values = body.reshape(n_rows, n_cols)[::-1]
    return RasterGrid(
        n_cols,
        n_rows,
        cell,
        (parse("xllcorner", float), parse("yllcorner", float)),
        parse("nodata_value", float),
        values,
    )


def save_raster(grid: RasterGrid, path) -> None:
    """Write ``grid`` as an ASCII grid; values round-trip exactly."""
    fmt = _format_number
    out = [
        f"ncols {grid.n_cols}",
        f"nrows {grid.n_rows}",
        f"xllcorner {fmt(grid.origin[0])}",
        f"yllcorner {fmt(grid.origin[1])}",
        f"cellsize {fmt(grid.cell_size)}",
        f"nodata_value {fmt(grid.nodata)}",
    ]
    for row in grid.values[::-1]:
        out.append(" ".join(map(fmt, row.tolist())))
    Path(path).write_text("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# Terrain stack
# ---------------------------------------------------------------------------

TERRAIN_LAYERS = ("dem", "land_cover", "catchment", "water_surface", "outflow_dir")


@dataclass(frozen=True, eq=False)
class TerrainStack:
    dem: RasterGrid
    land_cover: RasterGrid
    catchment: RasterGrid
    water_surface: RasterGrid
    outflow_dir: RasterGrid

    def __post_init__(self):
        for name in TERRAIN_LAYERS[1:]:
            other = getattr(self, name)
            if not self.dem.aligned_with(other):
                raise RasterMisalignedError(
                    f"layer '{name}' is not aligned with the DEM "
                    f"({other.n_cols}x{other.n_rows}@{other.cell_size} {other.origin} vs "
                    f"{self.dem.n_cols}x{self.dem.n_rows}@{self.dem.cell_size} {self.dem.origin})"
                )
        c = self.catchment
        if np.any(c.values[c.valid] < 0):
            raise RasterFormatError("catchment values must be >= 0")

    @property
    def grid(self) -> RasterGrid:
        return self.dem

    @property
    def cell_size(self) -> float:
        return self.dem.cell_size

    @cached_property
    def land_cover_ids(self) -> np.ndarray:
        """Integer land cover per cell, -1 on nodata."""
        lc = self.land_cover
        return np.where(lc.valid, lc.values, -1).astype(np.int64)

    @cached_property
    def water_codes(self) -> np.ndarray:
        ws = self.water_surface
        return np.where(ws.valid, ws.values, 0).astype(np.int64)

    @cached_property
    def catchment_values(self) -> np.ndarray:
        c = self.catchment
        return np.where(c.valid, c.values, 0.0)

    @cached_property
    def walkable(self) -> np.ndarray:
        """Cells an overland agent may enter: valid DEM and not sea."""
        return self.dem.valid & (self.water_codes != WaterSurface.SEA)

    @cached_property
    def dem_filled(self) -> np.ndarray:
        """DEM with nodata replaced by the lowest valid elevation."""
        dem = self.dem
        if dem.valid.all():
            return dem.values.copy()
        low = dem.values[dem.valid].min() if dem.valid.any() else 0.0
        return np.where(dem.valid, dem.values, low)


def read_terrain_index(directory) -> dict[str, Path]:
    """Layer paths from ``<directory>/terrain.ini`` (section ``[terrain]``)."""
    directory = Path(directory)
    index = directory / "terrain.ini"
    if not index.exists():
        raise MissingInputError(f"terrain index not found: {index}")
    cp = configparser.ConfigParser()
    cp.read(index)
    if "terrain" not in cp:
        raise RasterFormatError(f"{index}: missing [terrain] section")
    out = {}
    for key, value in cp["terrain"].items():
        out[key] = directory / value
    missing = [k for k in TERRAIN_LAYERS if k not in out]
    if missing:
        raise RasterFormatError(f"{index}: missing layer entries {missing}")
    return out


def load_terrain(directory) -> TerrainStack:
    paths = read_terrain_index(directory)
    return TerrainStack(**{k: load_raster(paths[k]) for k in TERRAIN_LAYERS})


# ---------------------------------------------------------------------------
# Path network
# ---------------------------------------------------------------------------

_SCORES = {"major road": 10, "trunk road": 5, "path": 2}
_warned_types: set[str] = set()


def score_of_type(path_type: str) -> int:
    """Hierarchy score of a path type; unknown types score 4."""
    key = " ".join(str(path_type).split()).lower()
    return _SCORES.get(key, 4)


@dataclass(eq=False)
class Edge:
    id: int
    u: int
    v: int
    polyline: np.ndarray
    path_type: str
    score: int
    traversable: bool = True
    # Split edges become non-traversable once walked.
    one_shot: bool = False

    @property
    def length(self) -> float:
        return polyline_length(self.polyline)

    def other(self, node: int) -> int:
        return self.v if node == self.u else self.u

    def oriented_from(self, node: int) -> np.ndarray:
        return self.polyline if node == self.u else self.polyline[::-1]


@dataclass(eq=False)
class PathGraph:
    """Undirected multigraph of junction nodes and polyline edges."""

    nodes: dict[int, np.ndarray] = field(default_factory=dict)
    edges: dict[int, Edge] = field(default_factory=dict)
    adjacency: dict[int, list[int]] = field(default_factory=dict)
    _next_node: int = 0
    _next_edge: int = 0
    _segments: tuple | None = field(default=None, repr=False)

    def add_node(self, position) -> int:
        nid = self._next_node
        self._next_node += 1
        self.nodes[nid] = np.asarray(position, dtype=float).copy()
        self.adjacency[nid] = []
        return nid

    def add_edge(self, u: int, v: int, polyline, path_type: str, score: int | None = None,
                 one_shot: bool = False) -> int:
        if u == v:
            raise NetworkFormatError("edge endpoints must differ")
        poly = np.asarray(polyline, dtype=float).copy()
        poly[0] = self.nodes[u]
        poly[-1] = self.nodes[v]
        poly = drop_repeated(poly)
        if len(poly) < 2:
            raise NetworkFormatError("edge polyline collapses to a point")
        eid = self._next_edge
        self._next_edge += 1
        self.edges[eid] = Edge(
            eid, u, v, poly, path_type,
            score_of_type(path_type) if score is None else score,
            one_shot=one_shot,
        )
        self.adjacency[u].append(eid)
        self.adjacency[v].append(eid)
        self._segments = None
        return eid

    def remove_edge(self, eid: int) -> Edge:
        e = self.edges.pop(eid)
        self.adjacency[e.u].remove(eid)
        self.adjacency[e.v].remove(eid)
        self._segments = None
        return e

    def copy(self) -> "PathGraph":
        g = PathGraph(
            dict(self.nodes),
            {k: replace(e) for k, e in self.edges.items()},
            {k: list(v) for k, v in self.adjacency.items()},
            self._next_node,
            self._next_edge,
        )
        g._segments = self._segments
        return g

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def total_length(self) -> float:
        return sum(e.length for e in self.edges.values())

    def segment_table(self):
        """Flattened segments for vectorised nearest-edge queries.

        Returns ``(a, b, seg_edge, starts, edge_ids)``: segment endpoints,
        the owning edge of each segment, the first segment index of each
        edge and the edge ids in that order.
        """
        if self._segments is None:
            a, b, owner, starts, ids = [], [], [], [], []
            n = 0
            for eid in sorted(self.edges):
                poly = self.edges[eid].polyline
                a.append(poly[:-1])
                b.append(poly[1:])
                owner.append(np.full(len(poly) - 1, eid))
                starts.append(n)
                ids.append(eid)
                n += len(poly) - 1
            if ids:
                self._segments = (
                    np.concatenate(a), np.concatenate(b), np.concatenate(owner),
                    np.asarray(starts), np.asarray(ids),
                )
            else:
                empty = np.zeros((0, 2))
                self._segments = (empty, empty, np.zeros(0, int), np.zeros(0, int), np.zeros(0, int))
        return self._segments


SNAP_TOLERANCE = 0.5


class _NodeSnapper:
    """Merge endpoints closer than ``tol`` into one node (bucket hash)."""

    def __init__(self, graph: PathGraph, tol: float):
        self.graph = graph
        self.tol = tol
        self.buckets: dict[tuple[int, int], list[int]] = {}

    def node_for(self, p) -> int:
        bx, by = math.floor(p[0] / self.tol), math.floor(p[1] / self.tol)
        best, best_d = None, self.tol
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for nid in self.buckets.get((bx + dx, by + dy), ()):
                    q = self.graph.nodes[nid]
                    d = math.hypot(q[0] - p[0], q[1] - p[1])
                    if d <= best_d:
                        best, best_d = nid, d
        if best is None:
            best = self.graph.add_node(p)
            self.buckets.setdefault((bx, by), []).append(best)
        return best


def build_path_graph(lines, snap_tolerance: float = SNAP_TOLERANCE) -> PathGraph:
    """Build a graph from ``(coordinates, path_type)`` pairs."""
    graph = PathGraph()
    snapper = _NodeSnapper(graph, snap_tolerance)
    for i, (coords, path_type) in enumerate(lines):
        coords = drop_repeated(np.asarray(coords, dtype=float).reshape(-1, 2))
        if len(coords) < 2:
            raise NetworkFormatError(f"feature {i}: line needs at least 2 distinct vertices")
        if score_of_type(path_type) == 4 and " ".join(str(path_type).split()).lower() not in _warned_types:
            _warned_types.add(" ".join(str(path_type).split()).lower())
            logger.warning("unknown path_type %r scored as 4", path_type)
        u = snapper.node_for(coords[0])
        v = snapper.node_for(coords[-1])
        if u == v:
            # closed ring: split at its middle vertex so v1 != v2 holds
            if len(coords) < 3:
                logger.warning("feature %d: degenerate loop dropped", i)
                continue
            mid = len(coords) // 2
            w = snapper.node_for(coords[mid])
            if w == u:
                logger.warning("feature %d: degenerate loop dropped", i)
                continue
            graph.add_edge(u, w, coords[: mid + 1], path_type)
            graph.add_edge(w, v, coords[mid:], path_type)
        else:
            graph.add_edge(u, v, coords, path_type)
    return graph


def load_path_network(path, snap_tolerance: float = SNAP_TOLERANCE) -> PathGraph:
    """Load a JSON feature collection of LineStrings with ``path_type``."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"network not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("type") != "FeatureCollection":
        raise NetworkFormatError(f"{path}: expected a FeatureCollection")
    lines = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            raise NetworkFormatError(f"{path}: feature {i} is not a LineString")
        props = feat.get("properties") or {}
        if "path_type" not in props:
            raise NetworkFormatError(f"{path}: feature {i} has no path_type")
        coords = geom.get("coordinates") or []
        if len(coords) < 2:
            raise NetworkFormatError(f"{path}: feature {i} rejected, line has {len(coords)} vertices")
        lines.append((coords, props["path_type"]))
    return build_path_graph(lines, snap_tolerance)


def save_path_network(lines, path) -> None:
    """Write ``(coordinates, path_type)`` pairs as a feature collection."""
    features = [
        {
            "type": "Feature",
            "properties": {"path_type": path_type},
            "geometry": {"type": "LineString", "coordinates": [list(map(float, c)) for c in coords]},
        }
        for coords, path_type in lines
    ]
    Path(path).write_text(json.dumps({"type": "FeatureCollection", "features": features}, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Found-location classification
# ---------------------------------------------------------------------------


def _road_mask(xy: np.ndarray, graph: PathGraph, threshold: float) -> np.ndarray:
    import shapely

    if not graph.edges:
        return np.zeros(len(xy), dtype=bool)
    lines = [shapely.LineString(graph.edges[k].polyline) for k in sorted(graph.edges)]
    tree = shapely.STRtree(lines)
    pts = shapely.points(xy)
    hit = tree.query(pts, predicate="dwithin", distance=threshold)
    mask = np.zeros(len(xy), dtype=bool)
    mask[hit[0]] = True
    return mask


def classify_found_many(xy, terrain: TerrainStack, graph: PathGraph) -> np.ndarray:
    """Land-cover category of each point, as an array of category values.

    Raises:
        OutOfBoundsError: if any point lies outside the terrain grid.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    col, row, inside = terrain.grid.cells_of(xy)
    if not inside.all():
        bad = xy[~inside][0]
        raise OutOfBoundsError(f"point ({bad[0]}, {bad[1]}) lies outside the terrain")
    lc = terrain.land_cover_ids[row, col]
    ws = terrain.water_codes[row, col]
    out = np.full(len(xy), LandCoverCategory.OPEN_GROUND.value, dtype=object)
    out[lc == WOODLAND] = LandCoverCategory.TREES.value
    out[lc == URBAN] = LandCoverCategory.BUILDING.value
    out[(ws != WaterSurface.NONE) | (lc == WATER)] = LandCoverCategory.WATER.value
    out[_road_mask(xy, graph, terrain.cell_size)] = LandCoverCategory.ROAD.value
    return out


def classify_found(p, terrain: TerrainStack, graph: PathGraph) -> LandCoverCategory:
    return LandCoverCategory(classify_found_many(np.asarray(p, dtype=float)[None], terrain, graph)[0])
