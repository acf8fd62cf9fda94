"""The four lost-person behaviours and the agent state they advance.

Overland movement is on the 8-connected cell grid: a commanded heading is
rounded to the nearest of the eight neighbour bearings and the agent jumps
centre to centre (one cell or one diagonal). On the path network the agent
moves a whole edge polyline per step.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .geometry import closest_point_on_polyline, project_onto_segments
from .gis import BLOCKING_WATER, URBAN, WOODLAND, PathGraph, TerrainStack
from .viewshed import (
    DEFAULT_RADIUS,
    EYE_HEIGHT,
    ViewshedWeights,
    load_viewshed_weights,
    mean_angle,
    viewshed_from_arrays,
)


class BehaviorKind(str, enum.Enum):
    HEAD_TO_PATHS = "head_to_paths"
    HEAD_TO_BUILDINGS = "head_to_buildings"
    HEAD_TO_TREES = "head_to_trees"
    HEAD_TO_WATER = "head_to_water"


BEHAVIOR_ORDER = (
    BehaviorKind.HEAD_TO_PATHS,
    BehaviorKind.HEAD_TO_BUILDINGS,
    BehaviorKind.HEAD_TO_TREES,
    BehaviorKind.HEAD_TO_WATER,
)

# Hiker (solo) found-location counts; open ground carries no behaviour.
DEFAULT_MIX = {
    BehaviorKind.HEAD_TO_PATHS: 42.0,  # travel aid 33 + linear feature 9
    BehaviorKind.HEAD_TO_BUILDINGS: 30.0,
    BehaviorKind.HEAD_TO_TREES: 4.0,
    BehaviorKind.HEAD_TO_WATER: 1.0,
}

GOAL_COVER = {
    BehaviorKind.HEAD_TO_BUILDINGS: URBAN,
    BehaviorKind.HEAD_TO_TREES: WOODLAND,
}

SEEKING = "seeking"
ON_NETWORK = "on_network"


@dataclass
class BehaviorParams:
    crossing_b: float = 8000.0
    lambda_max: int = 5
    k_nearest: int = 3
    viewshed_radius: float = DEFAULT_RADIUS
    viewshed_cadence: int = 10
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    weights: dict = field(default_factory=load_viewshed_weights)


@dataclass(frozen=True)
class WaterCrossingRule:
    b: float = 8000.0
    blocking_types: tuple = BLOCKING_WATER

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("crossing bound b must be positive")


@dataclass
class AgentState:
    position: tuple[float, float]
    heading: float
    behavior: BehaviorKind
    cell: tuple[int, int] | None = None
    distance_traveled: float = 0.0
    phase: str = SEEKING
    node: int | None = None
    recent_edges: deque = field(default_factory=deque)
    command: float | None = None
    grid_steps: int = 0
    network_steps: int = 0
    last_edge: int | None = None
    trace: list = field(default_factory=list)

    @classmethod
    def spawn(cls, terrain: TerrainStack, cell, behavior: BehaviorKind, heading: float,
              lambda_max: int = 5) -> "AgentState":
        pos = terrain.grid.cell_to_world(*cell)
        return cls(pos, heading, behavior, tuple(cell), command=heading,
                   recent_edges=deque(maxlen=lambda_max), trace=[pos])


# ---------------------------------------------------------------------------
# Behaviour selection and water crossing
# ---------------------------------------------------------------------------


def mix_probabilities(mix=None) -> np.ndarray:
    mix = DEFAULT_MIX if mix is None else mix
    w = np.array([float(mix.get(b, 0.0)) for b in BEHAVIOR_ORDER])
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("behaviour mix needs non-negative weights with a positive sum")
    return w / w.sum()


def select_behavior(rng: np.random.Generator, mix=None) -> BehaviorKind:
    """Draw a behaviour from the (renormalised) mix."""
    cum = np.cumsum(mix_probabilities(mix))
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return BEHAVIOR_ORDER[min(i, len(BEHAVIOR_ORDER) - 1)]


def crossing_probability(a: float, b: float = 8000.0) -> float:
    """Chance of stepping into water whose catchment value is ``a``."""
    if a < 0:
        raise ValueError(f"catchment value must be >= 0, got {a}")
    return 1.0 - min(a / b, 1.0)


# ---------------------------------------------------------------------------
# Grid movement
# ---------------------------------------------------------------------------

_OFFSETS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


def direction_index(angle: float) -> int:
    """Neighbour (0 = east, counter-clockwise) whose bearing is closest."""
    return int(math.floor(angle / (math.pi / 4) + 0.5)) % 8


def _move(state: AgentState, terrain: TerrainStack, col: int, row: int, k: int) -> None:
    x, y = terrain.grid.cell_to_world(col, row)
    px, py = state.position
    state.distance_traveled += math.hypot(x - px, y - py)
    state.position = (x, y)
    state.cell = (col, row)
    state.heading = k * math.pi / 4
    state.trace.append((x, y))
    state.grid_steps += 1


def _grid_step(state: AgentState, terrain: TerrainStack, angle: float, rng, enterable) -> None:
    """Step toward ``angle``; on refusal turn 90 degrees left or right.

    ``enterable(col, row)`` decides whether a candidate may be entered and
    may consume randomness. Refused candidates are retried on the chosen
    side, then the other side, then straight back; a final sweep over all
    walkable neighbours guarantees progress.
    """
    col, row = state.cell
    grid = terrain.grid
    k = direction_index(angle)

    def candidate(kk):
        dc, dr = _OFFSETS[kk % 8]
        c, r = col + dc, row + dr
        if grid.in_bounds(c, r) and enterable(c, r):
            return c, r
        return None

    hit = candidate(k)
    if hit is None:
        side = 2 if rng.random() < 0.5 else -2
        for kk in (k + side, k - side, k + 4):
            hit = candidate(kk)
            if hit is not None:
                k = kk
                break
    if hit is None:
        for kk in range(8):
            dc, dr = _OFFSETS[kk]
            c, r = col + dc, row + dr
            if grid.in_bounds(c, r) and terrain.dem.valid[r, c]:
                hit, k = (c, r), kk
                break
    if hit is None:
        raise RuntimeError(f"agent boxed in at cell {state.cell}")
    _move(state, terrain, hit[0], hit[1], k % 8)


def _overland(terrain: TerrainStack):
    walkable = terrain.walkable
    return lambda c, r: bool(walkable[r, c])


def step_water(state: AgentState, terrain: TerrainStack, rule: WaterCrossingRule, rng) -> AgentState:
    """Follow the overland flow direction, crossing water only by chance."""
    col, row = state.cell
    out = terrain.outflow_dir
    angle = out.values[row, col] if out.valid[row, col] else state.heading
    valid = terrain.dem.valid
    codes = terrain.water_codes
    catchment = terrain.catchment_values
    blocking = {int(t) for t in rule.blocking_types}

    def enterable(c, r):
        if not valid[r, c]:
            return False
        if int(codes[r, c]) in blocking:
            return rng.random() < crossing_probability(float(catchment[r, c]), rule.b)
        return True

    _grid_step(state, terrain, float(angle), rng, enterable)
    return state


class ViewshedSteering:
    """Memoised command direction per (observer cell, behaviour).

    The command only depends on immutable terrain, so caching it never
    changes results; it just avoids recomputing viewsheds at cells that
    many agents pass through.
    """

    def __init__(self, terrain: TerrainStack, weights: dict, radius: float = DEFAULT_RADIUS,
                 eye_height: float = EYE_HEIGHT):
        self.terrain = terrain
        dem = terrain.dem
        self.z = terrain.dem_filled
        self.valid = dem.valid
        self.radius_cells = radius / dem.cell_size
        self.eye_height = eye_height
        self.ids = terrain.land_cover_ids
        self.luts = {}
        for name, table in weights.items():
            lut = table.lookup() if isinstance(table, ViewshedWeights) else np.asarray(table)
            self.luts[name] = lut
        self._memo: dict = {}

    def command(self, cell, behavior: BehaviorKind) -> float | None:
        key = (cell, behavior.value)
        if key not in self._memo:
            self._memo[key] = self._compute(cell, behavior.value)
        return self._memo[key]

    def targets(self, cell, behavior_name: str) -> np.ndarray:
        window, c0, r0 = viewshed_from_arrays(self.z, self.valid, cell, self.radius_cells, self.eye_height)
        h, w = window.shape
        ids = self.ids[r0:r0 + h, c0:c0 + w]
        lut = self.luts[behavior_name]
        ok = window & (ids >= 0) & (ids < len(lut))
        wv = np.where(ok, lut[np.where(ok, ids, 0)], 0.0)
        # the observer's own cell is not a target
        wv[cell[1] - r0, cell[0] - c0] = 0.0
        top = wv.max()
        if top <= 0:
            return np.zeros((0, 2), dtype=np.int64)
        rows, cols = np.nonzero(wv == top)
        return np.column_stack((cols + c0, rows + r0))

    def _compute(self, cell, behavior_name: str) -> float | None:
        cells = self.targets(cell, behavior_name)
        if len(cells) == 0:
            return None
        g = self.terrain.grid
        xy = np.column_stack((
            g.origin[0] + (cells[:, 0] + 0.5) * g.cell_size,
            g.origin[1] + (cells[:, 1] + 0.5) * g.cell_size,
        ))
        return mean_angle(g.cell_to_world(*cell), xy)


def step_viewshed(state: AgentState, terrain: TerrainStack, steering: ViewshedSteering, rng,
                  cadence: int = 10) -> AgentState | None:
    """Advance a building- or tree-seeking agent by one cell.

    Returns ``None`` once the agent stands on its goal cover.
    """
    col, row = state.cell
    if terrain.land_cover_ids[row, col] == GOAL_COVER[state.behavior]:
        return None
    if state.grid_steps % cadence == 0:
        cmd = steering.command(state.cell, state.behavior)
        if cmd is not None:
            state.command = cmd
    _grid_step(state, terrain, state.command, rng, _overland(terrain))
    return state


# ---------------------------------------------------------------------------
# Paths behaviour
# ---------------------------------------------------------------------------


class NearestEdge(NamedTuple):
    edge_id: int
    point: np.ndarray
    distance: float
    score: int


def nearest_k_edges(m, graph: PathGraph, k: int) -> list[NearestEdge]:
    """The ``k`` edges closest to ``m`` (ties to the lower edge id)."""
    a, b, _, starts, ids = graph.segment_table()
    if len(ids) == 0:
        raise ValueError("path graph has no edges")
    if k < 1:
        raise ValueError("k must be >= 1")
    d, _, foot = project_onto_segments(m, a, b)
    per_edge = np.minimum.reduceat(d, starts)
    order = np.lexsort((ids, per_edge))[:k]
    ends = np.append(starts[1:], len(d))
    out = []
    for i in order:
        j = starts[i] + int(np.argmin(d[starts[i]:ends[i]]))
        eid = int(ids[i])
        out.append(NearestEdge(eid, foot[j].copy(), float(d[j]), graph.edges[eid].score))
    return out


def weighted_path_angle(m, nearest) -> float:
    """Heading of the score/distance weighted sum of unit vectors to paths."""
    total = np.zeros(2)
    for ne in nearest:
        if ne.distance == 0:
            raise ValueError(f"agent lies on edge {ne.edge_id}; switch to network traversal")
        u = (np.asarray(ne.point) - np.asarray(m, dtype=float)) / ne.distance
        total += (ne.score / ne.distance) * u
    return math.atan2(total[1], total[0])


def path_angle_field(points, graph: PathGraph, k: int = 3) -> np.ndarray:
    """Seeking heading at every point of a grid (for inspection plots)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = np.full(len(points), np.nan)
    for i, p in enumerate(points):
        near = nearest_k_edges(p, graph, k)
        if near[0].distance > 0:
            out[i] = weighted_path_angle(p, near)
    return out


def attach_to_network(x, graph: PathGraph) -> tuple[PathGraph, int]:
    """Split the edge nearest ``x`` at its closest point and add a node there.

    The two halves start at the new node (one reversed), keep the parent's
    type and score, and become non-traversable after first use. When the
    closest point is an existing endpoint no split happens and that node is
    returned. ``graph`` is modified in place.
    """
    near = nearest_k_edges(x, graph, 1)[0]
    edge = graph.edges[near.edge_id]
    foot, _, seg, _ = closest_point_on_polyline(x, edge.polyline)
    for node in (edge.u, edge.v):
        if np.array_equal(graph.nodes[node], foot) or math.dist(graph.nodes[node], foot) <= 1e-9:
            return graph, node
    poly = edge.polyline
    left = np.vstack((poly[:seg + 1], foot))
    right = np.vstack((foot, poly[seg + 1:]))
    graph.remove_edge(edge.id)
    new = graph.add_node(foot)
    graph.add_edge(new, edge.u, left[::-1], edge.path_type, edge.score, one_shot=True)
    graph.add_edge(new, edge.v, right, edge.path_type, edge.score, one_shot=True)
    return graph, new


def edge_choice_probabilities(graph: PathGraph, node: int, recent, arrival_edge: int | None = None):
    """Candidate edges at ``node`` and their selection probabilities.

    Edges visited within the memory window score 0.1, others 1. When every
    incident edge is non-traversable the arrival edge is allowed again.
    """
    recent = set(recent)
    incident = graph.adjacency[node]
    cands = [e for e in incident if graph.edges[e].traversable]
    if not cands:
        cands = [arrival_edge] if arrival_edge in incident else list(incident)
    scores = np.array([0.1 if e in recent else 1.0 for e in cands])
    return cands, scores / scores.sum()


def choose_index(probs: np.ndarray, u):
    """Inverse-CDF pick for uniform(s) ``u``; vectorises over ``u``."""
    cum = np.cumsum(probs)
    idx = np.searchsorted(cum, np.asarray(u) * cum[-1], side="right")
    return np.minimum(idx, len(probs) - 1)


def traverse_network_step(state: AgentState, graph: PathGraph, lambda_max: int, rng) -> AgentState:
    """Walk one whole edge away from the current node."""
    if state.recent_edges.maxlen != lambda_max:
        state.recent_edges = deque(state.recent_edges, maxlen=lambda_max)
    cands, probs = edge_choice_probabilities(
        graph, state.node, (e for e, _ in state.recent_edges), state.last_edge
    )
    eid = cands[int(choose_index(probs, rng.random()))]
    edge = graph.edges[eid]
    poly = edge.oriented_from(state.node)
    state.distance_traveled += float(np.hypot(*np.diff(poly, axis=0).T).sum())
    state.trace.extend(map(tuple, poly[1:].tolist()))
    state.node = edge.other(state.node)
    state.position = tuple(poly[-1].tolist())
    state.heading = math.atan2(poly[-1][1] - poly[-2][1], poly[-1][0] - poly[-2][0])
    state.recent_edges.append((eid, state.network_steps))
    state.network_steps += 1
    state.last_edge = eid
    if edge.one_shot:
        edge.traversable = False
    return state


def step_paths(state: AgentState, terrain: TerrainStack, graph: PathGraph, params: BehaviorParams,
               rng) -> AgentState:
    """Seek the path network, then explore it with edge memory."""
    if state.phase == ON_NETWORK:
        return traverse_network_step(state, graph, params.lambda_max, rng)
    if not graph.edges:
        _grid_step(state, terrain, state.heading, rng, _overland(terrain))
        return state
    near = nearest_k_edges(state.position, graph, params.k_nearest)
    if near[0].distance <= terrain.cell_size:
        _, node = attach_to_network(state.position, graph)
        nx, ny = graph.nodes[node]
        px, py = state.position
        state.distance_traveled += math.hypot(nx - px, ny - py)
        state.position = (float(nx), float(ny))
        state.trace.append(state.position)
        state.phase = ON_NETWORK
        state.node = node
        state.cell = None
        return state
    angle = weighted_path_angle(state.position, near)
    _grid_step(state, terrain, angle, rng, _overland(terrain))
    return state
