"""Monte Carlo path generation: start sampling, behaviour runs, persistence."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .behaviors import (
    AgentState,
    BehaviorKind,
    BehaviorParams,
    ViewshedSteering,
    WaterCrossingRule,
    select_behavior,
    step_paths,
    step_viewshed,
    step_water,
)
from .errors import EmptyInputError, MissingInputError, StartModelError
from .geometry import cumulative_lengths
from .gis import PathGraph, RasterGrid, TerrainStack

logger = logging.getLogger(__name__)

MAX_START_REJECTIONS = 10_000
MAX_PLS_REDRAWS = 1_000

# spawn-key namespaces for per-item random streams
_STREAM_PLS = 0
_STREAM_PATH = 1


@dataclass(frozen=True)
class StartModel:
    """Bivariate normal around a place last seen."""

    mu: tuple[float, float]
    sigma: tuple[tuple[float, float], tuple[float, float]] = ((10_000.0, 0.0), (0.0, 10_000.0))

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (2, 2) or not np.allclose(s, s.T):
            raise ValueError("sigma must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(s).min() < -1e-9 * max(1.0, np.abs(s).max()):
            raise ValueError("sigma must be positive semi-definite")

    def factor(self) -> np.ndarray:
        """Matrix ``L`` with ``L @ L.T == sigma``."""
        s = np.asarray(self.sigma, dtype=float)
        try:
            return np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(s)
            return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass
class SimConfig:
    d_max: float = 10_000.0
    cell_size: float = 5.0
    eye_height: float = 1.6
    n_gen: int = 1000
    seed: int = 0
    paths_per_start: int = 200
    sigma: tuple = ((10_000.0, 0.0), (0.0, 10_000.0))
    behavior: BehaviorParams = field(default_factory=BehaviorParams)
    behavior_override: BehaviorKind | None = None

    def __post_init__(self):
        if not self.d_max >= 0:
            raise ValueError("d_max must be >= 0")
        if self.n_gen < 1:
            raise ValueError("n_gen must be >= 1")
        if self.paths_per_start < 1:
            raise ValueError("paths_per_start must be >= 1")


@dataclass(eq=False)
class SimulatedPath:
    index: int
    behavior: BehaviorKind
    start: tuple[float, float]
    vertices: np.ndarray
    length: float
    terminated_early: bool = False
    pls: tuple[float, float] | None = None

    @cached_property
    def cumulative_lengths(self) -> np.ndarray:
        return cumulative_lengths(self.vertices)

    @property
    def geometric_length(self) -> float:
        return float(self.cumulative_lengths[-1])


def path_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for path ``index``; scheduling cannot affect it."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAM_PATH, index)))


def sample_start(model: StartModel, terrain: TerrainStack | None, rng: np.random.Generator,
                 max_tries: int = MAX_START_REJECTIONS) -> np.ndarray:
    """Draw a start point, redrawing anything off-map, on nodata or at sea.

    With ``terrain=None`` every draw is accepted.
    """
    mu = np.asarray(model.mu, dtype=float)
    L = model.factor()
    for _ in range(max_tries):
        p = mu + L @ rng.standard_normal(2)
        if terrain is None:
            return p
        cell = terrain.grid.world_to_cell(p[0], p[1])
        if cell is not None and terrain.walkable[cell[1], cell[0]]:
            return p
    raise StartModelError(
        f"{max_tries} consecutive start draws around {tuple(mu)} fell off the walkable map"
    )


def run_path(start, behavior: BehaviorKind, config: SimConfig, terrain: TerrainStack,
             graph: PathGraph, rng: np.random.Generator, steering: ViewshedSteering | None = None,
             index: int = 0) -> SimulatedPath:
    """Walk one agent from ``start`` until ``d_max`` or goal contact."""
    params = config.behavior
    cell = terrain.grid.world_to_cell(float(start[0]), float(start[1]))
    if cell is None:
        raise StartModelError(f"start {tuple(start)} is outside the terrain")
    state = AgentState.spawn(terrain, cell, behavior, rng.uniform(-math.pi, math.pi), params.lambda_max)
    rule = WaterCrossingRule(params.crossing_b)
    if behavior in (BehaviorKind.HEAD_TO_BUILDINGS, BehaviorKind.HEAD_TO_TREES) and steering is None:
        steering = ViewshedSteering(terrain, params.weights, params.viewshed_radius, config.eye_height)
    if behavior is BehaviorKind.HEAD_TO_PATHS:
        graph = graph.copy()

    # guards against a behaviour that stops accruing distance
    max_steps = 100 * int(config.d_max / terrain.cell_size + 1) + 10_000
    terminated = False
    steps = 0
    while state.distance_traveled < config.d_max:
        if behavior is BehaviorKind.HEAD_TO_WATER:
            step_water(state, terrain, rule, rng)
        elif behavior is BehaviorKind.HEAD_TO_PATHS:
            step_paths(state, terrain, graph, params, rng)
        elif step_viewshed(state, terrain, steering, rng, params.viewshed_cadence) is None:
            terminated = True
            break
        steps += 1
        if steps > max_steps:
            raise RuntimeError(f"path {index} made no progress after {steps} steps")
    return SimulatedPath(
        index=index,
        behavior=behavior,
        start=(float(start[0]), float(start[1])),
        vertices=np.asarray(state.trace, dtype=float),
        length=state.distance_traveled,
        terminated_early=terminated,
    )


# ---------------------------------------------------------------------------
# Monte Carlo driver
# ---------------------------------------------------------------------------


class _Runner:
    """Everything one worker needs; rebuilt inside each process."""

    def __init__(self, config: SimConfig, source, terrain: TerrainStack, graph: PathGraph):
        self.config = config
        self.source = source
        self.terrain = terrain
        self.graph = graph
        p = config.behavior
        self.steering = ViewshedSteering(terrain, p.weights, p.viewshed_radius, config.eye_height)
        self._pls: dict[int, tuple[float, float]] = {}

    def pls(self, group: int) -> tuple[float, float]:
        if group in self._pls:
            return self._pls[group]
        if isinstance(self.source, RasterGrid):
            from .gp import sample_pls

            rng = np.random.default_rng(
                np.random.SeedSequence(self.config.seed, spawn_key=(_STREAM_PLS, group))
            )
            walk = self.terrain.walkable
            for _ in range(MAX_PLS_REDRAWS):
                p = sample_pls(self.source, 1, rng)[0]
                cell = self.terrain.grid.world_to_cell(p[0], p[1])
                if cell is not None and walk[cell[1], cell[0]]:
                    break
            else:
                raise StartModelError("PLS surface has no mass over walkable terrain")
        else:
            p = self.source
        self._pls[group] = (float(p[0]), float(p[1]))
        return self._pls[group]

    def run(self, index: int) -> SimulatedPath:
        cfg = self.config
        pls = self.pls(index // cfg.paths_per_start)
        rng = path_rng(cfg.seed, index)
        start = sample_start(StartModel(pls, cfg.sigma), self.terrain, rng)
        behavior = cfg.behavior_override or select_behavior(rng, cfg.behavior.mix)
        path = run_path(start, behavior, cfg, self.terrain, self.graph, rng, self.steering, index)
        path.pls = pls
        return path


_worker: _Runner | None = None


def _init_worker(config, source, terrain, graph):
    global _worker
    _worker = _Runner(config, source, terrain, graph)


def _run_chunk(bounds):
    lo, hi = bounds
    return [_worker.run(i) for i in range(lo, hi)]


def run_monte_carlo(config: SimConfig, start_source, terrain: TerrainStack, graph: PathGraph,
                    workers: int = 1) -> list[SimulatedPath]:
    """Generate ``config.n_gen`` paths, returned in index order.

    ``start_source`` is either a fixed PLS ``(x, y)`` or a non-negative
    :class:`RasterGrid` from which one PLS is drawn per group of
    ``config.paths_per_start`` paths.
    """
    n = config.n_gen
    if workers <= 1:
        runner = _Runner(config, start_source, terrain, graph)
        return [runner.run(i) for i in range(n)]
    chunk = max(1, math.ceil(n / (workers * 4)))
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]
    with ProcessPoolExecutor(workers, initializer=_init_worker,
                             initargs=(config, start_source, terrain, graph)) as pool:
        out = []
        for part in pool.map(_run_chunk, bounds):
            out.extend(part)
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def path_record(path: SimulatedPath) -> str:
    rec = {
        "index": path.index,
        "behavior": path.behavior.value,
        "pls": list(path.pls) if path.pls is not None else None,
        "start": list(path.start),
        "length": path.length,
        "terminated_early": path.terminated_early,
        "vertices": path.vertices.tolist(),
    }
    return json.dumps(rec, separators=(",", ":"))


def write_paths(paths, out) -> int:
    """Write one JSON record per line; returns the number written."""
    n = 0
    with open(out, "w") as fh:
        for p in paths:
            fh.write(path_record(p) + "\n")
            n += 1
    return n


def read_paths(src) -> list[SimulatedPath]:
    src = Path(src)
    if not src.exists():
        raise MissingInputError(f"path collection not found: {src}")
    out = []
    with open(src) as fh:
        for line in fh:
            if not line.strip():
                continue
            r = json.loads(line)
            out.append(SimulatedPath(
                index=r["index"],
                behavior=BehaviorKind(r["behavior"]),
                start=tuple(r["start"]),
                vertices=np.asarray(r["vertices"], dtype=float).reshape(-1, 2),
                length=r["length"],
                terminated_early=r["terminated_early"],
                pls=tuple(r["pls"]) if r.get("pls") is not None else None,
            ))
    if not out:
        raise EmptyInputError(f"path collection {src} is empty")
    return out
