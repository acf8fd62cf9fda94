import math

import numpy as np
import pytest
from scipy import stats

from conftest import flat_terrain
from lostsim.behaviors import BEHAVIOR_ORDER, BehaviorKind, BehaviorParams
from lostsim.errors import EmptyInputError, StartModelError
from lostsim.gis import RasterGrid, WaterSurface
from lostsim.simulation import (
    SimConfig,
    StartModel,
    path_rng,
    read_paths,
    run_monte_carlo,
    run_path,
    sample_start,
    write_paths,
)


class TestStartModel:
    def test_degenerate_returns_mu(self):
        rng = np.random.default_rng(0)
        t = flat_terrain()
        p = sample_start(StartModel((52.0, 48.0), ((0, 0), (0, 0))), t, rng)
        assert tuple(p) == (52.0, 48.0)

    def test_spread(self):
        rng = np.random.default_rng(1)
        pts = np.array([sample_start(StartModel((0.0, 0.0)), None, rng) for _ in range(20_000)])
        assert pts.std(axis=0) == pytest.approx([100, 100], abs=2.5)

    def test_correlated_covariance(self):
        rng = np.random.default_rng(2)
        sigma = ((400.0, 300.0), (300.0, 900.0))
        pts = np.array([sample_start(StartModel((0.0, 0.0), sigma), None, rng) for _ in range(20_000)])
        assert np.allclose(np.cov(pts.T), sigma, rtol=0.06)

    def test_rejects_sea(self):
        water = np.zeros((40, 40))
        water[:, :30] = WaterSurface.SEA
        t = flat_terrain(water=water)
        rng = np.random.default_rng(3)
        model = StartModel((100.0, 100.0), ((900.0, 0.0), (0.0, 900.0)))
        for _ in range(300):
            p = sample_start(model, t, rng)
            c, r = t.grid.world_to_cell(*p)
            assert water[r, c] != WaterSurface.SEA

    def test_all_off_map_raises(self):
        rng = np.random.default_rng(4)
        with pytest.raises(StartModelError):
            sample_start(StartModel((1e6, 1e6), ((1.0, 0), (0, 1.0))), flat_terrain(), rng, max_tries=50)

    def test_sigma_validated(self):
        with pytest.raises(ValueError):
            StartModel((0, 0), ((1.0, 2.0), (2.0, 1.0)))
        with pytest.raises(ValueError):
            StartModel((0, 0), ((1.0, 0.5), (0.0, 1.0)))


def sim_config(**kw):
    kw.setdefault("behavior", BehaviorParams(viewshed_radius=100.0))
    return SimConfig(**kw)


class TestRunPath:
    def test_zero_dmax(self, straight_graph):
        t = flat_terrain()
        p = run_path((52.5, 52.5), BehaviorKind.HEAD_TO_WATER, sim_config(d_max=0.0), t,
                     straight_graph(), np.random.default_rng(0))
        assert len(p.vertices) == 1 and p.length == 0.0

    def test_long_straight_road(self, straight_graph):
        t = flat_terrain(n_cols=2500, n_rows=4)
        g = straight_graph(12_000.0, origin=(2.5, 7.5))
        cfg = sim_config(d_max=10_000.0)
        p = run_path((2.5, 7.5), BehaviorKind.HEAD_TO_PATHS, cfg, t, g, np.random.default_rng(0))
        assert 10_000.0 <= p.length <= 12_000.0
        assert p.length == pytest.approx(12_000.0)

    @pytest.mark.parametrize("behavior", list(BehaviorKind))
    def test_bookkeeping(self, behavior, island_terrain, island_graph):
        rng = np.random.default_rng(7)
        cfg = sim_config(d_max=2000.0)
        for _ in range(3):
            start = sample_start(StartModel((10500.0, 20500.0), ((40000.0, 0), (0, 40000.0))),
                                 island_terrain, rng)
            p = run_path(start, behavior, cfg, island_terrain, island_graph, rng)
            assert abs(p.length - p.geometric_length) <= 1e-6
            assert p.terminated_early or p.length >= cfg.d_max
            assert np.all(np.diff(p.cumulative_lengths) >= 0)

    def test_graph_not_mutated(self, island_terrain, island_graph):
        n_edges = len(island_graph.edges)
        run_path((10500.0, 20500.0), BehaviorKind.HEAD_TO_PATHS, sim_config(d_max=3000.0), island_terrain,
                 island_graph, np.random.default_rng(0))
        assert len(island_graph.edges) == n_edges
        assert all(e.traversable for e in island_graph.edges.values())


class TestMonteCarlo:
    def test_single_path(self, island_terrain, island_graph):
        paths = run_monte_carlo(sim_config(n_gen=1, d_max=500.0), (10500.0, 20500.0), island_terrain,
                                island_graph)
        assert len(paths) == 1 and paths[0].index == 0

    def test_behaviour_counts_within_multinomial_bounds(self, island_terrain, island_graph):
        n = 1000
        paths = run_monte_carlo(sim_config(n_gen=n, d_max=1.0), (10500.0, 20500.0), island_terrain,
                                island_graph)
        counts = np.array([sum(p.behavior is b for p in paths) for b in BEHAVIOR_ORDER])
        probs = np.array([42, 30, 4, 1]) / 77
        sd = np.sqrt(n * probs * (1 - probs))
        assert np.all(np.abs(counts - n * probs) <= 3 * sd)

    def test_streams_independent_of_order(self):
        a = path_rng(5, 17).random(4)
        path_rng(5, 3).random(100)
        assert np.array_equal(a, path_rng(5, 17).random(4))
        assert not np.array_equal(a, path_rng(5, 18).random(4))

    def test_workers_do_not_change_results(self, tmp_path, island_terrain, island_graph):
        cfg = sim_config(n_gen=24, d_max=1500.0, seed=3, paths_per_start=5)
        heat = RasterGrid(10, 10, 100.0, (10000.0, 20000.0), -9999.0, np.ones((10, 10)))
        one = run_monte_carlo(cfg, heat, island_terrain, island_graph, workers=1)
        many = run_monte_carlo(cfg, heat, island_terrain, island_graph, workers=3)
        write_paths(one, tmp_path / "a.jsonl")
        write_paths(many, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        # one place last seen per group of five paths
        assert len({p.pls for p in one[:5]}) == 1

    def test_pls_groups_land_on_walkable_cells(self, island_terrain, island_graph):
        cfg = sim_config(n_gen=30, d_max=1.0, paths_per_start=1)
        heat = RasterGrid(10, 10, 100.0, (10000.0, 20000.0), -9999.0, np.ones((10, 10)))
        for p in run_monte_carlo(cfg, heat, island_terrain, island_graph):
            c, r = island_terrain.grid.world_to_cell(*p.pls)
            assert island_terrain.walkable[r, c]


class TestPersistence:
    def test_round_trip(self, tmp_path, island_terrain, island_graph):
        paths = run_monte_carlo(sim_config(n_gen=5, d_max=800.0), (10500.0, 20500.0), island_terrain,
                                island_graph)
        write_paths(paths, tmp_path / "p.jsonl")
        back = read_paths(tmp_path / "p.jsonl")
        for a, b in zip(paths, back):
            assert a.behavior is b.behavior and a.length == b.length and a.index == b.index
            assert np.array_equal(a.vertices, b.vertices)
            assert a.terminated_early == b.terminated_early

    def test_empty_collection(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("")
        with pytest.raises(EmptyInputError):
            read_paths(tmp_path / "e.jsonl")


def test_per_axis_normality():
    rng = np.random.default_rng(8)
    pts = np.array([sample_start(StartModel((0.0, 0.0)), None, rng) for _ in range(5000)])
    for axis in (0, 1):
        assert stats.kstest(pts[:, axis] / 100.0, "norm").pvalue > 0.01
    r = np.hypot(pts[:, 0], pts[:, 1])
    # radius of an isotropic 2-D normal is Rayleigh distributed
    assert stats.kstest(r / 100.0, "rayleigh").pvalue > 0.01
    assert math.isclose(np.sqrt(np.mean(r ** 2)), 100 * math.sqrt(2), rel_tol=0.03)
