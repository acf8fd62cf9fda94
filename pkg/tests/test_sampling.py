import math

import numpy as np
import pytest
from scipy import integrate, stats

from lostsim.behaviors import BehaviorKind
from lostsim.errors import EmptyInputError, OutOfBoundsError
from lostsim.geometry import closest_point_on_polyline
from lostsim.gis import RasterGrid, load_raster
from lostsim.sampling import (
    DEFAULT_MOBILITY,
    MobilityModel,
    bin_edges,
    build_pdm,
    fit_mobility,
    fit_normal,
    from_log_view,
    load_histogram,
    lognormal_bin_masses,
    lognormal_pdf,
    log_view,
    mobility_skl,
    read_samples,
    sample_found,
    sample_paths,
    save_png,
    write_samples,
)
from lostsim.simulation import SimulatedPath
from lostsim.synthetic import HISTOGRAM_FILE, bundled_fixture_dir
from oracles import lognormal_density


def straight_path(length, index=0, behavior=BehaviorKind.HEAD_TO_WATER, n=3):
    xs = np.linspace(0.0, length, n)
    return SimulatedPath(index, behavior, (0.0, 0.0), np.column_stack((xs, np.zeros(n))), length)


class TestMobilityModel:
    def test_invariants(self):
        with pytest.raises(ValueError):
            MobilityModel(0.0)
        with pytest.raises(ValueError):
            MobilityModel(1.0, 0.0, -1.0)

    def test_standard_pdf_at_one(self):
        assert lognormal_pdf(1.0, MobilityModel(1.0)) == pytest.approx(1 / math.sqrt(2 * math.pi))

    def test_support_boundary(self):
        m = MobilityModel(0.5, 0.3, 1.0)
        assert lognormal_pdf(0.3, m) == 0.0 and lognormal_pdf(-1.0, m) == 0.0

    def test_integrates_to_one(self):
        m = MobilityModel(0.8, 0.2, 1.2)
        val, _ = integrate.quad(lambda x: lognormal_pdf(x, m), 0.2, np.inf, limit=200)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_matches_textbook_density(self):
        m = DEFAULT_MOBILITY
        for x in (0.05, 0.25, 0.75, 1.6, 4.2):
            assert lognormal_pdf(x, m) == pytest.approx(lognormal_density(x, m.s, m.mu_loc, m.lambda_scale),
                                                        rel=1e-12)

    def test_default_moments(self):
        m = DEFAULT_MOBILITY
        assert m.mean == pytest.approx(1.06)
        var = (math.exp(m.s ** 2) - 1) * m.lambda_scale ** 2 * math.exp(m.s ** 2)
        assert math.sqrt(var) == pytest.approx(1.01)

    def test_ten_km_time(self):
        hours = 10.0 / 3.87
        assert round(hours, 2) == 2.58
        assert DEFAULT_MOBILITY.distance_m(2.584) == pytest.approx(10_000.08)


class TestFit:
    def test_recovers_known_parameters(self):
        rng = np.random.default_rng(0)
        draws = 1.2 * np.exp(0.8 * rng.standard_normal(100_000))
        counts, edges = np.histogram(draws, bins=np.arange(0, 8.25, 0.25))
        centers = (edges[:-1] + edges[1:]) / 2
        m = fit_mobility(np.column_stack((centers, counts)))
        assert m.s == pytest.approx(0.8, abs=0.05)
        assert m.lambda_scale == pytest.approx(1.2, abs=0.05)

    def test_optimum_beats_grid_neighbours(self):
        centers = np.arange(0.25, 5.0, 0.5)
        edges = bin_edges(centers)
        masses = lognormal_bin_masses(edges, 0.7, 0.9)
        hist = np.column_stack((centers, masses))
        m = fit_mobility(hist)
        best = mobility_skl(hist, m)
        for ds in (-0.05, 0.05):
            for dl in (-0.05, 0.05):
                assert best < mobility_skl(hist, MobilityModel(0.7 + ds, 0.0, 0.9 + dl))

    def test_lognormal_beats_normal_on_bundled_histogram(self):
        hist = load_histogram(bundled_fixture_dir() / HISTOGRAM_FILE)
        m = fit_mobility(hist)
        _, _, normal_skl = fit_normal(hist)
        assert mobility_skl(hist, m) < normal_skl

    def test_degenerate_histogram(self):
        with pytest.raises(ValueError):
            fit_mobility([(0.5, 10), (1.0, 0), (1.5, 0)])


class TestSampleFound:
    def test_just_over_length_discarded(self):
        path = straight_path(10_000.0)

        class Fixed:
            speed = 3.87

            def sample_times(self, rng, n):
                return np.full(n, 2.584)

            def distance_m(self, t):
                return DEFAULT_MOBILITY.distance_m(t)

        s = sample_found(path, Fixed(), 5, np.random.default_rng(0))
        assert len(s) == 0

    def test_zero_time_at_start(self):
        path = straight_path(500.0)

        class Zero:
            def sample_times(self, rng, n):
                return np.zeros(n)

            def distance_m(self, t):
                return np.asarray(t) * 3870.0

        s = sample_found(path, Zero(), 3, np.random.default_rng(0))
        assert np.allclose(s.xy, [[0.0, 0.0]] * 3)

    def test_positions_on_polyline_and_within_length(self):
        rng = np.random.default_rng(1)
        verts = np.cumsum(rng.normal(0, 40, (60, 2)), axis=0)
        cum = np.concatenate(([0], np.cumsum(np.hypot(*np.diff(verts, axis=0).T))))
        path = SimulatedPath(4, BehaviorKind.HEAD_TO_TREES, tuple(verts[0]), verts, float(cum[-1]))
        s = sample_found(path, DEFAULT_MOBILITY, 500, rng)
        assert len(s) > 0
        assert np.all(DEFAULT_MOBILITY.distance_m(s.t) <= path.length)
        for p in s.xy[:100]:
            assert closest_point_on_polyline(p, verts)[1] <= 1e-6
        assert set(s.path_index) == {4} and s[0].behavior is BehaviorKind.HEAD_TO_TREES
        assert np.all(s.t >= 0)

    def test_retained_mean_below_model_mean(self):
        paths = [straight_path(L, i) for i, L in enumerate(np.linspace(1000, 10_000, 20))]
        s = sample_paths(paths, DEFAULT_MOBILITY, 5000, seed=0)
        assert s.t.mean() < DEFAULT_MOBILITY.mean

    def test_time_draws_follow_model(self):
        t = DEFAULT_MOBILITY.sample_times(np.random.default_rng(3), 100_000)
        m = DEFAULT_MOBILITY
        assert stats.kstest(t, lambda x: m.cdf(x)).pvalue > 0.01

    def test_m_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_found(straight_path(10.0), DEFAULT_MOBILITY, 0, np.random.default_rng(0))


class TestSamplesFile:
    def test_round_trip(self, tmp_path):
        paths = [straight_path(3000.0, i, b) for i, b in enumerate(BehaviorKind)]
        s = sample_paths(paths, DEFAULT_MOBILITY, 50, seed=1)
        write_samples(s, tmp_path / "s.csv")
        back = read_samples(tmp_path / "s.csv")
        assert np.allclose(back.xy, s.xy, atol=1e-6)
        assert np.array_equal(back.behavior_code, s.behavior_code)
        assert np.array_equal(back.path_index, s.path_index)
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "x,y,t,behavior,path_index"

    def test_empty_file(self, tmp_path):
        (tmp_path / "s.csv").write_text("x,y,t,behavior,path_index\n")
        with pytest.raises(EmptyInputError):
            read_samples(tmp_path / "s.csv")


TEMPLATE = RasterGrid(10, 10, 5.0, (0.0, 0.0), -9999.0, np.zeros((10, 10)))


class TestPDM:
    def test_single_cell(self):
        pdm = build_pdm([(12.0, 13.0)] * 7, TEMPLATE)
        assert pdm.grid.values[2, 2] == 1.0 and pdm.grid.values.sum() == 1.0

    def test_all_out_of_bounds(self):
        with pytest.raises(OutOfBoundsError):
            build_pdm([(-5.0, 0.0)], TEMPLATE)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            build_pdm(np.zeros((0, 2)), TEMPLATE)

    def test_nodata_cells_zero(self):
        v = np.zeros((10, 10))
        v[0, 0] = -9999.0
        tpl = RasterGrid(10, 10, 5.0, (0.0, 0.0), -9999.0, v)
        pdm = build_pdm([(1.0, 1.0), (6.0, 1.0)], tpl)
        assert pdm.grid.values[0, 0] == 0.0 and pdm.grid.values[0, 1] == 1.0 and pdm.n_samples == 1

    def test_coarser_output(self):
        pdm = build_pdm([(1.0, 1.0), (26.0, 26.0), (49.0, 1.0)], TEMPLATE, 25.0)
        assert pdm.grid.shape == (2, 2)
        assert pdm.grid.values.tolist() == [[1 / 3, 1 / 3], [0.0, 1 / 3]]

    def test_uniform_gap_shrinks(self):
        rng = np.random.default_rng(0)
        gaps = []
        for n in (1_000, 100_000):
            pts = rng.uniform(0, 50, (n, 2))
            v = build_pdm(pts, TEMPLATE).grid.values
            gaps.append(v.max() - v.min())
        # relative spread scales like 1/sqrt(n): a hundredfold n gives about a tenth
        assert gaps[1] < gaps[0] / 5

    def test_log_view_round_trip(self):
        rng = np.random.default_rng(1)
        pdm = build_pdm(rng.uniform(0, 30, (500, 2)), TEMPLATE)
        back = from_log_view(log_view(pdm.grid))
        assert np.allclose(back.values, pdm.grid.values, atol=1e-9)
        assert back.values.sum() == pytest.approx(1.0, abs=1e-9)

    def test_png_export(self, tmp_path):
        pytest.importorskip("PIL")
        from PIL import Image

        pdm = build_pdm([(12.0, 13.0), (30.0, 40.0)], TEMPLATE)
        save_png(log_view(pdm.grid), tmp_path / "p.png")
        img = Image.open(tmp_path / "p.png")
        assert img.size == (10, 10)

    def test_saved_pdm_sums_to_one(self, tmp_path):
        from lostsim.gis import save_raster

        rng = np.random.default_rng(2)
        pdm = build_pdm(rng.uniform(0, 50, (1234, 2)), TEMPLATE)
        save_raster(pdm.grid, tmp_path / "p.asc")
        assert load_raster(tmp_path / "p.asc").values.sum() == pytest.approx(1.0, abs=1e-9)
