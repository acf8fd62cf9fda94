import math

import numpy as np
import pytest
from scipy import linalg, stats

from lostsim.errors import EmptyInputError, TrainingError
from lostsim.gis import RasterGrid, load_raster
from lostsim.gp import (
    JITTER,
    GPConfig,
    GPModel,
    InducingLattice,
    _exact_mll,
    _kiss_mll,
    interp_matrix,
    kiss_interp_weights,
    load_model,
    log_likelihood,
    matern25,
    normalize_heatmap,
    posterior_grid,
    sample_pls,
    save_model,
    train,
)
from lostsim.synthetic import SPARSE_HEATMAP_FILE, bundled_fixture_dir, clustered_heatmap
from oracles import matern_general


def grid(values, cell=100.0, origin=(0.0, 0.0)):
    v = np.asarray(values, dtype=float)
    return RasterGrid(v.shape[1], v.shape[0], cell, origin, -9999.0, v)


@pytest.fixture(scope="module")
def sparse_fixture():
    return load_raster(bundled_fixture_dir() / SPARSE_HEATMAP_FILE)


@pytest.fixture(scope="module")
def trained_sparse(sparse_fixture):
    return train(normalize_heatmap(sparse_fixture))


class TestNormalize:
    def test_affine_map(self):
        n = normalize_heatmap(grid([[0, 5, 10]]))
        assert n.grid.values.tolist() == [[0.0, 0.5, 1.0]]

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        once = normalize_heatmap(grid(rng.random((6, 7))))
        twice = normalize_heatmap(once.grid)
        assert np.array_equal(once.grid.values, twice.grid.values)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        g = grid(rng.uniform(-50, 300, (9, 11)))
        n = normalize_heatmap(g)
        assert np.allclose(n.denormalize(n.grid.values), g.values, atol=1e-12, rtol=0)
        xs, ys = g.cell_centers()
        ux, uy = n.to_unit_xy(xs, ys)
        assert ux.min() == 0.0 and ux.max() == 1.0 and uy.min() == 0.0 and uy.max() == 1.0

    def test_constant_input(self, caplog):
        n = normalize_heatmap(grid(np.full((3, 3), 7.0)))
        assert np.all(n.grid.values == 0.5)
        assert "constant" in caplog.text
        assert np.all(n.denormalize([0.1, 0.9]) == 7.0)

    def test_nodata_preserved(self):
        n = normalize_heatmap(grid([[1, -9999], [3, 5]]))
        assert n.grid.values[0, 1] == -9999.0
        X, y = n.training_set()
        assert len(y) == 3 and y.tolist() == [0.0, 0.5, 1.0]

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            normalize_heatmap(grid([[-9999.0]]))

    def test_row_major_order(self):
        X, _ = normalize_heatmap(grid(np.arange(6).reshape(2, 3))).training_set()
        assert X.tolist() == [[0, 0], [0.5, 0], [1, 0], [0, 1], [0.5, 1], [1, 1]]


class TestMatern:
    def test_zero_distance(self):
        assert matern25((0.3, 0.4), (0.3, 0.4), (0.1, 0.2), 2.5) == 2.5

    def test_monotone_decay(self):
        d = np.linspace(0, 5, 200)
        k = matern25(np.zeros((1, 2)), np.column_stack((d, np.zeros_like(d))), (0.5, 0.5), 1.0)[0]
        assert np.all(np.diff(k) < 0) and k[-1] < 1e-3

    def test_bessel_oracle(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((50, 2)), rng.random((50, 2))
        ls = np.array([0.15, 0.4])
        r = np.sqrt((((a - b) / ls) ** 2).sum(1))
        want = matern_general(r, 2.5, 1.7)
        got = np.array([matern25(x, y, ls, 1.7) for x, y in zip(a, b)])
        assert np.allclose(got, want, atol=1e-9, rtol=0)

    def test_symmetric_and_psd(self):
        rng = np.random.default_rng(3)
        X = rng.random((80, 2))
        K = matern25(X, X, (0.2, 0.3), 1.0)
        assert np.array_equal(K, K.T)
        linalg.cholesky(K + JITTER * np.eye(80), lower=True)


LATTICE = InducingLattice.covering([0.0, 0.0], [1.0, 1.0], 40)


class TestKiss:
    def test_cardinal_on_lattice_point(self):
        U = LATTICE.points()
        idx, w = kiss_interp_weights(U[300], LATTICE)
        dense = np.zeros(LATTICE.size)
        np.add.at(dense, idx[0], w[0])
        assert dense[300] == pytest.approx(1.0, abs=1e-15)
        assert np.count_nonzero(np.abs(dense) > 1e-15) == 1

    def test_partition_of_unity_and_locality(self):
        q = np.random.default_rng(4).random((1000, 2))
        W = interp_matrix(q, LATTICE)
        assert np.allclose(np.asarray(W.sum(axis=1)).ravel(), 1.0, atol=1e-12, rtol=0)
        assert np.diff(W.indptr).max() <= 16

    def test_outside_padded_lattice(self):
        with pytest.raises(ValueError):
            kiss_interp_weights([1.5, 0.5], LATTICE)

    def test_kernel_approximation(self):
        rng = np.random.default_rng(5)
        a, b = rng.random((300, 2)), rng.random((300, 2))
        ls = (0.2, 0.25)
        U = LATTICE.points()
        approx = np.einsum("ij,ij->i", interp_matrix(a, LATTICE) @ matern25(U, U, ls, 1.0),
                           interp_matrix(b, LATTICE).toarray())
        exact = np.array([matern25(x, y, ls, 1.0) for x, y in zip(a, b)])
        assert np.max(np.abs(approx - exact) / exact) < 0.02


def _finite_diff(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


class TestLikelihood:
    def test_exact_gradient(self):
        rng = np.random.default_rng(6)
        X, y = rng.random((40, 2)), rng.random(40)
        theta = np.log([0.3, 0.2, 0.8, 0.05])
        _, g = _exact_mll(theta, X, y)
        assert np.allclose(g, _finite_diff(lambda t: _exact_mll(t, X, y, False)[0], theta), rtol=1e-5, atol=1e-6)

    def test_kiss_gradient(self):
        rng = np.random.default_rng(7)
        X, y = rng.random((120, 2)), rng.random(120)
        lat = InducingLattice.covering([0, 0], [1, 1], 12)
        W = interp_matrix(X, lat)
        theta = np.log([0.3, 0.25, 0.8, 0.05])
        _, g = _kiss_mll(theta, X, y, lat, W)
        fd = _finite_diff(lambda t: _kiss_mll(t, X, y, lat, W, False)[0], theta)
        assert np.allclose(g, fd, rtol=1e-4, atol=1e-5)

    def test_kiss_tracks_exact(self):
        rng = np.random.default_rng(8)
        X, y = rng.random((150, 2)), rng.random(150)
        lat = InducingLattice.covering([0, 0], [1, 1], 40)
        theta = np.log([0.3, 0.3, 1.0, 0.05])
        exact = _exact_mll(theta, X, y, False)[0]
        kiss = _kiss_mll(theta, X, y, lat, interp_matrix(X, lat), False)[0]
        assert kiss == pytest.approx(exact, rel=0.01)


class TestTrain:
    def test_beats_generating_parameters(self):
        rng = np.random.default_rng(9)
        c = np.arange(16) / 15
        X = np.column_stack([a.ravel() for a in np.meshgrid(c, c)])
        K = matern25(X, X, (0.1, 0.1), 1.0) + 0.01 * np.eye(256)
        y = linalg.cholesky(K, lower=True) @ rng.standard_normal(256)
        data = normalize_heatmap(grid(y.reshape(16, 16)))
        model = train(data)
        span = data.z_max - data.z_min
        truth = np.log([0.1, 0.1, 1.0 / span ** 2, 0.01 / span ** 2])
        assert model.mll >= log_likelihood(model, truth) - 1e-3

    def test_constant_zero(self):
        data = normalize_heatmap(grid(np.zeros((6, 6))))
        model = train(data, GPConfig(iterations=50))
        assert np.allclose(model.predict([50.0, 320.0], [50.0, 80.0]), 0.0)

    def test_too_few_points(self):
        with pytest.raises(TrainingError):
            train(normalize_heatmap(grid([[1.0, -9999.0]])))

    def test_fixture_fidelity(self, trained_sparse):
        X, y = trained_sparse.data.training_set()
        resid = np.abs(trained_sparse.predict_unit(X) - y)
        assert np.mean(resid <= 2 * trained_sparse.noise_std) >= 0.95

    def test_history_monotone(self, trained_sparse):
        h = np.array(trained_sparse.mll_history)
        assert len(h) > 10 and np.all(np.diff(h) >= 0)
        assert h[-1] == trained_sparse.mll

    def test_deterministic(self, sparse_fixture, trained_sparse):
        again = train(normalize_heatmap(sparse_fixture))
        assert again.theta.tolist() == trained_sparse.theta.tolist()

    def test_kiss_path_above_limit(self):
        data = normalize_heatmap(clustered_heatmap(20, seed=1))
        model = train(data, GPConfig(iterations=60, exact_limit=100, inducing_per_axis=16))
        assert model.inducing_shape == (16, 16)
        assert np.all(np.diff(model.mll_history) >= 0)
        exact = train(data, GPConfig(iterations=60))
        X, y = data.training_set()
        assert np.corrcoef(model.predict_unit(X), exact.predict_unit(X))[0, 1] > 0.95

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValueError):
            GPModel((0.1, 0.0), 1.0, 0.01)


class TestPosterior:
    def test_resolution_contract(self, trained_sparse):
        post = posterior_grid(trained_sparse, 20.0)
        src = trained_sparse.data.grid
        assert post.cell_size == 20.0 and post.origin == src.origin
        assert post.values.size == 25 * src.values.size
        assert post.values.min() >= 0.0

    def test_same_resolution_consistent(self, sparse_fixture, trained_sparse):
        post = posterior_grid(trained_sparse, sparse_fixture.cell_size)
        span = trained_sparse.data.z_max - trained_sparse.data.z_min
        bound = 2 * trained_sparse.noise_std * span
        close = np.abs(post.values - np.maximum(sparse_fixture.values, 0)) <= bound
        assert close.mean() >= 0.95

    def test_lipschitz(self, trained_sparse):
        m = trained_sparse
        post = posterior_grid(m, 20.0)
        r = np.linspace(0, 3, 30001)
        dk = (5 / 3) * r * (1 + math.sqrt(5) * r) * np.exp(-math.sqrt(5) * r)
        grad_scale = np.abs(m._alpha).sum() * m.outputscale * dk.max()
        span = m.data.z_max - m.data.z_min
        for axis, unit_span, ls in ((1, m.data.x_span, m.lengthscale[0]), (0, m.data.y_span, m.lengthscale[1])):
            step = 20.0 / unit_span
            bound = span * grad_scale * step / ls
            assert np.abs(np.diff(post.values, axis=axis)).max() <= bound

    def test_untrained(self, sparse_fixture):
        model = GPModel((0.1, 0.1), 1.0, 0.01, data=normalize_heatmap(sparse_fixture))
        with pytest.raises(TrainingError):
            posterior_grid(model, 20.0)


class TestSamplePLS:
    def test_single_cell(self):
        g = grid([[0, 0], [0, 3]], cell=10.0)
        pts = sample_pls(g, 50, np.random.default_rng(0))
        assert np.all(pts == [15.0, 15.0])

    def test_two_cells_split(self):
        g = grid([[1.0, 1.0]])
        pts = sample_pls(g, 100_000, np.random.default_rng(1))
        assert np.mean(pts[:, 0] == 50.0) == pytest.approx(0.5, abs=0.005)

    def test_zero_mass(self):
        with pytest.raises(EmptyInputError):
            sample_pls(grid([[0.0, -9999.0]]), 3, np.random.default_rng(0))

    def test_goodness_of_fit(self, trained_sparse):
        post = posterior_grid(trained_sparse, 50.0)
        n = 200_000
        pts = sample_pls(post, n, np.random.default_rng(2))
        cols = ((pts[:, 0] - post.origin[0]) // post.cell_size).astype(int)
        rows = ((pts[:, 1] - post.origin[1]) // post.cell_size).astype(int)
        counts = np.bincount(rows * post.n_cols + cols, minlength=post.values.size)
        p = post.values.ravel() / post.values.sum()
        keep = p * n >= 5
        expected = p[keep] * n
        observed = counts[keep]
        expected *= observed.sum() / expected.sum()
        assert stats.chisquare(observed, expected).pvalue > 0.01


class TestPersistence:
    def test_round_trip(self, tmp_path, sparse_fixture):
        src = tmp_path / "h.asc"
        src.write_bytes((bundled_fixture_dir() / SPARSE_HEATMAP_FILE).read_bytes())
        model = train(normalize_heatmap(sparse_fixture), GPConfig(iterations=30), training_path=src)
        save_model(model, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        assert back.theta.tolist() == model.theta.tolist()
        xy = ([120.0, 777.0], [40.0, 1500.0])
        assert np.allclose(back.predict(*xy), model.predict(*xy), atol=1e-12)

    def test_checksum_mismatch(self, tmp_path, sparse_fixture):
        src = tmp_path / "h.asc"
        src.write_bytes((bundled_fixture_dir() / SPARSE_HEATMAP_FILE).read_bytes())
        model = train(normalize_heatmap(sparse_fixture), GPConfig(iterations=5), training_path=src)
        save_model(model, tmp_path / "m.json")
        src.write_text(src.read_text().replace(" 0 ", " 1 ", 1))
        with pytest.raises(ValueError, match="checksum"):
            load_model(tmp_path / "m.json")
