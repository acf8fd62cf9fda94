"""Gaussian-process up-sampling of a sparse PLS heatmap.

A zero-mean GP with a scaled Matern-5/2 kernel (one length scale per axis)
is fitted to the min-max normalised heatmap by maximising the marginal log
likelihood with Adam on log-hyperparameters. Small inputs use the exact
kernel; larger ones interpolate the kernel from a regular inducing lattice
with local cubic-convolution weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, sparse

from .errors import EmptyInputError, MissingInputError, TrainingError
from .gis import RasterGrid, load_raster

logger = logging.getLogger(__name__)

NU = 2.5
SQRT5 = math.sqrt(5.0)
JITTER = 1e-8
EXACT_LIMIT = 4096
# cubic-convolution sharpness; -0.5 gives third-order accuracy
KEYS_A = -0.5
LATTICE_PAD = 2

MIN_SCALE = 1e-6
LENGTHSCALE_BOUNDS = (1e-3, 1e3)


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalizedHeatmap:
    """Heatmap with values and cell-centre coordinates mapped onto [0, 1].

    Coordinates of the first and last cell centres map to 0 and 1 on each
    axis (an axis with a single cell maps its centre to 0).
    """

    grid: RasterGrid
    z_min: float
    z_max: float
    x_min: float
    x_span: float
    y_min: float
    y_span: float
    source: RasterGrid

    @property
    def constant(self) -> bool:
        return self.z_max == self.z_min

    def to_unit_xy(self, x, y):
        return (np.asarray(x) - self.x_min) / self.x_span, (np.asarray(y) - self.y_min) / self.y_span

    def denormalize(self, z):
        z = np.asarray(z, dtype=float)
        if self.constant:
            return np.full_like(z, self.z_min)
        return self.z_min + z * (self.z_max - self.z_min)

    def training_set(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major ``(X, y)`` over valid cells; ``X`` in unit coordinates."""
        xs, ys = self.grid.cell_centers()
        ux, uy = self.to_unit_xy(xs, ys)
        keep = self.grid.valid.ravel()
        X = np.column_stack((ux.ravel(), uy.ravel()))[keep]
        return X, self.grid.values.ravel()[keep]

    def hull(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit-coordinate bounds of the full raster extent, not just centres."""
        g = self.grid
        lo = np.array(self.to_unit_xy(g.origin[0], g.origin[1]), dtype=float)
        hi = np.array(self.to_unit_xy(g.origin[0] + g.width, g.origin[1] + g.height), dtype=float)
        return lo, hi


def normalize_heatmap(raw: RasterGrid) -> NormalizedHeatmap:
    """Min-max normalise values and coordinates.

    A constant raster normalises to 0.5 everywhere, with a warning.
    """
    valid = raw.valid
    if not valid.any():
        raise EmptyInputError("heatmap has no valid cells")
    v = raw.values[valid]
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        z = np.where(valid, (raw.values - lo) / (hi - lo), raw.nodata)
    else:
        logger.warning("heatmap is constant (%g); normalising to 0.5", lo)
        z = np.where(valid, 0.5, raw.nodata)
    xs, ys = raw.cell_centers()
    x_min, y_min = float(xs[0, 0]), float(ys[0, 0])
    x_span = float(xs[0, -1] - x_min) or raw.cell_size
    y_span = float(ys[-1, 0] - y_min) or raw.cell_size
    return NormalizedHeatmap(RasterGrid.like(raw, z), lo, hi, x_min, x_span, y_min, y_span, raw)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def _scaled_sqdist(a: np.ndarray, b: np.ndarray, lengthscale) -> np.ndarray:
    ls = np.asarray(lengthscale, dtype=float)
    d = (a[:, None, :] - b[None, :, :]) / ls
    return np.einsum("ijk,ijk->ij", d, d)


def matern25(a, b, lengthscale, outputscale: float):
    """Scaled Matern-5/2 covariance between points ``a`` and ``b``.

    Accepts single points or ``(n, d)`` / ``(m, d)`` arrays (returning the
    ``(n, m)`` matrix).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    single = a.ndim == 1 and b.ndim == 1
    r = np.sqrt(_scaled_sqdist(np.atleast_2d(a), np.atleast_2d(b), lengthscale))
    k = outputscale * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)
    return float(k[0, 0]) if single else k


def _kernel_and_grads(a, b, lengthscale, outputscale):
    """Kernel matrix and its derivatives w.r.t. log length scales."""
    ls = np.asarray(lengthscale, dtype=float)
    diff = (a[:, None, :] - b[None, :, :]) / ls
    sq = diff * diff
    r = np.sqrt(sq.sum(-1))
    e = np.exp(-SQRT5 * r)
    k = outputscale * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * e
    common = outputscale * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
    return k, [common * sq[..., d] for d in range(a.shape[1])]


# ---------------------------------------------------------------------------
# Inducing lattice
# ---------------------------------------------------------------------------


def _keys(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    a = KEYS_A
    near = ((a + 2) * t - (a + 3)) * t * t + 1
    far = ((a * t - 5 * a) * t + 8 * a) * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@dataclass(frozen=True, eq=False)
class InducingLattice:
    """Regular 2-D lattice of inducing points, padded for cubic stencils."""

    lo: np.ndarray
    step: np.ndarray
    shape: tuple[int, int]  # points per axis (x, y)

    @classmethod
    def covering(cls, lo, hi, points_per_axis) -> "InducingLattice":
        """Lattice whose interior spans ``[lo, hi]`` with extra padding."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        m = np.broadcast_to(np.asarray(points_per_axis, dtype=int), lo.shape)
        if np.any(m < 2):
            raise ValueError("need at least two lattice points per axis")
        step = (hi - lo) / (m - 1)
        return cls(lo - LATTICE_PAD * step, step, tuple(int(v + 2 * LATTICE_PAD) for v in m))

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def points(self) -> np.ndarray:
        """Lattice points, x varying fastest."""
        gx = self.lo[0] + np.arange(self.shape[0]) * self.step[0]
        gy = self.lo[1] + np.arange(self.shape[1]) * self.step[1]
        X, Y = np.meshgrid(gx, gy)
        return np.column_stack((X.ravel(), Y.ravel()))


def kiss_interp_weights(query, lattice: InducingLattice) -> tuple[np.ndarray, np.ndarray]:
    """Interpolation stencil of each query point.

    Returns ``(indices, weights)`` shaped ``(n, 16)``; indices address
    :meth:`InducingLattice.points`.
    """
    q = np.atleast_2d(np.asarray(query, dtype=float))
    u = (q - lattice.lo) / lattice.step
    base = np.floor(u).astype(np.int64)
    nx, ny = lattice.shape
    if np.any(base - 1 < 0) or np.any(base[:, 0] + 2 > nx - 1) or np.any(base[:, 1] + 2 > ny - 1):
        raise ValueError("query lies outside the padded inducing lattice")
    offs = np.arange(-1, 3)
    ix = base[:, 0:1] + offs
    iy = base[:, 1:2] + offs
    wx = _keys(u[:, 0:1] - ix)
    wy = _keys(u[:, 1:2] - iy)
    idx = (iy[:, :, None] * nx + ix[:, None, :]).reshape(len(q), 16)
    w = (wy[:, :, None] * wx[:, None, :]).reshape(len(q), 16)
    return idx, w


def interp_matrix(query, lattice: InducingLattice) -> sparse.csr_matrix:
    idx, w = kiss_interp_weights(query, lattice)
    n = len(idx)
    rows = np.repeat(np.arange(n), 16)
    return sparse.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, lattice.size))


# ---------------------------------------------------------------------------
# Marginal likelihood
# ---------------------------------------------------------------------------


def _unpack(theta):
    return np.exp(theta[:2]), math.exp(theta[2]), math.exp(theta[3])


def _exact_mll(theta, X, y, need_grad=True):
    ls, os_, noise = _unpack(theta)
    n = len(y)
    Kf, dls = _kernel_and_grads(X, X, ls, os_)
    K = Kf + (noise + JITTER) * np.eye(n)
    try:
        c = linalg.cho_factor(K, lower=True)
    except linalg.LinAlgError:
        return -np.inf, None
    alpha = linalg.cho_solve(c, y)
    logdet = 2.0 * np.log(np.diag(c[0])).sum()
    mll = -0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
    if not need_grad:
        return float(mll), None
    Kinv = linalg.cho_solve(c, np.eye(n))
    A = np.outer(alpha, alpha) - Kinv
    grad = np.array([0.5 * np.sum(A * d) for d in dls]
                    + [0.5 * np.sum(A * Kf), 0.5 * noise * np.trace(A)])
    return float(mll), grad


def _kiss_mll(theta, X, y, lattice, W, need_grad=True):
    ls, os_, noise = _unpack(theta)
    n = len(y)
    U = lattice.points()
    m = len(U)
    Kuu, dls = _kernel_and_grads(U, U, ls, os_)
    try:
        L = linalg.cholesky(Kuu + JITTER * np.eye(m), lower=True)
    except linalg.LinAlgError:
        return -np.inf, None
    B = (W.T @ W).toarray()
    LtBL = L.T @ B @ L
    M = noise * np.eye(m) + LtBL
    try:
        cm = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        return -np.inf, None
    Wty = W.T @ y
    # alpha = K^-1 y through the Woodbury identity
    t = linalg.cho_solve(cm, L.T @ Wty)
    alpha = (y - W @ (L @ t)) / noise
    logdet = (n - m) * math.log(noise) + 2.0 * np.log(np.diag(cm[0])).sum()
    mll = -0.5 * y @ alpha - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi)
    if not need_grad:
        return float(mll), None
    beta = W.T @ alpha
    BL = B @ L
    G = (B - BL @ linalg.cho_solve(cm, BL.T)) / noise
    A = np.outer(beta, beta) - G
    trace_kinv = (n - np.trace(linalg.cho_solve(cm, LtBL))) / noise
    grad = np.array([0.5 * np.sum(A * d) for d in dls]
                    + [0.5 * np.sum(A * Kuu), 0.5 * noise * (alpha @ alpha - trace_kinv)])
    return float(mll), grad


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class GPConfig:
    iterations: int = 500
    learning_rate: float = 0.05
    exact_limit: int = EXACT_LIMIT
    inducing_per_axis: int | None = None
    init_lengthscale: float = 0.2
    init_outputscale: float = 1.0
    init_noise: float = 0.01
    max_retries: int = 5
    seed: int = 0


@dataclass(eq=False)
class GPModel:
    lengthscale: tuple[float, float]
    outputscale: float
    noise: float
    nu: float = NU
    inducing_shape: tuple[int, int] | None = None
    trained: bool = False
    mll: float = float("nan")
    mll_history: list[float] = field(default_factory=list)
    training_path: str | None = None
    training_sha256: str | None = None
    data: NormalizedHeatmap | None = None
    _alpha: np.ndarray | None = field(default=None, repr=False)
    _lattice: InducingLattice | None = field(default=None, repr=False)

    def __post_init__(self):
        if min(self.lengthscale) <= 0 or self.outputscale <= 0 or self.noise <= 0:
            raise ValueError("GP hyperparameters must be positive")

    @property
    def noise_std(self) -> float:
        """Noise standard deviation in normalised units."""
        return math.sqrt(self.noise)

    @property
    def theta(self) -> np.ndarray:
        return np.log([*self.lengthscale, self.outputscale, self.noise])

    def kernel(self, a, b):
        return matern25(a, b, self.lengthscale, self.outputscale)

    def _prepare(self) -> None:
        X, y = self.data.training_set()
        ls = np.asarray(self.lengthscale)
        if self.inducing_shape is None:
            K = matern25(X, X, ls, self.outputscale) + (self.noise + JITTER) * np.eye(len(y))
            self._alpha = linalg.cho_solve(linalg.cho_factor(K, lower=True), y)
        else:
            lo, hi = self.data.hull()
            self._lattice = InducingLattice.covering(lo, hi, self.inducing_shape)
            W = interp_matrix(X, self._lattice)
            U = self._lattice.points()
            Kuu = matern25(U, U, ls, self.outputscale) + JITTER * np.eye(len(U))
            L = linalg.cholesky(Kuu, lower=True)
            M = self.noise * np.eye(len(U)) + L.T @ (W.T @ W).toarray() @ L
            t = linalg.cho_solve(linalg.cho_factor(M, lower=True), L.T @ (W.T @ y))
            alpha = (y - W @ (L @ t)) / self.noise
            # predictive weights on the lattice: K_UU W^T alpha
            self._alpha = Kuu @ (W.T @ alpha)

    def predict_unit(self, Xq) -> np.ndarray:
        """Posterior mean (normalised units) at unit-coordinate points."""
        if not self.trained or self.data is None:
            raise TrainingError("model is not trained")
        if self._alpha is None:
            self._prepare()
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if self._lattice is None:
            X, _ = self.data.training_set()
            return matern25(Xq, X, self.lengthscale, self.outputscale) @ self._alpha
        return interp_matrix(Xq, self._lattice) @ self._alpha

    def predict(self, x, y) -> np.ndarray:
        """Denormalised posterior mean at world coordinates (not floored)."""
        ux, uy = self.data.to_unit_xy(x, y)
        return self.data.denormalize(self.predict_unit(np.column_stack((np.ravel(ux), np.ravel(uy)))))


def _default_inducing(data: NormalizedHeatmap, config: GPConfig) -> tuple[int, int]:
    per = config.inducing_per_axis
    g = data.grid
    return (per or min(g.n_cols, 40), per or min(g.n_rows, 40))


def log_likelihood(model: GPModel, theta=None) -> float:
    """Marginal log likelihood of the model's data at ``theta`` (log-params)."""
    theta = model.theta if theta is None else np.asarray(theta, dtype=float)
    X, y = model.data.training_set()
    if model.inducing_shape is None:
        return _exact_mll(theta, X, y, need_grad=False)[0]
    lo, hi = model.data.hull()
    lattice = InducingLattice.covering(lo, hi, model.inducing_shape)
    return _kiss_mll(theta, X, y, lattice, interp_matrix(X, lattice), need_grad=False)[0]


def _clamp(theta: np.ndarray) -> np.ndarray:
    lo = np.log([LENGTHSCALE_BOUNDS[0]] * 2 + [MIN_SCALE, MIN_SCALE])
    hi = np.log([LENGTHSCALE_BOUNDS[1]] * 2 + [np.inf, np.inf])
    return np.clip(theta, lo, hi)


def train(data: NormalizedHeatmap, config: GPConfig | None = None, training_path=None) -> GPModel:
    """Fit hyperparameters by Adam ascent on the marginal log likelihood.

    A proposed step is accepted only if the likelihood is finite and does
    not decrease; otherwise the step is halved and retried. Five
    consecutive non-finite evaluations abort training.
    """
    config = config or GPConfig()
    X, y = data.training_set()
    if len(y) < 2:
        raise TrainingError("need at least two data points")
    inducing = None if len(y) <= config.exact_limit else _default_inducing(data, config)
    if inducing is None:
        def objective(th, need_grad=True):
            return _exact_mll(th, X, y, need_grad)
    else:
        lo, hi = data.hull()
        lattice = InducingLattice.covering(lo, hi, inducing)
        W = interp_matrix(X, lattice)
        logger.info("using %dx%d inducing lattice for %d points", *lattice.shape, len(y))

        def objective(th, need_grad=True):
            return _kiss_mll(th, X, y, lattice, W, need_grad)

    theta = _clamp(np.log([config.init_lengthscale] * 2 + [config.init_outputscale, config.init_noise]))
    mll, grad = objective(theta)
    if not np.isfinite(mll):
        raise TrainingError("marginal likelihood is not finite at the initial hyperparameters")
    history = [mll]
    m1 = np.zeros(4)
    m2 = np.zeros(4)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for it in range(1, config.iterations + 1):
        m1 = b1 * m1 + (1 - b1) * grad
        m2 = b2 * m2 + (1 - b2) * grad * grad
        direction = (m1 / (1 - b1 ** it)) / (np.sqrt(m2 / (1 - b2 ** it)) + eps)
        lr = config.learning_rate
        failures = 0
        for _ in range(config.max_retries):
            proposal = _clamp(theta + lr * direction)
            new_mll, new_grad = objective(proposal)
            if not np.isfinite(new_mll):
                failures += 1
            elif new_mll >= mll:
                theta, mll, grad = proposal, new_mll, new_grad
                history.append(mll)
                break
            lr /= 2
        else:
            if failures >= config.max_retries:
                raise TrainingError(f"marginal likelihood non-finite at iteration {it}")
    ls, os_, noise = _unpack(theta)
    model = GPModel(
        lengthscale=(float(ls[0]), float(ls[1])),
        outputscale=os_,
        noise=noise,
        inducing_shape=inducing,
        trained=True,
        mll=mll,
        mll_history=history,
        data=data,
    )
    if training_path is not None:
        model.training_path = str(training_path)
        model.training_sha256 = file_sha256(training_path)
    logger.info("GP trained: lengthscale=%s outputscale=%.4g noise=%.4g mll=%.4f",
                model.lengthscale, os_, noise, mll)
    return model


def posterior_grid(model: GPModel, out_cell_size: float) -> RasterGrid:
    """Denormalised posterior mean over the training extent, floored at 0."""
    if not model.trained or model.data is None:
        raise TrainingError("model is not trained")
    src = model.data.grid
    n_cols = max(1, int(round(src.width / out_cell_size)))
    n_rows = max(1, int(round(src.height / out_cell_size)))
    template = RasterGrid(n_cols, n_rows, float(out_cell_size), src.origin, -9999.0,
                          np.zeros((n_rows, n_cols)))
    xs, ys = template.cell_centers()
    mean = model.predict(xs.ravel(), ys.ravel()).reshape(n_rows, n_cols)
    return RasterGrid.like(template, np.maximum(mean, 0.0))


def sample_pls(grid: RasterGrid, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` cell centres with probability proportional to cell value."""
    w = np.where(grid.valid, np.clip(grid.values, 0.0, None), 0.0).ravel()
    total = w.sum()
    if not total > 0:
        raise EmptyInputError("PLS surface has zero total mass")
    idx = rng.choice(w.size, size=n, p=w / total)
    rows, cols = np.divmod(idx, grid.n_cols)
    x = grid.origin[0] + (cols + 0.5) * grid.cell_size
    y = grid.origin[1] + (rows + 0.5) * grid.cell_size
    return np.column_stack((x, y))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_model(model: GPModel, path) -> None:
    rec = {
        "kernel": "matern",
        "nu": model.nu,
        "lengthscale": list(model.lengthscale),
        "outputscale": model.outputscale,
        "noise": model.noise,
        "inducing_shape": list(model.inducing_shape) if model.inducing_shape else None,
        "trained": model.trained,
        "mll": model.mll,
        "iterations_accepted": len(model.mll_history) - 1,
        "training_path": model.training_path,
        "training_sha256": model.training_sha256,
    }
    Path(path).write_text(json.dumps(rec, indent=2) + "\n")


def load_model(path, training_path=None) -> GPModel:
    """Read hyperparameters and re-attach the referenced training heatmap.

    Raises:
        MissingInputError: model or training raster missing.
        ValueError: training raster checksum differs from the recorded one.
    """
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"model file not found: {path}")
    rec = json.loads(path.read_text())
    src = training_path or rec.get("training_path")
    model = GPModel(
        lengthscale=tuple(rec["lengthscale"]),
        outputscale=rec["outputscale"],
        noise=rec["noise"],
        nu=rec.get("nu", NU),
        inducing_shape=tuple(rec["inducing_shape"]) if rec.get("inducing_shape") else None,
        trained=rec.get("trained", False),
        mll=rec.get("mll", float("nan")),
        training_path=src,
        training_sha256=rec.get("training_sha256"),
    )
    if src is not None:
        src_path = Path(src)
        if not src_path.exists():
            raise MissingInputError(f"training heatmap not found: {src_path}")
        if model.training_sha256 and file_sha256(src_path) != model.training_sha256:
            raise ValueError(f"training heatmap {src_path} does not match the model's checksum")
        model.data = normalize_heatmap(load_raster(src_path))
    return model
