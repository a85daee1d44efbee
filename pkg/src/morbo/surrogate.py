"""Local Gaussian-process surrogates.

One independent GP per outcome, with a constant mean and a Matérn-5/2 ARD
kernel. Inputs are expected in the unit hypercube; targets are standardized
per training window before the marginal likelihood is maximized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import blas, lapack
from scipy.optimize import minimize

from .errors import InvalidArgumentError, InvalidDataError, NumericalError

SQRT5 = math.sqrt(5.0)

LENGTHSCALE_BOUNDS = (0.005, 4.0)
SIGNAL_VARIANCE_BOUNDS = (0.05, 20.0)
CONSTANT_MEAN_BOUNDS = (-10.0, 10.0)
NOISE_VARIANCE = 1e-6
JITTERS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
NUM_RESTARTS = 5
MAXITER = 100


@dataclass(frozen=True)
class GPHyperparams:
    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float = NOISE_VARIANCE
    constant_mean: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0) or self.signal_variance <= 0 or self.noise_variance <= 0:
            raise InvalidArgumentError("lengthscales, signal_variance and noise_variance must be positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


def _sq_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d2 = A @ B.T
    d2 *= -2.0
    d2 += np.einsum("ij,ij->i", A, A)[:, None]
    d2 += np.einsum("ij,ij->i", B, B)[None, :]
    return np.maximum(d2, 0.0, out=d2)


def matern52(X1, X2, lengthscales, signal_variance: float) -> np.ndarray:
    """Matérn-5/2 ARD covariance matrix between the rows of ``X1`` and ``X2``."""
    ls = np.asarray(lengthscales, dtype=float)
    s = _sq_dist(np.asarray(X1) / ls, np.asarray(X2) / ls)
    np.sqrt(s, out=s)
    s *= SQRT5
    e = np.exp(-s)
    # (1 + s + s^2 / 3) e^{-s} with s = sqrt(5) r, computed in place
    k = s * s
    k *= 1.0 / 3.0
    k += s
    k += 1.0
    k *= e
    k *= signal_variance
    return k


def _cholesky(K: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    L = _potrf(K)
    if L is None:
        raise NumericalError(f"matrix of size {K.shape[0]} not factorizable with jitter up to {JITTERS[-1]}")
    return L


@dataclass(frozen=True)
class GPModel:
    """A fitted GP; immutable once built.

    ``train_targets`` are standardized; ``target_mean`` and ``target_std``
    map predictions back to the original scale.
    """

    hyperparams: GPHyperparams
    train_inputs: np.ndarray
    train_targets: np.ndarray
    target_mean: float
    target_std: float
    chol: np.ndarray
    alpha: np.ndarray = field(repr=False)

    @property
    def num_train(self) -> int:
        return self.train_inputs.shape[0]

    @classmethod
    def build(cls, hyperparams, train_inputs, train_targets, target_mean=0.0, target_std=1.0) -> "GPModel":
        X = np.asarray(train_inputs, dtype=float).reshape(-1, hyperparams.dim)
        y = np.asarray(train_targets, dtype=float).ravel()
        K = matern52(X, X, hyperparams.lengthscales, hyperparams.signal_variance)
        K[np.diag_indices_from(K)] += hyperparams.noise_variance
        L = _cholesky(K) if X.shape[0] else np.empty((0, 0))
        alpha = sla.cho_solve((L, True), y - hyperparams.constant_mean) if X.shape[0] else np.empty(0)
        return cls(hyperparams, X, y, float(target_mean), float(target_std), L, alpha)

    @classmethod
    def prior(cls, hyperparams: GPHyperparams) -> "GPModel":
        """A model conditioned on nothing, for prior draws."""
        return cls.build(hyperparams, np.empty((0, hyperparams.dim)), np.empty(0))

    def log_marginal_likelihood(self) -> float:
        """Log marginal likelihood of the standardized targets."""
        n = self.num_train
        resid = self.train_targets - self.hyperparams.constant_mean
        return float(
            -0.5 * resid @ self.alpha - np.sum(np.log(np.diag(self.chol))) - 0.5 * n * math.log(2 * math.pi)
        )


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mean = float(np.mean(y))
    std = float(np.std(y))
    if not np.isfinite(std) or std < 1e-12 * max(1.0, abs(mean)) or std == 0.0:
        std = 1.0
    return (y - mean) / std, mean, std


def _pack(hp: GPHyperparams) -> np.ndarray:
    return np.concatenate([np.log(hp.lengthscales), [math.log(hp.signal_variance), hp.constant_mean]])


def _unpack(theta: np.ndarray, noise: float) -> GPHyperparams:
    d = theta.shape[0] - 2
    return GPHyperparams(np.exp(theta[:d]), float(math.exp(theta[d])), noise, float(theta[d + 1]))


def _potrf(K: np.ndarray):
    """Cholesky factor via LAPACK with jitter escalation; None on failure."""
    n = K.shape[0]
    factor, info = lapack.dpotrf(K, lower=1, clean=1)
    for jitter in JITTERS:
        if info == 0:
            return factor
        Kj = K.copy()
        Kj.flat[:: n + 1] += jitter
        factor, info = lapack.dpotrf(Kj, lower=1, clean=1)
    return factor if info == 0 else None


def _neg_mll_and_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, noise: float):
    d = X.shape[1]
    n = X.shape[0]
    ls = np.exp(theta[:d])
    sf2 = math.exp(theta[d])
    mu = theta[d + 1]
    Xs = X / ls
    r = np.sqrt(_sq_dist(Xs, Xs))
    sr = SQRT5 * r
    e = np.exp(-sr)
    # P = (1 + sqrt5 r) e^{-sqrt5 r}; C = P + 5/3 r^2 e^{-sqrt5 r}
    P = (1.0 + sr) * e
    C = P + (sr * sr / 3.0) * e
    K = sf2 * C
    K.flat[:: n + 1] += noise
    factor = _potrf(K)
    if factor is None:
        return 1e25, np.zeros_like(theta)
    resid = y - mu
    alpha, _ = lapack.dpotrs(factor, resid, lower=1)
    nll = 0.5 * resid @ alpha + np.sum(np.log(np.diag(factor))) + 0.5 * n * math.log(2 * math.pi)
    Kinv, _ = lapack.dpotri(factor, lower=1)
    # potri fills only the lower triangle; the upper one is zero from potrf(clean=1)
    Kinv += Kinv.T
    Kinv.flat[:: n + 1] *= 0.5
    # W = alpha alpha^T - K^{-1}
    W = np.multiply.outer(alpha, alpha)
    W -= Kinv
    grad = np.empty_like(theta)
    # d k / d log(ls_i) = sf2 * 5/3 * P * diff_i^2 / ls_i^2
    Mg = W * P
    Mg *= sf2 * (5.0 / 3.0)
    rows = Mg.sum(axis=1)
    g_ls = 2.0 * (rows @ (Xs * Xs)) - 2.0 * np.einsum("ij,ij->j", Xs, Mg @ Xs)
    grad[:d] = 0.5 * g_ls
    grad[d] = 0.5 * sf2 * np.vdot(W, C)
    grad[d + 1] = np.sum(alpha)
    return float(nll), -grad


def default_hyperparams(dim: int, noise_variance: float = NOISE_VARIANCE) -> GPHyperparams:
    ls = float(np.clip(0.2 * math.sqrt(dim), *LENGTHSCALE_BOUNDS))
    return GPHyperparams(np.full(dim, ls), 1.0, noise_variance, 0.0)


def fit_gp(
    train_inputs,
    train_targets,
    *,
    rng: np.random.Generator | int | None = None,
    num_restarts: int = NUM_RESTARTS,
    warm_start: GPHyperparams | None = None,
    noise_variance: float = NOISE_VARIANCE,
    maxiter: int = MAXITER,
) -> GPModel:
    """Fit a GP by maximizing the log marginal likelihood over several restarts.

    The first restart starts from ``warm_start`` (or the defaults); the rest
    start from random perturbations of it. The best end point over all
    restarts, including the starting points themselves, is kept.

    Raises:
        InvalidDataError: if inputs or targets are empty or non-finite.
        NumericalError: if the final kernel matrix cannot be factorized.
    """
    X = np.asarray(train_inputs, dtype=float)
    y = np.asarray(train_targets, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise InvalidDataError(f"need n >= 1 matching rows, got X {X.shape} and y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidDataError("training inputs and targets must be finite")
    rng = np.random.default_rng(rng)
    d = X.shape[1]
    ys, mean, std = _standardize(y)

    base = warm_start if warm_start is not None and warm_start.dim == d else default_hyperparams(d, noise_variance)
    theta0 = _pack(GPHyperparams(base.lengthscales, base.signal_variance, noise_variance, base.constant_mean))
    log_ls = np.log(LENGTHSCALE_BOUNDS)
    log_sf = np.log(SIGNAL_VARIANCE_BOUNDS)
    bounds = [tuple(log_ls)] * d + [tuple(log_sf), CONSTANT_MEAN_BOUNDS]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    starts = [np.clip(theta0, lo, hi)]
    for _ in range(max(num_restarts, 1) - 1):
        t = theta0.copy()
        t[:d] += rng.normal(0.0, 0.75, size=d)
        t[d] += rng.uniform(-0.7, 0.7)
        t[d + 1] = rng.normal(0.0, 0.3)
        starts.append(np.clip(t, lo, hi))

    best_theta, best_val = None, np.inf
    for t0 in starts:
        f0, _ = _neg_mll_and_grad(t0, X, ys, noise_variance)
        if f0 < best_val:
            best_theta, best_val = t0, f0
        res = minimize(
            _neg_mll_and_grad,
            t0,
            args=(X, ys, noise_variance),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": maxiter},
        )
        if np.all(np.isfinite(res.x)) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, lo, hi), float(res.fun)
    hp = _unpack(best_theta, noise_variance)
    return GPModel.build(hp, X, ys, mean, std)


def _posterior_std(model: GPModel, X: np.ndarray, full_cov: bool):
    hp = model.hyperparams
    if model.num_train:
        Ks = matern52(X, model.train_inputs, hp.lengthscales, hp.signal_variance)
        mean = hp.constant_mean + Ks @ model.alpha
        V = sla.solve_triangular(model.chol, Ks.T, lower=True)
    else:
        mean = np.full(X.shape[0], hp.constant_mean)
        V = np.zeros((0, X.shape[0]))
    if full_cov:
        cov = matern52(X, X, hp.lengthscales, hp.signal_variance)
        if V.shape[0]:
            # lower triangle of K** - V^T V, then mirrored
            cov = blas.dsyrk(-1.0, V, beta=1.0, c=cov, trans=1, lower=1, overwrite_c=1)
            cov = np.tril(cov) + np.tril(cov, -1).T
        else:
            cov = 0.5 * (cov + cov.T)
    else:
        cov = np.maximum(hp.signal_variance - np.sum(V * V, axis=0), 0.0)
    return mean, cov


def _check_inputs(model: GPModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, model.hyperparams.dim) if X.size else np.empty((0, model.hyperparams.dim))
    if X.shape[1] != model.hyperparams.dim:
        raise InvalidArgumentError(f"expected {model.hyperparams.dim} input columns, got {X.shape[1]}")
    return X


def posterior(model: GPModel, X, full_cov: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and covariance of the latent function, original scale.

    With ``full_cov=False`` the second value is the vector of variances.
    """
    X = _check_inputs(model, X)
    mean, cov = _posterior_std(model, X, full_cov)
    return model.target_mean + model.target_std * mean, cov * model.target_std**2


def sample_joint(model: GPModel, X, rng: np.random.Generator | int | None, count: int = 1) -> np.ndarray:
    """Exact joint posterior draws at the rows of ``X``; shape ``(count, r)``."""
    X = _check_inputs(model, X)
    rng = np.random.default_rng(rng)
    mean, cov = _posterior_std(model, X, full_cov=True)
    L = _cholesky(cov)
    z = rng.standard_normal((count, X.shape[0]))
    f = mean[None, :] + z @ L.T
    return model.target_mean + model.target_std * f


@dataclass(frozen=True)
class RFFSample:
    """One approximate function draw as a finite cosine expansion."""

    frequencies: np.ndarray
    phases: np.ndarray
    weights: np.ndarray
    hyperparams: GPHyperparams
    target_mean: float = 0.0
    target_std: float = 1.0

    @property
    def num_features(self) -> int:
        return self.weights.shape[0]


def rff_features(X: np.ndarray, frequencies: np.ndarray, phases: np.ndarray, signal_variance: float) -> np.ndarray:
    scale = math.sqrt(2.0 * signal_variance / frequencies.shape[0])
    return scale * np.cos(X @ frequencies.T + phases)


def sample_matern52_spectrum(lengthscales, num_features: int, rng: np.random.Generator) -> np.ndarray:
    """Frequencies from the Matérn-5/2 spectral density (a Student-t with 5 dof)."""
    ls = np.asarray(lengthscales, dtype=float)
    g = rng.standard_normal((num_features, ls.shape[0]))
    u = rng.chisquare(5.0, size=num_features)
    return g * np.sqrt(5.0 / u)[:, None] / ls[None, :]


class RFFPosterior:
    """Weight-space posterior for a fixed random Fourier basis.

    The basis is drawn once; each ``draw`` returns a fresh function sample by
    pathwise conditioning of prior weights on the training window.
    """

    def __init__(self, model: GPModel, num_features: int, rng: np.random.Generator | int | None):
        if num_features < 1:
            raise InvalidArgumentError("num_features must be >= 1")
        rng = np.random.default_rng(rng)
        hp = model.hyperparams
        self.model = model
        self.frequencies = sample_matern52_spectrum(hp.lengthscales, num_features, rng)
        self.phases = rng.uniform(0.0, 2.0 * math.pi, size=num_features)
        n = model.num_train
        if n:
            self._phi = rff_features(model.train_inputs, self.frequencies, self.phases, hp.signal_variance)
            A = self._phi @ self._phi.T
            A[np.diag_indices_from(A)] += hp.noise_variance
            self._chol = _cholesky(A)
            self._resid = model.train_targets - hp.constant_mean

    def draw(self, rng: np.random.Generator | int | None) -> RFFSample:
        rng = np.random.default_rng(rng)
        hp = self.model.hyperparams
        w = rng.standard_normal(self.frequencies.shape[0])
        if self.model.num_train:
            eps = rng.normal(0.0, math.sqrt(hp.noise_variance), size=self.model.num_train)
            v = sla.cho_solve((self._chol, True), self._resid - self._phi @ w - eps)
            w = w + self._phi.T @ v
        return RFFSample(self.frequencies, self.phases, w, hp, self.model.target_mean, self.model.target_std)


def draw_rff(model: GPModel, num_features: int, rng: np.random.Generator | int | None) -> RFFSample:
    """Draw one approximate posterior function sample using random Fourier features."""
    rng = np.random.default_rng(rng)
    return RFFPosterior(model, num_features, rng).draw(rng)


def eval_rff(sample: RFFSample, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    d = sample.frequencies.shape[1]
    if X.size == 0:
        return np.empty(0)
    X = X.reshape(-1, d)
    phi = rff_features(X, sample.frequencies, sample.phases, sample.hyperparams.signal_variance)
    f = sample.hyperparams.constant_mean + phi @ sample.weights
    return sample.target_mean + sample.target_std * f
