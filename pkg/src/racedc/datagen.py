"""Synthetic batched data for the linear and nonlinear simulation designs.

Every batch draws from its own random stream keyed on ``(seed, batch_id)``,
so a batch is reproducible no matter how many batches are generated or in
which order.
"""

from dataclasses import dataclass, field

import numpy as np

_ROOT_STREAM = 0
_BATCH_STREAM = 1


@dataclass(frozen=True)
class CovarianceSpec:
    kind: str = "ar1"  # "ar1" or "equicorrelated"
    rho: float = 0.5

    def __post_init__(self):
        if self.kind not in ("ar1", "equicorrelated"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")


@dataclass(frozen=True)
class LinearModelSpec:
    beta: np.ndarray
    noise_var: float = 1.0
    cov: CovarianceSpec = field(default_factory=CovarianceSpec)
    mean_mode: str = "identical"  # or "batch_means"

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")
        if self.mean_mode not in ("identical", "batch_means"):
            raise ValueError(f"unknown mean_mode {self.mean_mode!r}")

    @property
    def p(self):
        return self.beta.size


@dataclass(frozen=True)
class NonlinearModelSpec:
    """Model ``y = (x'beta + 2)^2 + noise``."""

    beta: np.ndarray
    noise_var: float = 1.0
    cov: CovarianceSpec = field(default_factory=CovarianceSpec)

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.noise_var < 0:
            raise ValueError("noise_var must be nonnegative")

    @property
    def p(self):
        return self.beta.size


@dataclass(frozen=True)
class DataBatch:
    X: np.ndarray
    y: np.ndarray
    batch_id: int = 0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if y.size < 1:
            raise ValueError("a batch needs at least one row")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def gen_covariance(spec, p):
    if p < 1:
        raise ValueError("p must be at least 1")
    idx = np.arange(p)
    if spec.kind == "ar1":
        return spec.rho ** np.abs(idx[:, None] - idx[None, :]).astype(float)
    S = np.full((p, p), float(spec.rho))
    np.fill_diagonal(S, 1.0)
    return S


def _batch_rng(seed, batch_id):
    return np.random.default_rng(np.random.SeedSequence([seed, _BATCH_STREAM, batch_id]))


def _gaussian_rows(rng, m, chol, mean):
    Z = rng.standard_normal((m, chol.shape[0]))
    return mean + Z @ chol.T


def _batch_means(N, p, mean_mode, seed):
    if mean_mode == "identical":
        return np.zeros((N, p))
    root = np.random.default_rng(np.random.SeedSequence([seed, _ROOT_STREAM]))
    return root.standard_normal((N, p))


def gen_linear_batches(spec, N, m, seed):
    """N batches of m rows from ``y = X beta + eps``."""
    if N < 1 or m < 1:
        raise ValueError("N and m must be positive")
    p = spec.p
    chol = np.linalg.cholesky(gen_covariance(spec.cov, p))
    means = _batch_means(N, p, spec.mean_mode, seed)
    sd = np.sqrt(spec.noise_var)
    batches = []
    for j in range(N):
        rng = _batch_rng(seed, j)
        X = _gaussian_rows(rng, m, chol, means[j])
        eps = rng.standard_normal(m)
        batches.append(DataBatch(X, X @ spec.beta + sd * eps, j))
    return batches


def shifted_square(X, beta):
    """Regression function ``(x'beta + 2)^2`` applied rowwise."""
    return (X @ beta + 2.0) ** 2


def shifted_square_jac(X, beta):
    return (2.0 * (X @ beta + 2.0))[:, None] * X


def linear_f(X, beta):
    return X @ beta


def linear_jac(X, beta):
    return np.asarray(X, dtype=float)


def gen_nonlinear_batches(spec, N, m, seed):
    """N batches of m rows from ``y = (x'beta + 2)^2 + eps``."""
    if N < 1 or m < 1:
        raise ValueError("N and m must be positive")
    p = spec.p
    chol = np.linalg.cholesky(gen_covariance(spec.cov, p))
    sd = np.sqrt(spec.noise_var)
    zero = np.zeros(p)
    batches = []
    for j in range(N):
        rng = _batch_rng(seed, j)
        X = _gaussian_rows(rng, m, chol, zero)
        eps = rng.standard_normal(m)
        batches.append(DataBatch(X, shifted_square(X, spec.beta) + sd * eps, j))
    return batches


def pool(batches):
    """Concatenate batches into one (only the full-data benchmark does this)."""
    X = np.vstack([b.X for b in batches])
    y = np.concatenate([b.y for b in batches])
    return DataBatch(X, y, -1)
