"""Residual adjustment and the projected ("pro-forma") regression records.

A worker turns its batch into a few p-sized summaries; the coordinator
projects each summary on a random direction eta to obtain one scalar
observation ``z`` of the unknown coefficient vector with covariate ``U`` and
weight ``w``. Raw rows never leave the worker.
"""

from dataclasses import dataclass

import numpy as np

from ._linalg import checked_solve


@dataclass(frozen=True)
class ProjectionSpec:
    distribution: str = "gaussian_invp"  # or "unit_sphere"
    R: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")
        if self.distribution not in ("gaussian_invp", "unit_sphere"):
            raise ValueError(f"unknown projection distribution {self.distribution!r}")


@dataclass(frozen=True)
class AdjustmentSpec:
    """How the adjustment matrix and the record weights are formed.

    ``inverse="ridge"`` uses ``(gram + k1 I)^{-1}``; ``inverse="exact"`` uses
    the plain inverse of the batch Gram matrix (which must be nonsingular).
    """

    k1: float = 0.1
    k2: float = 0.1
    weight_mode: str = "ridge_sigma"  # or "unit"
    inverse: str = "ridge"

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.weight_mode not in ("ridge_sigma", "unit"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.inverse not in ("ridge", "exact"):
            raise ValueError(f"unknown inverse {self.inverse!r}")


@dataclass(frozen=True)
class ProjectedRecord:
    z: float
    U: np.ndarray
    w: float
    batch_id: int = 0
    draw_id: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.w) and self.w > 0):
            raise ValueError(f"record weight must be positive, got {self.w}")
        if not np.all(np.isfinite(self.U)):
            raise ValueError("record covariate is not finite")


def ridge_inverse(gram, k1):
    if k1 <= 0:
        raise ValueError("k1 must be positive")
    p = gram.shape[0]
    return np.linalg.solve(gram + k1 * np.eye(p), np.eye(p))


def adjustment_matrix(gram, adj):
    if adj.inverse == "exact":
        p = gram.shape[0]
        return checked_solve(gram, np.eye(p), "batch Gram (exact inverse)")
    return ridge_inverse(gram, adj.k1)


def residual_adjust(batch, fit, M):
    """``beta + (1/m) M X'(y - X beta)``."""
    r = batch.y - batch.X @ fit.beta_hat
    return fit.beta_hat + M @ (batch.X.T @ r) / batch.m


# ---------------------------------------------------------------- projections

def _draw_stream(spec, draw_id):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, 2, draw_id]))


def draw_projections(p, spec, n_batches, draw_id):
    """Directions for batches ``0 .. n_batches-1`` in one projection draw.

    Row j depends only on (seed, j, draw_id): rows are consumed from the
    draw's stream in batch order, so asking for more batches never changes
    earlier rows.
    """
    E = _draw_stream(spec, draw_id).standard_normal((n_batches, p))
    if spec.distribution == "gaussian_invp":
        return E / np.sqrt(p)
    return E / np.linalg.norm(E, axis=1, keepdims=True)


def draw_projection(p, spec, batch_id, draw_id):
    if p < 1:
        raise ValueError("p must be at least 1")
    return draw_projections(p, spec, batch_id + 1, draw_id)[batch_id]


# ---------------------------------------------------------------- linear records

@dataclass(frozen=True)
class LinearSummary:
    """What a worker ships for the linear race: Gram, local and adjusted fits."""

    gram: np.ndarray
    beta_hat: np.ndarray
    beta_ra: np.ndarray
    batch_id: int = 0


def summarize_linear(batch, fit, adj, M=None):
    if M is None:
        M = adjustment_matrix(fit.gram, adj)
    return LinearSummary(fit.gram, fit.beta_hat, residual_adjust(batch, fit, M),
                         batch.batch_id)


def _record_parts(gram, M, adj):
    # U = gram M' eta ; sigma2 = eta' M (gram + k2 I) M' eta
    p = gram.shape[0]
    A = gram @ M.T
    B = M @ (gram + adj.k2 * np.eye(p)) @ M.T
    return A, 0.5 * (B + B.T)


def project_linear(batch, fit, spec, eta, M=None, draw_id=0):
    """One projected record from a batch and its local fit."""
    if M is None:
        M = adjustment_matrix(fit.gram, spec)
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta is not finite")
    beta_ra = residual_adjust(batch, fit, M)
    A, B = _record_parts(fit.gram, M, spec)
    U = A @ eta
    z = float(eta @ (beta_ra - fit.beta_hat) + U @ fit.beta_hat)
    w = _weight(float(eta @ B @ eta), spec.weight_mode)
    return ProjectedRecord(z, U, w, batch.batch_id, draw_id)


def _weight(sigma2, mode):
    if mode == "unit":
        return 1.0
    if not (np.isfinite(sigma2) and sigma2 > 0):
        raise ValueError(f"nonpositive record variance {sigma2}")
    return 1.0 / sigma2


class LinearDesign:
    """Stacked per-batch pieces that turn projection draws into records.

    Built once from the worker summaries; each projection draw then costs a
    few batched matrix-vector products.
    """

    def __init__(self, summaries, adj, M_list=None):
        self.adj = adj
        self.batch_ids = np.array([s.batch_id for s in summaries])
        N = len(summaries)
        p = summaries[0].gram.shape[0]
        self.p = p
        self.A = np.empty((N, p, p))
        self.B = np.empty((N, p, p))
        self.d = np.empty((N, p))
        self.bh = np.empty((N, p))
        for j, s in enumerate(summaries):
            M = adjustment_matrix(s.gram, adj) if M_list is None else M_list[j]
            self.A[j], self.B[j] = _record_parts(s.gram, M, adj)
            self.d[j] = s.beta_ra - s.beta_hat
            self.bh[j] = s.beta_hat

    def __len__(self):
        return self.A.shape[0]

    def records(self, etas):
        """Arrays ``(U, z, w)`` for one direction per batch (rows of ``etas``)."""
        U = np.einsum("jab,jb->ja", self.A, etas)
        z = np.sum(etas * self.d, axis=1) + np.sum(U * self.bh, axis=1)
        if self.adj.weight_mode == "unit":
            w = np.ones(len(self))
        else:
            s2 = np.einsum("ja,jab,jb->j", etas, self.B, etas)
            if np.any(~np.isfinite(s2) | (s2 <= 0)):
                raise ValueError("nonpositive record variance")
            w = 1.0 / s2
        return U, z, w

    def record_list(self, etas, draw_id=0):
        U, z, w = self.records(etas)
        return [ProjectedRecord(float(z[j]), U[j], float(w[j]), int(self.batch_ids[j]), draw_id)
                for j in range(len(self))]


# ---------------------------------------------------------------- nonlinear records

def build_H(batch, fit, grad_f, k1):
    """``(J'J/m + k1 I)^{-1} J'`` with J the Jacobian at the local estimate."""
    J = grad_f(batch.X, fit.beta_hat)
    Mh = ridge_inverse(J.T @ J / batch.m, k1)
    return Mh @ J.T


@dataclass(frozen=True)
class NonlinearRecord:
    z: float
    w: float
    batch_id: int = 0
    draw_id: int = 0


def project_nonlinear(batch, fit, H, eta, f, draw_id=0):
    m = batch.m
    f_hat = f(batch.X, fit.beta_hat)
    beta_ra = fit.beta_hat + H @ (batch.y - f_hat) / m
    z = float(eta @ (beta_ra - fit.beta_hat + H @ f_hat / m))
    s2 = float(eta @ H @ H.T @ eta) / m
    if not (np.isfinite(s2) and s2 > 0):
        raise ValueError(f"nonpositive record variance {s2}")
    return NonlinearRecord(z, 1.0 / s2, batch.batch_id, draw_id)


@dataclass(frozen=True)
class NonlinearStatic:
    """Round-independent worker summary: ``H y / m`` and ``H H' / m``."""

    Hy: np.ndarray
    S: np.ndarray
    batch_id: int = 0


@dataclass(frozen=True)
class NonlinearCompressed:
    """Per-round worker summary at the broadcast iterate.

    ``Hf = H f(X, b) / m`` and ``HJ = H fdot(X, b) / m``.
    """

    Hf: np.ndarray
    HJ: np.ndarray
    batch_id: int = 0


def nonlinear_static(batch, H):
    m = batch.m
    S = H @ H.T / m
    return NonlinearStatic(H @ batch.y / m, 0.5 * (S + S.T), batch.batch_id)


def nonlinear_compress(batch, H, f, grad_f, beta):
    m = batch.m
    return NonlinearCompressed(H @ f(batch.X, beta) / m,
                               H @ grad_f(batch.X, beta) / m,
                               batch.batch_id)
