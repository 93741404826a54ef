"""Competing divide-and-combine estimators and the full-data benchmark."""

from dataclasses import dataclass

import numpy as np

from ._linalg import SingularSystemError, checked_solve, sym_eig_desc
from .datagen import pool
from .local_estimators import (
    cv_select_ridge, hk_ridge_value, lasso_cv_fit, lasso_fit, nls_fit, ols_fit, pce_fit,
    ridge_fit,
)
from .remodel import residual_adjust, ridge_inverse


class DegenerateAggregateError(SingularSystemError):
    pass


@dataclass
class BaselineResult:
    beta: np.ndarray
    method: str
    rounds: int = 1


def simple_average(ra_fits, method="AV", rounds=1):
    """Plain 1/N average of (residual-adjusted) local estimates."""
    if len(ra_fits) == 0:
        raise ValueError("nothing to average")
    return BaselineResult(np.mean(np.asarray(ra_fits, dtype=float), axis=0), method, rounds)


def _matrix_weighted(betas, weights, what):
    A = np.sum(weights, axis=0)
    b = np.einsum("jab,jb->a", weights, betas)
    try:
        return checked_solve(A, b, what)
    except SingularSystemError as e:
        raise DegenerateAggregateError(str(e), e.condition_number) from None


def dc_lasso(fits, grams=None):
    """``(sum G_j)^{-1} sum G_j beta_j`` with ``G_j = X_j'X_j / m``."""
    grams = [f.gram for f in fits] if grams is None else grams
    betas = np.array([f.beta_hat for f in fits])
    return BaselineResult(_matrix_weighted(betas, np.asarray(grams), "aggregate Gram"),
                          "DC_lasso")


def ridge_weight(batch, fit):
    """``A_j = X_j'X_j + s_j I`` for a local ridge fit."""
    return batch.X.T @ batch.X + fit.tuning["s"] * np.eye(batch.p)


def dc_ridge(fits, A_list):
    """Same combination with ``A_j = X_j'X_j + s_j I``."""
    betas = np.array([f.beta_hat for f in fits])
    return BaselineResult(_matrix_weighted(betas, np.asarray(A_list), "aggregate ridge matrix"),
                          "DC_ridge")


def global_pca_basis(xtx_list, r, gap_tol=1e-10):
    """Coordinator step of the two-round PCE: eigenbasis of the summed X'X."""
    total = np.sum(xtx_list, axis=0)
    p = total.shape[0]
    if not 1 <= r <= p:
        raise ValueError(f"rank r={r} outside [1, {p}]")
    vals, vecs = sym_eig_desc(total)
    if r < p and vals[r - 1] - vals[r] < gap_tol * max(1.0, abs(vals[0])):
        raise DegenerateAggregateError(
            f"eigenvalues {r} and {r + 1} are (nearly) tied; the rank-{r} basis is not unique")
    return vecs[:, :r]


def dc_pce_from_summaries(ztz_list, zty_list, P_r):
    """Coordinator step of round two: ``P_r (sum Z'Z)^{-1} sum Z'y``."""
    try:
        gamma = checked_solve(np.sum(ztz_list, axis=0), np.sum(zty_list, axis=0),
                              "aggregate Z'Z")
    except SingularSystemError as e:
        raise DegenerateAggregateError(str(e), e.condition_number) from None
    return BaselineResult(P_r @ gamma, "DC_pce", rounds=2)


def dc_pce(batches, r):
    P_r = global_pca_basis([b.X.T @ b.X for b in batches], r)
    Zs = [b.X @ P_r for b in batches]
    return dc_pce_from_summaries([Z.T @ Z for Z in Zs],
                                 [Z.T @ b.y for Z, b in zip(Zs, batches)], P_r)


def adjusted_fits(batches, fits, k1):
    """Residual-adjust each local fit with ``M_j = (G_j + k1 I)^{-1}``."""
    return [residual_adjust(b, f, ridge_inverse(f.gram, k1)) for b, f in zip(batches, fits)]


def simple_average_ridge(batches, fits, k1=0.1):
    return simple_average(adjusted_fits(batches, fits, k1))


def simple_average_pce(batches, P_r, k1=0.1):
    """Average of adjusted local PCEs built on the broadcast basis ``P_r``."""
    fits = [pce_fit(b, P_r) for b in batches]
    return simple_average(adjusted_fits(batches, fits, k1), rounds=2)


def aee_nonlinear(fits, batches, grad_f):
    """Information-weighted combination ``(sum A_j)^{-1} sum A_j beta_j``.

    ``A_j = fdot' fdot`` evaluated at each local estimate.
    """
    A = []
    for f, b in zip(fits, batches):
        J = grad_f(b.X, f.beta_hat)
        A.append(J.T @ J)
    betas = np.array([f.beta_hat for f in fits])
    return BaselineResult(_matrix_weighted(betas, np.asarray(A), "aggregated information"),
                          "AEE")


def full_oracle(batches, method, *, k1=0.1, tuning="hk", r=None, f=None, grad_f=None,
                init=None, cv_seed=0, lam=None):
    """Estimator computed on the pooled data (benchmark, outside the protocol).

    Lasso, ridge and PCE variants are residual-adjusted on the pooled data
    with ``M = (X'X/n + k1 I)^{-1}``. For NLS, ``init`` may be a start vector
    or a callable taking the pooled batch.
    """
    data = pool(batches)
    if method == "ols":
        fit = ols_fit(data)
        return BaselineResult(fit.beta_hat, "Full")
    if method == "nls":
        fit = nls_fit(data, f, grad_f, init(data) if callable(init) else init)
        return BaselineResult(fit.beta_hat, "Full")
    if method == "lasso":
        fit = lasso_cv_fit(data, seed=cv_seed) if lam is None else lasso_fit(data, lam)
    elif method == "ridge":
        s = hk_ridge_value(data) if tuning == "hk" else cv_select_ridge(data, seed=cv_seed)
        fit = ridge_fit(data, s)
    elif method == "pce":
        P_r = global_pca_basis([data.X.T @ data.X], r)
        fit = pce_fit(data, P_r)
    else:
        raise ValueError(f"unknown method {method!r}")
    return BaselineResult(residual_adjust(data, fit, ridge_inverse(fit.gram, k1)), "Full")
