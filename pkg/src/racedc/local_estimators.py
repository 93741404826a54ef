"""Per-batch (biased) estimators: lasso, ridge, principal components, NLS, OLS."""

from dataclasses import dataclass, field

import numba
import numpy as np

from ._linalg import SingularSystemError, checked_solve, condition_number, sym_eig_desc

LASSO_TOL = 1e-10
LASSO_MAX_SWEEPS = 100_000
LASSO_KKT_TOL = 1e-10
# a fit that runs out of sweeps is still accepted at this subgradient accuracy
LASSO_KKT_ACCEPT = 1e-6
# CV only ranks grid points by held-out error, so its paths can be looser
CV_TOL = 1e-6
CV_KKT_TOL = 1e-5
CV_MAX_SWEEPS = 500


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=np.nan):
        super().__init__(message)
        self.residual = residual


@dataclass
class LocalFit:
    beta_hat: np.ndarray
    method: str
    gram: np.ndarray
    tuning: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    m: int = 0
    batch_id: int = 0


def gram_of(X):
    return X.T @ X / X.shape[0]


# ---------------------------------------------------------------- lasso

@numba.njit(cache=True)
def _cd_path(G, c, lams, b0, tol, kkt_tol, max_sweeps):
    # Covariance-form cyclic coordinate descent for
    #   (1/2) b'Gb - c'b + lam * |b|_1
    # which is the lasso objective with G = X'X/m, c = X'y/m.
    p = G.shape[0]
    L = lams.shape[0]
    out = np.zeros((L, p))
    sweeps = np.zeros(L, dtype=np.int64)
    b = b0.copy()
    Gb = G @ b
    for li in range(L):
        lam = lams[li]
        it = 0
        while it < max_sweeps:
            it += 1
            delta = 0.0
            for k in range(p):
                gkk = G[k, k]
                old = b[k]
                if gkk <= 0.0:
                    new = 0.0
                else:
                    rho = c[k] - Gb[k] + gkk * old
                    if rho > lam:
                        new = (rho - lam) / gkk
                    elif rho < -lam:
                        new = (rho + lam) / gkk
                    else:
                        new = 0.0
                d = new - old
                if d != 0.0:
                    for i in range(p):
                        Gb[i] += G[i, k] * d
                    b[k] = new
                    if abs(d) > delta:
                        delta = abs(d)
            if delta < tol:
                break
            if it % 10 == 0:
                # slow crawl on near-singular G: stop once the subgradient
                # conditions already hold to kkt_tol
                worst = 0.0
                for k in range(p):
                    s = c[k] - Gb[k]
                    if b[k] > 0.0:
                        v = abs(s - lam)
                    elif b[k] < 0.0:
                        v = abs(s + lam)
                    else:
                        v = abs(s) - lam
                    if v > worst:
                        worst = v
                if worst < kkt_tol:
                    break
        sweeps[li] = it
        out[li] = b
    return out, sweeps


def lasso_path(G, c, lams, beta0=None, tol=LASSO_TOL, max_sweeps=LASSO_MAX_SWEEPS,
               kkt_tol=LASSO_KKT_TOL, strict=True):
    """Warm-started solutions along ``lams`` (in the given order)."""
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    lams = np.ascontiguousarray(np.atleast_1d(lams), dtype=float)
    b0 = np.zeros(G.shape[0]) if beta0 is None else np.array(beta0, dtype=float)
    B, sweeps = _cd_path(G, c, lams, b0, tol, kkt_tol, max_sweeps)
    if strict and np.any(sweeps >= max_sweeps):
        for k in np.flatnonzero(sweeps >= max_sweeps):
            res = kkt_residual(G, c, B[k], lams[k])
            if res > LASSO_KKT_ACCEPT:
                raise ConvergenceError(
                    f"coordinate descent hit {max_sweeps} sweeps at lambda={lams[k]:.4g} "
                    f"(KKT residual {res:.3g})", res)
    return B


def kkt_residual(G, c, beta, lam):
    """Largest violation of the lasso subgradient conditions."""
    score = c - G @ beta
    active = beta != 0
    viol = np.where(active,
                    np.abs(score - lam * np.sign(beta)),
                    np.maximum(np.abs(score) - lam, 0.0))
    return float(viol.max()) if viol.size else 0.0


def lasso_lambda_max(X, y):
    return float(np.max(np.abs(X.T @ y)) / X.shape[0])


def lasso_fit(batch, lam, beta0=None, tol=LASSO_TOL):
    """Minimize ``(1/2m)|y - X b|^2 + lam |b|_1`` by coordinate descent."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    G = gram_of(batch.X)
    c = batch.X.T @ batch.y / batch.m
    beta = lasso_path(G, c, [lam], beta0=beta0, tol=tol)[0]
    return LocalFit(beta, "lasso", G, {"lambda": float(lam)},
                    {"kkt_residual": kkt_residual(G, c, beta, lam)},
                    batch.m, batch.batch_id)


def default_lambda_grid(X, y, n_lambda=50, ratio=None):
    """Geometric grid from lambda_max down; stops higher (1e-2) when m < p."""
    if ratio is None:
        ratio = 1e-2 if X.shape[0] < X.shape[1] else 1e-3
    lmax = lasso_lambda_max(X, y)
    if lmax <= 0:
        return np.array([0.0])
    return np.geomspace(lmax, ratio * lmax, n_lambda)


def fold_indices(m, folds, seed=0, batch_id=0):
    """Contiguous folds after a seeded shuffle of the rows."""
    if folds < 2:
        raise ValueError("need at least two folds")
    if m < folds:
        raise ValueError(f"cannot split {m} rows into {folds} folds")
    rng = np.random.default_rng([seed, batch_id % 2**32])
    return np.array_split(rng.permutation(m), folds)


def _cv_curve(batch, folds, seed, path_fn):
    parts = fold_indices(batch.m, folds, seed, batch.batch_id)
    errs = []
    for test in parts:
        train = np.setdiff1d(np.arange(batch.m), test, assume_unique=True)
        B = path_fn(batch.X[train], batch.y[train])
        resid = batch.y[test][None, :] - B @ batch.X[test].T
        errs.append(np.mean(resid ** 2, axis=1))
    return np.mean(errs, axis=0)


def _pick(grid, curve):
    # grid is descending, so the first minimizer is the largest tied value
    return float(grid[int(np.argmin(curve))])


def cv_select_lambda(batch, folds=5, grid=None, seed=0):
    """K-fold CV choice of the lasso penalty (ties go to the larger value)."""
    grid = default_lambda_grid(batch.X, batch.y) if grid is None else np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    if np.any(np.diff(grid) > 0):
        raise ValueError("lambda grid must be sorted in descending order")
    if grid.size == 1:
        return float(grid[0])

    def path(X, y):
        return lasso_path(gram_of(X), X.T @ y / X.shape[0], grid, tol=CV_TOL,
                          max_sweeps=CV_MAX_SWEEPS, kkt_tol=CV_KKT_TOL, strict=False)

    return _pick(grid, _cv_curve(batch, folds, seed, path))


def lasso_cv_fit(batch, folds=5, grid=None, seed=0):
    lam = cv_select_lambda(batch, folds, grid, seed)
    return lasso_fit(batch, lam)


# ---------------------------------------------------------------- ridge

def _ridge_solve(X, y, s):
    A = X.T @ X + s * np.eye(X.shape[1])
    return checked_solve(A, X.T @ y, "ridge system")


def ridge_fit(batch, s):
    """``(X'X + s I)^{-1} X'y``; ``s`` is on the unnormalized X'X scale."""
    if s < 0:
        raise ValueError("ridge value must be nonnegative")
    beta = _ridge_solve(batch.X, batch.y, s)
    return LocalFit(beta, "ridge", gram_of(batch.X), {"s": float(s)},
                    m=batch.m, batch_id=batch.batch_id)


def hk_ridge_value(batch):
    """Hoerl-Kennard ridge value ``p * sigma2 / |beta_ols|^2``."""
    m, p = batch.X.shape
    if m <= p:
        raise SingularSystemError(f"OLS residual variance needs m > p (m={m}, p={p})")
    beta = checked_solve(batch.X.T @ batch.X, batch.X.T @ batch.y, "batch Gram")
    rss = float(np.sum((batch.y - batch.X @ beta) ** 2))
    norm2 = float(beta @ beta)
    if norm2 == 0.0:
        raise ValueError("OLS estimate is identically zero; HK value undefined")
    return p * (rss / (m - p)) / norm2


def default_ridge_grid(X, n_grid=50):
    scale = np.trace(X.T @ X) / X.shape[1]
    return scale * np.geomspace(10.0, 1e-4, n_grid)


def cv_select_ridge(batch, folds=5, grid=None, seed=0):
    grid = default_ridge_grid(batch.X) if grid is None else np.asarray(grid, float)
    if grid.size == 0:
        raise ValueError("empty ridge grid")
    if np.any(np.diff(grid) > 0):
        raise ValueError("ridge grid must be sorted in descending order")
    if grid.size == 1:
        return float(grid[0])

    def path(X, y):
        XtX, Xty = X.T @ X, X.T @ y
        eye = np.eye(X.shape[1])
        out = np.empty((grid.size, X.shape[1]))
        for i, s in enumerate(grid):
            A = XtX + s * eye
            if condition_number(A) > 1e12:
                out[i] = np.nan
            else:
                out[i] = np.linalg.solve(A, Xty)
        return out

    curve = _cv_curve(batch, folds, seed, path)
    curve = np.where(np.isnan(curve), np.inf, curve)
    return _pick(grid, curve)


# ---------------------------------------------------------------- PCE

def pca_basis(gram, r):
    """Leading ``r`` eigenvectors of a symmetric matrix (descending)."""
    p = gram.shape[0]
    if not 1 <= r <= p:
        raise ValueError(f"rank r={r} outside [1, {p}]")
    vals, vecs = sym_eig_desc(gram)
    return vals, vecs[:, :r]


def pce_fit(batch, P_r):
    """Principal-component estimate ``P_r (Z'Z)^{-1} Z'y`` with ``Z = X P_r``."""
    P_r = np.asarray(P_r, dtype=float)
    if P_r.ndim == 1:
        P_r = P_r[:, None]
    r = P_r.shape[1]
    if np.max(np.abs(P_r.T @ P_r - np.eye(r))) > 1e-10:
        raise ValueError("P_r must have orthonormal columns")
    Z = batch.X @ P_r
    gamma = checked_solve(Z.T @ Z, Z.T @ batch.y, "projected design Z'Z")
    return LocalFit(P_r @ gamma, "pce", gram_of(batch.X), {"r": float(r)},
                    {"P_r": P_r}, batch.m, batch.batch_id)


# ---------------------------------------------------------------- NLS

def nls_fit(batch, f, grad_f, init, tol=1e-9, max_iter=100, max_halvings=40):
    """Gauss-Newton with step halving for ``min (1/2m) |y - f(X, b)|^2``.

    Stops once the objective gradient has norm <= ``tol``, or when a full
    step no longer changes the estimate. Raises ConvergenceError if no
    step-halved trial decreases the objective.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    X, y, m = batch.X, batch.y, batch.m
    beta = np.array(init, dtype=float)
    p = beta.size
    r = y - f(X, beta)
    obj = 0.5 * float(r @ r) / m
    it = 0
    converged = False
    while it < max_iter:
        J = grad_f(X, beta)
        grad = -J.T @ r / m
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        A = J.T @ J
        try:
            step = checked_solve(A, J.T @ r, "Gauss-Newton system")
        except SingularSystemError:
            step = checked_solve(A + 1e-8 * np.eye(p), J.T @ r, "jittered Gauss-Newton system")
        it += 1
        t = 1.0
        for _ in range(max_halvings):
            trial = beta + t * step
            r_trial = y - f(X, trial)
            obj_trial = 0.5 * float(r_trial @ r_trial) / m
            if np.isfinite(obj_trial) and obj_trial <= obj:
                break
            t *= 0.5
        else:
            if np.max(np.abs(step)) <= 1e-10 * (1.0 + np.max(np.abs(beta))):
                # already at the floating-point floor of the objective
                converged = True
                break
            raise ConvergenceError(
                f"Gauss-Newton could not decrease the objective (gradient norm "
                f"{np.linalg.norm(grad):.3g})", float(np.linalg.norm(grad)))
        moved = np.max(np.abs(trial - beta)) > 1e-14 * (1.0 + np.max(np.abs(beta)))
        beta, r, obj = trial, r_trial, obj_trial
        if not moved:
            converged = True
            break
    J = grad_f(X, beta)
    gnorm = float(np.linalg.norm(J.T @ r / m))
    if not converged and gnorm <= tol:
        converged = True
    return LocalFit(beta, "nls", gram_of(X), {},
                    {"iterations": it, "converged": converged, "grad_norm": gnorm,
                     "objective": obj},
                    m, batch.batch_id)


def shifted_square_init(batch):
    """Starting value for the ``(x'b + 2)^2`` model.

    For centred Gaussian rows the slope of y on x (with intercept) is 4*beta,
    because the quadratic term is uncorrelated with x.
    """
    X1 = np.column_stack([np.ones(batch.m), batch.X])
    coef = np.linalg.lstsq(X1, batch.y, rcond=None)[0]
    return coef[1:] / 4.0


# ---------------------------------------------------------------- OLS

def ols_fit(batches):
    """Least squares on one batch or on several concatenated batches."""
    if hasattr(batches, "X"):
        batches = [batches]
    XtX = sum(b.X.T @ b.X for b in batches)
    Xty = sum(b.X.T @ b.y for b in batches)
    m = sum(b.m for b in batches)
    beta = checked_solve(XtX, Xty, "pooled Gram")
    bid = batches[0].batch_id if len(batches) == 1 else -1
    return LocalFit(beta, "ols", XtX / m, {}, m=m, batch_id=bid)
