"""Global race estimates: weighted least squares over projected records.

``race_linear`` averages the closed-form solution over R independent
projection draws. ``race_nonlinear`` runs the coordinator's Gauss-Newton
iteration on compressed worker summaries, one step per communication round.
"""

from dataclasses import dataclass, field

import numpy as np

from ._linalg import COND_LIMIT, condition_number
from .local_estimators import ConvergenceError
from .remodel import (
    LinearDesign, build_H, draw_projections, nonlinear_compress, nonlinear_static,
    summarize_linear,
)

MAX_SKIP_FRACTION = 0.10


class C2ViolationError(np.linalg.LinAlgError):
    """The weighted outer-product matrix of the records is not positive definite."""

    def __init__(self, message, condition_number=np.inf):
        super().__init__(message)
        self.condition_number = condition_number


class RaceFailure(RuntimeError):
    pass


@dataclass
class GlobalEstimate:
    beta: np.ndarray
    method: str
    R_used: int = 1
    iterations: int = 0
    condition_number: float = 1.0
    jittered: bool = False
    skipped: int = 0
    info: dict = field(default_factory=dict, repr=False)


def gral_solve_arrays(U, z, w, jitter=False):
    """Solve ``(sum w U U') b = sum w U z``; returns (beta, cond, jittered)."""
    U = np.atleast_2d(U)
    N, p = U.shape
    if N < p:
        raise C2ViolationError(f"only {N} records for {p} unknowns")
    Uw = U * w[:, None]
    A = Uw.T @ U
    b = Uw.T @ z
    cond = condition_number(A)
    jittered = False
    if cond > COND_LIMIT:
        if not jitter:
            raise C2ViolationError(
                f"record matrix sum w U U' is singular or ill-conditioned (cond={cond:.3g}); "
                "the projected regression is not identifiable", cond)
        A = A + 1e-10 * np.trace(A) / p * np.eye(p)
        cond = condition_number(A)
        jittered = True
    return np.linalg.solve(A, b), cond, jittered


def gral_solve(records, jitter=False):
    U = np.array([r.U for r in records], dtype=float)
    z = np.array([r.z for r in records], dtype=float)
    w = np.array([r.w for r in records], dtype=float)
    beta, cond, jit = gral_solve_arrays(U, z, w, jitter)
    return GlobalEstimate(beta, "race", 1, 0, cond, jit)


def threshold(estimate, t, mode="hard"):
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    b = estimate.beta
    if mode == "hard":
        out = np.where(np.abs(b) > t, b, 0.0)
    elif mode == "soft":
        out = np.sign(b) * np.maximum(np.abs(b) - t, 0.0)
    else:
        raise ValueError(f"unknown threshold mode {mode!r}")
    return GlobalEstimate(out, f"{estimate.method}_{mode}", estimate.R_used,
                          estimate.iterations, estimate.condition_number,
                          estimate.jittered, estimate.skipped)


def default_threshold(p, n):
    return float(np.sqrt(np.log(p) / n))


def race_from_summaries(summaries, adj, proj, M_list=None, stacked=False, jitter=False):
    """Coordinator half of the linear race: draws directions, solves, averages."""
    design = LinearDesign(summaries, adj, M_list)
    N, p = len(design), design.p
    if stacked:
        parts = [design.records(draw_projections(p, proj, N, r)) for r in range(proj.R)]
        U = np.vstack([q[0] for q in parts])
        z = np.concatenate([q[1] for q in parts])
        w = np.concatenate([q[2] for q in parts])
        beta, cond, jit = gral_solve_arrays(U, z, w, jitter)
        return GlobalEstimate(beta, "race_stacked", proj.R, 0, cond, jit)

    betas, conds = [], []
    jit_any = False
    skipped = 0
    for r in range(proj.R):
        U, z, w = design.records(draw_projections(p, proj, N, r))
        try:
            beta, cond, jit = gral_solve_arrays(U, z, w, jitter)
        except C2ViolationError:
            skipped += 1
            continue
        betas.append(beta)
        conds.append(cond)
        jit_any |= jit
    if not betas or skipped > MAX_SKIP_FRACTION * proj.R:
        raise RaceFailure(f"{skipped} of {proj.R} projection draws violated C2")
    return GlobalEstimate(np.mean(betas, axis=0), "race", len(betas), 0,
                          float(max(conds)), jit_any, skipped)


def race_linear(batches, fits, adj, proj, M_list=None, stacked=False, jitter=False):
    """Race estimate for the linear model from local fits.

    ``stacked=True`` solves one regression over all N*R records instead of
    averaging R separate solutions (an experimental variant).
    """
    if M_list is None:
        summaries = [summarize_linear(b, f, adj) for b, f in zip(batches, fits)]
    else:
        summaries = [summarize_linear(b, f, adj, M) for b, f, M in zip(batches, fits, M_list)]
    return race_from_summaries(summaries, adj, proj, M_list, stacked, jitter)


# ---------------------------------------------------------------- nonlinear

class NonlinearAggregator:
    """Coordinator state for the nonlinear race.

    Directions are drawn once and kept for every round, so the iteration is
    Gauss-Newton on one fixed objective (the R projected regressions summed).
    """

    def __init__(self, statics, proj, weight_mode="ridge_sigma"):
        N = len(statics)
        p = statics[0].Hy.size
        self.N, self.p, self.R = N, p, proj.R
        self.etas = np.stack([draw_projections(p, proj, N, r) for r in range(proj.R)])
        Hy = np.stack([s.Hy for s in statics])
        self.zhat = np.einsum("rja,ja->rj", self.etas, Hy)
        if weight_mode == "unit":
            self.w = np.ones((proj.R, N))
        else:
            S = np.stack([s.S for s in statics])
            s2 = np.einsum("rja,jab,rjb->rj", self.etas, S, self.etas)
            if np.any(~np.isfinite(s2) | (s2 <= 0)):
                raise ValueError("nonpositive record variance")
            self.w = 1.0 / s2

    def _pieces(self, compressed):
        Hf = np.stack([c.Hf for c in compressed])
        HJ = np.stack([c.HJ for c in compressed])
        W = np.einsum("jab,rja->rjb", HJ, self.etas)  # (1/m) fdot' H' eta
        resid = self.zhat - np.einsum("rja,ja->rj", self.etas, Hf)
        return W, resid

    def normal_equations(self, compressed):
        W, resid = self._pieces(compressed)
        Ww = W * self.w[:, :, None]
        A = np.einsum("rja,rjb->ab", Ww, W)
        g = np.einsum("rja,rj->a", Ww, resid)
        return A, g

    def update(self, compressed, beta):
        A, g = self.normal_equations(compressed)
        cond = condition_number(A)
        if cond > COND_LIMIT:
            raise C2ViolationError(
                f"sum w W W' is singular or ill-conditioned (cond={cond:.3g})", cond)
        return beta + np.linalg.solve(A, g), cond

    def estimating_residual(self, compressed):
        _, g = self.normal_equations(compressed)
        return float(np.linalg.norm(g / (self.N * self.R)))


def race_nonlinear(batches, fits, f, grad_f, adj, proj, init=None, tol=1e-4, max_outer=25):
    """Iterative race estimate for ``y = f(X, beta) + noise``.

    Each outer step: workers evaluate ``H f`` and ``H fdot`` at the current
    iterate, the coordinator takes one Gauss-Newton step on the projected
    least squares objective. Stops when no component moves by ``tol`` or more.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Hs = [build_H(b, ft, grad_f, adj.k1) for b, ft in zip(batches, fits)]
    agg = NonlinearAggregator([nonlinear_static(b, H) for b, H in zip(batches, Hs)],
                              proj, adj.weight_mode)
    beta = np.array(fits[0].beta_hat if init is None else init, dtype=float)
    if not np.all(np.isfinite(beta)):
        raise ValueError("initial value is not finite")
    cond = np.nan
    for t in range(1, max_outer + 1):
        comp = [nonlinear_compress(b, H, f, grad_f, beta) for b, H in zip(batches, Hs)]
        new, cond = agg.update(comp, beta)
        change = float(np.max(np.abs(new - beta)))
        beta = new
        if change < tol:
            return GlobalEstimate(beta, "race_nonlinear", proj.R, t, cond,
                                  info={"aggregator": agg, "H": Hs})
    err = ConvergenceError(f"nonlinear race did not converge in {max_outer} rounds "
                           f"(last change {change:.3g})", change)
    err.estimate = GlobalEstimate(beta, "race_nonlinear", proj.R, max_outer, cond,
                                  info={"aggregator": agg, "H": Hs})
    raise err


def solver_residual_check(estimate, batches, f, grad_f, beta=None):
    """Norm of the averaged estimating equation of the projected objective."""
    agg, Hs = estimate.info["aggregator"], estimate.info["H"]
    beta = estimate.beta if beta is None else np.asarray(beta, dtype=float)
    comp = [nonlinear_compress(b, H, f, grad_f, beta) for b, H in zip(batches, Hs)]
    return agg.estimating_residual(comp)
