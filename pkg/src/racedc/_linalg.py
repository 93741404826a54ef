"""Small dense linear-algebra helpers shared by the estimators.

Everything here assumes p is modest (tens of columns), so direct O(p^3)
factorizations are used throughout.
"""

import numpy as np

COND_LIMIT = 1e12


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system is singular or too ill-conditioned to trust."""

    def __init__(self, message, condition_number=np.inf):
        super().__init__(message)
        self.condition_number = condition_number


def condition_number(A):
    with np.errstate(all="ignore"):
        c = np.linalg.cond(A)
    if not np.isfinite(c):
        return np.inf
    return float(c)


def checked_solve(A, b, what="system", cond_limit=COND_LIMIT):
    """Solve ``A x = b``, refusing when cond(A) exceeds ``cond_limit``."""
    c = condition_number(A)
    if c > cond_limit:
        raise SingularSystemError(
            f"{what} is singular or ill-conditioned (cond={c:.3g})", c)
    return np.linalg.solve(A, b)


def sym_eig_desc(A):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Each eigenvector is signed so that its first nonzero component is
    positive, which makes the basis reproducible across platforms.
    """
    A = 0.5 * (A + A.T)
    vals, vecs = np.linalg.eigh(A)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for k in range(vecs.shape[1]):
        col = vecs[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            vecs[:, k] = -col
    return vals, vecs
