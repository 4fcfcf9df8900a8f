"""Dense linear-algebra kernel: rank decisions, projectors, factor roots, norms.

Every operation is a pure function on ndarrays.  Matrices are real,
row-major, with subspace bases stored as rows.  Exact-arithmetic statements
from the underlying math become threshold decisions controlled by a
:class:`Tolerance`.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DegenerateStateError, PreconditionError, SizeLimitError

# Largest middle dimension accepted by cauchy_binet_check; C(12, 6) = 924
# subsets is still instant, 13 starts to be pointless.
_CAUCHY_BINET_MAX_M = 12


@dataclass(frozen=True)
class Tolerance:
    """Numerical thresholds used by every rank/residual decision.

    rank_tol
        Singular values below ``rank_tol`` times the largest are treated
        as zero.
    residual_tol
        Threshold for membership / annihilation / orthonormality residuals.
    """

    rank_tol: float = 1e-9
    residual_tol: float = 1e-8

    def __post_init__(self):
        if not (0 < self.rank_tol < 1):
            raise ValueError(f"rank_tol must be in (0, 1), got {self.rank_tol}")
        if self.residual_tol <= 0:
            raise ValueError(f"residual_tol must be positive, got {self.residual_tol}")


DEFAULT_TOL = Tolerance()


def as_matrix(m) -> np.ndarray:
    """Coerce to a 2-d float array and reject non-finite entries."""
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.size and not np.isfinite(a).all():
        raise ValueError("matrix contains NaN or Inf entries")
    return a


def rank(m, tol: Tolerance = DEFAULT_TOL) -> int:
    """Number of singular values at least ``rank_tol`` times the largest.

    A matrix with no rows (or all-zero entries) has rank 0.
    """
    a = as_matrix(m)
    if a.shape[0] == 0 or a.shape[1] == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s >= tol.rank_tol * s[0]))


def orthonormalize(m, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis (as rows) of the row span of ``m``.

    Row count of the result equals the numerical rank; an all-zero or
    0-row input yields a 0-row matrix representing the zero space.
    """
    a = as_matrix(m)
    if a.shape[0] == 0:
        return a.reshape(0, a.shape[1])
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((0, a.shape[1]))
    r = int(np.count_nonzero(s >= tol.rank_tol * s[0]))
    return vt[:r].copy()


def is_orthonormal(u, tol: Tolerance = DEFAULT_TOL) -> bool:
    """True iff the rows of ``u`` form an orthonormal family."""
    a = as_matrix(u)
    if a.shape[0] == 0:
        return True
    gram = a @ a.T
    return bool(np.abs(gram - np.eye(a.shape[0])).max() <= tol.residual_tol)


def projector(u, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthogonal projection matrix onto the row span of orthonormal ``u``.

    Returns the sum of outer products of the rows; symmetric, idempotent,
    with trace equal to the row count.  Raises if the rows are not
    orthonormal within ``residual_tol``.
    """
    a = as_matrix(u)
    if not is_orthonormal(a, tol):
        raise PreconditionError("projector requires orthonormal rows")
    if a.shape[0] == 0:
        return np.zeros((a.shape[1], a.shape[1]))
    return a.T @ a


def inv_sqrt_factor(x, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Symmetric positive-definite root M with M^T M = X^{-1}.

    Requires X symmetric positive definite (smallest eigenvalue above
    ``rank_tol`` times the largest); raises DegenerateStateError otherwise.
    The symmetric root is chosen for determinism across runs.
    """
    a = as_matrix(x)
    if a.shape[0] != a.shape[1]:
        raise DegenerateStateError("inv_sqrt_factor requires a square matrix")
    if np.abs(a - a.T).max() > tol.residual_tol * max(1.0, np.abs(a).max()):
        raise DegenerateStateError("inv_sqrt_factor requires a symmetric matrix")
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    if w[-1] <= 0 or w[0] <= tol.rank_tol * w[-1]:
        raise DegenerateStateError(
            f"matrix is not positive definite (eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}])"
        )
    return (v * (1.0 / np.sqrt(w))) @ v.T


def spectral_norm(m) -> float:
    """Largest singular value; 0.0 for empty or all-zero input."""
    a = as_matrix(m)
    if a.shape[0] == 0 or a.shape[1] == 0:
        return 0.0
    return float(np.linalg.svd(a, compute_uv=False)[0])


def cauchy_binet_check(a, b) -> tuple[float, float]:
    """Evaluate det(AB) two ways: directly and as the sum over column subsets.

    A is l-by-m and B is m-by-l.  Returns ``(det(AB), subset_sum)`` where the
    subset sum runs over all l-element subsets I of the middle index set,
    adding det(A_I) * det(B_I).  Test utility for the determinant machinery;
    m is capped at 12 because the sum is combinatorial.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    l, m = a.shape
    mb, lb = b.shape
    if m != mb or l != lb:
        raise ValueError(f"incompatible shapes {a.shape} x {b.shape}")
    if m > _CAUCHY_BINET_MAX_M:
        raise SizeLimitError(f"middle dimension {m} exceeds limit {_CAUCHY_BINET_MAX_M}")
    lhs = float(np.linalg.det(a @ b))
    rhs = 0.0
    for idx in combinations(range(m), l):
        cols = list(idx)
        rhs += float(np.linalg.det(a[:, cols])) * float(np.linalg.det(b[cols, :]))
    return lhs, rhs
