"""Small dense linear algebra helpers.

Matrices are plain 2-D ``numpy`` arrays. Two things live here: the SPD solve
behind every Levenberg-Marquardt step and extraction of the algebraically
largest real eigenvalue of a (linearised) Jacobian.
"""

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import NoConvergence, NotPositiveDefinite

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200_000


def as_matrix(a, square=False):
    """Validate a dense matrix: 2-D, finite, optionally square."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if square and a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def cholesky_solve(A, b, check_symmetric=True):
    """Solve ``A x = b`` for symmetric positive-definite ``A``.

    Raises:
        NotPositiveDefinite: if the factorisation meets a non-positive pivot.
    """
    A = as_matrix(A, square=True)
    b = np.asarray(b, dtype=float)
    if check_symmetric:
        scale = np.abs(A).max(initial=0.0)
        if np.abs(A - A.T).max(initial=0.0) > 1e-12 * max(scale, 1.0):
            raise ValueError("matrix is not symmetric")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    # cho_factor only fails on a non-positive pivot, never on a tiny one
    if np.any(np.diag(factor[0]) <= 0.0):
        raise NotPositiveDefinite("zero pivot")
    return scipy.linalg.cho_solve(factor, b, check_finite=False)


def gershgorin_bounds(J):
    """Lower and upper Gershgorin bounds on the real parts of the spectrum."""
    if scipy.sparse.issparse(J):
        J = scipy.sparse.csr_matrix(J)
        diag = J.diagonal()
        radius = np.asarray(abs(J).sum(axis=1)).ravel() - np.abs(diag)
    else:
        diag = np.diag(J)
        radius = np.abs(J).sum(axis=1) - np.abs(diag)
    return float(np.min(diag - radius)), float(np.max(diag + radius))


def _start_vector(n):
    # positive start overlaps the nodeless ground state of Sturm-Liouville operators
    v = np.ones(n) + 0.01 * np.cos(np.arange(n))
    return v / np.linalg.norm(v)


def largest_real_eigenvalue(J, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, method="power"):
    """Algebraically largest real eigenvalue of ``J`` and a unit eigenvector.

    ``method="power"`` runs power iteration on ``J + s I`` with the Gershgorin
    shift ``s = max(0, -g_min) + 1``, which makes every eigenvalue of a
    symmetric ``J`` positive so the dominant one is the rightmost.

    ``method="shift_invert"`` runs power iteration on ``(s I - J)^-1`` with
    ``s`` one past the upper Gershgorin bound. Same fixed point, but the
    convergence factor no longer degrades like ``h**2`` on fine grids; use it
    for FD Jacobians with hundreds of unknowns or more. Sparse input is only
    accepted here.

    The iteration stops once successive Rayleigh estimates differ by at most
    ``tol`` and the geometric tail predicted from the last two differences is
    also below ``tol``.

    Raises:
        NoConvergence: after ``max_iter`` iterations.
    """
    if method == "power":
        J = as_matrix(J, square=True)
        g_min, _ = gershgorin_bounds(J)
        shift = max(0.0, -g_min) + 1.0

        def step(v):
            return J @ v + shift * v

    elif method == "shift_invert":
        if not scipy.sparse.issparse(J):
            J = as_matrix(J, square=True)
        _, g_max = gershgorin_bounds(J)
        shift = g_max + 1.0
        n = J.shape[0]
        if scipy.sparse.issparse(J):
            lu = scipy.sparse.linalg.splu(
                scipy.sparse.csc_matrix(shift * scipy.sparse.identity(n) - J)
            )
            step = lu.solve
        else:
            lu = scipy.linalg.lu_factor(shift * np.eye(n) - J, check_finite=False)

            def step(v):
                return scipy.linalg.lu_solve(lu, v, check_finite=False)

    else:
        raise ValueError(f"unknown method {method!r}")

    v = _start_vector(J.shape[0])
    lam = float(v @ (J @ v))
    prev_diff = None
    for _ in range(max_iter):
        w = step(v)
        v = w / np.linalg.norm(w)
        new = float(v @ (J @ v))
        diff = abs(new - lam)
        lam = new
        if diff <= tol:
            if diff == 0.0 or prev_diff is None:
                break
            ratio = min(diff / prev_diff, 0.999999) if prev_diff > 0 else 0.0
            if diff * ratio / (1.0 - ratio) <= tol:
                break
        prev_diff = diff
    else:
        raise NoConvergence(max_iter, estimate=lam)
    return lam, v
