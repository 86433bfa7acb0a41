import numpy as np
import pytest
import scipy.sparse

from branchtrace.errors import NoConvergence, NotPositiveDefinite
from branchtrace.linalg import (as_matrix, cholesky_solve, gershgorin_bounds,
                                largest_real_eigenvalue)


def laplacian(n):
    h = 1.0 / n
    m = n - 1
    return (np.diag(-2.0 * np.ones(m)) + np.diag(np.ones(m - 1), 1)
            + np.diag(np.ones(m - 1), -1)) / h ** 2


def laplacian_top(n):
    h = 1.0 / n
    return -4.0 / h ** 2 * np.sin(np.pi * h / 2) ** 2


def test_cholesky_matches_dense_solve(rng):
    B = rng.standard_normal((8, 8))
    A = B @ B.T + 8 * np.eye(8)
    b = rng.standard_normal(8)
    assert np.allclose(cholesky_solve(A, b), np.linalg.solve(A, b), atol=1e-12)


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky_solve(np.diag([1.0, -1.0]), np.ones(2))


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky_solve(np.array([[2.0, 1.0], [0.0, 2.0]]), np.ones(2))


def test_as_matrix_validation():
    with pytest.raises(ValueError):
        as_matrix(np.ones(3))
    with pytest.raises(ValueError):
        as_matrix(np.ones((2, 3)), square=True)
    with pytest.raises(ValueError):
        as_matrix(np.array([[np.nan]]))


def test_gershgorin_contains_spectrum(rng):
    A = rng.standard_normal((6, 6))
    A = A + A.T
    lo, hi = gershgorin_bounds(A)
    ev = np.linalg.eigvalsh(A)
    assert lo <= ev.min() and ev.max() <= hi
    lo_s, hi_s = gershgorin_bounds(scipy.sparse.csr_matrix(A))
    assert (lo_s, hi_s) == pytest.approx((lo, hi))


@pytest.mark.parametrize("method", ["power", "shift_invert"])
def test_laplacian_top_eigenvalue(method):
    lam, v = largest_real_eigenvalue(laplacian(20), method=method)
    assert lam == pytest.approx(laplacian_top(20), abs=1e-6)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.all(v > 0) or np.all(v < 0)


def test_shift_invert_sparse_fine_grid():
    J = scipy.sparse.csr_matrix(laplacian(400))
    lam, _ = largest_real_eigenvalue(J, method="shift_invert")
    assert lam == pytest.approx(laplacian_top(400), abs=1e-6)


def test_power_iteration_picks_rightmost_not_largest_modulus():
    lam, _ = largest_real_eigenvalue(np.diag([-50.0, -3.0, 2.0]))
    assert lam == pytest.approx(2.0, abs=1e-8)


def test_power_iteration_reports_nonconvergence():
    with pytest.raises(NoConvergence):
        largest_real_eigenvalue(laplacian(50), max_iter=3)


def test_unknown_method():
    with pytest.raises(ValueError):
        largest_real_eigenvalue(np.eye(2), method="qr")
