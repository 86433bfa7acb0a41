"""Second-order finite differences on the uniform grid.

Unknowns are the interior values only; boundary values are closed by

* Bratu: ``u_0 = u_n = 0``
* Burgers, Dirichlet: ``u_0 = rho``, ``u_n = 0``
* Burgers, mixed: ``u_0 = u_1 + h phi`` (forward difference), ``u_n = 0``
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .errors import NonConvergence
from .linalg import largest_real_eigenvalue
from .lm import LmOptions, lm_solve
from .problems import Grid, branch_norm

# above this many unknowns Jacobians default to sparse storage
DENSE_LIMIT = 2500


@dataclass(frozen=True, eq=False)
class FdState:
    problem: object
    grid: Grid
    u: np.ndarray
    mu: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).ravel()
        if u.size != self.grid.n_interior:
            raise ValueError(f"expected {self.grid.n_interior} interior values, got {u.size}")
        object.__setattr__(self, "u", u)

    def full(self):
        """Values on every grid point (boundary closure applied), flattened."""
        return full_field(self.problem, self.grid, self.u, self.mu)


def full_field(problem, grid, u, mu):
    n, h = grid.n, grid.h
    if grid.d == 2:
        U = np.zeros((n + 1, n + 1))
        U[1:-1, 1:-1] = np.asarray(u).reshape(n - 1, n - 1)
        return U.ravel()
    U = np.zeros(n + 1)
    U[1:-1] = u
    if problem.kind == "burgers-dirichlet":
        U[0] = mu
    elif problem.kind == "burgers-mixed":
        U[0] = U[1] + h * mu
    return U


def fd_residual(state):
    p, g, mu = state.problem, state.grid, state.mu
    h2 = g.h ** 2
    if g.d == 2:
        n = g.n
        U = state.full().reshape(n + 1, n + 1)
        lap = (U[2:, 1:-1] + U[:-2, 1:-1] + U[1:-1, 2:] + U[1:-1, :-2] - 4.0 * U[1:-1, 1:-1]) / h2
        return (lap + mu * np.exp(U[1:-1, 1:-1])).ravel()
    U = state.full()
    lap = (U[2:] - 2.0 * U[1:-1] + U[:-2]) / h2
    if p.is_bratu:
        return lap + mu * np.exp(U[1:-1])
    return p.nu * lap - U[1:-1] * (U[2:] - U[:-2]) / (2.0 * g.h)


def _jacobian_diagonals(state):
    """Main, upper and lower diagonals of the 1-D Jacobian."""
    p, g = state.problem, state.grid
    h, h2 = g.h, g.h ** 2
    U = state.full()
    m = g.n - 1
    if p.is_bratu:
        main = -2.0 / h2 + state.mu * np.exp(U[1:-1])
        return main, np.full(m - 1, 1.0 / h2), np.full(m - 1, 1.0 / h2)
    nu, ui = p.nu, U[1:-1]
    main = -2.0 * nu / h2 - (U[2:] - U[:-2]) / (2.0 * h)
    upper = (nu / h2 - ui / (2.0 * h))[:-1]
    lower = (nu / h2 + ui / (2.0 * h))[1:]
    if p.kind == "burgers-mixed":
        # u_0 = u_1 + h phi feeds row 1 through d u_0 / d u_1 = 1
        main[0] += nu / h2 + ui[0] / (2.0 * h)
    return main, upper, lower


def fd_jacobian(state, sparse=None):
    """Exact Jacobian of :func:`fd_residual` w.r.t. the interior values.

    Dense by default; ``sparse=True`` (or the default for more than
    ``DENSE_LIMIT`` unknowns) returns CSR.
    """
    g = state.grid
    m = g.n_interior
    if sparse is None:
        sparse = m > DENSE_LIMIT
    if g.d == 2:
        k = g.n - 1
        h2 = g.h ** 2
        T = scipy.sparse.diags([np.ones(k - 1), -2.0 * np.ones(k), np.ones(k - 1)], [-1, 0, 1])
        I = scipy.sparse.identity(k)
        J = (scipy.sparse.kron(T, I) + scipy.sparse.kron(I, T)) / h2
        J = (J + scipy.sparse.diags(state.mu * np.exp(state.u))).tocsr()
        return J if sparse else J.toarray()
    main, upper, lower = _jacobian_diagonals(state)
    J = scipy.sparse.diags([lower, main, upper], [-1, 0, 1], format="csr")
    return J if sparse else J.toarray()


def fd_mu_derivative(state):
    """Partial derivative of :func:`fd_residual` w.r.t. the parameter."""
    p, g = state.problem, state.grid
    if p.is_bratu:
        return np.exp(state.u)
    h, nu = g.h, p.nu
    d = np.zeros(g.n_interior)
    coupling = nu / h ** 2 + state.u[0] / (2.0 * h)
    d[0] = coupling if p.kind == "burgers-dirichlet" else coupling * h
    return d


def solution_norms(state):
    """``(sup-norm, discrete L2 norm)`` over interior grid values."""
    u = state.u
    return float(np.max(np.abs(u))), float(np.sqrt(np.sum(u * u) * state.grid.h ** state.grid.d))


def fd_solve(problem, grid, mu, u_init, lm_opts=None):
    """Solve the FD system with Levenberg-Marquardt.

    Rows are scaled by ``h**2`` before the solve so ``lm_opts.f_tol`` bounds a
    residual of order one rather than one amplified by ``1/h**2``.

    Raises:
        NonConvergence: carrying the report and the last state.
    """
    h2 = grid.h ** 2
    u0 = np.asarray(u_init, dtype=float).ravel()
    if not np.all(np.isfinite(u0)):
        raise ValueError("initial guess must be finite")

    def F(u):
        return h2 * fd_residual(FdState(problem, grid, u, mu))

    def J(u):
        return h2 * fd_jacobian(FdState(problem, grid, u, mu))

    u, report = lm_solve(F, J, u0, lm_opts or LmOptions())
    state = FdState(problem, grid, u, mu)
    if report.final_residual_norm > (lm_opts or LmOptions()).f_tol:
        raise NonConvergence(
            f"FD solve stopped ({report.termination.value}) with scaled residual "
            f"{report.final_residual_norm:.3e}", report=report, result=state)
    if not satisfies_maximum_principle(state):
        raise NonConvergence(
            "FD solve converged to a spurious oscillating solution (outside the range "
            "of the boundary data); the grid does not resolve the boundary layer",
            report=report, result=state)
    return state, report


def satisfies_maximum_principle(state, slack=1e-8):
    """Dirichlet Burgers solutions must stay between the two boundary values.

    Central differences with cell Peclet number above one can converge to an
    oscillating root that breaks this; other problems always pass.
    """
    if state.problem.kind != "burgers-dirichlet":
        return True
    lo, hi = sorted((0.0, state.mu))
    return bool(np.all(state.u >= lo - slack) and np.all(state.u <= hi + slack))


def initial_guess(problem, grid, branch="lower"):
    """Starting values: zeros (lower Bratu), 4 sin-bump (upper Bratu), ones (Burgers)."""
    X = grid.interior
    if problem.is_burgers:
        return np.ones(len(X))
    if branch == "lower":
        return np.zeros(len(X))
    return 4.0 * np.prod(np.sin(np.pi * X), axis=1)


def fd_stability(state, tol=1e-10, max_iter=200_000, method="shift_invert"):
    """Largest real eigenvalue of the FD Jacobian at a converged state."""
    J = fd_jacobian(state)
    lam, _ = largest_real_eigenvalue(J, tol=tol, max_iter=max_iter, method=method)
    return lam


class FdBranchSystem:
    """Continuation adapter: unknowns are the interior grid values."""

    beta = 1.0

    def __init__(self, problem, grid, lm_opts=None, norm="inf"):
        self.problem = problem
        self.grid = grid
        self.lm_opts = lm_opts or LmOptions()
        self.corrector_opts = self.lm_opts
        self.scale = grid.h ** 2
        self.norm = norm

    def state(self, z, mu):
        return FdState(self.problem, self.grid, z, mu)

    def residual(self, z, mu):
        return self.scale * fd_residual(self.state(z, mu))

    def jacobian(self, z, mu):
        s = self.state(z, mu)
        return self.scale * fd_jacobian(s), self.scale * fd_mu_derivative(s)

    def norms(self, z):
        return solution_norms(self.state(z, 0.0))

    def norm_and_gradient(self, z):
        return branch_norm(z, self.norm)

    def solve_fixed(self, mu, z_init):
        state, report = fd_solve(self.problem, self.grid, mu, z_init, self.lm_opts)
        return state.u, report

    def accepts(self, z, mu, report, f_tol):
        return report.final_residual_norm <= f_tol and satisfies_maximum_principle(
            self.state(z, mu))

    def stability(self, z, mu):
        return fd_stability(self.state(z, mu))
