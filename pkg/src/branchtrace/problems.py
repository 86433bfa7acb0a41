"""Problem definitions: grids, residual functionals, closed-form solutions,
Rayleigh quotients and small-amplitude eigenvalue expansions.

Four problems share one parameter slot ``mu``:

============== ================================= =========== ==============
kind           interior operator                 mu          boundary
============== ================================= =========== ==============
bratu1d        u'' + mu e^u                      load C      u = 0
bratu2d        u_xx + u_yy + mu e^u              load C      u = 0
burgers-dir    nu u'' - u u'                     rho         u(0)=rho, u(1)=0
burgers-mixed  nu u'' - u u'                     flux phi    u'(0)=-phi, u(1)=0
============== ================================= =========== ==============
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateEigenfunction, NoRoot

KINDS = ("bratu1d", "bratu2d", "burgers-dirichlet", "burgers-mixed")

BRATU1D_CRITICAL = 3.513830719
BRATU2D_CRITICAL = 6.808124423

# root of s tanh(s) = 1; the fold of both closed-form families sits here
FOLD_ARGUMENT = 1.1996786402577338

BRATU_COEFFS = (-math.pi ** 2, 8.0, 16.0 / math.pi ** 2 - 8.0 / 3.0)
BURGERS_COEFFS = (-math.pi ** 2 / 4.0, 1.5, -1.0 / 3.0)


@dataclass(frozen=True)
class Problem:
    kind: str
    nu: float = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.is_burgers:
            if self.nu is None or not self.nu > 0:
                raise ValueError("Burgers problems need a viscosity nu > 0")
        elif self.nu is not None:
            raise ValueError("nu only applies to Burgers problems")

    @property
    def is_bratu(self):
        return self.kind.startswith("bratu")

    @property
    def is_burgers(self):
        return self.kind.startswith("burgers")

    @property
    def dim(self):
        return 2 if self.kind == "bratu2d" else 1

    @property
    def parameter_name(self):
        return {"bratu1d": "C", "bratu2d": "C", "burgers-dirichlet": "rho",
                "burgers-mixed": "phi"}[self.kind]


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[0, 1]^d`` with ``n`` subintervals per axis.

    ``points`` is the full tensor grid with x varying slowest, so in 2-D the
    value at ``(i h, j h)`` sits at flat index ``i (n+1) + j``. Interior
    points follow the same ordering.
    """

    d: int
    n: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if self.n < 2:
            raise ValueError("need at least 2 subintervals")

    @property
    def h(self):
        return 1.0 / self.n

    @cached_property
    def axis(self):
        return np.arange(self.n + 1) * self.h

    @cached_property
    def points(self):
        if self.d == 1:
            return self.axis[:, None]
        X, Y = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def interior_mask(self):
        inner = (np.arange(self.n + 1) > 0) & (np.arange(self.n + 1) < self.n)
        if self.d == 1:
            return inner
        return np.logical_and.outer(inner, inner).ravel()

    @property
    def interior(self):
        return self.points[self.interior_mask]

    @property
    def boundary(self):
        return self.points[~self.interior_mask]

    @property
    def n_interior(self):
        return (self.n - 1) ** self.d

    @property
    def n_boundary(self):
        return 2 if self.d == 1 else 4 * self.n

    @cached_property
    def trapezoid_weights(self):
        w = np.full(self.n + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        if self.d == 1:
            return w
        return np.outer(w, w).ravel()


def make_grid(problem, n):
    return Grid(problem.dim, n)


# ---------------------------------------------------------------- Bratu, closed form

def bratu_load(omega):
    """Load ``C`` for which ``omega`` solves ``cosh(omega) = 4 omega / sqrt(2 C)``."""
    return 8.0 * omega ** 2 / np.cosh(omega) ** 2


def _bisect(f, lo, hi, tol=1e-12):
    flo = f(lo)
    if flo == 0.0:
        return lo
    if np.sign(flo) == np.sign(f(hi)):
        raise NoRoot(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_omega(C, branch="lower"):
    """Root of ``cosh(w) - 4 w / sqrt(2 C) = 0``; ``lower`` is the smaller one.

    Raises:
        NoRoot: for ``C`` above the critical load (or ``C <= 0``).
    """
    if not C > 0:
        raise NoRoot("the Bratu load must be positive")
    k = 4.0 / math.sqrt(2.0 * C)

    def g(w):
        return math.cosh(w) - k * w

    if g(FOLD_ARGUMENT) > 0.0:
        raise NoRoot(f"no steady state for C = {C} > C* = {BRATU1D_CRITICAL}")
    if branch == "lower":
        return _bisect(g, 1e-8, FOLD_ARGUMENT)
    if branch == "upper":
        return _bisect(g, FOLD_ARGUMENT, 30.0)
    raise ValueError(f"branch must be 'lower' or 'upper', got {branch!r}")


def bratu1d_exact(x, omega):
    x = np.asarray(x, dtype=float)
    return 2.0 * np.log(np.cosh(omega) / np.cosh(omega * (1.0 - 2.0 * x)))


def bratu1d_exact_derivs(x, omega):
    """``(u, u', u'')`` of the closed-form 1-D solution."""
    x = np.asarray(x, dtype=float)
    t = np.tanh(omega * (1.0 - 2.0 * x))
    return bratu1d_exact(x, omega), 4.0 * omega * t, -8.0 * omega ** 2 * (1.0 - t * t)


# -------------------------------------------------------------- Burgers, closed form

def rho_of_nu(nu):
    return 2.0 / (1.0 + math.exp(-1.0 / nu)) - 1.0


def burgers_dirichlet_exact(x, nu):
    x = np.asarray(x, dtype=float)
    # 2/(1+e^s) - 1 == -tanh(s/2), stable for tiny nu
    return -np.tanh((x - 1.0) / (2.0 * nu))


def burgers_dirichlet_exact_derivs(x, nu):
    x = np.asarray(x, dtype=float)
    t = np.tanh((x - 1.0) / (2.0 * nu))
    s = 1.0 - t * t
    return -t, -s / (2.0 * nu), t * s / (2.0 * nu ** 2)


def burgers_mixed_exact(x, nu, c):
    x = np.asarray(x, dtype=float)
    r = math.sqrt(2.0 * c)
    return r * np.tanh(r / (2.0 * nu) * (1.0 - x))


def burgers_mixed_exact_derivs(x, nu, c):
    x = np.asarray(x, dtype=float)
    r = math.sqrt(2.0 * c)
    k = r / (2.0 * nu)
    t = np.tanh(k * (1.0 - x))
    s = 1.0 - t * t
    return r * t, -r * k * s, -2.0 * r * k * k * t * s


def phi_of_c(c, nu):
    """Neumann flux ``phi = (c / nu) sech^2(sqrt(2 c) / (2 nu))``."""
    e = math.exp(-math.sqrt(2.0 * c) / nu)
    return c / nu * 4.0 * e / (1.0 + e) ** 2


def burgers_fold(nu):
    """``(c*, phi*)`` where ``phi(c)`` peaks, i.e. the fold of the mixed problem."""
    c_star = 2.0 * nu ** 2 * FOLD_ARGUMENT ** 2
    return c_star, phi_of_c(c_star, nu)


def solve_c(phi, nu, branch="lower"):
    """Root ``c`` of ``phi_of_c(c, nu) = phi``; ``lower`` is the smaller one."""
    if not phi > 0:
        raise NoRoot("the Neumann flux must be positive")
    c_star, phi_star = burgers_fold(nu)
    if phi > phi_star:
        raise NoRoot(f"no steady state for phi = {phi} > phi* = {phi_star}")

    def g(c):
        return phi_of_c(c, nu) - phi

    if branch == "lower":
        return _bisect(g, 0.0, c_star, tol=1e-15)
    if branch == "upper":
        hi = c_star
        while g(hi) > 0.0:
            hi *= 2.0
        return _bisect(g, c_star, hi, tol=1e-15)
    raise ValueError(f"branch must be 'lower' or 'upper', got {branch!r}")


def exact_solution(problem, mu, branch, x):
    """Closed-form solution at points ``x`` (1-D problems only), or ``None``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if problem.kind == "bratu1d":
        return bratu1d_exact(x, solve_omega(mu, branch))
    if problem.kind == "burgers-dirichlet":
        return burgers_dirichlet_exact(x, problem.nu)
    if problem.kind == "burgers-mixed":
        return burgers_mixed_exact(x, problem.nu, solve_c(mu, problem.nu, branch))
    return None


# ------------------------------------------------------------------------ residuals

def interior_residual(problem, x, u, grad, second, mu):
    """PDE residual at interior points (batched over the leading axis)."""
    u = np.asarray(u, dtype=float)
    grad = np.asarray(grad, dtype=float)
    second = np.asarray(second, dtype=float)
    if problem.is_bratu:
        return second.sum(axis=-1) + mu * np.exp(u)
    return problem.nu * second[..., 0] - u * grad[..., 0]


def interior_residual_partials(problem, u, grad, second, mu):
    """Partials of :func:`interior_residual` w.r.t. ``u``, ``grad``, ``second`` and ``mu``."""
    u = np.asarray(u, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if problem.is_bratu:
        e = mu * np.exp(u)
        return e, np.zeros_like(grad), np.ones_like(grad), np.exp(u)
    d_grad = np.zeros_like(grad)
    d_grad[..., 0] = -u
    d_second = np.zeros_like(grad)
    d_second[..., 0] = problem.nu
    return -grad[..., 0], d_grad, d_second, np.zeros_like(u)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim < 2 else x


def boundary_residual(problem, x, u, grad, mu):
    """Boundary-condition residual at boundary points."""
    X = _as_points(x)
    u = np.asarray(u, dtype=float).reshape(-1)
    grad = np.asarray(grad, dtype=float).reshape(len(u), -1)
    left = X[:, 0] == 0.0
    if problem.is_bratu:
        return u.copy()
    if problem.kind == "burgers-dirichlet":
        return np.where(left, u - mu, u)
    return np.where(left, grad[:, 0] + mu, u)


def boundary_residual_partials(problem, x, u, grad, mu):
    """Partials of :func:`boundary_residual` w.r.t. ``u``, ``grad`` and ``mu``."""
    X = _as_points(x)
    u = np.asarray(u, dtype=float).reshape(-1)
    left = X[:, 0] == 0.0
    d_u = np.ones_like(u)
    d_grad = np.zeros((len(u), X.shape[1]))
    d_mu = np.zeros_like(u)
    if problem.kind == "burgers-dirichlet":
        d_mu[left] = -1.0
    elif problem.kind == "burgers-mixed":
        d_u[left] = 0.0
        d_grad[left, 0] = 1.0
        d_mu[left] = 1.0
    return d_u, d_grad, d_mu


# --------------------------------------------------------- eigenvalue problem pieces

def linearized_operator(problem, v, v_grad, v_second, u, u_grad, mu):
    """Linearisation of the steady operator about ``u``, applied to ``v``."""
    v = np.asarray(v, dtype=float)
    if problem.is_bratu:
        return np.asarray(v_second).sum(axis=-1) + mu * np.exp(u) * v
    return (problem.nu * np.asarray(v_second)[..., 0] - u * np.asarray(v_grad)[..., 0]
            - np.asarray(u_grad)[..., 0] * v)


def trapezoid_inner_product(f, g, grid):
    """Composite trapezoid rule for the integral of ``f g`` over ``[0,1]^d``."""
    f = np.asarray(f, dtype=float).ravel()
    g = np.asarray(g, dtype=float).ravel()
    w = grid.trapezoid_weights
    if f.shape != w.shape or g.shape != w.shape:
        raise ValueError(f"expected {w.size} values on the full grid")
    return float(np.sum(w * f * g))


def rayleigh_quotient(problem, v, v_grad, v_second, u, u_grad, mu, grid):
    """``<L v, v> / <v, v>`` with all fields sampled on ``grid.points``.

    Raises:
        DegenerateEigenfunction: when ``<v, v> < 1e-14``.
    """
    vv = trapezoid_inner_product(v, v, grid)
    if vv < 1e-14:
        raise DegenerateEigenfunction(f"<v, v> = {vv:.3e}")
    Lv = linearized_operator(problem, v, v_grad, v_second, u, u_grad, mu)
    return trapezoid_inner_product(Lv, v, grid) / vv


def asymptotic_lambda(problem, mu, branch="lower"):
    """Three-term small-amplitude expansion of the largest eigenvalue.

    Bratu 1-D expands in ``omega**2``; Burgers (mixed) expands in the
    unit-viscosity ``c``, i.e. ``c_phys / nu**2``, and the result is scaled by
    ``nu`` to undo the time rescaling.
    """
    if problem.kind == "bratu1d":
        w2 = solve_omega(mu, branch) ** 2
        l0, l1, l2 = BRATU_COEFFS
        return l0 + l1 * w2 + l2 * w2 * w2
    if problem.kind == "burgers-mixed":
        nu = problem.nu
        c = solve_c(mu, nu, branch) / nu ** 2
        l0, l1, l2 = BURGERS_COEFFS
        return nu * (l0 + l1 * c + l2 * c * c)
    raise ValueError(f"no asymptotic expansion for {problem.kind}")


def analytic_diagram(problem, samples=2001):
    """Closed-form bifurcation diagram ``(mu, norm_inf, branch_param)``.

    Bratu 1-D is parameterised by ``omega``, Burgers (mixed) by ``c``. The
    sup-norm is taken over the whole interval.
    """
    if problem.kind == "bratu1d":
        w = np.linspace(1e-6, 6.0, samples)
        return bratu_load(w), 2.0 * np.log(np.cosh(w)), w
    if problem.kind == "burgers-mixed":
        nu = problem.nu
        c_star, _ = burgers_fold(nu)
        c = np.linspace(1e-8, 6.0 * c_star, samples)
        r = np.sqrt(2.0 * c)
        phi = np.array([phi_of_c(ci, nu) for ci in c])
        return phi, r * np.tanh(r / (2.0 * nu)), c
    raise ValueError(f"no closed-form diagram for {problem.kind}")


def branch_norm(u_interior, kind="inf"):
    """Branch norm of interior samples and its gradient w.r.t. those samples."""
    u = np.asarray(u_interior, dtype=float)
    if kind == "inf":
        k = int(np.argmax(np.abs(u)))
        g = np.zeros_like(u)
        g[k] = 1.0 if u[k] >= 0 else -1.0
        return abs(float(u[k])), g
    if kind == "2":
        val = float(np.sqrt(np.mean(u * u)))
        return val, (u / (u.size * val) if val > 0 else np.zeros_like(u))
    raise ValueError(f"unknown norm {kind!r}")
