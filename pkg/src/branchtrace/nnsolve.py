"""Collocation networks: fixed-parameter solves (NN1), the augmented
weights-plus-parameter corrector (NN2) and eigenpairs (NN3).

All three are least-squares systems handed to :func:`branchtrace.lm.lm_solve`.
Row weights ``alpha`` (boundary), ``beta`` (arclength) and ``gamma`` (unit
norm) enter as ``sqrt`` multipliers on their rows.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import mlp
from .errors import DegenerateEigenfunction, NodalSolution, NonConvergence
from .fd import FdState
from .lm import LmOptions, lm_solve
from .problems import (
    FOLD_ARGUMENT,
    branch_norm,
    boundary_residual,
    boundary_residual_partials,
    interior_residual,
    interior_residual_partials,
    linearized_operator,
    trapezoid_inner_product,
)

# Weight space is badly scaled (near-dead Gaussian units at small init), where
# diag(J^T J) damping stalls; plain Levenberg damping keeps making progress.
NN_LM_OPTIONS = LmOptions(max_iter=1000, scaling="levenberg")
FIT_OPTIONS = LmOptions(max_iter=200, f_tol=1e-8, scaling="levenberg")
# Warm-started corrector: heavier initial damping keeps the first steps near
# the prediction, so LM does not jump to the arclength circle's other crossing.
NN_CORRECTOR_OPTIONS = LmOptions(max_iter=200, scaling="levenberg", damping_init=100.0)
NODAL_RETRIES = 5
# With a unit-weight norm row the eigen solve drifts towards v = 0 first
# (interior rows vanish there) and only slowly climbs back; a heavy norm row
# removes that detour.
NN3_GAMMA = 1000.0
BRANCH_RETRIES = 5
# A network rarely drives the residual to f_tol; its best iterate is accepted
# once the sup residual is this small relative to 1 + max|u_xx|.
NN_ACCEPT_RTOL = 1e-2
# output bias of the initial net: u ~ b sin(pi x) picks the Bratu branch
BRANCH_BIAS = {"lower": 0.0, "upper": 4.0}
# 2-D corrector residuals stay near 1e-3, so a unit arclength row lets mu drift
# back onto the circle crossing behind the previous point
ARCLENGTH_BETA = {"bratu2d": 1e4}


def default_beta(problem):
    return ARCLENGTH_BETA.get(problem.kind, 1.0)


def default_architecture(problem, activation=None, mask=None):
    """``(p, l, q, activation, mask)``: two hidden layers, 5 (1-D) or 10 (2-D) neurons.

    Bratu nets are masked with ``sin(pi x)`` (times ``sin(pi y)`` in 2-D) and
    use the Gaussian activation; Burgers nets are unmasked ``tanh``.
    """
    p = problem.dim
    q = 10 if p == 2 else 5
    if activation is None:
        activation = "gaussian" if problem.is_bratu else "tanh"
    if mask is None:
        mask = ("sin_pi_x" if p == 1 else "sin_pi_x_sin_pi_y") if problem.is_bratu else "none"
    if mask != "none" and problem.is_burgers:
        raise ValueError("Burgers networks are solved without a boundary mask")
    return p, 2, q, activation, mask


@dataclass(frozen=True, eq=False)
class NnSystem:
    problem: object
    grid: object
    net: mlp.Mlp
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    mode: str = "nn1"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("alpha, beta and gamma must be positive")
        if self.mode not in ("nn1", "nn2", "nn3"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.net.p != self.grid.d:
            raise ValueError("network input dimension does not match the grid")

    @property
    def boundary_rows(self):
        return self.net.mask == "none"

    @property
    def points(self):
        """Interior collocation points, then boundary points when unmasked."""
        if self.boundary_rows:
            return np.vstack([self.grid.interior, self.grid.boundary])
        return self.grid.interior

    @property
    def n_interior(self):
        return self.grid.n_interior

    def network(self, theta):
        return self.net.with_weights(theta)


# -------------------------------------------------------------------------- NN1

def nn1_residual(sys, theta, mu):
    net = sys.network(theta)
    X = sys.points
    u, grad, second = mlp.forward_with_input_derivs(net, X)
    nI = sys.n_interior
    rows = interior_residual(sys.problem, X[:nI], u[:nI], grad[:nI], second[:nI], mu)
    if not sys.boundary_rows:
        return rows
    rb = boundary_residual(sys.problem, X[nI:], u[nI:], grad[nI:], mu)
    return np.concatenate([rows, math.sqrt(sys.alpha) * rb])


def nn1_jacobian(sys, theta, mu):
    """``(d rows / d theta, d rows / d mu)`` assembled from weight sensitivities."""
    net = sys.network(theta)
    X = sys.points
    u, grad, second, Su, Sg, Ss = mlp.evaluate_all(net, X)
    nI = sys.n_interior
    du, dg, ds, dmu = interior_residual_partials(sys.problem, u[:nI], grad[:nI], second[:nI], mu)
    J = (du[:, None] * Su[:nI] + np.einsum("np,npk->nk", dg, Sg[:nI])
         + np.einsum("np,npk->nk", ds, Ss[:nI]))
    if not sys.boundary_rows:
        return J, dmu
    bu, bg, bmu = boundary_residual_partials(sys.problem, X[nI:], u[nI:], grad[nI:], mu)
    Jb = bu[:, None] * Su[nI:] + np.einsum("np,npk->nk", bg, Sg[nI:])
    a = math.sqrt(sys.alpha)
    return np.vstack([J, a * Jb]), np.concatenate([dmu, a * bmu])


def nn1_acceptable(sys, theta, report, f_tol):
    """Whether a finished LM run is a usable NN1 solution."""
    if report.final_residual_norm <= f_tol:
        return True
    _, _, second = mlp.forward_with_input_derivs(sys.network(theta), sys.grid.interior)
    scale = 1.0 + float(np.max(np.abs(second.sum(axis=1))))
    return report.final_residual_norm <= NN_ACCEPT_RTOL * scale


def nn1_solve(problem, grid, mu, init, opts=None, alpha=1.0):
    """Train ``init`` so the collocation residual vanishes at parameter ``mu``.

    Raises:
        NonConvergence: when the best iterate fails :func:`nn1_acceptable`.
    """
    opts = opts or NN_LM_OPTIONS
    sys = NnSystem(problem, grid, init, alpha=alpha)
    theta, report = lm_solve(
        lambda t: nn1_residual(sys, t, mu),
        lambda t: nn1_jacobian(sys, t, mu)[0],
        init.weights,
        opts,
    )
    net = init.with_weights(theta)
    if not nn1_acceptable(sys, theta, report, opts.f_tol):
        raise NonConvergence(
            f"NN1 stopped ({report.termination.value}) after {report.iterations} iterations "
            f"with residual {report.final_residual_norm:.3e}", report=report, result=net)
    return net, report


def initial_network(problem, branch="lower", seed=0, init_range=0.01, activation=None,
                    mask=None):
    """Random small-weight net in the default architecture for ``problem``."""
    p, l, q, act, mask = default_architecture(problem, activation=activation, mask=mask)
    bias = BRANCH_BIAS[branch] if problem.is_bratu else 0.0
    return mlp.init_random(p, l, q, act, mask, seed=seed, range=init_range, output_bias=bias)


def on_branch(problem, norm_inf, branch):
    """True when a 1-D Bratu sup-norm lies on ``branch``; other kinds always pass.

    The sup-norm ``2 log cosh(omega)`` grows monotonically along the curve, so
    the fold value separates the two branches.
    """
    if problem.kind != "bratu1d":
        return True
    fold_norm = 2.0 * math.log(math.cosh(FOLD_ARGUMENT))
    return (norm_inf < fold_norm) == (branch == "lower")


def nn1_solve_branch(problem, grid, mu, branch="lower", seed=0, opts=None, alpha=1.0,
                     init_range=0.01, activation=None, mask=None):
    """NN1 from a seeded init, retrying later seeds when the solve lands elsewhere.

    Upper-branch starts can slide onto the lower branch; for 1-D Bratu this
    is detected from the sup-norm and the next seed is tried.

    Returns ``(net, report, seed_used)``.

    Raises:
        NonConvergence: when every attempt fails or misses the branch.
    """
    last = None
    for k in range(BRANCH_RETRIES + 1):
        init = initial_network(problem, branch, seed + k, init_range, activation, mask)
        try:
            net, report = nn1_solve(problem, grid, mu, init, opts, alpha)
        except NonConvergence as exc:
            last = exc
            continue
        if on_branch(problem, network_norms(net, grid)[0], branch):
            return net, report, seed + k
        last = NonConvergence(f"NN1 from seed {seed + k} converged to the other branch",
                              report=report, result=net)
    raise last


# -------------------------------------------------------------------------- norms

def network_norms(net, grid):
    """``(sup-norm, discrete L2 norm)`` of a network over interior grid points."""
    u = mlp.forward(net, grid.interior)
    return float(np.max(np.abs(u))), float(np.sqrt(np.sum(u * u) * grid.h ** grid.d))


# -------------------------------------------------------------------------- NN2

def _arclength(norm, mu, prev, delta):
    dn, dm = norm - prev[0], mu - prev[1]
    dist = math.hypot(dn, dm)
    return dist - delta, dn, dm, dist


def nn2_residual(sys, theta_aug, prev, delta, norm="inf"):
    """NN1 rows at ``mu = theta_aug[-1]`` plus the scaled arclength row.

    ``prev`` is ``(norm of u_{k-1}, mu_{k-1})``.
    """
    theta, mu = theta_aug[:-1], float(theta_aug[-1])
    rows = nn1_residual(sys, theta, mu)
    u = mlp.forward(sys.network(theta), sys.grid.interior)
    N, _ = branch_norm(u, norm)
    arc = _arclength(N, mu, prev, delta)[0]
    return np.append(rows, math.sqrt(sys.beta) * arc)


def nn2_jacobian(sys, theta_aug, prev, delta, norm="inf"):
    theta, mu = theta_aug[:-1], float(theta_aug[-1])
    J, dmu = nn1_jacobian(sys, theta, mu)
    net = sys.network(theta)
    u = mlp.forward(net, sys.grid.interior)
    N, gN = branch_norm(u, norm)
    nz = np.flatnonzero(gN)
    Su = mlp.weight_sensitivities(net, sys.grid.interior[nz])[0]
    dN = gN[nz] @ Su
    _, dn, dm, dist = _arclength(N, mu, prev, delta)
    dist = max(dist, 1e-300)
    b = math.sqrt(sys.beta)
    last = np.append(b * dn / dist * dN, b * dm / dist)
    return np.vstack([np.column_stack([J, dmu]), last])


class NnBranchSystem:
    """Continuation adapter: unknowns are the network weights.

    The corrector stacks these rows with the arclength row exactly as
    :func:`nn2_residual` does.
    """

    def __init__(self, problem, grid, template, lm_opts=None, alpha=1.0, beta=None,
                 gamma=NN3_GAMMA, eig_opts=None, norm="inf", corrector_opts=None):
        if beta is None:
            beta = default_beta(problem)
        self.problem = problem
        self.grid = grid
        self.template = template
        self.sys = NnSystem(problem, grid, template, alpha=alpha, beta=beta, gamma=gamma,
                            mode="nn2")
        self.lm_opts = lm_opts or NN_LM_OPTIONS
        self.corrector_opts = corrector_opts or NN_CORRECTOR_OPTIONS
        self.eig_opts = eig_opts
        self.norm = norm
        self.beta = beta
        # last eigenfunction, reused as the start of the next stability solve
        self.eigen_net = None

    def network(self, z):
        return self.template.with_weights(z)

    def residual(self, z, mu):
        return nn1_residual(self.sys, z, mu)

    def jacobian(self, z, mu):
        return nn1_jacobian(self.sys, z, mu)

    def norms(self, z):
        return network_norms(self.network(z), self.grid)

    def norm_and_gradient(self, z):
        net = self.network(z)
        u = mlp.forward(net, self.grid.interior)
        N, gN = branch_norm(u, self.norm)
        nz = np.flatnonzero(gN)
        Su = mlp.weight_sensitivities(net, self.grid.interior[nz])[0]
        return N, gN[nz] @ Su

    def accepts(self, z, mu, report, f_tol):
        return nn1_acceptable(self.sys, z, report, f_tol)

    def solve_fixed(self, mu, z_init):
        net, report = nn1_solve(self.problem, self.grid, mu, self.network(z_init),
                                self.lm_opts, alpha=self.sys.alpha)
        return net.weights, report

    def stability(self, z, mu):
        res = nn3_solve(self.problem, self.grid, mu, self.network(z), init=self.eigen_net,
                        opts=self.eig_opts, alpha=self.sys.alpha, gamma=self.sys.gamma)
        self.eigen_net = res.v
        return res.lam


# -------------------------------------------------------------------------- NN3

@dataclass
class EigenSolveResult:
    lam: float
    v: mlp.Mlp
    residual_norm: float
    report: object = None


def background_values(problem, grid, background):
    """``(u, grad)`` of a converged steady state on every grid point.

    ``background`` is a solution network, or an :class:`FdState` whose
    derivative comes from second-order differences.
    """
    if isinstance(background, mlp.Mlp):
        u, grad, _ = mlp.forward_with_input_derivs(background, grid.points)
        return u, grad
    if isinstance(background, FdState):
        U = background.full()
        if grid.d == 2:
            n = grid.n
            Ug = U.reshape(n + 1, n + 1)
            gx, gy = np.gradient(Ug, grid.h, edge_order=2)
            return U, np.column_stack([gx.ravel(), gy.ravel()])
        return U, np.gradient(U, grid.h, edge_order=2)[:, None]
    raise TypeError("background must be an Mlp or an FdState")


class EigenSystem:
    """Rows of the eigen-residual with ``lambda`` eliminated by the Rayleigh quotient."""

    def __init__(self, problem, grid, mu, background, template, alpha=1.0, gamma=1.0):
        self.problem = problem
        self.grid = grid
        self.mu = mu
        self.template = template
        self.alpha = alpha
        self.gamma = gamma
        self.u, self.u_grad = background_values(problem, grid, background)
        self.interior = grid.interior_mask
        self.boundary_rows = template.mask == "none"
        self.left = grid.points[:, 0] == 0.0

    def _eval(self, theta, sens):
        net = self.template.with_weights(theta)
        if sens:
            return mlp.evaluate_all(net, self.grid.points)
        return mlp.forward_with_input_derivs(net, self.grid.points)

    def _boundary(self, v, vg):
        b = ~self.interior
        if self.problem.kind == "burgers-mixed":
            return np.where(self.left[b], vg[b, 0], v[b])
        return v[b]

    def rayleigh(self, theta):
        v, vg, vs = self._eval(theta, sens=False)
        Lv = linearized_operator(self.problem, v, vg, vs, self.u, self.u_grad, self.mu)
        return trapezoid_inner_product(Lv, v, self.grid) / trapezoid_inner_product(v, v, self.grid)

    def discrete_norm(self, v):
        vi = v[self.interior]
        return float(np.sqrt(np.mean(vi * vi)))

    def residual(self, theta):
        v, vg, vs = self._eval(theta, sens=False)
        Lv = linearized_operator(self.problem, v, vg, vs, self.u, self.u_grad, self.mu)
        w = self.grid.trapezoid_weights
        den = np.sum(w * v * v)
        if den < 1e-14:
            raise DegenerateEigenfunction(f"<v, v> = {den:.3e}")
        lam = np.sum(w * Lv * v) / den
        rows = [(Lv - lam * v)[self.interior]]
        if self.boundary_rows:
            rows.append(math.sqrt(self.alpha) * self._boundary(v, vg))
        rows.append([math.sqrt(self.gamma) * (self.discrete_norm(v) - 1.0)])
        return np.concatenate(rows)

    def jacobian(self, theta):
        v, vg, vs, Sv, Svg, Svs = self._eval(theta, sens=True)
        p = self.problem
        Lv = linearized_operator(p, v, vg, vs, self.u, self.u_grad, self.mu)
        if p.is_bratu:
            SLv = Svs.sum(axis=1) + (self.mu * np.exp(self.u))[:, None] * Sv
        else:
            SLv = p.nu * Svs[:, 0] - self.u[:, None] * Svg[:, 0] - self.u_grad[:, 0, None] * Sv
        w = self.grid.trapezoid_weights
        den = np.sum(w * v * v)
        lam = np.sum(w * Lv * v) / den
        dnum = (w * v) @ SLv + (w * Lv) @ Sv
        dden = 2.0 * (w * v) @ Sv
        dlam = (dnum - lam * dden) / den
        I = self.interior
        blocks = [SLv[I] - lam * Sv[I] - np.outer(v[I], dlam)]
        if self.boundary_rows:
            b = ~I
            if p.kind == "burgers-mixed":
                Jb = np.where(self.left[b][:, None], Svg[b, 0], Sv[b])
            else:
                Jb = Sv[b]
            blocks.append(math.sqrt(self.alpha) * Jb)
        vi = v[I]
        nrm = max(self.discrete_norm(v), 1e-300)
        blocks.append(math.sqrt(self.gamma) * (vi @ Sv[I]) / (vi.size * nrm))
        return np.vstack(blocks)


def nn3_residual(sys, theta, u_background, mu):
    """Eigen rows for weights ``theta`` of the eigenfunction network ``sys.net``."""
    es = EigenSystem(sys.problem, sys.grid, mu, u_background, sys.net,
                     alpha=sys.alpha, gamma=sys.gamma)
    return es.residual(theta)


def eigen_profile(problem, X):
    """Nodeless ground-state shape used to seed the eigenfunction network."""
    if problem.kind == "burgers-mixed":
        return np.cos(0.5 * np.pi * X[:, 0])
    return np.prod(np.sin(np.pi * X), axis=1)


def fit_profile(template, grid, target, opts=None):
    """Least-squares fit of a network to ``target`` sampled on ``grid.points``."""
    X = grid.points

    def F(t):
        return mlp.forward(template.with_weights(t), X) - target

    def J(t):
        return mlp.weight_sensitivities(template.with_weights(t), X)[0]

    theta, _ = lm_solve(F, J, template.weights, opts or FIT_OPTIONS)
    return template.with_weights(theta)


def _scale_output(net, factor):
    """The same network with its output multiplied by ``factor``.

    The output layer is affine and any mask multiplies it, so scaling the
    last weights and bias scales the output exactly.
    """
    w = net.weights.copy()
    W, b, oW, ob = net.layers()[-1]
    w[oW: oW + W.size] *= factor
    w[ob: ob + b.size] *= factor
    return net.with_weights(w)


def _center_index(grid):
    X = grid.points
    return int(np.argmin(np.sum((X - 0.5) ** 2, axis=1)))


def nn3_solve(problem, grid, mu, u_background, init=None, opts=None, alpha=1.0,
              gamma=NN3_GAMMA, seed=0, activation=None):
    """Dominant eigenpair of the linearisation about ``u_background``.

    The eigenfunction network starts from ``init`` (for instance the previous
    eigenfunction along a branch) or from a fit to the nodeless profile
    (``sin(pi x)`` for Bratu, ``cos(pi x / 2)`` for mixed Burgers). A result
    that changes sign on the grid is retried from a fresh seed. The returned
    ``v`` is positive at the centre and rescaled to unit discrete norm.

    Raises:
        NonConvergence: when the best iterate's residual is not acceptable.
        NodalSolution: when every retry converges to a sign-changing ``v``.
    """
    opts = opts or NN_LM_OPTIONS
    last_error = None
    for attempt in range(NODAL_RETRIES + 1):
        if init is not None and attempt == 0:
            start = init
        else:
            p, l, q, act, mask = default_architecture(problem, activation=activation)
            start = mlp.init_random(p, l, q, act, mask, seed=seed + attempt, range=0.01,
                                    output_bias=1.0)
            target = eigen_profile(problem, grid.points)
            target = target / math.sqrt(np.mean(target[grid.interior_mask] ** 2))
            start = fit_profile(start, grid, target)
        es = EigenSystem(problem, grid, mu, u_background, start, alpha=alpha, gamma=gamma)
        theta, report = lm_solve(es.residual, es.jacobian, start.weights, opts)
        net = start.with_weights(theta)
        lam = es.rayleigh(theta)
        v = mlp.forward(net, grid.points)
        scale = 1.0 + abs(lam) * float(np.max(np.abs(v)))
        if report.final_residual_norm > max(opts.f_tol, NN_ACCEPT_RTOL * scale):
            raise NonConvergence(
                f"NN3 stopped ({report.termination.value}) after {report.iterations} "
                f"iterations with residual {report.final_residual_norm:.3e}",
                report=report, result=net)
        sign = -1.0 if v[_center_index(grid)] < 0 else 1.0
        net = _scale_output(net, sign / es.discrete_norm(v))
        v = mlp.forward(net, grid.points)
        if np.all(v[grid.interior_mask] > 0):
            return EigenSolveResult(lam, net, report.final_residual_norm, report)
        last_error = NodalSolution(f"eigenfunction changes sign (attempt {attempt + 1})")
    raise last_error
