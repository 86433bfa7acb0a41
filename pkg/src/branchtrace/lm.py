"""Levenberg-Marquardt for square or overdetermined systems ``F(z) = 0``.

One solver drives everything: FD grids, network weights, the augmented
continuation corrector and the eigenfunction networks.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .errors import NotPositiveDefinite, SingularNormalEquations
from .linalg import cholesky_solve

DAMPING_CEILING = 1e12
DAMPING_FLOOR = 1e-15


class Termination(str, Enum):
    RESIDUAL_TOL = "ResidualTol"
    STEP_TOL = "StepTol"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class LmOptions:
    f_tol: float = 1e-10
    step_tol: float = 1e-12
    max_iter: int = 500
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    # absolute floor added to diag(J^T J) so zero columns stay solvable
    eps_reg: float = 1e-12
    # "marquardt" damps mu*diag(J^T J); "levenberg" damps mu*I
    scaling: str = "marquardt"

    def __post_init__(self):
        for name in ("f_tol", "step_tol", "damping_init", "eps_reg"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.damping_up > 1.0 > self.damping_down > 0.0:
            raise ValueError("need damping_up > 1 > damping_down > 0")
        if self.scaling not in ("marquardt", "levenberg"):
            raise ValueError(f"unknown damping scaling {self.scaling!r}")

    def replace(self, **changes):
        return LmOptions(**{**asdict(self), **changes})


@dataclass
class LmReport:
    iterations: int
    final_residual_norm: float
    termination: Termination
    accepted_steps: int
    # ||F||_2 at the start and after each accepted step
    history: list = field(default_factory=list, repr=False)

    @property
    def converged(self):
        return self.termination is not Termination.MAX_ITER

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual_norm": self.final_residual_norm,
            "termination": self.termination.value,
            "accepted_steps": self.accepted_steps,
        }


def _solve_damped(J, g, damping, eps_reg, scaling="marquardt"):
    if scipy.sparse.issparse(J):
        A = (J.T @ J).tocsc()
        d = A.diagonal() if scaling == "marquardt" else np.ones(A.shape[0])
        M = A + scipy.sparse.diags(damping * (d + eps_reg))
        delta = scipy.sparse.linalg.spsolve(M.tocsc(), -g)
        if not np.all(np.isfinite(delta)):
            raise NotPositiveDefinite("sparse normal equations are singular")
        return delta
    A = J.T @ J
    d = np.diag(A) if scaling == "marquardt" else np.ones(A.shape[0])
    M = A + np.diag(damping * (d + eps_reg))
    return cholesky_solve(M, -g, check_symmetric=False)


def lm_solve(residual, jacobian, z0, opts=None):
    """Minimise ``||F(z)||_2`` from ``z0``.

    ``jacobian`` may return a dense array or a scipy sparse matrix. A step is
    accepted only if it lowers ``||F||_2``; damping shrinks on acceptance and
    grows on rejection. The best iterate is returned together with an
    :class:`LmReport`; running out of iterations is reported, not raised.

    Raises:
        SingularNormalEquations: when damping has to exceed 1e12.
    """
    opts = opts or LmOptions()
    z = np.array(z0, dtype=float)
    F = np.asarray(residual(z), dtype=float)
    cost = float(np.linalg.norm(F))
    history = [cost]
    damping = opts.damping_init
    accepted = 0
    it = 0
    termination = None
    J = None

    while True:
        if np.max(np.abs(F), initial=0.0) <= opts.f_tol:
            termination = Termination.RESIDUAL_TOL
            break
        if it >= opts.max_iter:
            termination = Termination.MAX_ITER
            break
        if J is None:
            J = jacobian(z)
            g = J.T @ F
        it += 1
        try:
            delta = _solve_damped(J, g, damping, opts.eps_reg, opts.scaling)
        except NotPositiveDefinite:
            delta = None
        if delta is not None:
            if np.linalg.norm(delta) <= opts.step_tol * (np.linalg.norm(z) + opts.step_tol):
                termination = Termination.STEP_TOL
                break
            z_new = z + delta
            F_new = np.asarray(residual(z_new), dtype=float)
            cost_new = float(np.linalg.norm(F_new))
            if np.isfinite(cost_new) and cost_new < cost:
                z, F, cost = z_new, F_new, cost_new
                history.append(cost)
                accepted += 1
                J = None
                damping = max(damping * opts.damping_down, DAMPING_FLOOR)
                continue
        damping *= opts.damping_up
        if damping > DAMPING_CEILING:
            raise SingularNormalEquations(
                f"damping exceeded {DAMPING_CEILING:g} after {it} iterations "
                f"(||F||_2 = {cost:.3e})"
            )

    report = LmReport(
        iterations=it,
        final_residual_norm=float(np.max(np.abs(F), initial=0.0)),
        termination=termination,
        accepted_steps=accepted,
        history=history,
    )
    return z, report
