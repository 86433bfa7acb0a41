"""Pseudo-arclength continuation in the (branch norm, parameter) plane.

Works with any system exposing the small interface below; the FD grid
adapter (:class:`branchtrace.fd.FdBranchSystem`) and the network adapter
(:class:`branchtrace.nnsolve.NnBranchSystem`) both implement it.

The arclength used for predictor, corrector and fold refinement is the
Euclidean distance between ``(norm(u), mu)`` pairs, not the full state
distance, so a single scalar row closes the corrector system.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
import scipy.sparse

from .errors import (
    BootstrapFailed,
    BranchTraceError,
    CorrectorFailed,
    NoFold,
    NonConvergence,
    SingularNormalEquations,
)
from .lm import LmOptions, lm_solve

DEFAULT_DELTA = {"bratu": 0.05, "burgers": 0.02}
SPACING_RTOL = 0.1
SECANT_CORRECTIONS = 3


class ParamSystem(Protocol):
    lm_opts: LmOptions
    corrector_opts: LmOptions
    beta: float

    def residual(self, z, mu): ...

    def jacobian(self, z, mu):
        """``(dF/dz, dF/dmu)``."""

    def norms(self, z):
        """``(sup-norm, L2 norm)`` recorded on each branch point."""

    def norm_and_gradient(self, z):
        """Arclength norm of ``z`` and its gradient."""

    def solve_fixed(self, mu, z_init):
        """``(z, LmReport)`` at fixed ``mu``."""

    def accepts(self, z, mu, report, f_tol):
        """Whether a finished corrector run counts as converged."""

    def stability(self, z, mu):
        """Largest real eigenvalue of the linearisation."""


@dataclass
class BranchPoint:
    index: int
    mu: float
    norm_inf: float
    norm_2: float
    z: np.ndarray = field(repr=False)
    arc_norm: float = 0.0
    max_lambda: Optional[float] = None
    report: object = field(default=None, repr=False)


@dataclass
class Branch:
    points: list
    stop_reason: str
    delta: float

    def __len__(self):
        return len(self.points)

    @property
    def mu(self):
        return np.array([p.mu for p in self.points])

    @property
    def norm_inf(self):
        return np.array([p.norm_inf for p in self.points])

    @property
    def max_lambda(self):
        return np.array([np.nan if p.max_lambda is None else p.max_lambda
                         for p in self.points])


@dataclass(frozen=True)
class ContinuationConfig:
    delta: float = 0.05
    tau: float = 1.0
    max_steps: int = 200
    mu_bounds: tuple = (-math.inf, math.inf)
    corrector_opts: Optional[LmOptions] = None
    stability: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.max_steps < 2:
            raise ValueError("max_steps must be at least 2")
        lo, hi = self.mu_bounds
        if not lo < hi:
            raise ValueError("mu_bounds must be increasing")


def default_delta(problem):
    return DEFAULT_DELTA["bratu" if problem.is_bratu else "burgers"]


def _make_point(sys, index, z, mu, report=None):
    n_inf, n_2 = sys.norms(z)
    arc, _ = sys.norm_and_gradient(z)
    return BranchPoint(index, float(mu), n_inf, n_2, np.array(z, dtype=float), arc,
                       report=report)


def spacing(p, q):
    """Arclength distance between two points in the (norm, mu) plane."""
    return math.hypot(p.arc_norm - q.arc_norm, p.mu - q.mu)


def bootstrap(sys, mu1, z_guess, cfg):
    """Two fixed-parameter solves spaced about ``cfg.delta`` apart.

    The parameter gap of the second point is corrected by secant steps on
    the achieved spacing. Returns ``(p1, p2, achieved_spacing)``.

    Raises:
        BootstrapFailed: when a fixed-parameter solve fails.
    """
    try:
        z1, r1 = sys.solve_fixed(mu1, z_guess)
    except (NonConvergence, SingularNormalEquations) as exc:
        raise BootstrapFailed(f"first point at mu={mu1:g}: {exc}") from exc
    p1 = _make_point(sys, 0, z1, mu1, r1)
    delta = cfg.delta
    history = [(0.0, 0.0)]
    dmu = delta
    p2 = None
    for _ in range(SECANT_CORRECTIONS + 1):
        try:
            z2, r2 = sys.solve_fixed(mu1 + dmu, z1)
        except (NonConvergence, SingularNormalEquations) as exc:
            raise BootstrapFailed(f"second point at mu={mu1 + dmu:g}: {exc}") from exc
        p2 = _make_point(sys, 1, z2, mu1 + dmu, r2)
        s = spacing(p1, p2)
        if abs(s - delta) <= SPACING_RTOL * delta:
            break
        history.append((dmu, s))
        (m0, s0), (m1, s1) = history[-2], history[-1]
        if s1 == s0:
            break
        dmu = m1 + (delta - s1) * (m1 - m0) / (s1 - s0)
    return p1, p2, spacing(p1, p2)


def predict(prev, prev2, tau=1.0):
    """Secant extrapolation ``p_{k-1} + tau (p_{k-1} - p_{k-2})``."""
    z = prev.z + tau * (prev.z - prev2.z)
    mu = prev.mu + tau * (prev.mu - prev2.mu)
    return z, mu


def augmented_residual(sys, w, prev, delta):
    z, mu = w[:-1], float(w[-1])
    N, _ = sys.norm_and_gradient(z)
    arc = math.hypot(N - prev.arc_norm, mu - prev.mu) - delta
    return np.append(sys.residual(z, mu), math.sqrt(sys.beta) * arc)


def augmented_jacobian(sys, w, prev, delta):
    z, mu = w[:-1], float(w[-1])
    Jz, Jmu = sys.jacobian(z, mu)
    N, gN = sys.norm_and_gradient(z)
    dn, dm = N - prev.arc_norm, mu - prev.mu
    dist = max(math.hypot(dn, dm), 1e-300)
    b = math.sqrt(sys.beta)
    last = np.append(b * dn / dist * gN, b * dm / dist)
    if scipy.sparse.issparse(Jz):
        top = scipy.sparse.hstack([Jz, scipy.sparse.csr_matrix(np.asarray(Jmu)[:, None])])
        return scipy.sparse.vstack([top, scipy.sparse.csr_matrix(last)]).tocsr()
    return np.vstack([np.column_stack([Jz, Jmu]), last])


def correct(sys, prediction, prev, delta, opts=None, index=None, prev2=None):
    """Solve the system together with the arclength row from ``prediction``.

    With ``prev2`` given, a result that turns back along the branch (negative
    inner product of consecutive secants in the (norm, mu) plane) is rejected:
    the arclength circle also crosses the branch behind ``prev``.

    Raises:
        CorrectorFailed: when LM breaks down, its result is not accepted or
            the branch direction reverses.
    """
    opts = opts or sys.corrector_opts
    z0, mu0 = prediction
    w0 = np.append(np.asarray(z0, dtype=float), mu0)
    if not np.all(np.isfinite(w0)):
        raise CorrectorFailed("prediction is not finite")
    try:
        w, report = lm_solve(lambda w: augmented_residual(sys, w, prev, delta),
                             lambda w: augmented_jacobian(sys, w, prev, delta), w0, opts)
    except SingularNormalEquations as exc:
        raise CorrectorFailed(str(exc)) from exc
    z, mu = w[:-1], float(w[-1])
    if not sys.accepts(z, mu, report, opts.f_tol):
        raise CorrectorFailed(
            f"corrector stopped ({report.termination.value}) with residual "
            f"{report.final_residual_norm:.3e}")
    point = _make_point(sys, prev.index + 1 if index is None else index, z, mu, report)
    if prev2 is not None and _turns_back(prev2, prev, point):
        raise CorrectorFailed("corrector converged back along the branch")
    return point


def _turns_back(a, b, c):
    return ((b.arc_norm - a.arc_norm) * (c.arc_norm - b.arc_norm)
            + (b.mu - a.mu) * (c.mu - b.mu)) <= 0.0


def trace_branch(sys, mu_start, z_guess, cfg, log=None):
    """Follow a solution branch from ``mu_start`` in the increasing-``mu`` direction.

    Stops after ``cfg.max_steps`` points, when ``mu`` leaves ``cfg.mu_bounds``
    or when the corrector fails even after one halving of the step. A failed
    trace still returns every accepted point.

    Raises:
        BootstrapFailed: when the first two points cannot be computed.
    """
    p1, p2, delta = bootstrap(sys, mu_start, z_guess, cfg)
    points = [p1, p2]
    stop = "max_steps"
    halved = False
    lo, hi = cfg.mu_bounds
    while len(points) < cfg.max_steps:
        prev, prev2 = points[-1], points[-2]
        try:
            point = correct(sys, predict(prev, prev2, cfg.tau), prev, delta, cfg.corrector_opts,
                            prev2=prev2)
        except CorrectorFailed as exc:
            if halved:
                stop = f"corrector failed: {exc}"
                break
            halved = True
            delta *= 0.5
            # the secant still spans the old step, so the next prediction halves too
            try:
                point = correct(sys, predict(prev, prev2, 0.5 * cfg.tau), prev, delta,
                                cfg.corrector_opts, prev2=prev2)
            except CorrectorFailed as exc2:
                stop = f"corrector failed: {exc2}"
                break
        if not lo <= point.mu <= hi:
            stop = "mu out of bounds"
            break
        points.append(point)
        if log is not None:
            log(point)
    branch = Branch(points, stop, delta)
    if cfg.stability:
        annotate_stability(sys, branch)
    return branch


def annotate_stability(sys, branch, indices=None):
    """Fill ``max_lambda`` on every point (or on ``indices``); failures leave it empty."""
    points = branch.points if indices is None else [branch.points[i] for i in indices]
    for p in points:
        try:
            p.max_lambda = float(sys.stability(p.z, p.mu))
        except BranchTraceError:
            p.max_lambda = None
    return branch


@dataclass(frozen=True)
class FoldEstimate:
    mu_star: float
    index: int
    # fractional point index of the vertex of the fitted parabola
    position: float


def detect_fold(branch):
    """First turning point of ``mu`` along the branch, refined by a parabola.

    Points are equally spaced in arclength, so ``mu`` is fitted against the
    point index over the three points around the first sign change of the
    ``mu`` increments.

    Raises:
        NoFold: when ``mu`` is monotone along the branch.
    """
    mu = branch.mu if isinstance(branch, Branch) else np.asarray(branch, dtype=float)
    d = np.diff(mu)
    for k in range(1, len(d)):
        if d[k - 1] * d[k] < 0:
            m_minus, m0, m_plus = mu[k - 1], mu[k], mu[k + 1]
            a = 0.5 * (m_plus - 2.0 * m0 + m_minus)
            b = 0.5 * (m_plus - m_minus)
            if a == 0:
                return FoldEstimate(float(m0), k, float(k))
            return FoldEstimate(float(m0 - b * b / (4.0 * a)), k, float(k - b / (2.0 * a)))
    raise NoFold("parameter is monotone along the branch")


def lambda_at_fold(branch, fold):
    """Largest eigenvalue interpolated linearly at the fold position."""
    lam = branch.max_lambda
    k = int(math.floor(fold.position))
    k = min(max(k, 0), len(lam) - 2)
    t = fold.position - k
    pair = lam[k: k + 2]
    if np.any(np.isnan(pair)):
        raise ValueError("eigenvalues missing next to the fold")
    return float((1.0 - t) * pair[0] + t * pair[1])


BRANCH_HEADER = ("step", "mu", "norm_inf", "norm_2", "max_lambda")


def fmt(x):
    """17-significant-digit text; ``None`` and NaN become an empty cell."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def write_branch_csv(branch, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BRANCH_HEADER)
        for p in branch.points:
            w.writerow([p.index, fmt(p.mu), fmt(p.norm_inf), fmt(p.norm_2), fmt(p.max_lambda)])


def read_branch_csv(path):
    """Rows of a branch CSV as dicts of floats (``max_lambda`` may be ``None``)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "step": int(row["step"]),
                "mu": float(row["mu"]),
                "norm_inf": float(row["norm_inf"]),
                "norm_2": float(row["norm_2"]),
                "max_lambda": float(row["max_lambda"]) if row["max_lambda"] else None,
            })
    return rows
