"""``branchtrace`` command line: solve, continue, stability, table1.

Every command writes into a run directory (``--out``): the resolved
configuration as ``run.json`` plus the CSV/JSON files of that command.
Exit codes: 0 success, 1 NN not better than FD somewhere in table1, 2 solver
non-convergence, 3 invalid configuration.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import mlp
from .continuation import (
    ContinuationConfig,
    annotate_stability,
    default_delta,
    detect_fold,
    fmt,
    lambda_at_fold,
    read_branch_csv,
    trace_branch,
    write_branch_csv,
)
from .errors import BootstrapFailed, BranchTraceError, InvalidConfig, NoFold, NonConvergence
from .fd import FdBranchSystem, FdState, fd_solve, fd_stability, initial_guess
from .nnsolve import (
    NN3_GAMMA,
    NnBranchSystem,
    default_architecture,
    default_beta,
    initial_network,
    nn1_solve_branch,
    nn3_solve,
    on_branch,
)
from .problems import (
    BRATU1D_CRITICAL,
    BRATU2D_CRITICAL,
    KINDS,
    Grid,
    Problem,
    analytic_diagram,
    asymptotic_lambda,
    burgers_fold,
    exact_solution,
    rho_of_nu,
)

log = logging.getLogger("branchtrace")

EXIT_OK, EXIT_TABLE, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3
TABLE1_LOADS = (1.0, 1.5, 2.0, 2.5, 3.0)
DEFAULT_START = {"bratu1d": 0.1, "bratu2d": 0.5, "burgers-dirichlet": 0.1, "burgers-mixed": 0.01}


@dataclass
class RunConfig:
    command: str
    problem: str = "bratu1d"
    method: str = "nn"
    n: Optional[int] = None
    mu: Optional[float] = None
    nu: Optional[float] = None
    branch: str = "lower"
    seed: int = 0
    init_range: float = 0.01
    delta: Optional[float] = None
    tau: float = 1.0
    max_steps: int = 200
    mu_start: Optional[float] = None
    mu_min: float = 0.0
    mu_max: float = math.inf
    activation: Optional[str] = None
    mask: Optional[str] = None
    alpha: float = 1.0
    beta: Optional[float] = None
    gamma: float = NN3_GAMMA
    norm: str = "inf"
    stability: str = "none"
    reference: bool = False
    fd_n: Optional[int] = None
    from_run: Optional[str] = None
    points: list = field(default_factory=list)
    out: str = "run"

    def resolve(self):
        """Fill problem-dependent defaults and validate; raises InvalidConfig."""
        if self.problem not in KINDS:
            raise InvalidConfig(f"unknown problem {self.problem!r}")
        burgers = self.problem.startswith("burgers")
        if burgers and (self.nu is None or not self.nu > 0):
            raise InvalidConfig("Burgers problems need --nu > 0")
        if not burgers and self.nu is not None:
            raise InvalidConfig("--nu only applies to Burgers problems")
        if self.method not in ("fd", "nn"):
            raise InvalidConfig(f"unknown method {self.method!r}")
        if self.branch not in ("lower", "upper"):
            raise InvalidConfig(f"unknown branch {self.branch!r}")
        if self.n is None:
            self.n = 40 if self.problem == "bratu2d" else 100
        if self.n < 2:
            raise InvalidConfig("--n must be at least 2")
        if self.fd_n is None:
            self.fd_n = self.n
        if self.problem == "burgers-dirichlet" and self.mu is None:
            self.mu = rho_of_nu(self.nu)
        if self.command == "solve" and self.mu is None:
            raise InvalidConfig("solve needs a parameter value (--C, --phi, --rho or --mu)")
        if self.delta is None:
            self.delta = default_delta(self.make_problem())
        if self.mu_start is None:
            self.mu_start = DEFAULT_START[self.problem]
        if not self.delta > 0 or not 0 < self.tau <= 1 or self.max_steps < 2:
            raise InvalidConfig("need delta > 0, 0 < tau <= 1 and max-steps >= 2")
        if not self.mu_min < self.mu_max:
            raise InvalidConfig("--mu-min must be below --mu-max")
        if self.beta is None:
            self.beta = default_beta(self.make_problem())
        if min(self.alpha, self.beta, self.gamma, self.init_range) <= 0:
            raise InvalidConfig("alpha, beta, gamma and init-range must be positive")
        if self.stability not in ("none", "fold", "all"):
            raise InvalidConfig(f"unknown stability mode {self.stability!r}")
        if self.norm not in ("inf", "2"):
            raise InvalidConfig(f"unknown norm {self.norm!r}")
        try:
            p, _, _, act, mask = default_architecture(self.make_problem(), self.activation,
                                                      self.mask)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc
        if act not in mlp.ACTIVATIONS or mask not in mlp.MASKS:
            raise InvalidConfig(f"unknown activation or mask ({act!r}, {mask!r})")
        if mask != "none" and (mask == "sin_pi_x") != (p == 1):
            raise InvalidConfig(f"mask {mask!r} does not match a {p}-D problem")
        self.activation, self.mask = act, mask
        return self

    def make_problem(self):
        return Problem(self.problem, nu=self.nu)

    def make_grid(self, n=None):
        return Grid(2 if self.problem == "bratu2d" else 1, n or self.n)

    def template(self, branch=None, seed=None):
        return initial_network(self.make_problem(), branch or self.branch,
                               self.seed if seed is None else seed, self.init_range,
                               self.activation, self.mask)


# ------------------------------------------------------------------ output helpers

def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _clean(obj):
    """Replace non-finite floats, which strict JSON cannot carry, by strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (str, int)) else fmt(v) for v in row])


def _coords(grid):
    return ["x", "y"][: grid.d]


def _mse(u, exact, grid):
    m = grid.interior_mask
    return float(np.mean((u[m] - exact[m]) ** 2))


def _exact_on_grid(problem, mu, branch, grid):
    if grid.d != 1:
        return None
    try:
        return exact_solution(problem, mu, branch, grid.points[:, 0])
    except BranchTraceError:
        return None


def _emit(msg):
    print(msg, flush=True)


# ------------------------------------------------------------------ solvers

def _fd_fixed(cfg, problem, grid, mu, branch, u_init=None):
    if u_init is None:
        u_init = initial_guess(problem, grid, branch)
    state, report = fd_solve(problem, grid, mu, u_init)
    return state, report


def _nn_fixed(cfg, problem, grid, mu, branch):
    return nn1_solve_branch(problem, grid, mu, branch, seed=cfg.seed, alpha=cfg.alpha,
                            init_range=cfg.init_range, activation=cfg.activation,
                            mask=cfg.mask)


# ------------------------------------------------------------------ commands

def cmd_solve(cfg, out):
    problem, grid = cfg.make_problem(), cfg.make_grid()
    if cfg.method == "fd":
        state, report = _fd_fixed(cfg, problem, grid, cfg.mu, cfg.branch)
        u = state.full()
    else:
        net, report, seed = _nn_fixed(cfg, problem, grid, cfg.mu, cfg.branch)
        net.save(out / "0.weights.json")
        u = mlp.forward(net, grid.points)
        if seed != cfg.seed:
            _emit(f"seed {cfg.seed} left the {cfg.branch} branch; used seed {seed}")
    exact = _exact_on_grid(problem, cfg.mu, cfg.branch, grid)
    header = _coords(grid) + [f"u_{cfg.method}"]
    cols = [grid.points[:, k] for k in range(grid.d)] + [u]
    summary = {"report": report.as_dict()}
    if exact is not None:
        header += ["u_exact", "abs_err"]
        cols += [exact, np.abs(u - exact)]
        summary["mse"] = _mse(u, exact, grid)
        summary["max_abs_err"] = float(np.max(np.abs(u - exact)))
        _emit(f"MSE {summary['mse']:.4e}  max|err| {summary['max_abs_err']:.4e}")
    _write_csv(out / "solution.csv", header, zip(*cols))
    _write_json(out / "result.json", summary)
    return EXIT_OK


def _continuation_system(cfg, problem, grid):
    if cfg.method == "fd":
        return FdBranchSystem(problem, grid, norm=cfg.norm)
    return NnBranchSystem(problem, grid, cfg.template(), alpha=cfg.alpha, beta=cfg.beta,
                          gamma=cfg.gamma, norm=cfg.norm)


def cmd_continue(cfg, out):
    problem, grid = cfg.make_problem(), cfg.make_grid()
    sys_ = _continuation_system(cfg, problem, grid)
    z0 = initial_guess(problem, grid, cfg.branch) if cfg.method == "fd" else sys_.template.weights
    ccfg = ContinuationConfig(delta=cfg.delta, tau=cfg.tau, max_steps=cfg.max_steps,
                              mu_bounds=(cfg.mu_min, cfg.mu_max),
                              stability=cfg.stability == "all")
    branch = trace_branch(sys_, cfg.mu_start, z0, ccfg,
                          log=lambda p: log.info("point %d  mu=%.8f  |u|=%.6f", p.index, p.mu,
                                                 p.norm_inf))
    fold_info = {"stop_reason": branch.stop_reason, "points": len(branch),
                 "delta": branch.delta}
    try:
        fold = detect_fold(branch)
    except NoFold:
        fold = None
        fold_info.update(mu_star=None, index=None)
    if fold is not None:
        if cfg.stability == "fold":
            near = range(max(fold.index - 2, 0), min(fold.index + 3, len(branch)))
            annotate_stability(sys_, branch, near)
        fold_info.update(mu_star=fold.mu_star, index=fold.index, position=fold.position)
        critical = _critical_value(problem)
        if critical is not None:
            fold_info["error"] = fold.mu_star - critical
        try:
            fold_info["max_lambda_at_fold"] = lambda_at_fold(branch, fold)
        except ValueError:
            pass
        _emit(f"fold at mu* = {fold.mu_star:.10f} (point {fold.index})")
    write_branch_csv(branch, out / "branch.csv")
    _save_points(cfg, sys_, branch, out)
    _write_json(out / "fold.json", _clean(fold_info))
    if cfg.reference:
        _write_reference(problem, out / "reference.csv")
    _emit(f"{len(branch)} points; stopped: {branch.stop_reason}")
    return EXIT_OK if fold is not None or branch.stop_reason == "max_steps" else EXIT_SOLVER


def _critical_value(problem):
    if problem.kind == "bratu1d":
        return BRATU1D_CRITICAL
    if problem.kind == "bratu2d":
        return BRATU2D_CRITICAL
    if problem.kind == "burgers-mixed":
        return burgers_fold(problem.nu)[1]
    return None


def _save_points(cfg, sys_, branch, out):
    for p in branch.points:
        if cfg.method == "nn":
            sys_.network(p.z).save(out / f"{p.index}.weights.json")
        else:
            _write_json(out / f"{p.index}.state.json", {"mu": p.mu, "u": p.z.tolist()})


def _write_reference(problem, path):
    try:
        mu, norm, param = analytic_diagram(problem)
    except ValueError:
        log.warning("no closed-form diagram for %s", problem.kind)
        return
    _write_csv(path, ["param", "mu", "norm_inf"], zip(param, mu, norm))


def _stability_targets(cfg, problem, grid, out):
    """``(step, mu, background, branch_hint)`` for every point to analyse."""
    if cfg.from_run is None:
        if cfg.mu is None:
            raise InvalidConfig("stability needs --mu/--C/--phi or --from-run")
        if cfg.method == "fd":
            bg = _fd_fixed(cfg, problem, grid, cfg.mu, cfg.branch)[0]
        else:
            bg = _nn_fixed(cfg, problem, grid, cfg.mu, cfg.branch)[0]
        return [(0, cfg.mu, bg, cfg.branch)]
    run = Path(cfg.from_run)
    rows = read_branch_csv(run / "branch.csv")
    wanted = set(cfg.points) if cfg.points else None
    targets = []
    for row in rows:
        k = row["step"]
        if wanted is not None and k not in wanted:
            continue
        hint = "lower" if on_branch(problem, row["norm_inf"], "lower") else "upper"
        if (run / f"{k}.weights.json").exists():
            bg = mlp.Mlp.load(run / f"{k}.weights.json")
        elif (run / f"{k}.state.json").exists():
            with open(run / f"{k}.state.json", encoding="utf-8") as fh:
                data = json.load(fh)
            bg = FdState(problem, grid, np.asarray(data["u"]), data["mu"])
        else:
            raise InvalidConfig(f"no checkpoint for point {k} in {run}")
        targets.append((k, row["mu"], bg, hint))
    return targets


def _fd_lambda(cfg, problem, mu, bg, grid):
    """FD eigenvalue at ``cfg.fd_n``, started from the background solution."""
    fgrid = cfg.make_grid(cfg.fd_n)
    X = fgrid.interior
    if isinstance(bg, mlp.Mlp):
        u0 = mlp.forward(bg, X)
    elif bg.grid.n == fgrid.n:
        u0 = bg.u
    else:
        u0 = np.interp(X[:, 0], bg.grid.points[:, 0], bg.full()) if fgrid.d == 1 else None
        if u0 is None:
            raise InvalidConfig("2-D FD stability needs --fd-n equal to --n")
    state, _ = fd_solve(problem, fgrid, mu, u0)
    return fd_stability(state)


def cmd_stability(cfg, out):
    problem, grid = cfg.make_problem(), cfg.make_grid()
    rows, eig_rows = [], []
    for k, mu, bg, hint in _stability_targets(cfg, problem, grid, out):
        lam_nn = lam_fd = lam_as = None
        try:
            res = nn3_solve(problem, grid, mu, bg, alpha=cfg.alpha, gamma=cfg.gamma,
                            seed=cfg.seed)
            lam_nn = res.lam
            v = mlp.forward(res.v, grid.points)
            for i, x in enumerate(grid.points):
                eig_rows.append([k, *x, v[i]])
        except BranchTraceError as exc:
            log.warning("point %d: eigen solve failed: %s", k, exc)
        try:
            lam_fd = _fd_lambda(cfg, problem, mu, bg, grid)
        except BranchTraceError as exc:
            log.warning("point %d: FD eigenvalue failed: %s", k, exc)
        if problem.kind in ("bratu1d", "burgers-mixed") and hint == "lower":
            try:
                lam_as = asymptotic_lambda(problem, mu, "lower")
            except BranchTraceError:
                pass
        rows.append([k, mu, lam_nn, lam_fd, lam_as])
        _emit(f"point {k}: mu={mu:.6g} lambda_nn3={_show(lam_nn)} lambda_fd={_show(lam_fd)} "
              f"lambda_asymptotic={_show(lam_as)}")
    _write_csv(out / "stability.csv",
               ["step", "mu", "lambda_nn3", "lambda_fd", "lambda_asymptotic"], rows)
    _write_csv(out / "eigenfunction.csv", ["step"] + _coords(grid) + ["v"], eig_rows)
    return EXIT_OK


def _show(x):
    return "-" if x is None else f"{x:.6g}"


def table1_rows(n=100, seed=0):
    """``(branch, C, mse_fd, mse_nn)`` for the ten 1-D Bratu cases."""
    problem, grid = Problem("bratu1d"), Grid(1, n)
    rows = []
    for branch in ("lower", "upper"):
        for C in TABLE1_LOADS:
            exact = exact_solution(problem, C, branch, grid.points[:, 0])
            state, _ = fd_solve(problem, grid, C, initial_guess(problem, grid, branch))
            net, _, _ = nn1_solve_branch(problem, grid, C, branch, seed=seed)
            rows.append((branch, C, _mse(state.full(), exact, grid),
                         _mse(mlp.forward(net, grid.points), exact, grid)))
    return rows


def cmd_table1(cfg, out):
    rows = table1_rows(cfg.n, cfg.seed)
    bad = [r for r in rows if not r[3] < r[2]]
    _write_csv(out / "table1.csv", ["branch", "C", "mse_fd", "mse_nn", "nn_better"],
               [[b, C, fd, nn, "yes" if nn < fd else "no"] for b, C, fd, nn in rows])
    for b, C, fd, nn in rows:
        _emit(f"{b:5s} C={C:.1f}  FD {fd:.4e}  NN {nn:.4e}")
    for b, C, fd, nn in bad:
        print(f"NN not better than FD: {b} C={C}", file=sys.stderr)
    return EXIT_TABLE if bad else EXIT_OK


COMMANDS = {"solve": cmd_solve, "continue": cmd_continue, "stability": cmd_stability,
            "table1": cmd_table1}


# ------------------------------------------------------------------ argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _points(text):
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--problem", default="bratu1d", choices=KINDS)
    common.add_argument("--method", default="nn", choices=("fd", "nn"))
    common.add_argument("--n", type=int, help="grid intervals per axis (default 100, 2-D 40)")
    par = common.add_mutually_exclusive_group()
    par.add_argument("--mu", type=float, help="problem parameter")
    par.add_argument("--C", dest="mu", type=float, help="Bratu load")
    par.add_argument("--phi", dest="mu", type=float, help="mixed Burgers flux")
    par.add_argument("--rho", dest="mu", type=float, help="Dirichlet Burgers inflow value")
    common.add_argument("--nu", type=float, help="Burgers viscosity")
    common.add_argument("--branch", default="lower", choices=("lower", "upper"))
    common.add_argument("--seed", type=int, help="init seed (falls back to $BRANCHTRACE_SEED, then 0)")
    common.add_argument("--init-range", type=float, default=0.01)
    common.add_argument("--activation", choices=mlp.ACTIVATIONS)
    common.add_argument("--mask", choices=mlp.MASKS)
    common.add_argument("--alpha", type=float, default=1.0)
    common.add_argument("--beta", type=float, help="arclength row weight (default 1, 2-D 1e4)")
    common.add_argument("--gamma", type=float, default=NN3_GAMMA)
    common.add_argument("--out", default="run", help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="branchtrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("solve", parents=[common], help="fixed-parameter solve")

    cont = sub.add_parser("continue", parents=[common], help="trace a branch")
    cont.add_argument("--delta", type=float)
    cont.add_argument("--tau", type=float, default=1.0)
    cont.add_argument("--max-steps", type=int, default=200)
    cont.add_argument("--mu-start", type=float)
    cont.add_argument("--mu-min", type=float, default=0.0)
    cont.add_argument("--mu-max", type=float, default=math.inf)
    cont.add_argument("--norm", choices=("inf", "2"), default="inf")
    cont.add_argument("--stability", choices=("none", "fold", "all"), default="none")
    cont.add_argument("--reference", action="store_true", help="also write the analytic diagram")

    stab = sub.add_parser("stability", parents=[common], help="largest eigenvalues")
    stab.add_argument("--fd-n", type=int, help="grid for the FD eigenvalue (default --n)")
    stab.add_argument("--from-run", help="run directory written by 'continue'")
    stab.add_argument("--points", type=_points, default=[], help="comma-separated steps")

    sub.add_parser("table1", parents=[common], help="1-D Bratu MSE table, FD vs NN")
    return parser


def config_from_args(args, environ=os.environ):
    seed = args.seed
    if seed is None:
        env = environ.get("BRANCHTRACE_SEED")
        try:
            seed = int(env) if env else 0
        except ValueError as exc:
            raise InvalidConfig(f"BRANCHTRACE_SEED must be an integer, got {env!r}") from exc
    known = RunConfig.__dataclass_fields__
    values = {k: v for k, v in vars(args).items() if k in known and v is not None}
    values["seed"] = seed
    return RunConfig(**values).resolve()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
    except InvalidConfig as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "run.json", _clean(asdict(cfg)))
    try:
        return COMMANDS[cfg.command](cfg, out)
    except InvalidConfig as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, BootstrapFailed) as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        report = getattr(exc, "report", None) or getattr(exc.__cause__, "report", None)
        if report is not None:
            print(json.dumps(report.as_dict()), file=sys.stderr)
        return EXIT_SOLVER
    except BranchTraceError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
