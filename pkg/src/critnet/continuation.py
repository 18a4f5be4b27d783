"""Pseudo-arclength continuation of characteristic-equation solutions.

The unknown is ``u = (vec C, p)`` and the branch is the zero set of
``H(C; p)`` (the scaled characteristic residual) in R^{d^2 + 1}.  Each step
predicts along the unit tangent and corrects with Newton on ``H = 0`` plus the
hyperplane through the predictor orthogonal to the tangent.  A fold is a sign
change of the tangent's parameter component.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import charsolve
from .charsolve import CharPoint, NoConvergenceError, fd_jacobian, make_point, scaled_residual_raw
from .model import ProblemSpec

log = logging.getLogger(__name__)

ESCAPED = "escaped"
BOUND = "bound"
MAX_POINTS = "max-points"
UNDERFLOW = "step-underflow"


class ContinuationError(RuntimeError):
    pass


class StepUnderflowError(ContinuationError):
    def __init__(self, message: str, last_point: CharPoint):
        super().__init__(message)
        self.last_point = last_point


@dataclass(frozen=True)
class Parameter:
    """How a scalar continuation parameter p enters the problem.

    ``kind`` is ``"lambda"``, ``"log-lambda"`` (p = log lambda, needed to
    follow branches as lambda -> 0) or ``"mu"`` (p enters R through
    ``R_of_mu``).
    """

    kind: str
    lower: float = -math.inf
    upper: float = math.inf
    R_of_mu: Optional[Callable[[float], np.ndarray]] = None

    @property
    def name(self) -> str:
        return self.kind

    def problem_data(self, spec: ProblemSpec, p: float):
        """Return (R, lam, log_lam) at parameter value p."""
        if self.kind == "lambda":
            return spec.R, p, None
        if self.kind == "log-lambda":
            return spec.R, math.exp(p), p
        if self.kind == "mu":
            return np.asarray(self.R_of_mu(p), dtype=float), spec.lam, None
        raise ValueError(f"unknown parameter kind {self.kind!r}")

    def spec_at(self, spec: ProblemSpec, p: float) -> ProblemSpec:
        R, lam, _ = self.problem_data(spec, p)
        return spec.replace(R=R, lam=lam)

    def value_at(self, spec: ProblemSpec) -> float:
        if self.kind == "lambda":
            return spec.lam
        if self.kind == "log-lambda":
            if spec.lam <= 0:
                raise ValueError("log-lambda continuation needs lambda > 0")
            return math.log(spec.lam)
        raise ValueError("the starting value of mu must be supplied explicitly")

    def contains(self, p: float) -> bool:
        return self.lower <= p <= self.upper


def lambda_parameter(lower: float = 0.0, upper: float = math.inf) -> Parameter:
    return Parameter("lambda", lower, upper)


def log_lambda_parameter(lower: float = -800.0, upper: float = math.inf) -> Parameter:
    return Parameter("log-lambda", lower, upper)


def mu_parameter(R_of_mu: Callable[[float], np.ndarray], lower: float = -math.inf, upper: float = math.inf) -> Parameter:
    return Parameter("mu", lower, upper, R_of_mu)


@dataclass(frozen=True)
class ContinuationConfig:
    initial_step: float = 0.02
    min_step: float = 1e-8
    max_step: float = 0.2
    max_points: int = 500
    corrector_tol: float = 1e-10
    direction: int = 1
    max_corrector_iter: int = 8
    escape_norm: float = 1e3
    fold_tol: float = 1e-9
    classify: bool = False
    classify_probes: int = 32
    classify_grid: int = 200

    def __post_init__(self):
        if not (0 < self.min_step <= self.initial_step <= self.max_step):
            raise ValueError("need 0 < min_step <= initial_step <= max_step")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.max_points < 1 or self.corrector_tol <= 0:
            raise ValueError("max_points and corrector_tol must be positive")


@dataclass
class Branch:
    parameter_name: str
    points: list[tuple[float, CharPoint]]
    folds: list[int]
    arclength_steps: list[float]
    tangents: list[np.ndarray] = field(default_factory=list)
    status: str = MAX_POINTS
    spec: Optional[ProblemSpec] = None
    param: Optional[Parameter] = None

    def __len__(self) -> int:
        return len(self.points)

    @property
    def params(self) -> np.ndarray:
        return np.array([p for p, _ in self.points])

    @property
    def matrices(self) -> np.ndarray:
        return np.stack([cp.C for _, cp in self.points])

    @property
    def costs(self) -> np.ndarray:
        return np.array([cp.cost for _, cp in self.points])

    @property
    def classes(self) -> list[str]:
        return [cp.classification for _, cp in self.points]

    def to_dict(self) -> dict:
        return {
            "parameter_name": self.parameter_name,
            "status": self.status,
            "folds": list(self.folds),
            "arclength_steps": list(self.arclength_steps),
            "points": [{"param": p, **cp.to_dict()} for p, cp in self.points],
        }


class _System:
    """Residual, Jacobian and tangent of the extended system."""

    def __init__(self, spec: ProblemSpec, param: Parameter):
        self.spec = spec
        self.param = param
        self.d = spec.dim

    def H(self, u: np.ndarray) -> np.ndarray:
        d = self.d
        R, lam, log_lam = self.param.problem_data(self.spec, u[-1])
        C = u[:-1].reshape(d, d)
        return scaled_residual_raw(C, R, self.spec.Sigma0, self.spec.T, lam, log_lam).ravel()

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        steps = np.full(u.size, 1e-6 * (1.0 + np.linalg.norm(u[:-1])))
        steps[-1] = 1e-6 * (1.0 + abs(u[-1]))
        return fd_jacobian(self.H, u, steps)

    def tangent(self, u: np.ndarray, J: Optional[np.ndarray] = None) -> np.ndarray:
        J = self.jacobian(u) if J is None else J
        _, _, Vt = np.linalg.svd(J)
        t = Vt[-1]
        return t / np.linalg.norm(t)

    def point(self, u: np.ndarray) -> CharPoint:
        d = self.d
        R, lam, _ = self.param.problem_data(self.spec, u[-1])
        return make_point(u[:-1].reshape(d, d), self.spec.replace(R=R, lam=lam))

    def converged(self, u: np.ndarray, r: np.ndarray, tol: float) -> bool:
        if np.linalg.norm(r) > tol:
            return False
        return self.point(u).residual_norm <= tol

    def correct(self, u_pred: np.ndarray, tau: np.ndarray, tol: float, max_iter: int):
        """Newton on [H(u); tau . (u - u_pred)] = 0.  Returns (u, iterations) or None."""
        u = u_pred.copy()
        for it in range(max_iter + 1):
            try:
                r = self.H(u)
            except (ValueError, FloatingPointError):
                return None
            if not np.all(np.isfinite(r)):
                return None
            if self.converged(u, r, tol):
                return u, it
            if it == max_iter:
                return None
            J = self.jacobian(u)
            ext = np.vstack([J, tau])
            rhs = -np.concatenate([r, [tau @ (u - u_pred)]])
            try:
                du = np.linalg.solve(ext, rhs)
            except np.linalg.LinAlgError:
                return None
            u = u + du
        return None

    def solve_fixed(self, C0: np.ndarray, p: float, tol: float) -> Optional[np.ndarray]:
        try:
            cp = charsolve.newton_solve(C0, self.param.spec_at(self.spec, p), tol=tol, max_iter=30)
        except (NoConvergenceError, charsolve.SingularJacobianError, ValueError):
            return None
        return np.concatenate([cp.C.ravel(), [p]])


def continue_branch(
    seed: CharPoint,
    spec: ProblemSpec,
    param: Parameter,
    config: ContinuationConfig = ContinuationConfig(),
    start: Optional[float] = None,
) -> Branch:
    """Trace the solution branch through ``seed`` in the parameter ``param``.

    ``start`` is the parameter value at the seed (read from ``spec`` for the
    lambda kinds).  The run stops at ``max_points``, on leaving the parameter
    bounds (after a fixed-parameter solve placing the last point on the
    bound), when ``||C||`` exceeds ``escape_norm`` (status ``"escaped"``) or
    on step underflow (status ``"step-underflow"``).
    """
    p0 = param.value_at(spec) if start is None else float(start)
    sys = _System(spec, param)
    u = np.concatenate([np.asarray(seed.C, dtype=float).ravel(), [p0]])
    if not sys.converged(u, sys.H(u), config.corrector_tol):
        res = sys.correct(u, np.eye(u.size)[-1], config.corrector_tol, config.max_corrector_iter)
        if res is None:
            raise ContinuationError("corrector failed at the seed point")
        u = res[0]
    tau = sys.tangent(u)
    if tau[-1] * config.direction < 0 or (tau[-1] == 0 and tau[0] < 0):
        tau = -tau
    branch = Branch(param.name, [(float(u[-1]), sys.point(u))], [], [], [tau], spec=spec, param=param)
    step = config.initial_step
    easy = 0
    while len(branch.points) < config.max_points:
        u_pred = u + step * tau
        inside = param.contains(u[-1])
        crossing = inside and not param.contains(u_pred[-1])
        res = None if crossing else sys.correct(u_pred, tau, config.corrector_tol, config.max_corrector_iter)
        if res is not None and np.linalg.norm(res[0] - u_pred) > 2.0 * step:
            res = None
        if res is not None and inside and not param.contains(res[0][-1]):
            crossing = True
            res = None
        if crossing:
            bound = param.lower if u_pred[-1] < param.lower else param.upper
            frac = (bound - u[-1]) / (u_pred[-1] - u[-1]) if u_pred[-1] != u[-1] else 0.0
            if step > 4 * config.min_step and frac < 0.05:
                # approach the bound in smaller steps before snapping to it
                step *= 0.5
                continue
            guess = u + frac * (u_pred - u)
            landed = sys.solve_fixed(guess[:-1].reshape(sys.d, sys.d), bound, config.corrector_tol)
            if landed is not None and np.linalg.norm(landed - guess) <= 2.0 * step:
                _append(branch, sys, landed, tau, np.linalg.norm(landed - u), config.fold_tol)
            branch.status = BOUND
            break
        if res is None:
            step *= 0.5
            easy = 0
            if step < config.min_step:
                branch.status = UNDERFLOW
                log.warning("step underflow at parameter %.6g", u[-1])
                break
            continue
        u_new, iters = res
        tau = _append(branch, sys, u_new, tau, step, config.fold_tol)
        u = u_new
        if np.linalg.norm(u[:-1]) > config.escape_norm:
            branch.status = ESCAPED
            break
        easy = easy + 1 if iters <= 3 else 0
        if easy >= 3:
            step = min(step * 1.3, config.max_step)
            easy = 0
    if config.classify:
        classify_branch(branch, config.classify_probes, config.classify_grid)
    return branch


def _append(branch: Branch, sys: _System, u_new, tau_old, step, fold_tol: float) -> np.ndarray:
    tau = sys.tangent(u_new)
    if tau @ tau_old < 0:
        tau = -tau
    prev = branch.tangents[-1][-1]
    if tau[-1] * prev < 0 and max(abs(tau[-1]), abs(prev)) > fold_tol:
        branch.folds.append(len(branch.points))
    branch.points.append((float(u_new[-1]), sys.point(u_new)))
    branch.tangents.append(tau)
    branch.arclength_steps.append(float(step))
    return tau


def classify_branch(branch: Branch, probes: int = 32, N: int = 200, threads: Optional[int] = None) -> Branch:
    """Attach min/saddle labels to every point, using the branch tangent as a probe."""
    from .parallel import map_threads

    d = branch.spec.dim

    def work(k):
        p, cp = branch.points[k]
        spec_k = branch.param.spec_at(branch.spec, p)
        tdir = branch.tangents[k][:-1].reshape(d, d)
        tangent = tdir if np.linalg.norm(tdir) > 1e-12 else None
        return cp.with_classification(charsolve.classify(cp, spec_k, probes=probes, N=N, tangent=tangent))

    labelled = map_threads(work, range(len(branch.points)), threads)
    branch.points = [(p, cp) for (p, _), cp in zip(branch.points, labelled)]
    return branch


def fold_points(branch: Branch, tol: float = 1e-10, max_iter: int = 40) -> list[tuple[float, CharPoint]]:
    """Refine each detected fold to the point where the tangent's parameter part vanishes.

    The unknown is the arclength s measured from the point before the sign
    change along its tangent; the tangent parameter component is driven to
    zero by a safeguarded secant iteration (regula falsi with the Illinois
    modification).
    """
    if not branch.points:
        raise ValueError("empty branch")
    if not branch.folds:
        return []
    sys = _System(branch.spec, branch.param)
    out = []
    for k in branch.folds:
        p_a, cp_a = branch.points[k - 1]
        u_a = np.concatenate([cp_a.C.ravel(), [p_a]])
        tau_a = branch.tangents[k - 1]
        p_b, cp_b = branch.points[k]
        u_b = np.concatenate([cp_b.C.ravel(), [p_b]])

        def probe(s):
            if s == 0.0:
                return u_a, tau_a[-1]
            res = sys.correct(u_a + s * tau_a, tau_a, tol, 12)
            if res is None:
                raise NoConvergenceError("corrector failed during fold refinement")
            t = sys.tangent(res[0])
            if t @ tau_a < 0:
                t = -t
            return res[0], t[-1]

        s_lo, s_hi = 0.0, float(tau_a @ (u_b - u_a))
        _, f_lo = probe(s_lo)
        u_best, f_hi = probe(s_hi)
        side = 0
        for _ in range(max_iter):
            s = s_hi - f_hi * (s_hi - s_lo) / (f_hi - f_lo)
            u_s, f_s = probe(s)
            u_best = u_s
            if abs(f_s) < 1e-12 or abs(s_hi - s_lo) < 1e-13 * (1 + abs(s)):
                break
            if f_s * f_hi < 0:
                s_lo, f_lo = s_hi, f_hi
                side = 0
            else:
                f_lo *= 0.5 if side == 1 else 1.0
                side = 1
            s_hi, f_hi = s, f_s
        out.append((float(u_best[-1]), sys.point(u_best)))
    return out


# -- export -----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def branch_rows(branch: Branch) -> tuple[list[str], list[list[str]]]:
    d = branch.spec.dim if branch.spec is not None else branch.points[0][1].C.shape[0]
    header = ["param"] + [f"C_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    header += ["cost", "residual", "class", "fold_flag"]
    folds = set(branch.folds)
    rows = []
    for k, (p, cp) in enumerate(branch.points):
        row = [_fmt(p)] + [_fmt(v) for v in cp.C.ravel()]
        row += [_fmt(cp.cost), _fmt(cp.residual_norm), cp.classification, "1" if k in folds else "0"]
        rows.append(row)
    return header, rows


def write_branch_csv(branch: Branch, path) -> Path:
    path = Path(path)
    header, rows = branch_rows(branch)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_branch_json(branch: Branch, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(branch.to_dict(), indent=1) + "\n")
    return path
