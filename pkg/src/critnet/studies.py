"""End-to-end numerical studies: rotation target branches and the shifted-rotation target."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import charsolve, continuation as ct
from .matops import logm_principal
from .model import ProblemSpec
from .parallel import map_threads

ROTATION = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation_spec(lam: float = 0.0) -> ProblemSpec:
    return ProblemSpec(ROTATION, np.eye(2), T=1.0, lam=lam)


def shifted_rotation(mu: float) -> np.ndarray:
    return np.array([[0.0, -1.0], [1.0, mu]])


@dataclass
class RotationStudy:
    branches: dict[int, ct.Branch]
    escapes: dict[int, ct.Branch]
    folds: dict[int, list[tuple[float, charsolve.CharPoint]]]
    principal_costs: dict[int, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class RotationStudyConfig:
    branches: tuple[int, ...] = (0, 1, -1, 2, -2)
    lambda_min: float = 1e-3
    lambda_max: float = 0.3
    initial_step: float = 0.005
    max_step: float = 0.2
    max_points: int = 400
    classify: bool = True
    escape: bool = True
    escape_max_step: float = 20.0
    threads: Optional[int] = None


def rotation_branches(config: RotationStudyConfig = RotationStudyConfig()) -> RotationStudy:
    """Continue C(0; n) in lambda, refine its folds and follow the returning sub-branch to escape."""
    spec = rotation_spec(0.0)
    lam_cfg = ct.ContinuationConfig(
        initial_step=config.initial_step,
        max_step=config.max_step,
        max_points=config.max_points,
        classify=False,
    )

    def run(n):
        seed = charsolve.normal_solution(spec, n)
        br = ct.continue_branch(seed, spec, ct.lambda_parameter(config.lambda_min, config.lambda_max), lam_cfg)
        if config.classify:
            ct.classify_branch(br, threads=1)
        folds = ct.fold_points(br)
        esc = None
        if config.escape and br.folds:
            p, last = br.points[-1]
            esc_cfg = ct.ContinuationConfig(
                initial_step=0.1, max_step=config.escape_max_step, max_points=config.max_points, direction=-1
            )
            esc = ct.continue_branch(last, spec.replace(lam=p), ct.log_lambda_parameter(), esc_cfg)
        # the principal branch evaluated at the same lambda values, for cost comparison
        pc = np.array([charsolve.normal_solution(spec.replace(lam=lam), 0).cost for lam in br.params])
        return n, br, esc, folds, pc

    results = map_threads(run, config.branches, config.threads)
    study = RotationStudy({}, {}, {})
    for n, br, esc, folds, pc in results:
        study.branches[n] = br
        study.folds[n] = folds
        study.principal_costs[n] = pc
        if esc is not None:
            study.escapes[n] = esc
    return study


@dataclass
class ShiftedRotationStudy:
    mu_branch: ct.Branch
    lambda_branch: ct.Branch
    critical: charsolve.CharPoint
    log_R: np.ndarray
    summary: dict


def shifted_rotation_study(
    mu_target: float = math.pi / 2,
    lambda_max: float = 1.0,
    max_points: int = 400,
) -> ShiftedRotationStudy:
    """Deform R from a rotation to [[0,-1],[1,mu]] at lambda = 0, then continue in lambda."""
    spec0 = rotation_spec(0.0)
    seed = charsolve.normal_solution(spec0, 0)
    mu_par = ct.mu_parameter(shifted_rotation, lower=-1.0, upper=mu_target)
    cfg = ct.ContinuationConfig(initial_step=0.02, max_step=0.1, max_points=max_points)
    mu_branch = ct.continue_branch(seed, spec0, mu_par, cfg, start=0.0)
    p_end, crit = mu_branch.points[-1]
    spec = ProblemSpec(shifted_rotation(mu_target), np.eye(2), 1.0, 0.0)
    lam_branch = ct.continue_branch(
        crit, spec, ct.lambda_parameter(0.0, lambda_max), ct.ContinuationConfig(initial_step=0.02, max_step=0.05, max_points=max_points)
    )
    L = logm_principal(spec.R)
    path_norm = float(np.sum(crit.C * crit.C)) * spec.T  # int ||A_t||^2 is constant along the path
    const_norm = float(np.sum(L * L)) / spec.T
    summary = {
        "mu_end": p_end,
        "C_end": crit.C.tolist(),
        "regularizer_integral_critical": path_norm,
        "regularizer_integral_constant_log": const_norm,
        "critical_below_constant": bool(path_norm < const_norm),
        "pi_squared_over_4": math.pi**2 / 4,
        "lambda": [p for p, _ in lam_branch.points],
        "cost_critical": [cp.cost for _, cp in lam_branch.points],
        "cost_constant_log": [0.5 * lam * const_norm for lam, _ in lam_branch.points],
    }
    return ShiftedRotationStudy(mu_branch, lam_branch, crit, L, summary)
