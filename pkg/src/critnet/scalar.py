"""Complete analysis of the one-dimensional problem.

With d = 1, writing c = T*C and lt = lambda / (T * Sigma0), the characteristic
equation becomes ``f(c) := lt * c * exp(-c) + exp(c) = R``.  ``f`` is monotone
when ``lt <= 2 e^3``.  Above that threshold it has a local maximum at
``c_lo < 3/2`` and a local minimum at ``c_hi > 3/2``, and R inside the window
``[f(c_hi), f(c_lo)]`` has three solutions.

A root with ``f'(c) > 0`` is a strict minimizer of J, and ``f'(c) < 0`` gives
a saddle.  In one dimension every critical path is constant, so the sign of
``f'`` is the whole story.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .matops import PropertyViolationError
from .model import ProblemSpec

THRESHOLD = 2.0 * np.exp(3.0)
SCAN_HALFWIDTH = 40.0
SCAN_POINTS = 10_000


class DimensionError(ValueError):
    pass


def _check_scalar(spec: ProblemSpec):
    if spec.dim != 1:
        raise DimensionError(f"scalar analysis needs dim 1, got {spec.dim}")


def scalar_residual(C: float, spec: ProblemSpec) -> float:
    """lambda C - exp(TC) (R - exp(TC)) Sigma0."""
    _check_scalar(spec)
    R, S = float(spec.R[0, 0]), float(spec.Sigma0[0, 0])
    e = np.exp(spec.T * C)
    return float(spec.lam * C - e * (R - e) * S)


def lambda_tilde(spec: ProblemSpec) -> float:
    _check_scalar(spec)
    S = float(spec.Sigma0[0, 0])
    if S <= 0:
        raise PropertyViolationError("Sigma0 must be positive in the scalar analysis")
    return spec.lam / (spec.T * S)


def reduced_f(c, lt: float):
    c = np.asarray(c, dtype=float)
    return lt * c * np.exp(-c) + np.exp(c)


def reduced_df(c, lt: float):
    c = np.asarray(c, dtype=float)
    return lt * np.exp(-c) * (1.0 - c) + np.exp(c)


def turning_curve(c):
    """lt(c) = exp(2c) / (c - 1): the lt at which c is a critical point of f."""
    c = np.asarray(c, dtype=float)
    return np.exp(2.0 * c) / (c - 1.0)


def turning_curve_minimizer() -> tuple[float, float]:
    """Locate the minimum of ``turning_curve`` on (1, inf) numerically.

    d/dc log(exp(2c) / (c - 1)) = 2 - 1 / (c - 1); its root is found by
    bracketing, not by formula.
    """
    c = brentq(lambda x: 2.0 - 1.0 / (x - 1.0), 1.0 + 1e-9, 10.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return float(c), float(turning_curve(c))


def window(lt: float) -> Optional[tuple[float, float, float, float]]:
    """Return ``(R1, R2, c_hi, c_lo)`` for lt above the threshold, else None."""
    if lt <= THRESHOLD:
        return None
    c_star, _ = turning_curve_minimizer()
    log_lt = np.log(lt)
    g = lambda c: 2.0 * c - np.log(c - 1.0) - log_lt
    # below c_star work in u = log(c - 1) so that c_lo -> 1 stays resolvable
    gu = lambda u: 2.0 * (1.0 + np.exp(u)) - u - log_lt
    u_lo = brentq(gu, -log_lt - 10.0, np.log(c_star - 1.0), xtol=1e-15)
    c_lo = 1.0 + np.exp(u_lo)
    hi = c_star + 1.0
    while g(hi) < 0:
        hi = 2.0 * hi
    c_hi = brentq(g, c_star, hi, xtol=1e-15)
    return float(reduced_f(c_hi, lt)), float(reduced_f(c_lo, lt)), float(c_hi), float(c_lo)


@dataclass
class ScalarSolution:
    C: float
    c_tilde: float
    classification: str
    slope: float


@dataclass
class ScalarRegime:
    """All real solutions of the scalar characteristic equation."""

    lambda_tilde: float
    R: float
    T: float
    threshold: float = THRESHOLD
    window: Optional[tuple[float, float]] = None
    solutions: list[ScalarSolution] = field(default_factory=list)
    degenerate: bool = False

    @property
    def count(self) -> int:
        return len(self.solutions)

    @property
    def regime(self) -> str:
        if self.window is None:
            return "unique"
        if self.degenerate:
            return "window-boundary"
        return "three-solutions" if self.count == 3 else "outside-window"

    @property
    def roots(self) -> list[float]:
        return [s.C for s in self.solutions]

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "lambda_tilde": self.lambda_tilde,
            "threshold": self.threshold,
            "window": list(self.window) if self.window else None,
            "count": self.count,
            "roots": [
                {"C": s.C, "C_tilde": s.c_tilde, "class": s.classification, "slope": s.slope}
                for s in self.solutions
            ],
        }


def _label(slope: float, scale: float) -> str:
    if slope > 1e-9 * scale:
        return "minimum"
    if slope < -1e-9 * scale:
        return "saddle"
    return "unclassified"


def solve_all(spec: ProblemSpec, scan_points: int = SCAN_POINTS) -> ScalarRegime:
    """Find every real root of f(c) = R by a grid scan plus bracketed refinement.

    Exactly on a window endpoint the tangential root is reported together with
    the simple one (count 2) and ``degenerate`` is set.
    """
    lt = lambda_tilde(spec)
    R = float(spec.R[0, 0])
    if R <= 0:
        raise PropertyViolationError("scalar analysis requires R > 0")
    T = spec.T
    logR = np.log(R)
    grid = np.linspace(logR - SCAN_HALFWIDTH, logR + SCAN_HALFWIDTH, scan_points)
    vals = reduced_f(grid, lt) - R
    win = window(lt)
    roots: list[float] = []
    roots.extend(float(c) for c in grid[vals == 0.0])
    for k in np.nonzero(vals[:-1] * vals[1:] < 0)[0]:
        roots.append(float(brentq(lambda c: reduced_f(c, lt) - R, grid[k], grid[k + 1], xtol=1e-14, rtol=1e-15)))
    degenerate = False
    if win is not None:
        R1, R2, c_hi, c_lo = win
        for Rb, cb in ((R1, c_hi), (R2, c_lo)):
            if abs(R - Rb) <= 1e-12 * max(1.0, R):
                degenerate = True
                roots = [r for r in roots if abs(r - cb) > 1e-4] + [cb]
    roots.sort()
    sols = []
    for c in roots:
        slope = float(reduced_df(c, lt))
        sols.append(ScalarSolution(C=c / T, c_tilde=c, classification=_label(slope, np.exp(c) + lt), slope=slope))
    return ScalarRegime(
        lambda_tilde=lt,
        R=R,
        T=T,
        window=None if win is None else (win[0], win[1]),
        solutions=sols,
        degenerate=degenerate,
    )


def asymptotic_C(spec: ProblemSpec) -> float:
    """Two-term small-lambda expansion log(R)/T - lambda log(R) / (T^2 R^2 Sigma0)."""
    _check_scalar(spec)
    R, S = float(spec.R[0, 0]), float(spec.Sigma0[0, 0])
    if R <= 0:
        raise PropertyViolationError("scalar analysis requires R > 0")
    L = np.log(R)
    return float(L / spec.T - spec.lam * L / (spec.T**2 * R**2 * S))


def curve_samples(spec: ProblemSpec, points: int = 801, halfwidth: float = 4.0) -> np.ndarray:
    """(c, f(c)) samples centred on log R for plotting; shape (points, 2)."""
    lt = lambda_tilde(spec)
    R = float(spec.R[0, 0])
    centre = np.log(R) if R > 0 else 0.0
    if lt > THRESHOLD:
        centre = 0.5 * (centre + 1.5)
    c = np.linspace(centre - halfwidth, centre + halfwidth, points)
    return np.column_stack([c, reduced_f(c, lt)])
