"""The characteristic equation lambda C = F^T (R - F) Sigma and its solutions.

Here ``F = expm(2 T Omega) expm(T C^T)`` with ``Omega`` the skew part of C.
A solution C determines the critical weight path
``A_t = expm(2 t Omega) C expm(-2 t Omega)``.

Root finding works on the left-scaled residual
``F^{-T} G(C) = lambda F^{-T} C - (R - F) Sigma``.  It has the same zeros as
G and stays O(1) when C has a very negative symmetric part, where G itself
underflows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .hamilton import discrete_gradient_values
from .matops import (
    BranchUnavailableError,
    InvalidInputError,
    as_square,
    check_property_p1,
    expm,
    is_normal,
    skew_part,
    sym_part,
)
from .model import ProblemSpec, WeightPath, trapezoid_weights

MINIMUM = "minimum"
SADDLE = "saddle"
UNCLASSIFIED = "unclassified"
_CLASSES = (MINIMUM, SADDLE, UNCLASSIFIED)


class NoConvergenceError(RuntimeError):
    pass


class SingularJacobianError(RuntimeError):
    """Newton hit a (numerically) singular Jacobian; usually a fold is close."""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


class NotNormalError(ValueError):
    pass


@dataclass(frozen=True)
class CharPoint:
    """A solution of the characteristic equation with derived quantities."""

    C: np.ndarray
    lam: float
    T: float
    omega: np.ndarray
    sym: np.ndarray
    F: np.ndarray
    residual_norm: float
    cost: float
    classification: str = UNCLASSIFIED

    def with_classification(self, label: str) -> "CharPoint":
        if label not in _CLASSES:
            raise ValueError(label)
        return CharPoint(**{**self.__dict__, "classification": label})

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.C))

    def to_dict(self) -> dict:
        return {
            "C": self.C.tolist(),
            "lambda": self.lam,
            "residual": self.residual_norm,
            "cost": self.cost,
            "class": self.classification,
        }


def char_F(C, T: float) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    return expm(2.0 * T * skew_part(C)) @ expm(T * C.T)


def residual(C, spec: ProblemSpec) -> np.ndarray:
    """G(C) = lambda C - F^T (R - F) Sigma."""
    C = as_square(C, "C")
    F = char_F(C, spec.T)
    return spec.lam * C - F.T @ (spec.R - F) @ spec.Sigma0


def scaled_residual_raw(C, R, Sigma0, T: float, lam: float = 0.0, log_lam: Optional[float] = None) -> np.ndarray:
    """F^{-T} G(C) from raw problem data.

    The regularization term uses lambda F^{-T} = expm(2T Omega) expm(log(lambda) I - T C),
    so ``log_lam`` may be given instead of ``lam`` when lambda itself would
    underflow.  A negative ``lam`` is allowed here (it is outside the valid
    problem range but keeps continuation predictors well defined).
    """
    C = np.asarray(C, dtype=float)
    d = C.shape[0]
    rot = expm(2.0 * T * skew_part(C))
    F = rot @ expm(T * C.T)
    out = -(R - F) @ Sigma0
    if log_lam is None:
        if lam == 0:
            return out
        log_lam = np.log(abs(lam))
        sign = np.sign(lam)
    else:
        sign = 1.0
    return out + sign * (rot @ expm(log_lam * np.eye(d) - T * C) @ C)


def scaled_residual(C, spec: ProblemSpec, log_lam: Optional[float] = None) -> np.ndarray:
    """F^{-T} G(C); same zeros as :func:`residual` but O(1) for very stable C."""
    return scaled_residual_raw(C, spec.R, spec.Sigma0, spec.T, spec.lam, log_lam)


def critical_cost(cp: "CharPoint | np.ndarray", spec: ProblemSpec) -> float:
    """(lam T / 2) tr(C^T C) + 1/2 tr((F - R)^T (F - R) Sigma) + noise_var / 2."""
    C = cp.C if isinstance(cp, CharPoint) else np.asarray(cp, dtype=float)
    F = char_F(C, spec.T)
    E = F - spec.R
    return float(
        0.5 * spec.lam * spec.T * np.sum(C * C)
        + 0.5 * np.sum((E @ spec.Sigma0) * E)
        + 0.5 * spec.noise_var
    )


def make_point(C, spec: ProblemSpec, classification: str = UNCLASSIFIED) -> CharPoint:
    C = as_square(C, "C").copy()
    C.flags.writeable = False
    return CharPoint(
        C=C,
        lam=spec.lam,
        T=spec.T,
        omega=skew_part(C),
        sym=sym_part(C),
        F=char_F(C, spec.T),
        residual_norm=float(np.linalg.norm(residual(C, spec))),
        cost=critical_cost(C, spec),
        classification=classification,
    )


def point_from_dict(d: dict, spec: ProblemSpec) -> CharPoint:
    label = d.get("class", UNCLASSIFIED)
    return make_point(np.asarray(d["C"], dtype=float), spec.replace(lam=float(d["lambda"])), label)


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], u: np.ndarray, steps) -> np.ndarray:
    """Central-difference Jacobian; ``steps`` is a scalar or per-coordinate array."""
    u = np.asarray(u, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), u.shape)
    cols = []
    for j in range(u.size):
        e = np.zeros_like(u)
        e[j] = steps[j]
        cols.append((fun(u + e) - fun(u - e)) / (2.0 * steps[j]))
    return np.column_stack(cols)


def converged(C: np.ndarray, spec: ProblemSpec, tol: float) -> bool:
    return (
        np.linalg.norm(scaled_residual(C, spec)) <= tol
        and np.linalg.norm(residual(C, spec)) <= tol
    )


def newton_solve(
    seed_C,
    spec: ProblemSpec,
    tol: float = 1e-10,
    max_iter: int = 50,
    full_output: bool = False,
):
    """Damped Newton iteration on the vectorized characteristic equation.

    The Jacobian is assembled column by column with central differences of
    step ``1e-6 (1 + ||C||)``.  A step is halved (up to 30 times) while it
    fails to decrease the residual norm.

    Returns the converged :class:`CharPoint`, or ``(point, iterations)`` when
    ``full_output`` is set.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    C = as_square(seed_C, "seed_C").copy()
    d = C.shape[0]
    fun = lambda c: scaled_residual(c.reshape(d, d), spec).ravel()
    c = C.ravel()
    r = fun(c)
    for it in range(max_iter + 1):
        if converged(c.reshape(d, d), spec, tol):
            cp = make_point(c.reshape(d, d), spec)
            return (cp, it) if full_output else cp
        if it == max_iter:
            break
        J = fd_jacobian(fun, c, 1e-6 * (1.0 + np.linalg.norm(c)))
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e13:
            raise SingularJacobianError(
                f"Jacobian is singular to working precision (cond ~ {cond:.2e}); near a fold?",
                float(cond),
            )
        delta = np.linalg.solve(J, -r)
        rn = np.linalg.norm(r)
        alpha = 1.0
        for _ in range(30):
            trial = c + alpha * delta
            r_trial = fun(trial)
            if np.all(np.isfinite(r_trial)) and np.linalg.norm(r_trial) < rn:
                break
            alpha *= 0.5
        else:
            raise NoConvergenceError("line search failed to reduce the residual")
        c, r = trial, r_trial
    raise NoConvergenceError(
        f"no convergence after {max_iter} iterations (residual {np.linalg.norm(r):.3e})"
    )


# -- normal solutions ---------------------------------------------------------------


def _eig_system(nu: np.ndarray, lam: float):
    x, y = nu
    E = np.exp(-x)
    ex = np.exp(x)
    cy, sy = np.cos(y), np.sin(y)
    f1 = lam * E * (x * cy - y * sy) + ex * cy
    f2 = lam * E * (x * sy + y * cy) + ex * sy
    J = np.array(
        [
            [lam * E * (cy - x * cy + y * sy) + ex * cy, lam * E * (-x * sy - sy - y * cy) - ex * sy],
            [lam * E * (sy - x * sy - y * cy) + ex * sy, lam * E * (x * cy + cy - y * sy) + ex * cy],
        ]
    )
    return np.array([f1, f2]), J


def solve_eigen_equation(r: complex, lam: float, n: int = 0, homotopy_steps: int = 16) -> complex:
    """Solve lam * nu * exp(-conj(nu)) + exp(nu) = r for complex nu.

    The Newton iteration works on the real pair (Re nu, Im nu), seeded at the
    lam = 0 solution ``log|r| + i (arg r + 2 pi n)`` and carried to ``lam``
    through ``homotopy_steps`` equal increments.
    """
    if abs(r) == 0:
        raise ValueError("r must be non-zero")
    target = np.array([r.real, r.imag])
    nu = np.array([np.log(abs(r)), np.angle(r) + 2.0 * np.pi * n])
    if lam == 0:
        return complex(nu[0], nu[1])
    for lam_j in np.linspace(0.0, lam, homotopy_steps + 1)[1:]:
        for _ in range(60):
            f, J = _eig_system(nu, lam_j)
            res = f - target
            if np.linalg.norm(res) <= 1e-14 * (1.0 + abs(r)):
                break
            step = np.linalg.solve(J, -res)
            nu = nu + step
            if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(nu)):
                break
        else:
            raise NoConvergenceError(
                f"eigenvalue equation did not converge at lam={lam_j:.4g} (branch {n}); near a fold?"
            )
    f, _ = _eig_system(nu, lam)
    if np.linalg.norm(f - target) > 1e-10 * (1.0 + abs(r)):
        raise NoConvergenceError("eigenvalue equation residual too large")
    return complex(nu[0], nu[1])


def normal_solution(spec: ProblemSpec, branch_n: int = 0) -> CharPoint:
    """Normal solution C(lambda; n) for normal R and Sigma = I.

    R is unitarily diagonalized (complex Schur form, diagonal for normal R);
    every eigenvalue r solves its own scalar equation and the results are
    reassembled.  Conjugate eigenvalue pairs receive conjugate solutions so
    that C is real.  With T != 1 the equation for T*mu has regularization
    lambda / T.
    """
    R = spec.R
    d = spec.dim
    if not is_normal(R):
        raise NotNormalError("R is not normal")
    if not np.allclose(spec.Sigma0, np.eye(d), atol=1e-12):
        raise InvalidInputError("normal_solution requires Sigma0 = I")
    check_property_p1(R)
    Tm, U = scipy.linalg.schur(R.astype(complex), output="complex")
    r = np.diag(Tm).copy()
    scale = max(1.0, float(np.max(np.abs(r))))
    tol = 1e-9 * scale
    mu = np.empty(d, dtype=complex)
    done = np.zeros(d, dtype=bool)
    lam_eff = spec.lam / spec.T
    for i in range(d):
        if done[i]:
            continue
        if abs(r[i].imag) <= tol:
            if branch_n != 0:
                raise BranchUnavailableError(
                    "real eigenvalues admit only the principal branch of the normal solution"
                )
            val = solve_eigen_equation(complex(r[i].real, 0.0), lam_eff, 0)
            mu[i] = val.real
            done[i] = True
            continue
        n_i = branch_n if r[i].imag > 0 else -branch_n
        val = solve_eigen_equation(complex(r[i]), lam_eff, n_i)
        mu[i] = val
        done[i] = True
        partners = [j for j in range(d) if not done[j] and abs(r[j] - np.conj(r[i])) <= tol]
        if not partners:
            raise InvalidInputError("complex eigenvalue without conjugate partner")
        mu[partners[0]] = np.conj(val)
        done[partners[0]] = True
    C = U @ np.diag(mu / spec.T) @ U.conj().T
    if np.max(np.abs(C.imag)) > 1e-9 * (1.0 + np.max(np.abs(C.real))):
        raise InvalidInputError("reassembled normal solution is not real")
    return make_point(C.real, spec)


def asymptotic_normal_solution(spec: ProblemSpec, logR: Optional[np.ndarray] = None) -> np.ndarray:
    """Two-term small-lambda expansion (1/T) log R - (lam/T^2) (R R^T)^{-1} log R."""
    from .matops import logm_principal

    L = logm_principal(spec.R) if logR is None else np.asarray(logR, dtype=float)
    R = spec.R
    return L / spec.T - (spec.lam / spec.T**2) * np.linalg.solve(R @ R.T, L)


# -- critical paths and trajectories ------------------------------------------------


def build_critical_path(cp: "CharPoint | np.ndarray", N: int, T: Optional[float] = None) -> WeightPath:
    """Sample A_t = expm(2 t Omega) C expm(-2 t Omega) on an N-step grid."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if isinstance(cp, CharPoint):
        C, T = cp.C, cp.T if T is None else T
    else:
        C = as_square(cp, "C")
        if T is None:
            raise ValueError("T is required for a bare matrix")
    Om = skew_part(C)
    t = np.linspace(0.0, T, N + 1)
    if np.linalg.norm(Om) == 0.0:
        return WeightPath(np.broadcast_to(C, (N + 1,) + C.shape).copy(), T)
    rots = np.stack([expm(2.0 * tk * Om) for tk in t])
    vals = rots @ C @ np.swapaxes(rots, -1, -2)
    return WeightPath(vals, T)


def closed_form_state(C, T: float, times, x0) -> np.ndarray:
    """X_t = expm(2 t Omega) expm(t C^T) x0 on ``times``."""
    C = np.asarray(C, dtype=float)
    Om = skew_part(C)
    return np.stack([expm(2 * t * Om) @ expm(t * C.T) @ x0 for t in times])


def closed_form_costate(C, T: float, times, terminal) -> np.ndarray:
    """Y_t = expm(2 t Omega) expm((T - t) C) expm(-2 T Omega) (z - X_T)."""
    C = np.asarray(C, dtype=float)
    Om = skew_part(C)
    back = expm(-2 * T * Om) @ terminal
    return np.stack([expm(2 * t * Om) @ expm((T - t) * C) @ back for t in times])


# -- min/saddle classification ------------------------------------------------------


@dataclass
class ClassifyReport:
    label: str
    ritz_values: np.ndarray
    scale: float
    probes: int = field(default=0)
    tol: float = 1e-6

    @property
    def index(self) -> int:
        """Number of conclusively negative Ritz values (a Morse index estimate)."""
        return int(np.sum(self.ritz_values < -self.tol * self.scale))


def _probe_directions(C: np.ndarray, T: float, N: int, probes: int, rng, tangent_path=None, scope: str = "path"):
    d = C.shape[0]
    t = np.linspace(0.0, T, N + 1)
    dirs = []
    for i in range(d):
        for j in range(d):
            E = np.zeros((d, d))
            E[i, j] = 1.0
            dirs.append(np.broadcast_to(E, (N + 1, d, d)).copy())
    if scope == "constant":
        return np.stack(dirs)
    if scope != "path":
        raise ValueError(f"unknown scope {scope!r}")
    Om = skew_part(C)
    if np.linalg.norm(Om) > 0:
        rots = np.stack([expm(2.0 * tk * Om) for tk in t])
        for i in range(d):
            for j in range(d):
                E = np.zeros((d, d))
                E[i, j] = 1.0
                dirs.append(rots @ E @ np.swapaxes(rots, -1, -2))
    # deterministic cosine/sine basis; the order grows with the rotation rate of C
    rho = float(np.max(np.abs(np.linalg.eigvals(C)))) if d else 0.0
    kmax = max(4, int(np.ceil(2.0 * T * rho / np.pi)) + 4)
    for k in range(kmax + 1):
        for f in (np.cos,) if k == 0 else (np.cos, np.sin):
            wave = f(np.pi * k * t / T)
            for i in range(d):
                for j in range(d):
                    V = np.zeros((N + 1, d, d))
                    V[:, i, j] = wave
                    dirs.append(V)
    for _ in range(probes):
        coef = rng.standard_normal((kmax + 1, d, d)) / (1.0 + np.arange(kmax + 1))[:, None, None]
        basis = np.cos(np.pi * np.outer(t / T, np.arange(kmax + 1)))
        dirs.append(np.einsum("tk,kij->tij", basis, coef))
    if tangent_path is not None:
        dirs.append(np.asarray(tangent_path, dtype=float))
    return np.stack(dirs)


def tangent_path(C: np.ndarray, dC: np.ndarray, T: float, N: int, eps: float = 1e-6) -> np.ndarray:
    """Directional derivative of the critical path map C -> A(C) along dC."""
    nrm = np.linalg.norm(dC)
    if nrm == 0:
        raise ValueError("zero tangent")
    dC = dC / nrm
    plus = build_critical_path(C + eps * dC, N, T).values
    minus = build_critical_path(C - eps * dC, N, T).values
    return (plus - minus) / (2 * eps)


def hessian_ritz_values(
    cp: CharPoint,
    spec: ProblemSpec,
    probes: int = 32,
    N: int = 200,
    tangent: Optional[np.ndarray] = None,
    seed: int = 0,
    scope: str = "path",
) -> np.ndarray:
    """Ritz values of the discretized Hessian of J on the span of probe paths.

    Hessian-vector products are central differences of the exact discrete
    gradient.  The probe set holds the constant directions E_ij, their
    co-rotating versions, a cosine/sine basis per entry whose order scales
    with the spectral radius of C, ``probes`` random smooth paths and
    optionally the lifted continuation tangent ``tangent`` (a dC matrix).
    With ``scope="constant"`` only the constant directions are used, which
    gives the curvature of J restricted to constant weight paths.
    """
    rng = np.random.default_rng(seed)
    C = cp.C
    T = spec.T
    A = build_critical_path(C, N, T).values
    tp = tangent_path(C, tangent, T, N) if tangent is not None else None
    V = _probe_directions(C, T, N, probes, rng, tp, scope)
    w = trapezoid_weights(N, T)
    # orthonormalize the probes in the trapezoid inner product
    flat = (V * np.sqrt(w)[None, :, None, None]).reshape(V.shape[0], -1)
    Uq, s, _ = np.linalg.svd(flat.T, full_matrices=False)
    keep = s > 1e-8 * s[0]
    Q = (Uq[:, keep] * 1.0).T.reshape((-1,) + V.shape[1:]) / np.sqrt(w)[None, :, None, None]
    eps = 1e-4 * (1.0 + np.sqrt(np.sum(w[:, None, None] * A * A)))
    batch = np.concatenate([A[None] + eps * Q, A[None] - eps * Q])
    G = discrete_gradient_values(batch, T, spec)
    k = Q.shape[0]
    HQ = (G[:k] - G[k:]) / (2 * eps)
    K = np.einsum("atij,btij,t->ab", Q, HQ, w)
    K = 0.5 * (K + K.T)
    return np.linalg.eigvalsh(K)


def classify(
    cp: CharPoint,
    spec: ProblemSpec,
    probes: int = 32,
    N: int = 200,
    tangent: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    seed: int = 0,
    full_output: bool = False,
    scope: str = "path",
):
    """Label a critical point ``"minimum"``, ``"saddle"`` or ``"unclassified"``.

    Works on the discretized cost (grid size N), so it approximates the L2
    Hessian.  A negative Ritz value below ``-tol * max|ritz|`` is conclusive
    for a saddle; all Ritz values above ``+tol * max|ritz|`` give a minimum
    relative to the probed subspace.
    """
    ritz = hessian_ritz_values(cp, spec, probes, N, tangent, seed, scope)
    scale = float(np.max(np.abs(ritz)))
    if ritz[0] < -tol * scale:
        label = SADDLE
    elif ritz[0] > tol * scale:
        label = MINIMUM
    else:
        label = UNCLASSIFIED
    if full_output:
        return ClassifyReport(label, ritz, scale, probes, tol)
    return label
