"""Hamiltonian, forward/backward propagation, the cost functional and its gradient.

Time discretization
-------------------
Paths live on a uniform grid with N steps.  One RK4 step over
``[t_k, t_{k+1}]`` evaluates the weights at ``t_k``, at the midpoint and at
``t_{k+1}``.  Midpoint weights come from cubic interpolation of the four
neighbouring grid values (linear when N < 3), which keeps the scheme fourth
order for smooth time-varying weights.  Because the system is linear, each
step is a fixed matrix ``P_k`` and all of them are assembled in one batched
pass; propagation is then a product of small matrices.

Two gradients are available.  ``method="discrete"`` is the exact gradient of
the discretized cost (reverse mode through the RK4 step matrices), expressed
as a path with respect to the trapezoid L2 inner product.  It agrees with
finite differences of :func:`cost` to rounding error.  ``method="pontryagin"``
evaluates ``lambda*A_t - E[Y_t X_t^T]`` pointwise from the propagated state
and co-state, which is the continuous-time formula; it agrees with the
discrete one up to discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import ProblemSpec, SamplePair, WeightPath, stack_samples, trapezoid_weights


def hamiltonian(x, y, B, lam: float) -> float:
    """H(x, y, B) = y^T B x - (lam/2) tr(B^T B)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape != (y.shape[0], x.shape[0]):
        raise ValueError(f"dimension mismatch: B {B.shape}, x {x.shape}, y {y.shape}")
    return float(y @ B @ x - 0.5 * lam * np.sum(B * B))


def maximizing_weight(xs, ys, lam: float) -> np.ndarray:
    """argmax_B of the sample mean of H(x, y, B), i.e. mean(y x^T) / lam."""
    if lam <= 0:
        raise ValueError("the maximizer exists only for lam > 0")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    return ys.T @ xs / (lam * xs.shape[0])


# -- grid machinery -------------------------------------------------------------


def midpoint_values(values: np.ndarray) -> np.ndarray:
    """Weights at step midpoints, shape ``(..., N, d, d)``."""
    N = values.shape[-3] - 1
    if N < 3:
        return 0.5 * (values[..., :-1, :, :] + values[..., 1:, :, :])
    mid = np.empty(values.shape[:-3] + (N,) + values.shape[-2:])
    mid[..., 1 : N - 1, :, :] = (
        -values[..., 0 : N - 2, :, :]
        + 9.0 * values[..., 1 : N - 1, :, :]
        + 9.0 * values[..., 2:N, :, :]
        - values[..., 3 : N + 1, :, :]
    ) / 16.0
    mid[..., 0, :, :] = (
        5.0 * values[..., 0, :, :]
        + 15.0 * values[..., 1, :, :]
        - 5.0 * values[..., 2, :, :]
        + values[..., 3, :, :]
    ) / 16.0
    mid[..., N - 1, :, :] = (
        values[..., N - 3, :, :]
        - 5.0 * values[..., N - 2, :, :]
        + 15.0 * values[..., N - 1, :, :]
        + 5.0 * values[..., N, :, :]
    ) / 16.0
    return mid


def _midpoint_adjoint(dmid: np.ndarray, N: int) -> np.ndarray:
    out = np.zeros(dmid.shape[:-3] + (N + 1,) + dmid.shape[-2:])
    if N < 3:
        out[..., :-1, :, :] += 0.5 * dmid
        out[..., 1:, :, :] += 0.5 * dmid
        return out
    inner = dmid[..., 1 : N - 1, :, :] / 16.0
    out[..., 0 : N - 2, :, :] -= inner
    out[..., 1 : N - 1, :, :] += 9.0 * inner
    out[..., 2:N, :, :] += 9.0 * inner
    out[..., 3 : N + 1, :, :] -= inner
    first = dmid[..., 0, :, :] / 16.0
    out[..., 0, :, :] += 5.0 * first
    out[..., 1, :, :] += 15.0 * first
    out[..., 2, :, :] -= 5.0 * first
    out[..., 3, :, :] += first
    last = dmid[..., N - 1, :, :] / 16.0
    out[..., N - 3, :, :] += last
    out[..., N - 2, :, :] -= 5.0 * last
    out[..., N - 1, :, :] += 15.0 * last
    out[..., N, :, :] += 5.0 * last
    return out


def _step_stages(A0, M, A1, h):
    eye = np.eye(A0.shape[-1])
    U2 = eye + 0.5 * h * A0
    K2 = M @ U2
    U3 = eye + 0.5 * h * K2
    K3 = M @ U3
    U4 = eye + h * K3
    K4 = A1 @ U4
    P = eye + (h / 6.0) * (A0 + 2.0 * K2 + 2.0 * K3 + K4)
    return P, (U2, U3, U4)


def _step_matrices_adjoint(A1, M, h, stages, Pbar):
    U2, U3, U4 = stages
    MT = np.swapaxes(M, -1, -2)
    K4bar = (h / 6.0) * Pbar
    K3bar = (h / 3.0) * Pbar
    K2bar = (h / 3.0) * Pbar
    dA1 = K4bar @ np.swapaxes(U4, -1, -2)
    K3bar = K3bar + h * (np.swapaxes(A1, -1, -2) @ K4bar)
    dM = K3bar @ np.swapaxes(U3, -1, -2)
    K2bar = K2bar + 0.5 * h * (MT @ K3bar)
    dM = dM + K2bar @ np.swapaxes(U2, -1, -2)
    dA0 = (h / 6.0) * Pbar + 0.5 * h * (MT @ K2bar)
    return dA0, dM, dA1


def step_matrices(values: np.ndarray, h: float) -> np.ndarray:
    """RK4 one-step transition matrices, shape ``(..., N, d, d)``."""
    mid = midpoint_values(values)
    P, _ = _step_stages(values[..., :-1, :, :], mid, values[..., 1:, :, :], h)
    return P


def backward_step_matrices(values: np.ndarray, h: float) -> np.ndarray:
    """RK4 matrices Q_k with Y_k = Q_k Y_{k+1} for dY/dt = -A^T Y."""
    mid = midpoint_values(values)
    T = lambda a: np.swapaxes(a, -1, -2)
    Q, _ = _step_stages(T(values[..., 1:, :, :]), T(mid), T(values[..., :-1, :, :]), h)
    return Q


def _chain(P: np.ndarray, X0: np.ndarray) -> np.ndarray:
    N = P.shape[-3]
    out = np.empty(np.broadcast_shapes(P.shape[:-3], X0.shape[:-2]) + (N + 1,) + X0.shape[-2:])
    X = np.broadcast_to(X0, out.shape[:-3] + X0.shape[-2:])
    out[..., 0, :, :] = X
    for k in range(N):
        X = P[..., k, :, :] @ X
        out[..., k + 1, :, :] = X
    return out


def transition_matrices(path: WeightPath) -> np.ndarray:
    """phi_{t_k, 0} for k = 0..N, shape ``(N + 1, d, d)``."""
    P = step_matrices(path.values, path.step)
    return _chain(P, np.eye(path.dim))


@dataclass(frozen=True)
class TrajectoryPair:
    """State and co-state on the grid; ``transition[k]`` is phi_{t_k, 0}."""

    x: np.ndarray
    y: Optional[np.ndarray] = None
    transition: Optional[np.ndarray] = None


def propagate_forward(path: WeightPath, x0) -> TrajectoryPair:
    """Integrate dX/dt = A_t X from ``x0`` (a vector or a (d, m) matrix)."""
    x0 = np.asarray(x0, dtype=float)
    phi = transition_matrices(path)
    if x0.ndim == 1:
        x = np.einsum("kij,j->ki", phi, x0)
    else:
        x = phi @ x0
    return TrajectoryPair(x=x, y=None, transition=phi)


def propagate_backward(path: WeightPath, terminal) -> np.ndarray:
    """Integrate dY/dt = -A_t^T Y backward from Y_T = ``terminal``."""
    terminal = np.asarray(terminal, dtype=float)
    vec = terminal.ndim == 1
    YT = terminal[:, None] if vec else terminal
    Q = backward_step_matrices(path.values, path.step)
    N = path.grid_size
    out = np.empty((N + 1,) + YT.shape)
    out[N] = YT
    Y = YT
    for k in range(N - 1, -1, -1):
        Y = Q[k] @ Y
        out[k] = Y
    return out[..., 0] if vec else out


def trajectories(path: WeightPath, x0, z) -> TrajectoryPair:
    """Forward pass from x0, then backward pass from the error z - X_T."""
    fwd = propagate_forward(path, x0)
    y = propagate_backward(path, np.asarray(z, dtype=float) - fwd.x[-1])
    return TrajectoryPair(x=fwd.x, y=y, transition=fwd.transition)


# -- cost and gradient ------------------------------------------------------------


def regularizer(path: WeightPath, lam: float) -> float:
    """(lam/2) int tr(A_t^T A_t) dt."""
    pointwise = np.einsum("kij,kij->k", path.values, path.values)
    return 0.5 * lam * float(path.weights() @ pointwise)


def _data_cost_exact(phiT: np.ndarray, spec: ProblemSpec) -> float:
    E = phiT - spec.R
    return 0.5 * float(np.sum((E @ spec.Sigma0) * E))


def cost(path: WeightPath, spec: ProblemSpec, samples: Optional[Sequence[SamplePair]] = None) -> float:
    """Discretized J[A].

    With ``samples`` it is the Monte-Carlo estimate
    ``(lam/2) int tr(A^T A) + mean 1/2 |X_T - z|^2``.  Without, the data term
    is the exact expectation ``1/2 tr((phi_T - R) Sigma (phi_T - R)^T) + 1/2 noise_var``.
    """
    phiT = transition_matrices(path)[-1]
    reg = regularizer(path, spec.lam)
    if samples is None:
        return reg + _data_cost_exact(phiT, spec) + 0.5 * spec.noise_var
    X0, Z = stack_samples(samples)
    E = phiT @ X0 - Z
    return reg + 0.5 * float(np.mean(np.sum(E * E, axis=0)))


def sample_costs(path: WeightPath, spec: ProblemSpec, samples) -> np.ndarray:
    """Per-sample cost terms; their mean is :func:`cost` with samples."""
    phiT = transition_matrices(path)[-1]
    X0, Z = stack_samples(samples)
    E = phiT @ X0 - Z
    return regularizer(path, spec.lam) + 0.5 * np.sum(E * E, axis=0)


def _discrete_data_grad(values: np.ndarray, h: float, X0: np.ndarray, terminal_grad) -> np.ndarray:
    """dL/dA_k for L = loss(X_N); batched over leading axes of ``values``."""
    N = values.shape[-3] - 1
    mid = midpoint_values(values)
    A0 = values[..., :-1, :, :]
    A1 = values[..., 1:, :, :]
    P, stages = _step_stages(A0, mid, A1, h)
    X = _chain(P, X0)
    lam_k = terminal_grad(X[..., N, :, :])
    Pbar = np.empty_like(P)
    for k in range(N - 1, -1, -1):
        Pbar[..., k, :, :] = lam_k @ np.swapaxes(X[..., k, :, :], -1, -2)
        lam_k = np.swapaxes(P[..., k, :, :], -1, -2) @ lam_k
    dA0, dM, dA1 = _step_matrices_adjoint(A1, mid, h, stages, Pbar)
    dA = _midpoint_adjoint(dM, N)
    dA[..., :-1, :, :] += dA0
    dA[..., 1:, :, :] += dA1
    return dA


def discrete_gradient_values(values: np.ndarray, T: float, spec: ProblemSpec, samples=None) -> np.ndarray:
    """Exact gradient of the discretized cost for a batch of paths.

    ``values`` has shape ``(..., N + 1, d, d)``; the result has the same
    shape and is the Riesz representer for the trapezoid inner product.
    """
    N = values.shape[-3] - 1
    h = T / N
    if samples is None:
        X0 = np.eye(spec.dim)
        S = spec.Sigma0
        R = spec.R
        terminal = lambda XN: (XN - R) @ S
    else:
        X0, Z = stack_samples(samples)
        K = X0.shape[1]
        terminal = lambda XN: (XN - Z) / K
    dA = _discrete_data_grad(values, h, X0, terminal)
    w = trapezoid_weights(N, T)
    return spec.lam * values + dA / w[:, None, None]


def grad_J(
    path: WeightPath,
    spec: ProblemSpec,
    samples: Optional[Sequence[SamplePair]] = None,
    method: str = "discrete",
) -> WeightPath:
    """Gradient of J at ``path``.

    ``samples=None`` selects the expectation-exact form (noise-free data term
    with known Sigma); otherwise the sample mean is used.
    ``method`` is ``"discrete"`` (exact derivative of the discretized cost) or
    ``"pontryagin"`` (pointwise lambda*A_t - E[Y_t X_t^T]).
    """
    if spec.dim != path.dim:
        raise ValueError("path and spec dimensions differ")
    if method == "discrete":
        return WeightPath(discrete_gradient_values(path.values, path.T, spec, samples), path.T)
    if method != "pontryagin":
        raise ValueError(f"unknown gradient method {method!r}")
    phi = transition_matrices(path)
    if samples is None:
        # E[Y_t X_t^T] = phi_{T,t}^T (R - phi_T) Sigma phi_t^T
        psi = propagate_backward(path, np.eye(spec.dim))
        err = (spec.R - phi[-1]) @ spec.Sigma0
        eyx = psi @ err @ np.swapaxes(phi, -1, -2)
    else:
        X0, Z = stack_samples(samples)
        X = phi @ X0
        Y = propagate_backward(path, Z - X[-1])
        eyx = Y @ np.swapaxes(X, -1, -2) / X0.shape[1]
    return WeightPath(spec.lam * path.values - eyx, path.T)


def grad_lower_bound(path: WeightPath, spec: ProblemSpec) -> float:
    """T exp(-2 int ||A_t|| dt) lambda_min(Sigma) (J(A) - J*) for the unregularized problem.

    J is the expectation-exact cost with lambda set to zero and
    J* = noise_var / 2.
    """
    smin = spec.sigma_min()
    if smin <= 1e-14 * max(1.0, float(np.abs(spec.Sigma0).max())):
        raise ValueError("Sigma0 is singular")
    J = cost(path, spec.replace(lam=0.0))
    gap = J - 0.5 * spec.noise_var
    return float(spec.T * np.exp(-2.0 * path.frobenius_integral()) * smin * gap)


def transition_gain_bounds(path: WeightPath):
    """Pointwise (lower, eig_min, eig_max, upper) for phi_{t,0}^T phi_{t,0}.

    lower/upper are exp(-/+ 2 int_0^t ||A_s|| ds).  The integral uses the
    same node and midpoint values the propagator sees, with Simpson weights,
    so the bound describes the discrete flow rather than a different reading
    of the path.
    """
    phi = transition_matrices(path)
    eig = np.linalg.eigvalsh(np.swapaxes(phi, -1, -2) @ phi)
    norms = np.sqrt(np.einsum("kij,kij->k", path.values, path.values))
    mid = midpoint_values(path.values)
    mid_norms = np.sqrt(np.einsum("kij,kij->k", mid, mid))
    h = path.step
    cum = np.concatenate([[0.0], np.cumsum(h / 6.0 * (norms[:-1] + 4.0 * mid_norms + norms[1:]))])
    return np.exp(-2.0 * cum), eig[:, 0], eig[:, -1], np.exp(2.0 * cum)


def gradient_check(
    path: WeightPath,
    spec: ProblemSpec,
    directions: int = 10,
    seed: int = 0,
    samples: Optional[Sequence[SamplePair]] = None,
) -> np.ndarray:
    """Relative errors between <grad J, V> and central differences of the cost.

    V runs over ``directions`` random unit paths; the difference step is
    cbrt(machine epsilon) scaled by ``1 + ||A||``, the balanced choice for
    central differences.
    """
    rng = np.random.default_rng(seed)
    g = grad_J(path, spec, samples)
    h = np.cbrt(np.finfo(float).eps) * (1.0 + path.l2_norm())
    errs = []
    for _ in range(directions):
        V = WeightPath(rng.standard_normal(path.values.shape), path.T)
        V = V * (1.0 / V.l2_norm())
        fd = (cost(path + V * h, spec, samples) - cost(path - V * h, spec, samples)) / (2 * h)
        an = g.inner(V)
        errs.append(abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    return np.array(errs)
