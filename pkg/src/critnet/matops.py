"""Dense small-matrix primitives.

Everything here works on plain ``numpy`` arrays of shape ``(d, d)``; there is
no wrapper class.  ``as_square`` is the single validation gate used by the
rest of the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg


class InvalidInputError(ValueError):
    """Raised for malformed or non-finite matrix arguments."""


class PropertyViolationError(ValueError):
    """Raised when a matrix has an eigenvalue on the closed negative real axis."""


class BranchUnavailableError(ValueError):
    """Raised when a non-principal logarithm branch is requested but does not exist."""


def as_square(A, name: str = "A") -> np.ndarray:
    """Return ``A`` as a finite float64 square matrix or raise InvalidInputError."""
    M = np.asarray(A, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InvalidInputError(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return M


def expm(A) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a degree-13 Pade approximant)."""
    return scipy.linalg.expm(as_square(A))


def frobenius(A) -> float:
    """Frobenius norm sqrt(tr(A A^T))."""
    M = as_square(A)
    return float(np.sqrt(np.trace(M @ M.T)))


def skew_part(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    return 0.5 * (C - C.T)


def sym_part(C) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    return 0.5 * (C + C.T)


def commutator_norm(M) -> float:
    """||M M^T - M^T M||, zero exactly for normal matrices."""
    M = np.asarray(M, dtype=float)
    return float(np.linalg.norm(M @ M.T - M.T @ M))


def is_normal(M, tol: float = 1e-10) -> bool:
    M = np.asarray(M, dtype=float)
    return commutator_norm(M) <= tol * (1.0 + np.linalg.norm(M) ** 2)


def reconstruction_tol(R) -> float:
    return 1e-10 * (1.0 + frobenius(R))


def check_property_p1(R, tol: float = 1e-12) -> np.ndarray:
    """Validate that R has no eigenvalue in {x <= 0} and return its eigenvalues.

    Only the spectral half of the property is enforced.  Derogatory matrices
    with positive spectrum (the identity, say) still have a real logarithm,
    so they are accepted.
    """
    R = as_square(R, "R")
    w = np.linalg.eigvals(R)
    scale = max(1.0, float(np.max(np.abs(w))))
    bad = (np.abs(w.imag) <= tol * scale) & (w.real <= tol * scale)
    if np.any(bad):
        raise PropertyViolationError(
            f"R has eigenvalue(s) on the closed negative real axis: {w[bad]}"
        )
    return w


@dataclass(frozen=True)
class LogBranchSet:
    """Real logarithms of ``base`` indexed by branch number (0 is principal)."""

    base: np.ndarray
    branches: tuple[tuple[int, np.ndarray], ...]

    def __getitem__(self, n: int) -> np.ndarray:
        for k, L in self.branches:
            if k == n:
                return L
        raise KeyError(n)

    @property
    def indices(self) -> list[int]:
        return [k for k, _ in self.branches]

    @property
    def principal(self) -> np.ndarray:
        return self[0]


def _diagonalize(R: np.ndarray, cond_limit: float = 1e8):
    w, V = np.linalg.eig(R)
    if np.linalg.cond(V) > cond_limit:
        return None
    return w, V


def logm_principal(R) -> np.ndarray:
    """Principal real logarithm; eigenvalues of the result lie in Im in (-pi, pi)."""
    R = as_square(R, "R")
    check_property_p1(R)
    L = scipy.linalg.logm(R)
    if np.iscomplexobj(L):
        if np.max(np.abs(L.imag)) > 1e-10 * (1.0 + np.max(np.abs(L.real))):
            raise PropertyViolationError("principal logarithm is not real")
        L = L.real
    return np.asarray(L, dtype=float)


def _branch_log(R: np.ndarray, n: int) -> np.ndarray:
    decomp = _diagonalize(R)
    if decomp is None:
        raise BranchUnavailableError(
            "non-principal branches need a diagonalizable R; this R is (numerically) defective"
        )
    w, V = decomp
    scale = max(1.0, float(np.max(np.abs(w))))
    cplx = np.abs(w.imag) > 1e-12 * scale
    if not np.any(cplx):
        raise BranchUnavailableError(
            "R has only real positive eigenvalues, so its real logarithm is unique"
        )
    logs = np.log(w.astype(complex))
    logs = logs + 2j * np.pi * n * np.sign(w.imag) * cplx
    L = V @ np.diag(logs) @ np.linalg.inv(V)
    if np.max(np.abs(L.imag)) > 1e-9 * (1.0 + np.max(np.abs(L.real))):
        raise BranchUnavailableError(f"branch {n} does not give a real logarithm")
    return L.real


def logm_branches(R, n_range: Iterable[int] = (0,)) -> LogBranchSet:
    """Enumerate real logarithms of R for the requested branch indices.

    Branch ``n`` shifts the imaginary part of every upper-half-plane eigenvalue
    logarithm by ``2*pi*n`` and its conjugate partner by ``-2*pi*n``.  The
    principal branch is always included.

    Raises
    ------
    PropertyViolationError
        R has an eigenvalue on the closed negative real axis.
    BranchUnavailableError
        A non-principal branch was requested but R admits none (all eigenvalues
        real and positive, or R defective).
    """
    R = as_square(R, "R")
    check_property_p1(R)
    wanted = sorted(set(int(n) for n in n_range) | {0})
    tol = reconstruction_tol(R)
    out = []
    for n in wanted:
        L = logm_principal(R) if n == 0 else _branch_log(R, n)
        err = np.linalg.norm(expm(L) - R)
        if err > tol:
            raise BranchUnavailableError(f"branch {n} fails reconstruction (error {err:.3e})")
        out.append((n, L))
    return LogBranchSet(base=R, branches=tuple(out))
