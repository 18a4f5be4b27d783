"""Problem definition, weight paths and synthetic data for Z = R X0 + xi."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .matops import InvalidInputError, as_square


class InvalidSpecError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """The regularized control problem (R, Sigma0, T, lambda, noise variance).

    ``lam`` is the regularization weight; it is serialized under the key
    ``"lambda"``.
    """

    R: np.ndarray
    Sigma0: np.ndarray
    T: float = 1.0
    lam: float = 0.0
    noise_var: float = 0.0

    def __post_init__(self):
        try:
            R = as_square(self.R, "R")
            S = as_square(self.Sigma0, "Sigma0")
        except InvalidInputError as exc:
            raise InvalidSpecError(str(exc)) from exc
        if R.shape != S.shape:
            raise InvalidSpecError(f"R is {R.shape} but Sigma0 is {S.shape}")
        if not np.allclose(S, S.T, atol=1e-12 * (1 + np.abs(S).max())):
            raise InvalidSpecError("Sigma0 must be symmetric")
        w = np.linalg.eigvalsh(0.5 * (S + S.T))
        if w.min() < -1e-12 * max(1.0, abs(w.max())):
            raise InvalidSpecError("Sigma0 must be positive semi-definite")
        if not (np.isfinite(self.T) and self.T > 0):
            raise InvalidSpecError("T must be positive")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidSpecError("lambda must be non-negative")
        if not (np.isfinite(self.noise_var) and self.noise_var >= 0):
            raise InvalidSpecError("noise_var must be non-negative")
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "Sigma0", _frozen(0.5 * (S + S.T)))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def dim(self) -> int:
        return self.R.shape[0]

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)

    def sigma_min(self) -> float:
        return float(np.linalg.eigvalsh(self.Sigma0).min())

    def to_dict(self) -> dict:
        return {
            "R": self.R.tolist(),
            "Sigma0": self.Sigma0.tolist(),
            "T": self.T,
            "lambda": self.lam,
            "noise_var": self.noise_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        try:
            return cls(
                R=np.asarray(d["R"], dtype=float),
                Sigma0=np.asarray(d["Sigma0"], dtype=float),
                T=float(d.get("T", 1.0)),
                lam=float(d.get("lambda", 0.0)),
                noise_var=float(d.get("noise_var", 0.0)),
            )
        except KeyError as exc:
            raise InvalidSpecError(f"missing key {exc}") from exc


def load_spec(path) -> ProblemSpec:
    with open(path) as fh:
        return ProblemSpec.from_dict(json.load(fh))


def save_spec(spec: ProblemSpec, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    return path


@dataclass(frozen=True)
class SamplePair:
    x0: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class WeightPath:
    """Weights A_t sampled on the uniform grid t_k = k*T/N, k = 0..N.

    ``values`` has shape ``(N + 1, d, d)``.
    """

    values: np.ndarray
    T: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2] or v.shape[0] < 2:
            raise InvalidInputError(f"path values must have shape (N+1, d, d), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("path has non-finite values")
        if not self.T > 0:
            raise InvalidInputError("T must be positive")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "T", float(self.T))

    @property
    def grid_size(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def step(self) -> float:
        return self.T / self.grid_size

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.grid_size + 1)

    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid_size, self.T)

    def inner(self, other: "WeightPath") -> float:
        """L2 inner product int tr(A_t^T V_t) dt (trapezoid rule)."""
        self._check_aligned(other)
        pointwise = np.einsum("kij,kij->k", self.values, other.values)
        return float(self.weights() @ pointwise)

    def l2_norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def frobenius_integral(self) -> float:
        """int ||A_t|| dt with the pointwise Frobenius norm (trapezoid rule)."""
        norms = np.sqrt(np.einsum("kij,kij->k", self.values, self.values))
        return float(self.weights() @ norms)

    def _check_aligned(self, other: "WeightPath"):
        if self.values.shape != other.values.shape or abs(self.T - other.T) > 1e-12 * self.T:
            raise InvalidInputError("paths live on different grids")

    def __add__(self, other: "WeightPath") -> "WeightPath":
        self._check_aligned(other)
        return WeightPath(self.values + other.values, self.T)

    def __sub__(self, other: "WeightPath") -> "WeightPath":
        self._check_aligned(other)
        return WeightPath(self.values - other.values, self.T)

    def __mul__(self, c: float) -> "WeightPath":
        return WeightPath(self.values * float(c), self.T)

    __rmul__ = __mul__


def trapezoid_weights(N: int, T: float) -> np.ndarray:
    h = T / N
    w = np.full(N + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def constant_path(C, T: float, N: int) -> WeightPath:
    if N < 1:
        raise InvalidInputError("N must be >= 1")
    C = as_square(C, "C")
    return WeightPath(np.broadcast_to(C, (N + 1,) + C.shape).copy(), T)


def path_from_function(fn, T: float, N: int) -> WeightPath:
    """Sample ``fn(t) -> (d, d)`` on the grid."""
    t = np.linspace(0.0, T, N + 1)
    return WeightPath(np.stack([np.asarray(fn(tk), dtype=float) for tk in t]), T)


def sigma_factor(Sigma0) -> np.ndarray:
    """Symmetric PSD square root L with L L^T = Sigma0."""
    S = np.asarray(Sigma0, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < -1e-12 * max(1.0, abs(w.max())):
        raise InvalidSpecError("Sigma0 is not positive semi-definite")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def sample_arrays(spec: ProblemSpec, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` pairs as arrays of shape ``(count, d)``.

    x0 ~ N(0, Sigma0) and xi ~ N(0, (noise_var / d) I), so E|xi|^2 = noise_var.
    """
    if count < 1:
        raise ValueError("count must be positive")
    d = spec.dim
    rng = np.random.default_rng(seed)
    L = sigma_factor(spec.Sigma0)
    x0 = rng.standard_normal((count, d)) @ L.T
    xi = rng.standard_normal((count, d)) * np.sqrt(spec.noise_var / d)
    z = x0 @ spec.R.T
    if spec.noise_var > 0:
        z = z + xi
    return x0, z


def sample(spec: ProblemSpec, count: int, seed: int) -> list[SamplePair]:
    x0, z = sample_arrays(spec, count, seed)
    return [SamplePair(a, b) for a, b in zip(x0, z)]


def stack_samples(samples: Sequence[SamplePair]) -> tuple[np.ndarray, np.ndarray]:
    """Columns-as-samples matrices (d, K) for inputs and targets."""
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        x0, z = samples
    else:
        if len(samples) == 0:
            raise ValueError("sample list is empty")
        x0 = np.stack([np.asarray(s.x0, dtype=float) for s in samples])
        z = np.stack([np.asarray(s.z, dtype=float) for s in samples])
    if x0.shape[0] == 0:
        raise ValueError("sample list is empty")
    return np.ascontiguousarray(x0.T), np.ascontiguousarray(z.T)
