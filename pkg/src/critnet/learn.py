"""Regularized stochastic gradient descent on the weight path.

Each step draws one pair (x0, z), runs the state forward, runs the co-state
backward from the output error z - X_T and moves every grid value by
``-eta * (lam * A_k - Y_k X_k^T)``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .hamilton import cost, grad_J, propagate_backward, propagate_forward
from .matops import InvalidInputError
from .model import ProblemSpec, SamplePair, WeightPath, sample, sample_arrays

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    cost: float
    grad_norm: float
    weight_l2norm: float


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings.

    ``schedule`` is ``"constant"`` (eta_k = eta) or ``"decay"``
    (eta_k = eta / (1 + k / decay_k0)).  Costs in the history are exact
    expectations unless ``eval_mode="samples"``, in which case
    ``eval_samples`` fresh pairs are used.
    """

    iterations: int = 1000
    step_size: float = 0.05
    schedule: str = "constant"
    decay_k0: float = 1000.0
    eval_every: int = 100
    eval_samples: int = 1000
    eval_mode: str = "exact"
    batch_size: int = 1
    norm_bound: Optional[float] = None
    divergence_factor: float = 1e6
    divergence_floor: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1 or self.eval_every < 1 or self.eval_samples < 1 or self.batch_size < 1:
            raise ValueError("iterations, eval_every, eval_samples and batch_size must be positive")
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.schedule not in ("constant", "decay"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.eval_mode not in ("exact", "samples"):
            raise ValueError(f"unknown eval mode {self.eval_mode!r}")

    def eta(self, k: int) -> float:
        if self.schedule == "constant":
            return self.step_size
        return self.step_size / (1.0 + k / self.decay_k0)


@dataclass(frozen=True)
class TrainState:
    path: WeightPath
    step_size: float
    iteration: int = 0
    seed: int = 0
    history: tuple[HistoryRecord, ...] = field(default_factory=tuple)

    def record(self, rec: HistoryRecord) -> "TrainState":
        if self.history and rec.iteration < self.history[-1].iteration:
            raise ValueError("history must be monotone in iteration")
        return dataclasses.replace(self, history=self.history + (rec,))

    @property
    def costs(self) -> np.ndarray:
        return np.array([h.cost for h in self.history])


def stochastic_direction(path: WeightPath, x0, z, lam: float) -> np.ndarray:
    """lam * A_k - Y_k X_k^T on the grid for one pair or a (d, m) batch (averaged)."""
    x0 = np.asarray(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    fwd = propagate_forward(path, x0)
    X = fwd.x
    XT = X[-1]
    Y = propagate_backward(path, z - XT)
    if x0.ndim == 1:
        eyx = np.einsum("ki,kj->kij", Y, X)
    else:
        eyx = np.einsum("kim,kjm->kij", Y, X) / x0.shape[1]
    return lam * path.values - eyx


def sgd_step(state: TrainState, pair: SamplePair, spec: ProblemSpec, eta: Optional[float] = None) -> TrainState:
    """One forward pass, one backward pass and a pointwise update of the path."""
    if abs(state.path.T - spec.T) > 1e-12 * spec.T:
        raise ValueError("path horizon does not match the problem")
    eta = state.step_size if eta is None else eta
    direction = stochastic_direction(state.path, pair.x0, pair.z, spec.lam)
    new_path = WeightPath(state.path.values - eta * direction, state.path.T)
    return dataclasses.replace(state, path=new_path, iteration=state.iteration + 1, step_size=eta)


def _evaluate(path: WeightPath, spec: ProblemSpec, config: TrainConfig, eval_set, k: int) -> HistoryRecord:
    data = eval_set if config.eval_mode == "samples" else None
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            J = cost(path, spec, data)
            g = grad_J(path, spec, data, method="pontryagin").l2_norm()
    except InvalidInputError:
        J, g = float("inf"), float("inf")
    return HistoryRecord(k, float(J), g, path.l2_norm())


def train(spec: ProblemSpec, config: TrainConfig, init: WeightPath, seed: int = 0) -> TrainState:
    """Run ``config.iterations`` SGD steps on freshly drawn pairs.

    Raises DivergenceError once the evaluated cost exceeds
    ``divergence_factor * max(initial cost, divergence_floor)``.
    """
    if abs(init.T - spec.T) > 1e-12 * spec.T:
        raise ValueError("initial path horizon does not match the problem")
    total = config.iterations * config.batch_size
    x0s, zs = sample_arrays(spec, total, seed)
    eval_set = sample(spec, config.eval_samples, seed + 1) if config.eval_mode == "samples" else None
    state = TrainState(path=init, step_size=config.eta(0), iteration=0, seed=seed)
    first = _evaluate(init, spec, config, eval_set, 0)
    state = state.record(first)
    limit = config.divergence_factor * max(first.cost, config.divergence_floor)
    warned = False
    b = config.batch_size
    for k in range(config.iterations):
        eta = config.eta(k)
        if b == 1:
            pair = SamplePair(x0s[k], zs[k])
        else:
            pair = SamplePair(x0s[k * b:(k + 1) * b].T, zs[k * b:(k + 1) * b].T)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                state = sgd_step(state, pair, spec, eta)
        except InvalidInputError as exc:
            raise DivergenceError(f"weights became non-finite at iteration {state.iteration + 1}") from exc
        if state.iteration % config.eval_every == 0 or state.iteration == config.iterations:
            rec = _evaluate(state.path, spec, config, eval_set, state.iteration)
            state = state.record(rec)
            if not np.isfinite(rec.cost) or rec.cost > limit:
                raise DivergenceError(
                    f"cost {rec.cost:.3e} at iteration {rec.iteration} exceeds {limit:.3e}"
                )
            if config.norm_bound is not None and rec.weight_l2norm > config.norm_bound and not warned:
                log.warning(
                    "weight L2 norm %.4g exceeds the bound %.4g at iteration %d",
                    rec.weight_l2norm, config.norm_bound, rec.iteration,
                )
                warned = True
    return state


def write_history_csv(state: TrainState, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cost", "grad_norm", "weight_l2norm"])
        for h in state.history:
            w.writerow([h.iteration, format(h.cost, ".17g"), format(h.grad_norm, ".17g"), format(h.weight_l2norm, ".17g")])
    return path


def window_decay_rates(costs, window: int, floor: float = 0.0) -> np.ndarray:
    """Per-window ratios (J_{k+w} - floor) / (J_k - floor) of a cost history."""
    c = np.asarray(costs, dtype=float) - floor
    return c[window::window] / c[: -window or None : window][: len(c[window::window])]
