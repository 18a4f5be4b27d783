import logging
import math

import numpy as np
import pytest

from critnet.hamilton import grad_J, propagate_backward, propagate_forward
from critnet.learn import (
    DivergenceError,
    HistoryRecord,
    TrainConfig,
    TrainState,
    sgd_step,
    stochastic_direction,
    train,
    window_decay_rates,
    write_history_csv,
)
from critnet.matops import logm_principal
from critnet.model import ProblemSpec, SamplePair, WeightPath, constant_path, path_from_function, sample_arrays

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def scalar_spec(R=2.0, lam=0.0):
    return ProblemSpec([[R]], [[1.0]], 1.0, lam)


def test_one_step_oracle():
    st = TrainState(constant_path(np.zeros((1, 1)), 1.0, 1), 0.1)
    out = sgd_step(st, SamplePair(np.array([1.0]), np.array([2.0])), scalar_spec())
    assert np.allclose(out.path.values, 0.1)
    assert out.iteration == 1


def test_zero_update_at_optimum():
    spec = ProblemSpec(ROT, np.eye(2))
    path = constant_path(logm_principal(ROT), 1.0, 100)
    x0 = np.array([0.7, -1.2])
    d = stochastic_direction(path, x0, ROT @ x0, 0.0)
    assert np.abs(d).max() <= 1e-8


def test_unregularized_update_is_plain_backprop():
    rng = np.random.default_rng(1)
    path = WeightPath(rng.standard_normal((21, 2, 2)), 1.0)
    x0, z = rng.standard_normal(2), rng.standard_normal(2)
    X = propagate_forward(path, x0).x
    Y = propagate_backward(path, z - X[-1])
    plain = -np.einsum("ki,kj->kij", Y, X)
    assert np.allclose(stochastic_direction(path, x0, z, 0.0), plain, atol=1e-14)
    assert np.allclose(stochastic_direction(path, x0, z, 0.3), plain + 0.3 * path.values, atol=1e-14)


def test_mean_update_follows_gradient():
    spec = ProblemSpec(np.array([[1.0, -0.5], [0.8, 1.2]]), np.array([[1.0, 0.2], [0.2, 0.6]]), 1.0, 0.2, 0.1)
    path = path_from_function(lambda t: np.array([[0.1 * t, -0.3], [0.5, 0.2 * math.cos(t)]]), 1.0, 20)
    x0, z = sample_arrays(spec, 10_000, 3)
    means = np.stack([
        stochastic_direction(path, x0[i:i + 100].T, z[i:i + 100].T, spec.lam) for i in range(0, 10_000, 100)
    ])
    est = means.mean(axis=0)
    sigma = means.std(axis=0, ddof=1) / math.sqrt(len(means))
    g = grad_J(path, spec, method="pontryagin").values
    assert np.all(np.abs(est - g) <= 3 * sigma + 1e-12) or np.mean(np.abs(est - g) <= 3 * sigma) >= 0.97


def test_dissipation_contracts_weights():
    lam, eta, c = 0.5, 0.1, 0.8
    spec = ProblemSpec(np.eye(2), np.zeros((2, 2)), 1.0, lam)
    st = TrainState(constant_path(c * np.eye(2), 1.0, 10), eta)
    for k in range(1, 6):
        st = sgd_step(st, SamplePair(np.zeros(2), np.zeros(2)), spec)
        assert np.allclose(st.path.values, c * (1 - eta * lam) ** k * np.eye(2), rtol=1e-14)
    # data term also silent when the target matches the flow of cI
    spec2 = ProblemSpec(math.exp(c) * np.eye(2), np.eye(2), 1.0, lam)
    st = TrainState(constant_path(c * np.eye(2), 1.0, 200), eta)
    x0 = np.array([1.0, 2.0])
    st = sgd_step(st, SamplePair(x0, spec2.R @ x0), spec2)
    assert np.allclose(st.path.values, c * (1 - eta * lam) * np.eye(2), atol=1e-9)


def test_scalar_training_converges_quickly():
    spec = scalar_spec()
    st = train(spec, TrainConfig(iterations=500, step_size=0.05, eval_every=25), constant_path(np.zeros((1, 1)), 1.0, 20), seed=0)
    costs = st.costs
    assert costs[0] == pytest.approx(0.5)
    assert costs[-1] <= 1e-10
    rates = window_decay_rates(costs, 1)
    finite = costs[:-1] > 1e-20
    assert np.all(rates[finite] < 1.0)


def test_rotation_geometric_decay_to_noise_floor():
    noise = 0.02
    spec = ProblemSpec(ROT, np.eye(2), 1.0, 0.0, noise)
    cfg = TrainConfig(iterations=1000, step_size=0.05, eval_every=10)
    st = train(spec, cfg, constant_path(np.zeros((2, 2)), 1.0, 20), seed=1)
    excess = st.costs - noise / 2
    assert excess[0] == pytest.approx(2.0)
    early = excess[:11]
    assert np.all(early[1:] < early[:-1])
    assert excess[10] < 0.05 * excess[0]
    # stationary O(eta * noise) floor
    assert 0 < excess[50:].mean() <= 0.2 * noise


def test_init_at_optimum_stays():
    spec = scalar_spec()
    st = train(spec, TrainConfig(iterations=200, eval_every=20), constant_path(np.array([[math.log(2.0)]]), 1.0, 20), seed=2)
    assert st.costs.max() <= 1e-10


def test_training_is_deterministic():
    spec = ProblemSpec(ROT, np.eye(2), 1.0, 0.05, 0.1)
    cfg = TrainConfig(iterations=100, eval_every=50)
    init = constant_path(np.zeros((2, 2)), 1.0, 10)
    a, b = train(spec, cfg, init, 7), train(spec, cfg, init, 7)
    assert a.path.values.tobytes() == b.path.values.tobytes()
    assert a.history == b.history
    c = train(spec, cfg, init, 8)
    assert c.path.values.tobytes() != a.path.values.tobytes()


def test_decay_schedule_and_batches():
    cfg = TrainConfig(step_size=0.1, schedule="decay", decay_k0=10)
    assert cfg.eta(0) == 0.1 and cfg.eta(10) == pytest.approx(0.05)
    spec = scalar_spec()
    st = train(spec, TrainConfig(iterations=100, batch_size=8, eval_every=50), constant_path(np.zeros((1, 1)), 1.0, 10), seed=0)
    assert st.costs[-1] < st.costs[0]
    for bad in (dict(step_size=0.0), dict(schedule="cosine"), dict(eval_mode="x"), dict(iterations=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_sample_evaluation_mode():
    spec = ProblemSpec(ROT, np.eye(2), 1.0, 0.0, 0.1)
    st = train(spec, TrainConfig(iterations=50, eval_every=25, eval_mode="samples", eval_samples=500), constant_path(np.zeros((2, 2)), 1.0, 10), seed=0)
    assert [h.iteration for h in st.history] == [0, 25, 50]


def test_divergence_guard():
    spec = scalar_spec(R=50.0)
    with pytest.raises(DivergenceError):
        train(spec, TrainConfig(iterations=200, step_size=2.0, eval_every=1), constant_path(np.zeros((1, 1)), 1.0, 10), seed=0)


def test_norm_bound_warning(caplog):
    spec = scalar_spec(R=2.0)
    with caplog.at_level(logging.WARNING, logger="critnet.learn"):
        train(spec, TrainConfig(iterations=100, eval_every=10, norm_bound=0.1), constant_path(np.zeros((1, 1)), 1.0, 10), seed=0)
    assert sum("exceeds the bound" in r.message for r in caplog.records) == 1


def test_history_is_monotone_and_exported(tmp_path):
    st = TrainState(constant_path(np.zeros((1, 1)), 1.0, 2), 0.1)
    st = st.record(HistoryRecord(5, 1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        st.record(HistoryRecord(4, 1.0, 1.0, 0.0))
    p = write_history_csv(st, tmp_path / "h.csv")
    assert p.read_text() == "iteration,cost,grad_norm,weight_l2norm\n5,1,1,0\n"


def test_horizon_mismatch():
    st = TrainState(constant_path(np.zeros((1, 1)), 2.0, 2), 0.1)
    with pytest.raises(ValueError):
        sgd_step(st, SamplePair(np.ones(1), np.ones(1)), scalar_spec())
