import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from critnet import charsolve, scalar as sc
from critnet.matops import PropertyViolationError
from critnet.model import ProblemSpec


def sspec(R, lam=0.0, T=1.0, S=1.0):
    return ProblemSpec([[R]], [[S]], T, lam)


def test_residual_examples():
    assert sc.scalar_residual(math.log(3.0) / 2.0, sspec(3.0, T=2.0)) == pytest.approx(0.0, abs=1e-14)
    for lam in (0.0, 1.0, 50.0):
        assert sc.scalar_residual(0.0, sspec(1.0, lam)) == 0.0


@given(
    C=st.floats(-3, 3),
    R=st.floats(0.1, 5),
    lam=st.floats(0, 10),
    T=st.floats(0.2, 3),
    S=st.floats(0.1, 3),
)
@settings(max_examples=100, deadline=None)
def test_residual_agrees_with_matrix_form(C, R, lam, T, S):
    spec = sspec(R, lam, T, S)
    m = charsolve.residual([[C]], spec)[0, 0]
    assert abs(sc.scalar_residual(C, spec) - m) <= 1e-14 * max(1.0, abs(m), math.exp(2 * T * C) * S)


def test_dimension_guard():
    with pytest.raises(sc.DimensionError):
        sc.scalar_residual(0.0, ProblemSpec(np.eye(2), np.eye(2)))
    with pytest.raises(sc.DimensionError):
        sc.solve_all(ProblemSpec(np.eye(2), np.eye(2)))
    with pytest.raises(PropertyViolationError):
        sc.solve_all(sspec(-1.0, 1.0))


def test_turning_curve_minimum():
    c, v = sc.turning_curve_minimizer()
    assert c == pytest.approx(1.5, abs=1e-10)
    assert v == pytest.approx(2 * math.exp(3), abs=1e-10)
    grid = np.linspace(1.01, 4, 5000)
    assert sc.turning_curve(grid).min() >= v - 1e-12


def test_unique_below_threshold():
    reg = sc.solve_all(sspec(2.0, 1.0))
    assert reg.count == 1 and reg.regime == "unique" and reg.window is None
    assert reg.solutions[0].classification == "minimum"


def test_lambda_zero_gives_log():
    reg = sc.solve_all(sspec(5.0, 0.0, T=2.0))
    assert reg.roots == [pytest.approx(math.log(5.0) / 2.0, abs=1e-13)]


@pytest.mark.parametrize("lt", [0.0, 1.0, 20.0, 40.0, sc.THRESHOLD])
def test_monotone_below_threshold(lt):
    df = sc.reduced_df(np.linspace(-20, 20, 200_001), lt)
    assert np.all(df >= -1e-9)


def test_window_at_45():
    R1, R2, c_hi, c_lo = sc.window(45.0)
    assert c_lo < 1.5 < c_hi
    assert sc.reduced_df(c_hi, 45.0) == pytest.approx(0.0, abs=1e-10)
    assert sc.reduced_df(c_lo, 45.0) == pytest.approx(0.0, abs=1e-10)
    assert R1 < R2
    assert R1 == pytest.approx(19.437758644823987, rel=1e-12)
    assert R2 == pytest.approx(19.612416461566415, rel=1e-12)
    mid = sc.solve_all(sspec(0.5 * (R1 + R2), 45.0))
    assert mid.count == 3 and mid.regime == "three-solutions"
    assert [s.classification for s in mid.solutions] == ["minimum", "saddle", "minimum"]
    for R in (R1 - 0.05, R2 + 0.05, 5.0, 100.0):
        out = sc.solve_all(sspec(R, 45.0))
        assert out.count == 1 and out.regime == "outside-window"
    edge = sc.solve_all(sspec(R2, 45.0))
    assert edge.count == 2 and edge.degenerate and edge.regime == "window-boundary"


def test_reduced_variables_scale_out():
    a = sc.solve_all(sspec(19.5, 45.0))
    b = sc.solve_all(sspec(19.5, 45.0 * 2.0 * 0.5, T=2.0, S=0.5))
    assert np.allclose([s.c_tilde for s in a.solutions], [s.c_tilde for s in b.solutions], atol=1e-12)
    assert np.allclose(b.roots, np.array(a.roots) / 2.0, atol=1e-12)


def test_roots_solve_the_equation():
    for R in (19.45, 19.5, 19.6):
        spec = sspec(R, 45.0)
        for C in sc.solve_all(spec).roots:
            assert abs(sc.scalar_residual(C, spec)) <= 1e-10 * R**2


@given(R=st.floats(0.01, 1e4), frac=st.floats(0, 0.99))
@settings(max_examples=60, deadline=None)
def test_unique_below_threshold_property(R, frac):
    assert sc.solve_all(sspec(R, frac * sc.THRESHOLD)).count == 1


def test_asymptotic_examples():
    assert sc.asymptotic_C(sspec(4.0, 0.0, T=2.0)) == pytest.approx(math.log(4.0) / 2.0)
    assert sc.asymptotic_C(sspec(math.e, 0.01)) == pytest.approx(1 - 0.01 * math.exp(-2), abs=1e-15)


def test_asymptotic_error_is_second_order():
    Ks = []
    for lam in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
        spec = sspec(math.e, lam)
        (root,) = sc.solve_all(spec).roots
        Ks.append(abs(root - sc.asymptotic_C(spec)) / lam**2)
    assert max(Ks) / min(Ks) <= 2.0


def test_regime_json():
    d = sc.solve_all(sspec(19.5, 45.0)).to_dict()
    assert d["regime"] == "three-solutions" and d["count"] == 3 and len(d["window"]) == 2
    assert d["threshold"] == pytest.approx(40.171073846375336)


def test_curve_samples_shape():
    cs_ = sc.curve_samples(sspec(19.5, 45.0), points=101)
    assert cs_.shape == (101, 2)
    assert np.allclose(cs_[:, 1], sc.reduced_f(cs_[:, 0], 45.0))
