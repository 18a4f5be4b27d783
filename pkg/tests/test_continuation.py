import math

import numpy as np
import pytest
from scipy.interpolate import CubicHermiteSpline

from critnet import charsolve as cs, continuation as ct, scalar as sc
from critnet.model import ProblemSpec

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def rot_spec(lam=0.0):
    return ProblemSpec(ROT, np.eye(2), 1.0, lam)


@pytest.fixture(scope="module")
def branch_n1():
    cfg = ct.ContinuationConfig(initial_step=0.005, max_step=0.1, max_points=400)
    seed = cs.normal_solution(rot_spec(), 1)
    return ct.continue_branch(seed, rot_spec(), ct.lambda_parameter(1e-3, 0.3), cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        ct.ContinuationConfig(initial_step=1.0, max_step=0.5)
    with pytest.raises(ValueError):
        ct.ContinuationConfig(direction=0)


def test_flat_identity_branch():
    spec = ProblemSpec(np.eye(2), np.eye(2))
    seed = cs.make_point(np.zeros((2, 2)), spec)
    br = ct.continue_branch(seed, spec, ct.lambda_parameter(0.0, 2.0), ct.ContinuationConfig(max_step=0.5))
    assert br.status == ct.BOUND
    assert br.params[-1] == pytest.approx(2.0)
    assert np.abs(br.matrices).max() <= 1e-12
    assert br.folds == [] and ct.fold_points(br) == []


def test_shifted_rotation_mu_branch_lands_on_exact_solution():
    seed = cs.normal_solution(rot_spec(), 0)
    par = ct.mu_parameter(lambda mu: np.array([[0.0, -1.0], [1.0, mu]]), -1.0, math.pi / 2)
    br = ct.continue_branch(seed, rot_spec(), par, ct.ContinuationConfig(max_step=0.1), start=0.0)
    p, cp = br.points[-1]
    assert br.status == ct.BOUND and p == pytest.approx(math.pi / 2, abs=1e-12)
    assert np.max(np.abs(cp.C - np.array([[0.0, 0.0], [math.pi / 2, 0.0]]))) <= 1e-8
    assert not br.folds
    for q, pt in br.points:
        assert cs.converged(pt.C, par.spec_at(rot_spec(), q), 1e-10)


def test_single_fold_on_first_unwound_branch(branch_n1):
    br = branch_n1
    assert len(br.folds) == 1
    (lam_bar, cp) = ct.fold_points(br)[0]
    assert lam_bar == pytest.approx(0.075158, abs=1e-5)
    k = br.folds[0]
    assert br.params[k - 1] < lam_bar + 1e-9 and br.params[:k].max() <= lam_bar + 1e-9
    # both sub-branches exist just below the fold: two distinct solutions at one lambda
    lam = 0.9 * lam_bar
    spec = rot_spec(lam)
    up = np.argmin(np.abs(br.params[:k] - lam))
    down = k + np.argmin(np.abs(br.params[k:] - lam))
    a = cs.newton_solve(br.points[up][1].C, spec)
    b = cs.newton_solve(br.points[down][1].C, spec)
    assert np.linalg.norm(a.C - b.C) > 0.1
    # the fixed-lambda Jacobian is singular at the refined fold
    fun = lambda c: cs.scaled_residual(c.reshape(2, 2), rot_spec(lam_bar)).ravel()
    J = cs.fd_jacobian(fun, cp.C.ravel(), 1e-6)
    s = np.linalg.svd(J, compute_uv=False)
    assert s[-1] / s[0] <= 1e-5


def test_branch_points_reverify(branch_n1):
    for p, cp in branch_n1.points:
        fresh = cs.make_point(cp.C, rot_spec(p))
        assert cs.converged(fresh.C, rot_spec(p), 1e-10)
        assert fresh.cost == pytest.approx(cp.cost, rel=1e-12, abs=1e-15)


def test_fold_tangent_sign_change(branch_n1):
    k = branch_n1.folds[0]
    assert branch_n1.tangents[k - 1][-1] * branch_n1.tangents[k][-1] < 0


def test_curvature_across_fold(branch_n1):
    lam_bar, _ = ct.fold_points(branch_n1)[0]
    k = branch_n1.folds[0]
    lam = 0.95 * lam_bar
    spec = rot_spec(lam)
    up = cs.newton_solve(branch_n1.points[np.argmin(np.abs(branch_n1.params[:k] - lam))][1].C, spec)
    down = cs.newton_solve(branch_n1.points[k + np.argmin(np.abs(branch_n1.params[k:] - lam))][1].C, spec)
    # restricted to constant paths the two sub-branches are a minimum and a saddle
    assert cs.classify(up, spec, scope="constant") == cs.MINIMUM
    assert cs.classify(down, spec, scope="constant") == cs.SADDLE
    # on full paths the Morse index rises by one across the fold
    i_up = cs.classify(up, spec, full_output=True).index
    i_down = cs.classify(down, spec, full_output=True).index
    assert i_down == i_up + 1


def test_scalar_window_folds_match_endpoints():
    lt = 45.0
    R1, R2, _, _ = sc.window(lt)
    spec = ProblemSpec([[19.0]], [[1.0]], 1.0, lt)
    (c0,) = sc.solve_all(spec).roots
    par = ct.mu_parameter(lambda mu: np.array([[mu]]), 19.0, 20.0)
    cfg = ct.ContinuationConfig(initial_step=0.01, max_step=0.05, max_points=2000)
    br = ct.continue_branch(cs.make_point([[c0]], spec), spec, par, cfg, start=19.0)
    folds = ct.fold_points(br)
    assert len(folds) == 2
    assert folds[0][0] == pytest.approx(R2, abs=1e-6)
    assert folds[1][0] == pytest.approx(R1, abs=1e-6)
    assert br.status == ct.BOUND and br.params[-1] == pytest.approx(20.0)


def test_branch_is_reversible():
    cfg = ct.ContinuationConfig(max_step=0.02, max_points=400)
    fwd = ct.continue_branch(cs.normal_solution(rot_spec(), 0), rot_spec(), ct.lambda_parameter(0.0, 0.3), cfg)
    p_end, last = fwd.points[-1]
    back_cfg = ct.ContinuationConfig(initial_step=0.013, max_step=0.02, max_points=400, direction=-1)
    back = ct.continue_branch(last, rot_spec(p_end), ct.lambda_parameter(0.0, 0.3), back_cfg)
    assert back.params[-1] == pytest.approx(0.0, abs=1e-12)
    taus = np.array(fwd.tangents)
    spline = CubicHermiteSpline(fwd.params, fwd.matrices.reshape(len(fwd), -1), taus[:, :-1] / taus[:, -1:])
    assert np.max(np.abs(spline(back.params) - back.matrices.reshape(len(back), -1))) <= 1e-6
    assert np.abs(back.matrices[-1] - fwd.matrices[0]).max() <= 1e-6


def test_bad_seed_raises():
    spec = ProblemSpec(np.eye(2), np.eye(2), 1.0, 0.1)
    bad = cs.CharPoint(np.full((2, 2), 50.0), 0.1, 1.0, np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), 1.0, 0.0)
    with pytest.raises(ct.ContinuationError):
        ct.continue_branch(bad, spec, ct.lambda_parameter(), ct.ContinuationConfig(max_corrector_iter=2))
    with pytest.raises(ValueError):
        ct.fold_points(ct.Branch("lambda", [], [], []))


def test_exports(tmp_path, branch_n1):
    a = ct.write_branch_csv(branch_n1, tmp_path / "a.csv")
    b = ct.write_branch_csv(branch_n1, tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "param,C_11,C_12,C_21,C_22,cost,residual,class,fold_flag"
    assert len(lines) == len(branch_n1) + 1
    assert sum(line.endswith(",1") for line in lines[1:]) == len(branch_n1.folds)
    import json

    d = json.loads(ct.write_branch_json(branch_n1, tmp_path / "b.json").read_text())
    assert d["parameter_name"] == "lambda" and d["folds"] == branch_n1.folds
    assert len(d["points"]) == len(branch_n1)
