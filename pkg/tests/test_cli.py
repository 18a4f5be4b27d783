import json
import math

import numpy as np
import pytest

from critnet.cli import run
from critnet.svg import PlotStyle, emit_svg


def write_spec(path, R, lam=0.0, T=1.0, Sigma0=None, noise_var=0.0):
    R = np.asarray(R, dtype=float)
    S = np.eye(R.shape[0]) if Sigma0 is None else Sigma0
    path.write_text(json.dumps({"R": R.tolist(), "Sigma0": np.asarray(S).tolist(), "T": T, "lambda": lam, "noise_var": noise_var}))
    return str(path)


def manifest_ok(out):
    m = json.loads((out / "manifest.json").read_text())
    from pathlib import Path

    assert all(Path(p).exists() for p in m["outputs"])
    assert {"command", "spec", "config", "seed", "outputs", "toolkit_version", "timestamp"} <= set(m)
    return m


def test_gradcheck(tmp_path):
    assert run(["gradcheck", "--dim", "2", "--seed", "7", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["max_relative_error"] <= 1e-5 and rep["passed"]
    assert manifest_ok(tmp_path)["seed"] == 7


def test_scalar_analyze(tmp_path):
    assert run(["scalar-analyze", "--R", "2", "--lambda", "0", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "scalar.json").read_text())
    assert d["count"] == 1 and d["roots"][0]["C"] == pytest.approx(math.log(2), abs=1e-13)
    assert (tmp_path / "curve.csv").read_text().startswith("C_tilde,")
    manifest_ok(tmp_path)


def test_scalar_window(tmp_path):
    assert run(["scalar-analyze", "--R", "19.5", "--lambda", "45", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "scalar.json").read_text())["regime"] == "three-solutions"


def test_example2(tmp_path):
    assert run(["example2", "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["critical_below_constant"] is True
    assert s["regularizer_integral_critical"] == pytest.approx(math.pi**2 / 4, abs=1e-8)
    assert 3.75 <= s["regularizer_integral_constant_log"] <= 3.77
    assert np.allclose(s["C_end"], [[0, 0], [math.pi / 2, 0]], atol=1e-8)
    for name in ("branch_mu.csv", "branch_lambda.csv", "cost_comparison.csv", "cost_comparison.svg"):
        assert (tmp_path / name).exists()
    manifest_ok(tmp_path)


def test_train_and_rerun_is_byte_identical(tmp_path):
    spec = write_spec(tmp_path / "spec.json", [[2.0]])
    args = ["train", "--spec", spec, "--iterations", "200", "--eval-every", "20", "--seed", "3"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = tmp_path / "a", tmp_path / "b"
    for name in ("history.csv", "final_path.json", "cost.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    lines = (a / "history.csv").read_text().splitlines()
    assert lines[0] == "iteration,cost,grad_norm,weight_l2norm" and len(lines) == 12
    assert float(lines[-1].split(",")[1]) < 1e-6


def test_config_file_and_flag_precedence(tmp_path):
    spec = write_spec(tmp_path / "spec.json", [[2.0]])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"iterations": 30, "eval_every": 10}))
    assert run(["train", "--spec", spec, "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    assert len((tmp_path / "c" / "history.csv").read_text().splitlines()) == 5
    assert run(["train", "--spec", spec, "--config", str(cfg), "--iterations", "20", "--out", str(tmp_path / "d")]) == 0
    m = manifest_ok(tmp_path / "d")
    assert m["config"]["iterations"] == 20 and m["config"]["eval_every"] == 10


def test_critical_solve_and_continue(tmp_path):
    spec = write_spec(tmp_path / "spec.json", [[0, -1], [1, 0]], lam=0.05)
    assert run(["critical-solve", "--spec", spec, "--out", str(tmp_path / "s")]) == 0
    cp = json.loads((tmp_path / "s" / "charpoint.json").read_text())
    assert cp["class"] == "minimum" and cp["residual"] <= 1e-10
    out = tmp_path / "k"
    assert run(["critical-continue", "--spec", spec, "--lambda", "0", "--upper", "0.2", "--out", str(out)]) == 0
    head = (out / "branch.csv").read_text().splitlines()[0]
    assert head == "param,C_11,C_12,C_21,C_22,cost,residual,class,fold_flag"
    assert json.loads((out / "folds.json").read_text()) == []
    manifest_ok(out)


def test_usage_errors(tmp_path, capsys):
    assert run(["train", "--bogus", "--out", str(tmp_path)]) == 2
    assert run(["nonsense"]) == 2
    assert run(["train", "--spec", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"R": [[1.0]], "Sigma0": [[-1.0]], "T": 1.0, "lambda": 0.0, "noise_var": 0.0}))
    assert run(["train", "--spec", str(bad), "--out", str(tmp_path)]) == 2
    assert run(["train", "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    spec = write_spec(tmp_path / "spec.json", [[1.0, 1.0], [0.0, 1.0]])
    assert run(["critical-solve", "--spec", spec, "--out", str(tmp_path / "x")]) == 1


def test_svg_single_polyline_and_determinism(tmp_path):
    text = emit_svg([([0.0, 1.0], [0.0, 1.0], "a")], PlotStyle(), tmp_path / "a.svg")
    assert text.count("<polyline") == 1
    again = emit_svg([([0.0, 1.0], [0.0, 1.0], "a")], PlotStyle(), tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes() == again.encode()
    with pytest.raises(ValueError):
        emit_svg([], PlotStyle())
    marked = emit_svg([([0, 1, 2], [1, 10, 100], "b")], PlotStyle(logy=True, markers=((1.0, 10.0, "fold"),)))
    assert "<title>fold</title>" in marked


@pytest.mark.slow
def test_example1_outputs(tmp_path):
    assert run(["example1", "--no-classify", "--out", str(tmp_path)]) == 0
    svg = (tmp_path / "branches_C21.svg").read_text()
    assert svg.count("<polyline") == 5
    for n in ("n+0", "n+1", "n-1", "n+2", "n-2"):
        assert any(p.name.startswith(f"branch_{n}") for p in tmp_path.iterdir()), n
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["principal_lowest_cost"] is True
    manifest_ok(tmp_path)
