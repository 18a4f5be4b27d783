"""Command-line entry point: ``critnet <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, charsolve, continuation as ct, learn, scalar, studies
from .hamilton import gradient_check
from .matops import InvalidInputError, PropertyViolationError, BranchUnavailableError, logm_principal
from .model import InvalidSpecError, ProblemSpec, WeightPath, constant_path, load_spec
from .svg import PlotStyle, emit_svg

log = logging.getLogger("critnet")


class UsageError(Exception):
    pass


NUMERICAL_ERRORS = (
    charsolve.NoConvergenceError,
    charsolve.SingularJacobianError,
    charsolve.NotNormalError,
    ct.ContinuationError,
    learn.DivergenceError,
    PropertyViolationError,
    BranchUnavailableError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


class Run:
    """Collects outputs of one command and writes the manifest."""

    def __init__(self, command: str, out: Path, seed: int, config: dict, spec: ProblemSpec | None):
        self.command = command
        self.out = out
        self.seed = seed
        self.config = config
        self.spec = spec
        self.outputs: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def finish(self) -> Path:
        manifest = {
            "command": self.command,
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "config": self.config,
            "seed": self.seed,
            "outputs": list(self.outputs),
            "toolkit_version": __version__,
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        p = self.out / "manifest.json"
        return write_json(p, manifest)


# -- option handling ---------------------------------------------------------------


DEFAULTS = {
    "train": dict(iterations=2000, step_size=0.05, schedule="constant", eval_every=50, grid=20, init="zero", eval_mode="exact", eval_samples=1000),
    "gradcheck": dict(dim=2, grid=50, directions=10, lam=0.1, noise_var=0.0),
    "critical-solve": dict(branch=0, tol=1e-10, max_iter=50, probes=32, classify_grid=200),
    "critical-continue": dict(branch=0, param="lambda", lower=None, upper=None, start=None, step=0.01, max_step=0.2, max_points=300, direction=1, classify=False, mu_entry=None),
    "scalar-analyze": dict(R=None, lam=0.0, T=1.0, Sigma0=1.0),
    "example1": dict(lambda_min=1e-3, lambda_max=0.3, classify=True),
    "example2": dict(lambda_max=1.0),
}


def _add_common(p: argparse.ArgumentParser, spec: bool = True):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    p.add_argument("--config", help="JSON file of option values; command-line flags take precedence")
    if spec:
        p.add_argument("--spec", help="problem JSON with keys R, Sigma0, T, lambda, noise_var")
        p.add_argument("--lambda", dest="lam", type=float, default=None, help="override the regularization weight")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="critnet", description="Continuous-time linear networks: training and critical-point analysis.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run SGD on the weight path")
    _add_common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--schedule", choices=["constant", "decay"])
    p.add_argument("--eval-every", type=int)
    p.add_argument("--eval-mode", choices=["exact", "samples"])
    p.add_argument("--eval-samples", type=int)
    p.add_argument("--grid", type=int, help="number of time steps N")
    p.add_argument("--init", choices=["zero", "log"], help="start from A = 0 or A = log(R)/T")

    p = sub.add_parser("gradcheck", help="compare the gradient with finite differences on a random problem")
    _add_common(p, spec=False)
    p.add_argument("--dim", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--directions", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--noise-var", type=float)

    p = sub.add_parser("critical-solve", help="solve the characteristic equation")
    _add_common(p)
    p.add_argument("--branch", type=int, help="normal-solution branch used as the Newton seed")
    p.add_argument("--seed-C", help="JSON matrix used as the Newton seed instead")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--probes", type=int)
    p.add_argument("--classify-grid", type=int)

    p = sub.add_parser("critical-continue", help="continue a solution branch in lambda or mu")
    _add_common(p)
    p.add_argument("--branch", type=int)
    p.add_argument("--seed-C", help="JSON matrix for the starting solution")
    p.add_argument("--param", choices=["lambda", "log-lambda", "mu"])
    p.add_argument("--mu-entry", help="'i,j' (1-based) entry of R replaced by mu")
    p.add_argument("--start", type=float, help="parameter value at the seed (needed for mu)")
    p.add_argument("--lower", type=float)
    p.add_argument("--upper", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--max-step", type=float)
    p.add_argument("--max-points", type=int)
    p.add_argument("--direction", type=int, choices=[1, -1])
    p.add_argument("--classify", action="store_true", default=None)

    p = sub.add_parser("scalar-analyze", help="count and classify the scalar solutions")
    _add_common(p, spec=False)
    p.add_argument("--R", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--Sigma0", type=float)

    p = sub.add_parser("example1", help="branches of the rotation-by-pi/2 target")
    _add_common(p, spec=False)
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--no-classify", dest="classify", action="store_false", default=None)

    p = sub.add_parser("example2", help="non-constant critical point of the shifted rotation target")
    _add_common(p, spec=False)
    p.add_argument("--lambda-max", type=float)
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the --config file and explicit flags (flags win)."""
    opts = dict(DEFAULTS[args.command])
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        for k, v in cfg.items():
            key = k.replace("-", "_")
            if key == "lambda":
                key = "lam"
            opts[key] = v
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config", "verbose"):
            opts[k] = v
    opts.setdefault("seed", 0)
    if opts.get("seed") is None:
        opts["seed"] = 0
    return opts


def _spec_from(opts: dict) -> ProblemSpec:
    src = opts.get("spec")
    if src is None:
        raise UsageError("--spec is required for this command")
    if isinstance(src, dict):
        spec = ProblemSpec.from_dict(src)
    else:
        try:
            spec = load_spec(src)
        except OSError as exc:
            raise UsageError(f"cannot read spec file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"spec file is not valid JSON: {exc}") from exc
    if opts.get("lam") is not None:
        spec = spec.replace(lam=float(opts["lam"]))
    return spec


def _config_blob(opts: dict) -> dict:
    return {k: v for k, v in sorted(opts.items()) if k not in ("out", "config", "spec")}


# -- commands --------------------------------------------------------------------


def cmd_train(opts) -> int:
    spec = _spec_from(opts)
    run = Run("train", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    N = int(opts["grid"])
    init = constant_path(np.zeros((spec.dim, spec.dim)), spec.T, N)
    if opts["init"] == "log":
        init = constant_path(logm_principal(spec.R) / spec.T, spec.T, N)
    config = learn.TrainConfig(
        iterations=int(opts["iterations"]),
        step_size=float(opts["step_size"]),
        schedule=opts["schedule"],
        eval_every=int(opts["eval_every"]),
        eval_mode=opts["eval_mode"],
        eval_samples=int(opts["eval_samples"]),
    )
    state = learn.train(spec, config, init, seed=opts["seed"])
    learn.write_history_csv(state, run.path("history.csv"))
    write_json(run.path("final_path.json"), {"T": spec.T, "values": state.path.values.tolist()})
    h = state.history
    emit_svg(
        [([r.iteration for r in h], [max(r.cost, 1e-300) for r in h], "J")],
        PlotStyle(title="training cost", xlabel="iteration", ylabel="log10 J", logy=True),
        run.path("cost.svg"),
    )
    run.finish()
    print(f"final cost {h[-1].cost:.6g} after {state.iteration} iterations")
    return 0


def cmd_gradcheck(opts) -> int:
    rng = np.random.default_rng(opts["seed"])
    d = int(opts["dim"])
    if d < 1:
        raise UsageError("--dim must be positive")
    R = np.eye(d) + 0.5 * rng.standard_normal((d, d))
    M = rng.standard_normal((d, d))
    spec = ProblemSpec(R, np.eye(d) + 0.2 * M @ M.T, 1.0, float(opts["lam"]), float(opts["noise_var"]))
    N = int(opts["grid"])
    path = WeightPath(0.5 * rng.standard_normal((N + 1, d, d)), 1.0)
    run = Run("gradcheck", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    errs = gradient_check(path, spec, int(opts["directions"]), seed=opts["seed"])
    ok = bool(errs.max() <= 1e-5)
    report = {"max_relative_error": float(errs.max()), "relative_errors": errs.tolist(), "tolerance": 1e-5, "passed": ok}
    write_json(run.path("gradcheck.json"), report)
    run.finish()
    print(f"max relative error {errs.max():.3e} ({'ok' if ok else 'FAILED'})")
    return 0 if ok else 1


def cmd_critical_solve(opts) -> int:
    spec = _spec_from(opts)
    run = Run("critical-solve", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    if opts.get("seed_C") is not None:
        C0 = np.asarray(json.loads(opts["seed_C"]) if isinstance(opts["seed_C"], str) else opts["seed_C"], dtype=float)
    else:
        C0 = charsolve.normal_solution(spec.replace(lam=0.0), int(opts["branch"])).C
    cp = charsolve.newton_solve(C0, spec, tol=float(opts["tol"]), max_iter=int(opts["max_iter"]))
    label = charsolve.classify(cp, spec, probes=int(opts["probes"]), N=int(opts["classify_grid"]), seed=opts["seed"])
    cp = cp.with_classification(label)
    write_json(run.path("charpoint.json"), cp.to_dict())
    run.finish()
    print(f"residual {cp.residual_norm:.3e}, cost {cp.cost:.10g}, {label}")
    return 0


def _parse_entry(s):
    if isinstance(s, (list, tuple)):
        i, j = s
    else:
        i, j = (int(v) for v in str(s).split(","))
    return int(i) - 1, int(j) - 1


def _branch_plot(branches, entry, path, title, markers=()):
    i, j = entry
    series = [(br.params, br.matrices[:, i, j], label) for label, br in branches]
    emit_svg(series, PlotStyle(title=title, xlabel=branches[0][1].parameter_name, ylabel=f"C_{i + 1}{j + 1}", markers=tuple(markers)), path)


def cmd_critical_continue(opts) -> int:
    spec = _spec_from(opts)
    run = Run("critical-continue", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    kind = opts["param"]
    lower = -math.inf if opts.get("lower") is None else float(opts["lower"])
    upper = math.inf if opts.get("upper") is None else float(opts["upper"])
    start = opts.get("start")
    if kind == "lambda":
        param = ct.lambda_parameter(max(lower, 0.0), upper)
    elif kind == "log-lambda":
        param = ct.log_lambda_parameter(max(lower, -800.0), upper)
    else:
        if opts.get("mu_entry") is None or start is None:
            raise UsageError("--param mu needs --mu-entry and --start")
        i, j = _parse_entry(opts["mu_entry"])
        base = spec.R.copy()

        def R_of_mu(mu, base=base, i=i, j=j):
            R = base.copy()
            R[i, j] = mu
            return R

        param = ct.mu_parameter(R_of_mu, lower, upper)
        spec = spec.replace(R=R_of_mu(float(start)))
    if opts.get("seed_C") is not None:
        C0 = np.asarray(json.loads(opts["seed_C"]) if isinstance(opts["seed_C"], str) else opts["seed_C"], dtype=float)
        seed = charsolve.newton_solve(C0, spec)
    else:
        seed = charsolve.normal_solution(spec, int(opts["branch"]))
    config = ct.ContinuationConfig(
        initial_step=float(opts["step"]),
        max_step=max(float(opts["max_step"]), float(opts["step"])),
        max_points=int(opts["max_points"]),
        direction=int(opts["direction"]),
        classify=bool(opts["classify"]),
    )
    br = ct.continue_branch(seed, spec, param, config, start=None if start is None else float(start))
    ct.write_branch_csv(br, run.path("branch.csv"))
    ct.write_branch_json(br, run.path("branch.json"))
    folds = ct.fold_points(br)
    write_json(run.path("folds.json"), [{"param": p, **cp.to_dict()} for p, cp in folds])
    if spec.dim >= 2:
        _branch_plot([("branch", br)], (1, 0), run.path("branch.svg"), "continuation", [(p, cp.C[1, 0], "fold") for p, cp in folds])
    run.finish()
    print(f"{len(br)} points, status {br.status}, {len(folds)} fold(s)")
    return 0


def cmd_scalar_analyze(opts) -> int:
    if opts.get("R") is None:
        raise UsageError("--R is required")
    spec = ProblemSpec(float(opts["R"]), float(opts["Sigma0"]), float(opts["T"]), float(opts["lam"]))
    run = Run("scalar-analyze", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    regime = scalar.solve_all(spec)
    write_json(run.path("scalar.json"), regime.to_dict())
    samples = scalar.curve_samples(spec)
    write_csv(run.path("curve.csv"), ["C_tilde", "f"], [tuple(map(float, r)) for r in samples])
    markers = [(s.c_tilde, float(spec.R[0, 0]), s.classification) for s in regime.solutions]
    emit_svg(
        [(samples[:, 0], samples[:, 1], "f"), (samples[[0, -1], 0], [float(spec.R[0, 0])] * 2, "R")],
        PlotStyle(title="scalar characteristic function", xlabel="T C", ylabel="f", markers=markers),
        run.path("curve.svg"),
    )
    run.finish()
    print(json.dumps(regime.to_dict()))
    return 0


def cmd_example1(opts) -> int:
    spec = studies.rotation_spec()
    run = Run("example1", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    cfg = studies.RotationStudyConfig(
        lambda_min=float(opts["lambda_min"]), lambda_max=float(opts["lambda_max"]), classify=bool(opts["classify"])
    )
    study = studies.rotation_branches(cfg)
    order = sorted(study.branches, key=lambda n: (abs(n), n))
    summary = {"folds": {}, "escapes": {}, "principal_lowest_cost": True}
    markers = []
    for n in order:
        br = study.branches[n]
        ct.write_branch_csv(br, run.path(f"branch_n{n:+d}.csv"))
        summary["folds"][str(n)] = [{"lambda": p, "C21": cp.C[1, 0]} for p, cp in study.folds[n]]
        markers += [(p, cp.C[1, 0], f"fold n={n}") for p, cp in study.folds[n]]
        if np.any(br.costs < study.principal_costs[n] - 1e-12):
            summary["principal_lowest_cost"] = False
        if n in study.escapes:
            esc = study.escapes[n]
            ct.write_branch_csv(esc, run.path(f"escape_n{n:+d}.csv"))
            last = esc.points[-1][1]
            summary["escapes"][str(n)] = {
                "status": esc.status,
                "log_lambda": esc.points[-1][0],
                "C": last.C.tolist(),
                "cost": last.cost,
                "cost_without_half": 2 * last.cost,
            }
    _branch_plot([(f"n={n}", study.branches[n]) for n in order], (1, 0), run.path("branches_C21.svg"), "C_21 along the branches", markers)
    emit_svg(
        [(study.branches[n].params, study.branches[n].costs, f"n={n}") for n in order],
        PlotStyle(title="cost along the branches", xlabel="lambda", ylabel="J"),
        run.path("branches_cost.svg"),
    )
    write_json(run.path("summary.json"), summary)
    run.finish()
    print(json.dumps(summary["folds"]))
    return 0


def cmd_example2(opts) -> int:
    study = studies.shifted_rotation_study(lambda_max=float(opts["lambda_max"]))
    spec = ProblemSpec(studies.shifted_rotation(math.pi / 2), np.eye(2))
    run = Run("example2", Path(opts["out"]), opts["seed"], _config_blob(opts), spec)
    ct.write_branch_csv(study.mu_branch, run.path("branch_mu.csv"))
    ct.write_branch_csv(study.lambda_branch, run.path("branch_lambda.csv"))
    s = study.summary
    write_csv(
        run.path("cost_comparison.csv"),
        ["lambda", "cost_critical", "cost_constant_log"],
        list(zip(map(float, s["lambda"]), map(float, s["cost_critical"]), map(float, s["cost_constant_log"]))),
    )
    emit_svg(
        [(s["lambda"], s["cost_critical"], "critical point"), (s["lambda"], s["cost_constant_log"], "constant log(R)")],
        PlotStyle(title="cost comparison", xlabel="lambda", ylabel="J"),
        run.path("cost_comparison.svg"),
    )
    _branch_plot([("mu branch", study.mu_branch)], (1, 0), run.path("branch_mu.svg"), "C_21 while deforming R")
    write_json(run.path("summary.json"), {k: v for k, v in s.items() if not isinstance(v, list) or k == "C_end"})
    run.finish()
    print(f"int tr(A A^T) = {s['regularizer_integral_critical']:.6f} < {s['regularizer_integral_constant_log']:.6f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "critical-solve": cmd_critical_solve,
    "critical-continue": cmd_critical_continue,
    "scalar-analyze": cmd_scalar_analyze,
    "example1": cmd_example1,
    "example2": cmd_example2,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts)
    except (UsageError, InvalidSpecError, InvalidInputError) as exc:
        print(f"critnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"critnet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
