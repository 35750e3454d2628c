"""Command-line interface: ``tsqn <command> [options]``.

Every command prints a one-line JSON summary on stdout. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 numeric failure, 5 assumption
violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import _jsonable, asymptotic_ci, cumulative_regret, lyapunov_bound
from .errors import ConfigError, DataError, DomainError, TSQNError
from .estimator import AdaptiveMu, ConstantMu
from .montecarlo import McDesign, mc_interval, replicate_errors
from .simulation import gen_regressors, scenario_records
from .trace import run_estimator

SEED_ENV = "TSQN_SEED"
PLUGIN_NAMES = {"true": "true_theta", "estimate": "estimate", "worst": "worst_case"}


def _emit(doc: dict) -> None:
    print(json.dumps(_jsonable(doc), sort_keys=True, separators=(",", ":")))


def _resolve_seed(args, cfg: io.RunConfig) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
    return cfg.seed


def _load(args) -> io.RunConfig:
    cfg = io.load_config(args.config)
    seed = _resolve_seed(args, cfg)
    if seed != cfg.seed:
        cfg = cfg.with_seed(seed)
    mu = getattr(args, "mu", None)
    if mu == "constant" and not isinstance(cfg.estimator.mu_policy, ConstantMu):
        value = args.mu_value if args.mu_value is not None else 1.0
        cfg.estimator = replace(cfg.estimator, mu_policy=ConstantMu(value))
    elif mu == "constant" and args.mu_value is not None:
        cfg.estimator = replace(cfg.estimator, mu_policy=ConstantMu(args.mu_value))
    elif mu == "adaptive" and not isinstance(cfg.estimator.mu_policy, AdaptiveMu):
        cfg.estimator = replace(cfg.estimator, mu_policy=AdaptiveMu())
    return cfg


def _records(args, cfg: io.RunConfig):
    """Records and the true parameter (known only for simulated data)."""
    if getattr(args, "data", None):
        theta = cfg.scenario.theta_true if cfg.scenario is not None and args.truth_from_config else None
        return io.load_dataset(args.data), theta
    if cfg.scenario is None:
        raise ConfigError("no --data given and the config has no scenario to simulate")
    return scenario_records(cfg.scenario), cfg.scenario.theta_true


def _stamp(report, cfg: io.RunConfig):
    report.metadata["config_hash"] = cfg.config_hash()
    report.metadata["seed"] = cfg.seed
    return report


def _out(args, name: str) -> Path | None:
    if not args.out:
        return None
    return Path(args.out) / name


def _base(args, cfg: io.RunConfig) -> dict:
    return {"command": args.command, "status": "ok", "config_hash": cfg.config_hash(), "seed": cfg.seed}


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if cfg.scenario is None:
        raise ConfigError("simulate needs a 'scenario' entry in the config")
    scenario = cfg.scenario if args.n is None else replace(cfg.scenario, n=args.n)
    records = scenario_records(scenario)
    _, trace = run_estimator(cfg.estimator, records, theta_true=scenario.theta_true, seed=cfg.seed)
    summary = _base(args, cfg)
    summary.update(_fit_summary(trace))
    if args.out:
        out = Path(args.out)
        io.write_dataset(records, out / "dataset.csv")
        io.write_trace(trace, out / "trace.csv", exact=args.exact)
        io.write_report(summary, out / "run.json")
        summary["outputs"] = [str(out / f) for f in ("dataset.csv", "trace.csv", "run.json")]
    _emit(summary)
    return 0


def _fit_summary(trace) -> dict:
    n = len(trace)
    doc = {
        "n": n,
        "theta_hat": trace.estimate(n).tolist(),
        "theta_bar": trace.estimate(n, "preliminary").tolist(),
    }
    if trace.theta_true is not None and n:
        doc["err_hat"] = float(np.linalg.norm(trace.estimate(n) - trace.theta_true))
        doc["err_bar"] = float(np.linalg.norm(trace.estimate(n, "preliminary") - trace.theta_true))
        doc["avg_regret_hat"] = cumulative_regret(trace, n) / n
        doc["avg_regret_bar"] = cumulative_regret(trace, n, "preliminary") / n
    return doc


def cmd_fit(args) -> int:
    cfg = _load(args)
    records = io.load_dataset(args.data)
    _, trace = run_estimator(cfg.estimator, records, seed=cfg.seed)
    summary = _base(args, cfg)
    summary.update(_fit_summary(trace))
    if args.out:
        out = Path(args.out)
        io.write_trace(trace, out / "trace.csv", exact=args.exact)
        io.write_report(summary, out / "run.json")
        summary["outputs"] = [str(out / "trace.csv"), str(out / "run.json")]
    _emit(summary)
    return 0


def cmd_validate(args) -> int:
    cfg = _load(args)
    records, theta = _records(args, cfg)
    rep = io.validate(records, cfg.estimator, theta)
    doc = dict(rep.to_dict(), config_hash=cfg.config_hash(), seed=cfg.seed)
    path = _out(args, "validation.json")
    if path:
        io.write_report(doc, path)
    summary = _base(args, cfg)
    summary.update(passed=rep.passed, failed=[c["check"] for c in rep.failures()])
    if not rep.passed:
        summary["status"] = "assumption_violation"
    _emit(summary)
    return 0 if rep.passed else 5


def _ci_trace(args, cfg):
    records, theta = _records(args, cfg)
    if not records:
        raise DataError("the dataset is empty")
    _, trace = run_estimator(cfg.estimator, records, theta_true=theta, seed=cfg.seed)
    return trace


def _finish_ci(args, cfg, report, name: str) -> int:
    _stamp(report, cfg)
    path = _out(args, name)
    if path:
        io.write_report(report, path)
    summary = _base(args, cfg)
    summary.update(method=report.method, lower=report.lower, upper=report.upper, confidence=report.confidence)
    if path:
        summary["outputs"] = [str(path)]
    _emit(summary)
    return 0


def cmd_ci_asymptotic(args) -> int:
    cfg = _load(args)
    alpha = args.alpha if args.alpha is not None else cfg.ci.get("alpha", 0.05)
    trace = _ci_trace(args, cfg)
    n = args.n or len(trace)
    rep = asymptotic_ci(trace, n, alpha, dof=args.dof)
    return _finish_ci(args, cfg, rep, "ci_asymptotic.json")


def cmd_ci_lyapunov(args) -> int:
    cfg = _load(args)
    alpha = args.alpha if args.alpha is not None else cfg.ci.get("alpha", 0.05)
    tau = args.tau if args.tau is not None else cfg.ci.get("tau", 0.1)
    plugin = PLUGIN_NAMES[args.plugin or cfg.ci.get("plugin", "estimate")]
    trace = _ci_trace(args, cfg)
    N = args.N if args.N is not None else len(trace) - 1
    rep = lyapunov_bound(trace, N, alpha, tau=tau, plugin=plugin)
    return _finish_ci(args, cfg, rep, "ci_lyapunov.json")


def cmd_ci_mc(args) -> int:
    cfg = _load(args)
    alpha = args.alpha if args.alpha is not None else cfg.mc.get("alpha", 0.05)
    t = args.t if args.t is not None else cfg.mc.get("t", 0.05)
    K = args.K if args.K is not None else int(cfg.mc.get("K", 2000))
    workers = args.workers if args.workers is not None else int(cfg.mc.get("workers", 1))
    # check the level precondition before any replication work
    if not (alpha > 0 and t > 0 and alpha + t < 1):
        raise DomainError(f"need alpha > 0, t > 0 and alpha + t < 1 (got {alpha}, {t})")
    if args.data:
        records = io.load_dataset(args.data)
        phis = np.array([r.phi for r in records])
        specs = [r.spec for r in records]
    else:
        if cfg.scenario is None:
            raise ConfigError("ci-mc needs --data or a scenario to fix the regressor design")
        n = args.n if args.n is not None else int(cfg.mc.get("n", cfg.scenario.n))
        scenario = replace(cfg.scenario, n=n)
        phis = gen_regressors(scenario)
        specs = scenario.specs()
        records = None
    design = McDesign(phis, tuple(specs), cfg.noise, cfg.estimator, K=K, seed=cfg.seed)
    errors = replicate_errors(design, workers=workers)
    estimate = None
    if records is not None:
        _, trace = run_estimator(cfg.estimator, records, seed=cfg.seed)
        estimate = trace.estimate(len(trace))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = mc_interval(errors, alpha, t, estimate=estimate)
    if caught:
        rep.metadata["warnings"] = [str(w.message) for w in caught]
    rep.metadata["n"] = design.n
    if args.errors_out:
        header = ",".join(f"err_{j}" for j in range(design.m))
        lines = [header] + [",".join(io.fmt(v) for v in row) for row in errors]
        Path(args.errors_out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.errors_out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return _finish_ci(args, cfg, rep, "ci_mc.json")


def cmd_report(args) -> int:
    """Merge a trace summary and any number of JSON reports into one document."""
    doc = {"reports": {}}
    if args.trace:
        cols = io.read_trace(args.trace)
        n = int(cols["k"].size)
        m = sum(1 for c in cols if c.startswith("theta_hat_") and not c.endswith("_hex"))
        tr = {"path": str(args.trace), "n": n}
        if n:
            tr["theta_hat"] = [float(cols[f"theta_hat_{j}"][-1]) for j in range(m)]
            tr["theta_bar"] = [float(cols[f"theta_bar_{j}"][-1]) for j in range(m)]
            for key in ("err_hat", "err_bar"):
                if key in cols:
                    tr[key] = float(cols[key][-1])
        doc["trace"] = tr
    for path in args.reports or []:
        try:
            doc["reports"][Path(path).stem] = io.read_report(path)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read report {path}: {exc}", code="E_SCHEMA") from exc
    if args.run:
        doc["run"] = io.read_report(args.run)
    summary = {"command": "report", "status": "ok", "sections": sorted(k for k in doc if doc[k])}
    if args.out:
        path = Path(args.out)
        if path.suffix != ".json":
            path = path / "report.json"
        io.write_report(doc, path)
        summary["outputs"] = [str(path)]
    else:
        summary["report"] = doc
    _emit(summary)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsqn", description="Two-step quasi-Newton identification under saturated observations.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", required=True, help="JSON config (schema_version 1)")
        sp.add_argument("--seed", type=int, default=None, help=f"overrides the config seed and ${SEED_ENV}")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--mu", choices=("constant", "adaptive"), default=None)
        sp.add_argument("--mu-value", type=float, default=None, help="value for --mu constant (default 1)")
        if data:
            sp.add_argument("--data", default=None, help="dataset CSV (default: simulate the config scenario)")
            sp.add_argument(
                "--truth-from-config",
                action="store_true",
                help="treat the scenario's theta_true as the truth for --data",
            )

    sp = sub.add_parser("simulate", help="generate scenario data and run the estimator")
    common(sp, data=False)
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--exact", action="store_true", help="add hexadecimal estimate columns")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="run the estimator over a dataset")
    common(sp, data=False)
    sp.add_argument("--data", required=True)
    sp.add_argument("--exact", action="store_true")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("validate", help="check the standing assumptions on a dataset")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("ci-asymptotic", help="plug-in asymptotic intervals")
    common(sp)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--n", type=int, default=None, help="steps to use (default all)")
    sp.add_argument("--dof", type=int, default=None, help="chi-square degrees of freedom (default m)")
    sp.set_defaults(func=cmd_ci_asymptotic)

    sp = sub.add_parser("ci-lyapunov", help="finite-sample bound intervals")
    common(sp)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--tau", type=float, default=None)
    sp.add_argument("--N", type=int, default=None, help="last step index entering the bound (default n-1)")
    sp.add_argument("--plugin", choices=tuple(PLUGIN_NAMES), default=None)
    sp.set_defaults(func=cmd_ci_lyapunov)

    sp = sub.add_parser("ci-mc", help="Monte Carlo quantile intervals")
    common(sp)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--t", type=float, default=None)
    sp.add_argument("--K", type=int, default=None)
    sp.add_argument("--n", type=int, default=None, help="design length when simulating regressors")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--errors-out", default=None, help="write the K x m error sample as CSV")
    sp.set_defaults(func=cmd_ci_mc)

    sp = sub.add_parser("report", help="merge a trace and JSON reports into one document")
    sp.add_argument("--trace", default=None)
    sp.add_argument("--run", default=None, help="run.json written by simulate or fit")
    sp.add_argument("--reports", nargs="*", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TSQNError as exc:
        _emit({"command": args.command, "status": "error", "code": exc.code, "message": str(exc)})
        print(f"tsqn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
