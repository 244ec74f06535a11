"""Command-line front end: ``addhaz {fit,path,cv,simulate,evaluate}``.

Every command writes JSON documents plus ``manifest.json`` (options, seed,
sha256 of each artifact, wall time) into ``--out``. Documents other than the
manifest depend only on the inputs and options, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .crossval import FoldError, cv_document, kfold_cv, select_index
from .evaluation import logrank_document, logrank_test, risk_split
from .penalties import PenaltyError, PenaltyKind, PenaltySpec
from .pseudoscore import build_system, loss
from .simulate import ConfigError, Method, SimStudyConfig, design_beta, report_document, run_study
from .solver import (FitConfig, coordinate_descent, fit_path, lambda_max, path_document,
                     penalty_document)
from .survdata import DataParseError, DataValidationError, load_csv

log = logging.getLogger("addhaz")

PENALTIES = [k.value for k in PenaltyKind]


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _sniff_header(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split(",")[0].strip()
    try:
        float(first)
    except ValueError:
        return True
    return False


def _load(path):
    return load_csv(path, has_header=_sniff_header(path))


def resolve_penalty(args):
    """``(spec, sica_pilot)`` from the penalty flags.

    SICA is staged from ``--a`` down to ``--a-final`` when the latter is set;
    with neither given it runs the default 1 -> 0.1 schedule.
    """
    kind = PenaltyKind(args.penalty)
    if args.a_final is not None and kind is not PenaltyKind.SICA:
        raise UsageError("--a-final only applies to --penalty sica")
    if kind is PenaltyKind.SICA:
        if args.a_final is not None:
            pilot = 1.0 if args.a is None else args.a
            if args.a_final > pilot:
                raise UsageError("--a-final must not exceed --a")
            return PenaltySpec.sica(args.a_final), pilot
        if args.a is None:
            return PenaltySpec.sica(0.1), 1.0
        return PenaltySpec.sica(args.a), None
    if kind is PenaltyKind.ENET:
        return PenaltySpec.enet(args.enet_alpha), None
    if kind is PenaltyKind.L1:
        return PenaltySpec.lasso(), None
    a = 3.7 if args.a is None else args.a
    return PenaltySpec(kind, a), None


def _fit_config(args, check_convexity=True) -> FitConfig:
    return FitConfig(tol=args.tol, max_sweeps=args.max_sweeps, max_active=args.max_active,
                     grid_size=args.lambda_count, grid_ratio=args.lambda_ratio,
                     check_convexity=check_convexity)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _coefficients(beta, names):
    return [{"index": int(j), "name": names[j] if names else f"z{j + 1}", "value": float(beta[j])}
            for j in np.flatnonzero(beta)]


def _options(args):
    skip = {"func", "command"}
    return [[k, v] for k, v in sorted(vars(args).items()) if k not in skip]


class Outputs:
    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.extra = {}

    def write(self, name, doc):
        path = self.dir / name
        text = _dumps(doc)
        path.write_text(text, encoding="utf-8")
        # validate by reading back
        json.loads(path.read_text(encoding="utf-8"))
        self.artifacts.append({"path": name, "sha256": hashlib.sha256(text.encode()).hexdigest()})

    def manifest(self, args, seed, started):
        doc = {
            "version": 1,
            "tool_version": __version__,
            "command": args.command,
            "options": _options(args),
            "seed": seed,
            "artifacts": self.artifacts,
            **self.extra,
            "wall_time_seconds": round(time.perf_counter() - started, 6),
        }
        (self.dir / "manifest.json").write_text(_dumps(doc), encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(args, out):
    ds = _load(args.data)
    spec, _ = resolve_penalty(args)
    sys_ = build_system(ds)
    beta, d = coordinate_descent(sys_, spec, args.lam, None, _fit_config(args))
    out.write("fit.json", {
        "version": 1, "kind": "single_fit", "penalty": penalty_document(spec),
        "lambda": args.lam, "lambda_max": lambda_max(sys_, spec),
        "coefficients": _coefficients(beta, ds.feature_names),
        "objective": d.objective, "sweeps": d.sweeps, "converged": d.converged,
        "descent_guaranteed": d.descent_guaranteed, "frozen": list(d.frozen),
    })


def cmd_path(args, out):
    ds = _load(args.data)
    spec, pilot = resolve_penalty(args)
    path = fit_path(build_system(ds), spec, _fit_config(args), sica_pilot=pilot)
    out.extra["stages"] = [penalty_document(s) for s in path.stages]
    out.write("path.json", path_document(path, ds.feature_names))


def _cv_fit(ds, args):
    spec, pilot = resolve_penalty(args)
    if not 2 <= args.folds <= ds.n:
        raise UsageError(f"--folds must lie in [2, n = {ds.n}], got {args.folds}")
    cv = kfold_cv(ds, spec, _fit_config(args, False), args.folds, seed=[args.seed, 5],
                  sica_pilot=pilot, threads=args.threads)
    path = fit_path(build_system(ds), spec, _fit_config(args), cv.lambdas, pilot)
    k = select_index(cv, args.rule)
    if not path.fitted[k]:
        k = int(np.flatnonzero(path.fitted).max())
    return spec, pilot, cv, path, k


def cmd_cv(args, out):
    ds = _load(args.data)
    spec, pilot, cv, path, k = _cv_fit(ds, args)
    out.extra["stages"] = [penalty_document(s) for s in path.stages]
    doc = cv_document(cv, args.rule)
    doc.update({
        "penalty": penalty_document(spec),
        "stages": [penalty_document(s) for s in path.stages],
        "seed": args.seed,
        "coefficients": _coefficients(path.betas[k], ds.feature_names),
    })
    out.write("cv.json", doc)
    out.write("path.json", path_document(path, ds.feature_names))


def cmd_evaluate(args, out):
    train = _load(args.data)
    test = _load(args.test)
    if test.p != train.p:
        raise UsageError(f"test data has p = {test.p}, training data has p = {train.p}")
    spec, pilot, cv, path, k = _cv_fit(train, args)
    out.extra["stages"] = [penalty_document(s) for s in path.stages]
    beta = path.betas[k]
    null_model = not np.any(beta)
    groups = risk_split(test, beta)
    lr = logrank_test(test.times, test.status, groups)
    out.write("evaluation.json", {
        "version": 1, "kind": "evaluation",
        "penalty": penalty_document(spec),
        "stages": [penalty_document(s) for s in path.stages],
        "seed": args.seed, "rule": args.rule,
        "selected_lambda": float(cv.lambdas[k]),
        "num_selected": int(np.count_nonzero(beta)),
        "prediction_error": loss(build_system(test), beta),
        "null_model": bool(null_model),
        "coefficients": _coefficients(beta, train.feature_names),
        "logrank": logrank_document(lr),
        "groups": [int(g) for g in groups],
    })


# ---------------------------------------------------------------------------
# study configs
# ---------------------------------------------------------------------------

def parse_kv(text) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = val
    return out


def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


_STUDY_KEYS = {
    "n", "p", "rho", "beta0", "signal_pattern", "signal_repeats", "target_censoring",
    "weak_effect_count", "weak_effect_eps", "replicates", "seed", "test_n", "methods",
    "scad_a", "mcp_a", "sica_a", "sica_pilot", "enet_alpha", "folds", "lambda_count",
    "lambda_ratio", "max_active", "tol", "max_sweeps", "curve_max_size", "rule",
}


def load_study_config(source):
    """Parse a study config; ``source`` is a file path or a bundled config name."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
    else:
        ref = resources.files("addhaz") / "configs" / f"{source}.cfg"
        if not ref.is_file():
            raise ConfigError(f"no config file or bundled config named {source!r}")
        text = ref.read_text(encoding="utf-8")
    kv = parse_kv(text)
    unknown = set(kv) - _STUDY_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        p = int(kv["p"])
        if "beta0" in kv:
            beta0 = np.array(_floats(kv["beta0"]))
        else:
            pattern = _floats(kv.get("signal_pattern", "1,0,-1,0,0,0"))
            beta0 = design_beta(p, pattern, int(kv.get("signal_repeats", 3)))
        cfg = SimStudyConfig(
            n=int(kv["n"]), p=p, rho=float(kv["rho"]), beta0=beta0,
            target_censoring=float(kv.get("target_censoring", 0.25)),
            weak_effect_count=int(kv.get("weak_effect_count", 0)),
            weak_effect_eps=float(kv.get("weak_effect_eps", 0.0)),
            replicates=int(kv.get("replicates", 1)), seed=int(kv.get("seed", 0)),
            test_n=int(kv.get("test_n", 500)))
        methods = []
        for name in (s.strip() for s in kv.get("methods", "lasso,scad,mcp,sica,enet").split(",")):
            kind = PenaltyKind(name)
            if kind is PenaltyKind.SICA:
                methods.append(Method("sica", PenaltySpec.sica(float(kv.get("sica_a", 0.1))),
                                      float(kv.get("sica_pilot", 1.0))))
            elif kind is PenaltyKind.ENET:
                methods.append(Method("enet", PenaltySpec.enet(float(kv.get("enet_alpha", 0.5)))))
            elif kind is PenaltyKind.L1:
                methods.append(Method("lasso", PenaltySpec.lasso()))
            else:
                methods.append(Method(name, PenaltySpec(kind, float(kv.get(f"{name}_a", 3.7)))))
        max_active = kv.get("max_active")
        fit_cfg = FitConfig(tol=float(kv.get("tol", 1e-7)),
                            max_sweeps=int(kv.get("max_sweeps", 10_000)),
                            max_active=None if max_active in (None, "none") else int(max_active),
                            grid_size=int(kv.get("lambda_count", 100)),
                            grid_ratio=float(kv.get("lambda_ratio", 1e-3)),
                            check_convexity=False)
        extra = {"folds": int(kv.get("folds", 10)), "rule": kv.get("rule", "min"),
                 "curve_max_size": int(kv["curve_max_size"]) if "curve_max_size" in kv else None}
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc.args[0]}") from None
    except (ValueError, PenaltyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    return cfg, methods, fit_cfg, extra


def cmd_simulate(args, out):
    cfg, methods, fit_cfg, extra = load_study_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.replicates is not None:
        cfg.replicates = args.replicates
    report = run_study(cfg, methods, fit_cfg, extra["folds"], extra["curve_max_size"],
                       threads=args.threads, rule=extra["rule"])
    meta = [{"name": m.name, "penalty": penalty_document(m.spec),
             "sica_pilot": m.sica_pilot if m.spec.kind is PenaltyKind.SICA else None}
            for m in methods]
    doc = report_document(report, meta)
    doc["fit"] = {"tol": fit_cfg.tol, "max_sweeps": fit_cfg.max_sweeps,
                  "max_active": fit_cfg.max_active, "lambda_count": fit_cfg.grid_size,
                  "lambda_ratio": fit_cfg.grid_ratio, "folds": extra["folds"], "rule": extra["rule"]}
    out.write("study.json", doc)
    return cfg.seed


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_fit_options(p, data=True):
    if data:
        p.add_argument("--data", required=True, help="CSV: time,status,covariates...")
    p.add_argument("--penalty", choices=PENALTIES, default="lasso")
    p.add_argument("--a", type=float, default=None, help="shape a (SICA: pilot a when --a-final is set)")
    p.add_argument("--a-final", type=float, default=None, help="final SICA a for a staged path")
    p.add_argument("--enet-alpha", type=float, default=0.5)
    p.add_argument("--lambda-count", type=int, default=100)
    p.add_argument("--lambda-ratio", type=float, default=1e-3)
    p.add_argument("--max-active", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-sweeps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=".")


def build_parser():
    parser = argparse.ArgumentParser(prog="addhaz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit at a single lambda")
    _add_fit_options(p)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("path", help="solution path over a lambda grid")
    _add_fit_options(p)
    p.set_defaults(func=cmd_path)

    for name, func, help_ in (("cv", cmd_cv, "cross-validated fit"),
                              ("evaluate", cmd_evaluate, "CV fit on train, log-rank on test")):
        p = sub.add_parser(name, help=help_)
        _add_fit_options(p)
        p.add_argument("--folds", type=int, default=10)
        p.add_argument("--rule", choices=["min", "one_se"], default="min")
        if name == "evaluate":
            p.add_argument("--test", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("simulate", help="run a simulation study from a config file")
    p.add_argument("--config", required=True, help="config file or bundled name (e.g. study1_small)")
    p.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        out = Outputs(args.out)
        seed = args.func(args, out)
        out.manifest(args, args.seed if seed is None else seed, started)
    except (UsageError, PenaltyError, FoldError) as exc:
        print(f"addhaz {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (DataParseError, DataValidationError, ConfigError, OSError, ValueError) as exc:
        print(f"addhaz {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
