"""Command-line surface.

Commands
--------
test       second-stage tests on user CSV data (X required, Z optional)
simulate   replicated synthetic study: summary JSON plus a p-value CSV
calibrate  chain-length sensitivity of the sampling t-test
demo-coin  two-line worked example of selective conditioning

Input matrices are headerless comma-separated numeric CSVs, row-major;
y is a single column.  Every output carries "schema_version" plus
provenance (seed, config echo, library version).  Failures print one
JSON object on stderr and exit 1 (internal), 2 (data) or 3 (config).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import Dataset
from .dists import conditional_binomial_tail
from .errors import ConfigError, DimensionMismatch, ParseError, SelpredError
from .samplers import ChainConfig
from .selectors import tune_lambda
from .sim import (
    METHOD_NAMES, AutoSparsity, Fixed, SimConfig, run_experiment, run_methods,
    sampler_size_study,
)

SCHEMA_VERSION = 1

# config-file keys each command understands; flags override file values
_TEST_KEYS = frozenset({
    "methods", "alpha", "seed", "lambda", "auto_lambda", "samples",
    "burn_in", "thin", "chain_method", "split_frac", "folds", "sigma2",
    "intercept",
})
_SIM_KEYS = frozenset({
    "n", "p_x", "p_z", "p_real", "b_x", "b_z", "n_reps", "alpha", "seed",
    "methods", "lambda", "auto_lambda", "samples", "burn_in", "thin",
    "chain_method", "split_frac", "folds", "sigma2",
})
_CAL_KEYS = _SIM_KEYS | {"sizes"}

_EXIT_CODES = {"internal": 1, "data": 2, "config": 3}


class _Parser(argparse.ArgumentParser):
    """Argument problems are config errors (exit 3), not argparse's own 2."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(p):
    p.add_argument("--config", help="JSON settings file; flags override it")
    p.add_argument("--out", help="output JSON path; stdout when omitted")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--method", action="append", choices=METHOD_NAMES,
                   help="method to run (repeatable)")
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float,
                     help="fixed lasso penalty")
    lam.add_argument("--auto-lambda", nargs=2, type=int,
                     metavar=("LOW", "HIGH"),
                     help="tune the penalty until LOW..HIGH columns select")
    p.add_argument("--samples", type=int, default=None,
                   help="kept Monte-Carlo draws per chain")
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--split-frac", type=float, default=None)
    p.add_argument("--folds", type=int, default=None)


def build_parser():
    parser = _Parser(prog="selpred",
                     description="selective inference for internal predictors")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run tests on CSV data")
    t.add_argument("--x", required=True, help="predictor matrix CSV")
    t.add_argument("--y", required=True, help="response CSV, one column")
    t.add_argument("--z", help="covariate matrix CSV (optional)")
    t.add_argument("--no-intercept", action="store_true",
                   help="do not append an all-ones covariate column")
    _add_common(t)

    s = sub.add_parser("simulate", help="replicated synthetic study")
    _add_common(s)

    c = sub.add_parser("calibrate", help="chain-length sensitivity study")
    _add_common(c)

    sub.add_parser("demo-coin",
                   help="worked example of selective conditioning")
    return parser


# ---------------------------------------------------------------------------
# input handling

def _read_matrix(path, label):
    """Headerless comma-separated numeric matrix, one row per line."""
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {label} file: {exc}") from exc
    rows, width = [], None
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            try:
                vals = [float(v) for v in line.split(",")]
            except ValueError as exc:
                raise ParseError(lineno, f"{label}: {exc}") from exc
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(
                    lineno, f"{label}: expected {width} fields, got {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ParseError(0, f"{label}: no data rows")
    return np.array(rows)


def _load_config(path):
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    return raw


def _check_keys(raw, allowed):
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError("unknown config key(s): " + ", ".join(unknown))


def _merge_flags(raw, args):
    """Explicit flags override config-file values."""
    merged = dict(raw)
    for key in ("seed", "alpha", "samples", "burn_in", "thin",
                "split_frac", "folds"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if getattr(args, "method", None):
        merged["methods"] = list(args.method)
    if getattr(args, "lam", None) is not None:
        merged.pop("auto_lambda", None)
        merged["lambda"] = args.lam
    if getattr(args, "auto_lambda", None) is not None:
        merged.pop("lambda", None)
        merged["auto_lambda"] = list(args.auto_lambda)
    return merged


def _chain_from(merged):
    return ChainConfig(
        n_samples=int(merged.pop("samples", 5000)),
        burn_in=int(merged.pop("burn_in", 1000)),
        thin=int(merged.pop("thin", 5)),
        seed=0,
        method=str(merged.pop("chain_method", "hit_and_run")))


def _policy_from(merged):
    lam = merged.pop("lambda", None)
    auto = merged.pop("auto_lambda", None)
    if lam is not None and auto is not None:
        raise ConfigError("give either lambda or auto_lambda, not both")
    if lam is not None:
        return Fixed(float(lam))
    if auto is not None:
        if len(auto) != 2:
            raise ConfigError("auto_lambda needs exactly two integers")
        return AutoSparsity(int(auto[0]), int(auto[1]))
    return AutoSparsity()


def _policy_echo(policy):
    if isinstance(policy, Fixed):
        return {"kind": "fixed", "value": policy.value}
    return {"kind": "auto_sparsity", "low": policy.low, "high": policy.high}


def _config_echo(cfg):
    return {
        "n": cfg.n, "p_x": cfg.p_x, "p_z": cfg.p_z, "p_real": cfg.p_real,
        "b_x": cfg.b_x, "b_z": cfg.b_z, "n_reps": cfg.n_reps,
        "alpha": cfg.alpha, "seed": cfg.seed, "methods": list(cfg.methods),
        "lambda_policy": _policy_echo(cfg.lambda_policy),
        "chain": {"n_samples": cfg.chain.n_samples,
                  "burn_in": cfg.chain.burn_in, "thin": cfg.chain.thin,
                  "method": cfg.chain.method},
        "split_frac": cfg.split_frac, "folds": cfg.folds,
        "sigma2": cfg.sigma2,
    }


def _emit(payload, out_path):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _sim_config(args, allowed):
    raw = _load_config(args.config)
    _check_keys(raw, allowed)
    merged = _merge_flags(raw, args)
    sizes = merged.pop("sizes", None)
    chain = _chain_from(merged)
    policy = _policy_from(merged)
    sigma2 = float(merged.pop("sigma2", 1.0))
    try:
        cfg = SimConfig(chain=chain, lambda_policy=policy, sigma2=sigma2,
                        **merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, sizes


# ---------------------------------------------------------------------------
# commands

def cmd_test(args):
    raw = _load_config(args.config)
    _check_keys(raw, _TEST_KEYS)
    merged = _merge_flags(raw, args)
    if args.no_intercept:
        merged["intercept"] = False
    intercept = bool(merged.pop("intercept", True))
    seed = int(merged.pop("seed", 0))
    alpha = float(merged.pop("alpha", 0.05))
    sigma2 = merged.pop("sigma2", None)
    sigma2 = None if sigma2 is None else float(sigma2)
    split_frac = float(merged.pop("split_frac", 0.5))
    folds = int(merged.pop("folds", 10))
    chain = _chain_from(merged)
    policy = _policy_from(merged)
    names = list(dict.fromkeys(merged.pop("methods", ["selective_t"])))
    if not names:
        raise ConfigError("no methods requested")

    X = _read_matrix(args.x, "x")
    ymat = _read_matrix(args.y, "y")
    if ymat.shape[1] != 1:
        raise DimensionMismatch(
            f"y must be a single column, got {ymat.shape[1]}")
    Z = _read_matrix(args.z, "z") if args.z else None
    ds = Dataset(y=ymat[:, 0], X=X, Z=Z, intercept=intercept)

    if isinstance(policy, Fixed):
        lam = float(policy.value)
    else:
        lam = tune_lambda(ds, policy.low, policy.high)
    results, state = run_methods(
        ds, names, lam_full=lam, chain=chain, seed=seed,
        split_frac=split_frac, folds=folds, sigma2=sigma2)
    # provenance only; methods that never touch the full fit still report it
    try:
        selected = [int(j) for j in state.fit.active]
        signs = [int(s) for s in state.fit.signs]
    except SelpredError:
        selected, signs = None, None

    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "test",
        "library_version": __version__,
        "seed": seed,
        "alpha": alpha,
        "sigma2": sigma2,
        "intercept": intercept,
        "n": ds.n, "p_x": ds.p_x, "p_z": ds.p_z,
        "lambda": lam,
        "lambda_policy": _policy_echo(policy),
        "chain": {"n_samples": chain.n_samples, "burn_in": chain.burn_in,
                  "thin": chain.thin, "method": chain.method},
        "split_frac": split_frac,
        "folds": folds,
        "selected": selected,
        "signs": signs,
        "results": [dict(results[name].to_dict(), method=name,
                         reject=bool(results[name].p_value <= alpha))
                    for name in names],
    }
    _emit(payload, args.out)
    return 0


def cmd_simulate(args):
    if not args.out:
        raise ConfigError("simulate requires --out for its summary JSON")
    cfg, _ = _sim_config(args, _SIM_KEYS)
    summary = run_experiment(cfg)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "library_version": __version__,
        "config": _config_echo(cfg),
        **summary.to_dict(),
    }
    out = Path(args.out)
    _emit(payload, out)
    csv_path = out.with_suffix(".csv")
    _write_pvalue_csv(csv_path, summary)
    sys.stdout.write(f"summary: {out}\np-values: {csv_path}\n")
    return 0


def _write_pvalue_csv(path, summary):
    lines = ["replicate,method,p_value,n_true_positives"]
    for name in summary.config.methods:
        ms = summary.methods[name]
        for rep, (p, tp) in enumerate(zip(ms.p_values, ms.true_positives)):
            if p is None:
                continue
            lines.append(f"{rep},{name},{p:.17g},{tp}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_calibrate(args):
    cfg, sizes = _sim_config(args, _CAL_KEYS)
    sizes = [int(s) for s in (sizes if sizes is not None else (100, 1000, 10000))]
    entries = sampler_size_study(cfg, sizes)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "calibrate",
        "library_version": __version__,
        "config": _config_echo(cfg),
        "sizes": sizes,
        "results": [{"size": int(e["size"]),
                     "ks_stat": float(e["ks_stat"]),
                     "p_values": [float(p) for p in e["p_values"]]}
                    for e in entries],
    }
    _emit(payload, args.out)
    if args.out:
        for e in entries:
            sys.stdout.write(
                f"size {int(e['size']):>8d}  ks {float(e['ks_stat']):.4f}\n")
    return 0


def cmd_demo_coin(args):
    unconditional = conditional_binomial_tail(9, 0, 8)
    selective = conditional_binomial_tail(9, 5, 8)
    sys.stdout.write(
        "9 fair coin flips, reported only when heads outnumber tails; "
        "8 heads observed.\n"
        f"unconditional tail P(>= 8 heads)            = {unconditional:.6f}\n"
        f"selective p-value given the reporting event = {selective:.6f}\n"
        "Conditioning on the reporting event (probability 1/2) doubles the "
        "tail, so the naive value overstates the evidence.\n")
    return 0


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {"test": cmd_test, "simulate": cmd_simulate,
             "calibrate": cmd_calibrate, "demo-coin": cmd_demo_coin}


def _report(exc, category=None):
    line = json.dumps({
        "category": category or getattr(exc, "category", "internal"),
        "error": type(exc).__name__,
        "message": str(exc),
    }, sort_keys=True)
    sys.stderr.write(line + "\n")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SelpredError as exc:
        _report(exc)
        return _EXIT_CODES.get(exc.category, 1)
    except Exception as exc:  # last resort: anything else is "internal"
        _report(exc, category="internal")
        return 1


if __name__ == "__main__":
    sys.exit(main())
