"""Command-line entry point: ``mecor {correct,simulate,illustrate,power}``.

Exit codes: 0 on success, 2 for usage, schema or config problems, 3 when the
data are valid but degenerate (e.g. a calibration sample with constant truth).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import secrets
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from mecor import __version__
from mecor.calibration import CalibrationDataset, fit_differential, fit_systematic
from mecor.correction import (
    ci_bootstrap,
    ci_delta,
    ci_fieller,
    ci_zero_variance,
    correct_differential,
    correct_systematic,
    naive_estimate,
    power_type2,
    sample_size_inflation,
    solve_sample_size,
    two_arm_se,
)
from mecor.errors import ConfigInvalid, MecorError
from mecor.simulation import (
    ILLUSTRATION_VARIANTS,
    METHODS,
    METRIC_FIELDS,
    parse_config,
    run_illustration,
    run_scenario,
)
from mecor.stats_core import TrialDataset

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
SCHEMA_VERSION = 1
THETA1_WARN_SCALE = 1e-6

REPLICATE_FIELDS = [
    "replicate_id",
    "estimator",
    "method",
    "estimate",
    "ci_lower",
    "ci_upper",
    "defined",
    "theta1_hat",
    "boot_dropped",
]


class UsageError(MecorError):
    """Bad flags or input files; maps to exit code 2."""


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(rows: list[list], header: list[str], out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def read_columns(path: str, required: list[str], optional: list[str] = ()) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required if c not in header]
            if missing:
                raise UsageError(f"{path}: missing required column(s) {', '.join(missing)}")
            wanted = list(required) + [c for c in optional if c in header and c not in required]
            cols: dict[str, list[float]] = {c: [] for c in wanted}
            for lineno, row in enumerate(reader, 2):
                for c in wanted:
                    raw = (row.get(c) or "").strip()
                    try:
                        val = float(raw)
                    except ValueError:
                        raise UsageError(f"{path}:{lineno}: column {c!r} is not numeric: {raw!r}") from None
                    if not math.isfinite(val):
                        raise UsageError(f"{path}:{lineno}: column {c!r} is not finite")
                    cols[c].append(val)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return {c: np.array(v) for c, v in cols.items()}


def parse_methods(text: str) -> list[str]:
    items = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in items if m not in METHODS]
    if bad:
        raise UsageError(f"unknown CI method(s): {', '.join(bad)}")
    return items


def cmd_correct(args) -> int:
    methods = parse_methods(args.ci)
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if args.boot_reps < 100:
        raise UsageError(f"--boot-reps must be at least 100, got {args.boot_reps}")
    if args.model == "differential" and "fieller" in methods:
        raise UsageError("the Fieller interval is only available with --model systematic")
    t = read_columns(args.trial, ["treatment", "y_observed"])
    cal_needs = ["y_true", "y_observed"] + (["treatment"] if args.model == "differential" else [])
    c = read_columns(args.calibration, cal_needs, ["treatment"])
    if not np.all((t["treatment"] == 0) | (t["treatment"] == 1)):
        raise UsageError(f"{args.trial}: treatment must be coded 0/1")
    if "treatment" in c and not np.all((c["treatment"] == 0) | (c["treatment"] == 1)):
        raise UsageError(f"{args.calibration}: treatment must be coded 0/1")

    trial = TrialDataset(t["treatment"], t["y_observed"])
    cal = CalibrationDataset(c["y_true"], c["y_observed"], c.get("treatment"))
    level = 1.0 - args.alpha
    flavor = "homoscedastic" if args.model == "systematic" else "HC3"
    naive, naive_ci = naive_estimate(trial, flavor, level)
    if args.model == "systematic":
        cal_fit = fit_systematic(cal)
        slopes = [cal_fit.theta1_hat]
        est = correct_systematic(trial, cal_fit)
    else:
        cal_fit = fit_differential(cal)
        slopes = [cal_fit.theta10_hat, cal_fit.theta11_hat]
        est = correct_differential(trial, cal_fit)

    scale = float(np.std(cal.y_observed)) / max(float(np.std(cal.y_true)), 1e-300)
    for s in slopes:
        if abs(s) < THETA1_WARN_SCALE * scale:
            print(f"warning: calibration slope {s:.3g} is close to zero; the corrected estimate is unstable",
                  file=sys.stderr)

    rows = [["naive", naive_ci.method, naive.beta_hat, naive_ci.lower, naive_ci.upper, True, ""]]
    if not methods:
        rows.append(["corrected", "Estimate", est.beta_hat, None, None, False, ""])
    seed = args.seed
    for m in methods:
        if m == "zero-variance":
            ci = ci_zero_variance(est, level)
        elif m == "delta":
            ci = ci_delta(est, level=level)
        elif m == "fieller":
            ci = ci_fieller(est, level=level)
        else:
            if seed is None:
                seed = secrets.randbits(63)
                print(f"bootstrap seed: {seed}", file=sys.stderr)
            ci = ci_bootstrap(trial, cal, args.model, level, args.boot_reps, np.random.default_rng(seed))
        lo, hi = (ci.lower, ci.upper) if ci.defined else (None, None)
        rows.append(["corrected", ci.method, est.beta_hat, lo, hi, ci.defined, ci.failure_reason or ""])

    header = ["estimator", "method", "estimate", "ci_lower", "ci_upper", "defined", "note"]
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_csv(rows, header, fh)
    else:
        write_csv(rows, header, sys.stdout)
    return EXIT_OK


def bundled_configs() -> list[str]:
    root = resources.files("mecor") / "data" / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config_text(ref: str) -> str:
    path = Path(ref)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    name = ref[:-4] if ref.endswith(".cfg") else ref
    if name in bundled_configs():
        return (resources.files("mecor") / "data" / "configs" / f"{name}.cfg").read_text(encoding="utf-8")
    raise UsageError(f"no config file or bundled config named {ref!r}")


def default_threads() -> int:
    raw = os.environ.get("MECOR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MECOR_THREADS must be an integer, got {raw!r}") from None
    return n


def cmd_simulate(args) -> int:
    if args.list:
        print("\n".join(bundled_configs()))
        return EXIT_OK
    if args.config is None:
        raise UsageError("a config file is required")
    if args.seed is None:
        raise UsageError("--seed is required for simulate")
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise UsageError(f"--threads must be at least 1, got {threads}")
    cfg = parse_config(load_config_text(args.config))
    overrides = {"seed": args.seed}
    if args.replicates is not None:
        overrides["n_replicates"] = args.replicates
    cfg = dataclasses.replace(cfg, **overrides)

    report = run_scenario(cfg, threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[report.scenario] + [getattr(r, f) for f in METRIC_FIELDS] for r in report.rows]
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        write_csv(rows, ["scenario"] + METRIC_FIELDS, fh)
    if args.emit_replicates:
        reps = [[getattr(r, f) for f in REPLICATE_FIELDS] for r in report.replicates]
        with open(out / "replicates.csv", "w", newline="", encoding="utf-8") as fh:
            write_csv(reps, REPLICATE_FIELDS, fh)
    manifest = {
        "command": "simulate",
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {out / 'metrics.csv'} ({cfg.n_replicates} replicates)", file=sys.stderr)
    return EXIT_OK


def cmd_illustrate(args) -> int:
    if args.replicates < 2:
        raise UsageError(f"--replicates must be at least 2, got {args.replicates}")
    variants = ILLUSTRATION_VARIANTS if args.variant == "all" else (args.variant,)
    rows = []
    for v in variants:
        rep = run_illustration(v, replicates=args.replicates, seed=args.seed, n_per_arm=args.n_per_arm)
        rows.append([v, rep.replicates, rep.type1_error, rep.type2_error, rep.mean_estimate,
                     rep.empirical_variance, rep.variance_inflation])
        if args.wald_dir:
            d = Path(args.wald_dir)
            d.mkdir(parents=True, exist_ok=True)
            stats = [[i, a, b] for i, (a, b) in enumerate(zip(rep.wald_null, rep.wald_alternative))]
            with open(d / f"wald_{v}.csv", "w", newline="", encoding="utf-8") as fh:
                write_csv(stats, ["replicate_id", "wald_null", "wald_alternative"], fh)
    header = ["variant", "replicates", "type1_error", "type2_error", "mean_estimate",
              "empirical_variance", "variance_inflation"]
    write_csv(rows, header, sys.stdout)
    return EXIT_OK


def cmd_power(args) -> int:
    if args.se is not None:
        if args.sd is not None or args.n_per_arm is not None:
            raise UsageError("give either --se/--df or --sd/--n-per-arm, not both")
        if args.df is None:
            raise UsageError("--se needs --df")
        if not args.se > 0 or not args.df > 0:
            raise UsageError("--se and --df must be positive")
        se, df = args.se, args.df
        n_total = int(round(df)) + 2
        sd = se / math.sqrt(4.0 / n_total)
    else:
        if args.sd is None or args.n_per_arm is None:
            raise UsageError("give --se and --df, or --sd and --n-per-arm")
        if not args.sd > 0 or args.n_per_arm < 2:
            raise UsageError("--sd must be positive and --n-per-arm at least 2")
        n_total = 2 * args.n_per_arm
        sd = args.sd
        se, df = two_arm_se(sd, n_total), n_total - 2
    if not 0.0 < args.alpha < 1.0:
        raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    type2 = power_type2(args.effect, se, df, args.alpha)
    report = {"effect": args.effect, "se": se, "df": df, "alpha": args.alpha,
              "type2_error": type2, "power": 1.0 - type2}
    if args.reliability is not None:
        if not 0.0 < args.reliability <= 1.0:
            raise UsageError(f"--reliability must lie in (0, 1], got {args.reliability}")
        target = args.target_type2 if args.target_type2 is not None else type2
        report.update(
            reliability=args.reliability,
            n_total=n_total,
            n_inflated=sample_size_inflation(n_total, args.reliability),
            target_type2=target,
            n_solved=solve_sample_size(args.effect, sd, target, args.alpha, args.reliability),
        )
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        for k, v in report.items():
            print(f"{k}: {v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mecor", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("correct", help="naive and corrected estimates for a trial and calibration sample")
    c.add_argument("trial", help="CSV with columns treatment, y_observed")
    c.add_argument("calibration", help="CSV with columns y_true, y_observed[, treatment]")
    c.add_argument("--model", choices=["systematic", "differential"], default="systematic")
    c.add_argument("--ci", default="zero-variance,delta,fieller,bootstrap",
                   help="comma list of interval methods (default: all)")
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--boot-reps", type=int, default=999)
    c.add_argument("--seed", type=int, help="bootstrap seed (generated and printed if absent)")
    c.add_argument("--out", help="write the report here instead of stdout")
    c.set_defaults(func=cmd_correct)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario from a key = value config")
    s.add_argument("config", nargs="?", help="config file or bundled config name")
    s.add_argument("--seed", type=int)
    s.add_argument("--replicates", type=int)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--emit-replicates", action="store_true")
    s.add_argument("--threads", type=int, help="worker threads (default: $MECOR_THREADS or 1)")
    s.add_argument("--list", action="store_true", help="list bundled configs and exit")
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("illustrate", help="example-trial simulations of each error structure")
    i.add_argument("--variant", choices=list(ILLUSTRATION_VARIANTS) + ["all"], default="all")
    i.add_argument("--replicates", type=int, default=50_000)
    i.add_argument("--n-per-arm", type=int, default=54)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--wald-dir", help="also write per-replicate Wald statistics here")
    i.set_defaults(func=cmd_illustrate)

    w = sub.add_parser("power", help="Type-II error and sample size under classical error")
    w.add_argument("--effect", type=float, required=True)
    w.add_argument("--se", type=float)
    w.add_argument("--df", type=float)
    w.add_argument("--sd", type=float)
    w.add_argument("--n-per-arm", type=int)
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--reliability", type=float)
    w.add_argument("--target-type2", type=float)
    w.add_argument("--json", action="store_true")
    w.set_defaults(func=cmd_power)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigInvalid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MecorError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
