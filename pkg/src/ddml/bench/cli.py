"""Command-line entry point: ``ddml-bench <command> [options]``.

Every command exits 0 on success.  On failure it prints one JSON error
record to stderr and exits 1 (bad input) or 2 (anything else).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..errors import DDMLError, InputError
from ..synthgen import Dataset, DgpConfig, generate, load_csv, write_csv
from .diagnostics import BLOCKS, TARGETS, run_diagnostics, write_diagnostics
from .experiment import ExperimentConfig, MethodSpec, build_dataset, load_config, run_experiment
from .features import rank_features
from .stats import friedman_ranks, nemenyi_cd

log = logging.getLogger("ddml.bench")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, seeds=None)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, workers=args.workers)
    if getattr(args, "out", None) is not None:
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_generate(args):
    cfg = DgpConfig(n=args.n, d=args.d, treatment=args.treatment, seed=args.seed or 0,
                    lambda_mix=args.lambda_mix, alpha_out=args.alpha_out)
    data = generate(cfg)
    out = Path(args.out) if args.out else Path(f"{cfg.name}_seed{cfg.seed}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out)
    print(json.dumps({"path": str(out), "rows": data.n, "columns": data.d,
                      "theta": data.truth.theta}))


def cmd_run(args):
    cfg = _config(args)
    table = run_experiment(cfg)
    w = csv.writer(sys.stdout)
    w.writerow(["dataset", "method", "mae", "rmse", "std", "n_ok", "n_failed"])
    for c in table.cells:
        w.writerow([c.dataset, c.method, f"{c.mae:.4f}", f"{c.rmse:.4f}", f"{c.std:.4f}",
                    len(c.thetas), len(c.errors)])
    print(f"results written to {cfg.output_dir}", file=sys.stderr)


def cmd_diagnose(args):
    cfg = _config(args)
    report = run_diagnostics(cfg)
    write_diagnostics(report, cfg.output_dir)
    w = csv.writer(sys.stdout)
    w.writerow(["dataset", "method", "mean_residual_corr"])
    for (ds, method), vals in report.residual_corr.items():
        w.writerow([ds, method, f"{np.mean(vals):.6g}"])
    for (ds, method), grid in report.probe_grid.items():
        print(f"\nprobe grid {ds} / {method}")
        print("block," + ",".join(TARGETS))
        for i, b in enumerate(BLOCKS):
            print(b + "," + ",".join(f"{v:.4f}" for v in grid[i]))


def cmd_rank_features(args):
    cfg = _config(args)
    if args.data:
        # every column except the outcome is a candidate; the outcome doubles as
        # the (unused) treatment slot of the loader
        data = load_csv(args.data, args.outcome, args.outcome, None, "continuous")
        if args.treatment_col:
            if args.treatment_col not in data.columns:
                raise InputError(f"{args.data}: missing column {args.treatment_col!r}")
            keep = [i for i, c in enumerate(data.columns) if c != args.treatment_col]
            data = Dataset(data.x[:, keep], data.t, data.y, data.treatment, None, data.name,
                           [data.columns[i] for i in keep])
    else:
        data, _ = build_dataset(cfg.datasets[0], cfg.replication_seeds()[0])
    method = next((m for m in cfg.methods if m.name == args.method), None) if args.method \
        else cfg.methods[-1]
    if method is None:
        raise InputError(f"no method named {args.method!r} in the config")
    ranked = rank_features(data, method, cfg, seed=cfg.replication_seeds()[0])
    rows = [{"rank": i + 1, "column": f.column, "index": f.index, "theta_hat": f.theta_hat,
             "kind": f.kind, "flag": f.flag} for i, f in enumerate(ranked)]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "feature_ranking.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["rank"])
            w.writeheader()
            w.writerows(rows)
    for r in rows:
        print(f"{r['rank']:>3}  {r['column']:<20} {r['theta_hat']: .6f}  {r['kind']}"
              + (f"  [{r['flag']}]" if r["flag"] else ""))


def cmd_nemenyi(args):
    result = {"methods": args.methods, "tasks": args.tasks, "alpha": args.alpha,
              "cd": nemenyi_cd(args.methods, args.tasks, args.alpha)}
    if args.scores:
        with open(args.scores, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        names = [r[0] for r in rows[1:]]
        try:
            table = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        except ValueError as exc:
            raise InputError(f"{args.scores}: {exc}") from None
        fr = friedman_ranks(table, higher_is_better=args.higher_is_better)
        result["mean_ranks"] = dict(zip(names, fr.mean_ranks.tolist()))
        result["friedman_statistic"] = fr.statistic
        result["friedman_p_value"] = fr.p_value
    print(json.dumps(result, indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddml-bench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--out", help="output directory (or file for generate)")
        sp.add_argument("--seed", type=int, help="base seed override")
        sp.add_argument("--workers", type=int, help="parallel replications")

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    common(g, config=False)
    g.add_argument("--treatment", choices=["binary", "continuous"], default="binary")
    g.add_argument("--n", type=int, default=6000)
    g.add_argument("--d", type=int, default=20)
    g.add_argument("--lambda-mix", type=float, default=8.0)
    g.add_argument("--alpha-out", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment config and write result tables")
    common(r)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("diagnose", help="residual correlation and latent probe tables")
    common(d)
    d.set_defaults(func=cmd_diagnose)

    f = sub.add_parser("rank-features", help="rank covariates by estimated effect on the outcome")
    common(f)
    f.add_argument("--data", help="CSV file; defaults to the config's first dataset")
    f.add_argument("--outcome", default="Y")
    f.add_argument("--treatment-col", default=None,
                   help="column to leave out of the candidates")
    f.add_argument("--method", help="method name from the config (default: last)")
    f.set_defaults(func=cmd_rank_features)

    n = sub.add_parser("nemenyi", help="critical difference and optional Friedman ranks")
    n.add_argument("--methods", type=int, required=True)
    n.add_argument("--tasks", type=int, required=True)
    n.add_argument("--alpha", type=float, default=0.05)
    n.add_argument("--scores", help="CSV: header row, then method name and one score per task")
    n.add_argument("--higher-is-better", action="store_true")
    n.set_defaults(func=cmd_nemenyi)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        if args.verbose:
            log.exception("command failed")
        return 1 if isinstance(exc, (DDMLError, ValueError, FileNotFoundError)) else 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
