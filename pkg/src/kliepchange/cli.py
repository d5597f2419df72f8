"""Command-line front end.

Usage::

    kliepchange success-rate --config configs/success_nq1000.json --out runs/success
    kliepchange roc --config configs/roc.json --out runs/roc --trials 5
    kliepchange real --p-csv p.csv --q-csv q.csv --out runs/real --target-support 10

Exit codes: 0 on completion, 2 on configuration or usage errors, 3 on data
errors. The manifest ``manifest.json`` is written last; a run directory
without it is incomplete.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time

import numpy as np

from . import __version__
from .harness import KINDS, ConfigError, ExperimentConfig, run_experiment
from .model import DataError

log = logging.getLogger("kliepchange")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _csv_floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _csv_ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kliepchange", description="Sparse change detection between Markov networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config document; flags override its fields")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("-v", "--verbose", action="count", default=0)
        g = p.add_argument_group("experiment fields")
        g.add_argument("--family", choices=("gaussian", "eight"))
        g.add_argument("--topology", choices=("lattice", "random"))
        g.add_argument("--connectivity", type=float)
        g.add_argument("--m-grid", type=_csv_ints)
        g.add_argument("--np-grid", type=_csv_ints)
        g.add_argument("--ratio-grid", type=_csv_floats, help="n_p / log m values")
        g.add_argument("--nq-rule", choices=("fixed", "quadratic", "linear", "equal"))
        g.add_argument("--nq-value", type=float)
        g.add_argument("--d", type=_csv_ints, help="fixed numbers of changed edges")
        g.add_argument("--d-sqrt", action="store_true", help="use d = floor(sqrt(m))")
        g.add_argument("--C", type=float, help="lambda = C * sqrt(log m / n_p)")
        g.add_argument("--p-csv")
        g.add_argument("--q-csv")
        g.add_argument("--fmap", choices=("quadratic", "rbf", "eight"))
        g.add_argument("--target-support", type=int)
        g.add_argument("--lambdas", type=_csv_floats)
        g.add_argument("--bootstrap-trials", type=int)
        g.add_argument("--swap", action="store_true", default=None)
        g.add_argument("--standardize", action="store_true", default=None,
                       help="scale feature columns by their std over Q")
    return parser


_FLAG_FIELDS = ("seed", "threads", "trials", "family", "topology", "connectivity", "C", "p_csv",
                "q_csv", "fmap", "target_support", "bootstrap_trials", "swap", "standardize")


def resolve_config(args) -> ExperimentConfig:
    """Merge the config document and flag overrides; validates before returning."""
    doc = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        if doc.get("kind", args.command) != args.command:
            raise ConfigError(f"config kind {doc['kind']!r} does not match subcommand {args.command!r}")
    doc = dict(doc)
    doc["kind"] = args.command
    doc["out"] = args.out
    for name in _FLAG_FIELDS:
        val = getattr(args, name)
        if val is not None:
            doc[name] = val
    for flag, key in (("m_grid", "m_grid"), ("lambdas", "lambdas")):
        if getattr(args, flag) is not None:
            doc[key] = getattr(args, flag)
    if args.np_grid is not None:
        doc["np_grid"], doc["ratio_grid"] = args.np_grid, None
    if args.ratio_grid is not None:
        doc["ratio_grid"], doc["np_grid"] = args.ratio_grid, None
    if args.nq_rule is not None or args.nq_value is not None:
        rule = dict(doc.get("nq_rule") or {})
        if args.nq_rule is not None:
            rule["kind"] = args.nq_rule
        if args.nq_value is not None:
            rule["value"] = args.nq_value
        doc["nq_rule"] = rule
    if args.d_sqrt:
        doc["d_rule"] = {"kind": "sqrt"}
    elif args.d is not None:
        doc["d_rule"] = {"kind": "fixed", "values": args.d}
    return ExperimentConfig.from_dict(doc)


def write_manifest(config: ExperimentConfig, result: dict, started: float) -> str:
    manifest = {
        "software": {"package": "kliepchange", "version": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "config": config.to_dict(),
        "seed": config.seed,
        "files": [os.path.relpath(f, config.out) for f in result.get("files", [])],
        "summary": result.get("summary", {}),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
    }
    path = os.path.join(config.out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except ConfigError as exc:
        print(f"kliepchange: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dry_run:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK
    started = time.time()
    try:
        result = run_experiment(config)
    except ConfigError as exc:
        print(f"kliepchange: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"kliepchange: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    write_manifest(config, result, started)
    print(json.dumps(result.get("summary", {}), indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
