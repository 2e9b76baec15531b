"""Command line: ``aclab run|validate|list-observables|print-constants``.

Exit codes: 0 ok, 1 invalid configuration, 2 numerical failure, 3 gated-out
experiment.  The output directory is taken from ``--output-dir``, then the
``ACLAB_OUTPUT_DIR`` environment variable, then the configuration.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .config import ExperimentConfig, load_mapping
from .experiments import DIMENSION_NOTE, RUNNERS, Context, GatedOut, cross_validate, derived_constants
from .observables import OBSERVABLE_KINDS

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_GATED = 0, 1, 2, 3
ENV_OUTPUT = "ACLAB_OUTPUT_DIR"

log = logging.getLogger("aclab")


def _version() -> str:
    try:
        return version("aclab")
    except PackageNotFoundError:
        return "0+unknown"


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else repr(v)
    return v


def _dump(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _format_validation(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def _load(path, args) -> ExperimentConfig:
    data = load_mapping(path)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        data["workers"] = args.workers
    out = getattr(args, "output_dir", None) or os.environ.get(ENV_OUTPUT)
    if out:
        data["output_dir"] = out
    return ExperimentConfig.model_validate(data)


def _validated(args):
    """``(config, None)`` or ``(None, exit code)`` after printing diagnostics."""
    try:
        cfg = _load(args.config, args)
    except ValidationError as err:
        for line in _format_validation(err):
            print(f"error: {line}", file=sys.stderr)
        return None, EXIT_INVALID
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return None, EXIT_INVALID
    try:
        errors, gate = cross_validate(cfg)
    except ValueError as err:
        errors, gate = [str(err)], None
    for line in errors:
        print(f"error: {line}", file=sys.stderr)
    if errors:
        return None, EXIT_INVALID
    return (cfg, gate), None


def cmd_validate(args) -> int:
    res, code = _validated(args)
    if code is not None:
        return code
    _, gate = res
    if gate:
        print(f"note: {gate}")
    return EXIT_OK


def cmd_run(args) -> int:
    res, code = _validated(args)
    if code is not None:
        return code
    cfg, gate = res
    if gate:
        print(f"gated-out: {gate}", file=sys.stderr)
        return EXIT_GATED
    ctx = Context(cfg)
    out = Path(cfg.output_dir)
    t0 = time.perf_counter()
    try:
        outcome = RUNNERS[cfg.kind](ctx)
    except GatedOut as err:
        print(f"gated-out: {err}", file=sys.stderr)
        return EXIT_GATED
    except (ArithmeticError, ValueError, FloatingPointError) as err:
        print(f"numerical failure ({type(err).__name__}): {err}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    for stem, (header, rows) in outcome.tables.items():
        write_csv(out / f"{stem}.csv", header, rows)
    _dump(out / "report.json", outcome.report)
    manifest = {
        "version": _version(),
        "config": cfg.canonical(),
        "config_hash": cfg.digest(),
        "derived_constants": derived_constants(ctx),
        "wall_clock_seconds": wall,
        "status": outcome.status,
        "files": sorted([f"{s}.csv" for s in outcome.tables] + ["report.json"]),
        "note": DIMENSION_NOTE,
    }
    _dump(out / "manifest.json", manifest)
    print(f"{cfg.kind}: wrote {out} in {wall:.1f}s")
    return EXIT_OK


def cmd_list_observables(args) -> int:
    for k, desc in OBSERVABLE_KINDS.items():
        print(f"{k:14s} {desc}")
    return EXIT_OK


def cmd_print_constants(args) -> int:
    if args.config:
        res, code = _validated(args)
        if code is not None:
            return code
        cfg = res[0]
    else:
        cfg = ExperimentConfig(kind="potential-rates")
    print(json.dumps(_jsonable(derived_constants(Context(cfg))), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aclab", description="Stochastic phase-field experiment harness")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp):
        sp.add_argument("--output-dir", help=f"output directory (overrides ${ENV_OUTPUT} and the config)")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--workers", type=int, help="worker process count")

    sp = sub.add_parser("run", help="run an experiment (a manifest is accepted as a config)")
    sp.add_argument("config")
    overrides(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check a configuration without running it")
    sp.add_argument("config")
    overrides(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("list-observables", help="list the observable library")
    sp.set_defaults(func=cmd_list_observables)

    sp = sub.add_parser("print-constants", help="derived constants for a configuration (or the defaults)")
    sp.add_argument("config", nargs="?")
    sp.set_defaults(func=cmd_print_constants)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
