"""Command line entry point: one subcommand per experiment kind.

Exit codes: 0 success, 2 refusal (regime or invalid config), 3 numerical failure.
A refusal or failure prints one JSON object to stderr with the reason.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from . import __version__
from .errors import DomainError, GridResolutionError, NumericalError, RegimeError
from .xlab import KINDS, ExperimentConfig, run_experiment

EXIT_OK = 0
EXIT_REFUSED = 2
EXIT_NUMERICAL = 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singdrift", description="Singular-drift SDE experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="YAML experiment file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--paths", type=int, dest="n_paths")
        p.add_argument("--steps", type=int, dest="n_steps")
        p.add_argument("--jobs", type=int, dest="n_jobs", help="worker threads (does not change results)")
    return ap


def _fail(code: int, reason: str, exc: Exception, **extra) -> int:
    payload = {"status": "refused" if code == EXIT_REFUSED else "failed", "reason": reason,
               "message": str(exc), **extra}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if cfg.kind != args.kind:
            raise DomainError(f"config describes a {cfg.kind} experiment, not {args.kind}")
        cfg = cfg.with_overrides(seed=args.seed, out=args.out, n_paths=args.n_paths, n_steps=args.n_steps,
                                 n_jobs=args.n_jobs)
        res = run_experiment(cfg)
    except RegimeError as exc:
        cls = exc.classification.to_dict() if exc.classification is not None else None
        return _fail(EXIT_REFUSED, "regime", exc, classification=cls)
    except (NumericalError, GridResolutionError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERICAL, "numerical", exc)
    except (DomainError, OSError, yaml.YAMLError) as exc:
        return _fail(EXIT_REFUSED, "invalid_config", exc)
    out = {"status": "ok", "kind": res.kind, "config_hash": res.config_hash, "seed": res.seed,
           "files": res.files, "summary": res.summary}
    print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
