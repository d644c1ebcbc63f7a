"""Command line: ``python -m varelast --config run.yaml``.

Exit status: 0 when the experiment's acceptance checks pass, 1 when they
fail, 2 for configuration errors, 3 for solver failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time

from . import __version__
from .config import ConfigError, ExperimentConfig, from_dict, list_experiments, load_config, validate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varelast", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML experiment configuration")
    p.add_argument("--experiment", help="override the experiment named in the config")
    p.add_argument("--out", help="output root (overrides output.dir)")
    p.add_argument("--seed", type=int, help="override solver.seed")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    p.add_argument("--list", action="store_true", help="list experiments and exit")
    p.add_argument("--validate", action="store_true", help="validate the config and exit")
    return p


def _raw_config(args) -> dict:
    import yaml

    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = yaml.safe_load(fh) or {}
    if args.experiment:
        raw["experiment"] = args.experiment
    if args.seed is not None:
        raw.setdefault("solver", {})["seed"] = args.seed
    if args.out:
        raw.setdefault("output", {})["dir"] = args.out
    return raw


def run(cfg: ExperimentConfig) -> dict:
    """Run one experiment; returns the run report (also written as ``summary.json``)."""
    from .experiments import execute

    out = os.path.join(cfg.output.dir, cfg.run_id)
    os.makedirs(out, exist_ok=True)
    logger = logging.getLogger("varelast")
    handler = logging.FileHandler(os.path.join(out, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    logger.setLevel(logging.INFO)
    try:
        with open(os.path.join(out, "config.json"), "w") as fh:
            json.dump(cfg.as_dict(), fh, indent=2, sort_keys=True)
        logger.info("experiment %s run %s", cfg.experiment, cfg.run_id)
        summary, passed, wall = execute(cfg, out)
        logger.info("passed=%s wall=%.2fs", passed, wall)
    finally:
        logger.removeHandler(handler)
        handler.close()
    report = dict(
        experiment=cfg.experiment,
        run_id=cfg.run_id,
        passed=passed,
        wall_clock_s=wall,
        version=__version__,
        python=platform.python_version(),
        config=cfg.as_dict(),
        tables=sorted(f for f in os.listdir(out) if f.endswith((".csv", ".jsonl"))),
        summary=summary,
    )
    from .experiments import _json_default

    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        _limit_threads(args.threads)
    if args.list:
        for e in list_experiments():
            print(f"{e['name']:12s} {e['description']}")
        return EXIT_OK
    try:
        raw = _raw_config(args)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate(raw)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    if args.validate:
        print("config ok")
        return EXIT_OK
    cfg = from_dict(raw)
    t0 = time.perf_counter()
    try:
        report = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"{cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    status = "PASS" if report["passed"] else "FAIL"
    print(f"{status} {cfg.experiment} -> {os.path.join(cfg.output.dir, cfg.run_id)} "
          f"({time.perf_counter() - t0:.1f}s)")
    return EXIT_OK if report["passed"] else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
