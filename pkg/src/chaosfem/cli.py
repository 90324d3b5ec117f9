"""Command-line interface: config-driven batch runs with deterministic
seeds.

    chaosfem prior      --config cfg.json [--out DIR] [--threads N]
    chaosfem generate   --config cfg.json [--out DIR] [--seed S]
    chaosfem identify   --config cfg.json [--out DIR] [--threads N]
    chaosfem assimilate --config cfg.json [--out DIR] [--threads N]
    chaosfem report     --config cfg.json [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 optimization failure.  Failures print a one-line JSON object to stderr.
The CHAOSFEM_THREADS environment variable mirrors --threads.
"""
from __future__ import annotations

import argparse
import json
import sys

from .errors import NumericalFailure, OptimizationFailure
from . import pipeline
from .pipeline import ConfigError


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chaosfem",
                                     description="Sampling-free statistical FEM batch runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("prior", "build the polynomial-chaos prior and write its artifacts"),
        ("generate", "generate synthetic sensor observations"),
        ("identify", "identify scale/mismatch hyperparameters from observations"),
        ("assimilate", "update the prior with observations and write posterior artifacts"),
        ("report", "consolidate a completed run directory into summary files"),
    ]:
        cmd = sub.add_parser(name, help=doc)
        cmd.add_argument("--config", required=True, help="experiment configuration (JSON)")
        cmd.add_argument("--out", default=None, help="output directory (defaults to the config's)")
        cmd.add_argument("--seed", type=int, default=None, help="override the data seed")
        cmd.add_argument("--threads", type=int, default=None, help="worker threads for node solves")
    return parser


def _fail(stage: str, exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "stage": stage, "message": str(exc)}
    print(json.dumps(payload), file=sys.stderr)
    return code


def run_command(args) -> int:
    stage = args.command
    try:
        cfg = pipeline.load_config(args.config)
        out = pipeline.output_dir(cfg, args.out)
        workers = pipeline.thread_count(args.threads)

        if stage == "prior":
            pipeline.stage_prior(cfg, out, workers)
        elif stage == "generate":
            pipeline.stage_generate(cfg, out, seed=args.seed)
        elif stage == "identify":
            obs = pipeline.read_observations(out / "observations.csv", out / "observations.json")
            pipeline.stage_identify(cfg, out, obs, workers=workers)
        elif stage == "assimilate":
            obs = pipeline.read_observations(out / "observations.csv", out / "observations.json")
            with open(out / "hyperparameters.json") as fh:
                hyper = json.load(fh)
            pipeline.stage_assimilate(cfg, out, obs, hyper, workers=workers)
        elif stage == "report":
            pipeline.stage_report(out, cfg=cfg)
        else:  # pragma: no cover - argparse restricts the choices
            raise ConfigError(f"unknown command {stage}")
    except ConfigError as exc:
        return _fail(stage, exc, 2)
    except FileNotFoundError as exc:
        return _fail(stage, ConfigError(f"missing input file: {exc}"), 2)
    except ValueError as exc:
        return _fail(stage, exc, 2)
    except NumericalFailure as exc:
        return _fail(stage, exc, 3)
    except OptimizationFailure as exc:
        return _fail(stage, exc, 4)
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
