"""
vugen/cli.py

Command-line entry point::

    vugen <stage> --config <path> [--out <dir>] [--set key=value ...]

Sampling flags (``--prompt``, ``--steps``, ``--cfg-scale``, ``--seed``,
``--use-ema`` / ``--no-ema``) are shorthands for ``sampler.*`` overrides.
Pipeline errors exit with status 2 and print their message.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from vugen.config import STAGES, load_run_config
from vugen.errors import VugenError
from vugen.harness import run

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PIPELINE_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vugen", description="Desk-scale VUGEN pipeline stages and sweeps.")
    parser.add_argument("stage", choices=STAGES)
    parser.add_argument("--config", required=True, help="YAML run config")
    parser.add_argument("--out", default=None, help="run directory (overrides out_dir)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotlist override, e.g. --set sampler.cfg_scale=2.0")
    sampling = parser.add_argument_group("sampling")
    sampling.add_argument("--prompt", default=None)
    sampling.add_argument("--steps", type=int, default=None)
    sampling.add_argument("--cfg-scale", type=float, default=None)
    sampling.add_argument("--seed", type=int, default=None)
    sampling.add_argument("--use-ema", dest="use_ema", action="store_true", default=None)
    sampling.add_argument("--no-ema", dest="use_ema", action="store_false")
    return parser


def overrides_from_args(args: argparse.Namespace) -> List[str]:
    """Dotlist overrides for the stage, the output dir and the sampling flags."""
    overrides = [f"stage={args.stage}"]
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    sampler = {
        "prompt": args.prompt,
        "steps": args.steps,
        "cfg_scale": args.cfg_scale,
        "seed": args.seed,
        "use_ema": args.use_ema,
    }
    for key, value in sampler.items():
        if value is None:
            continue
        if key == "prompt":
            value = f'"{value}"'
        overrides.append(f"sampler.{key}={value}")
    return overrides + list(args.overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, overrides_from_args(args))
        outputs = run(cfg)
    except VugenError as exc:
        print(f"vugen {args.stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE_ERROR
    for name, path in sorted(outputs.items()):
        logger.info("%s -> %s", name, path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
