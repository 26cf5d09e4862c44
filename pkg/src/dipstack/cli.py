"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import COMMANDS, build_config, load_config_file
from .errors import ConfigurationError, DipIOError, DomainError, NumericalAbort, ShapeError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _bbox(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox must be X,Y,W,H")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("bbox must be four integers X,Y,W,H") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dipstack", description="Image decomposition with coupled deep image priors.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS, help="task to run")
    p.add_argument("--input", required=True, help="image file, or directory of frames/images")
    p.add_argument("--input2", help="second image (two-mixture transparency, extra watermark image, diagnostic pair)")
    p.add_argument("--bbox", type=_bbox, help="hint box X,Y,W,H in pixels (x counts columns)")
    p.add_argument("--iters", type=int, help="optimization iterations (default 4000; 8000 for segment-video and dehaze)")
    p.add_argument("--alpha", type=float, help="exclusion loss weight")
    p.add_argument("--beta", type=float, help="regularizer weight")
    p.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3)")
    p.add_argument("--seed", type=int, help="random seed (fallback: DIPSTACK_SEED, then 0)")
    p.add_argument("--out", help="output directory (default dipstack_out)")
    p.add_argument("--config", help="flat TOML config file; flags override its values")
    p.add_argument("--batch", action="store_true", default=None, help="treat every image in the --input directory as its own job")
    p.add_argument("--jobs", type=int, help="concurrent jobs in batch mode")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return p


def _overrides(args: argparse.Namespace) -> dict:
    keys = ("input", "input2", "bbox", "iters", "alpha", "beta", "lr", "seed", "out", "batch", "jobs")
    values = {k: getattr(args, k) for k in keys}
    values["task"] = args.command
    return values


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .runner import run_batch, run_job

    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = build_config(file_values, _overrides(args))
        if cfg.batch:
            manifests = run_batch(cfg)
            print(f"{len(manifests)} job(s) written under {cfg.out}")
        else:
            manifest = run_job(cfg)
            print(f"{manifest.task}: {len(manifest.outputs)} file(s) written to {cfg.out}")
    except (ConfigurationError, ShapeError, DomainError) as exc:
        print(f"dipstack: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"dipstack: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DipIOError, OSError) as exc:
        print(f"dipstack: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
