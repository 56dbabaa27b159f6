"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 stage failure or missing
prerequisite, 3 soundness gate failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence

from . import __version__
from .assembler import verify_soundness
from .config import load_config
from .evaluation import ClientConfigError
from .kb import KBError
from .pairing import PairingError
from .pipeline import STAGES, Context, SoundnessGateError, StageError, load_items, run_all, stage_run
from .skills import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_SOUNDNESS = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline YAML config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (overrides paths.out)")
    common.add_argument("--jobs", type=int)
    common.add_argument("--strict", action="store_true", default=None, help="fail on malformed input lines")
    common.add_argument("--endpoint", help="chat-completions URL for evaluation")
    common.add_argument("--model", help="model name sent to the endpoint")
    common.add_argument("--mock", choices=("oracle", "parrot", "random"), help="use an offline mock model")
    common.add_argument("--concurrency", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="afbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"afbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    sub.add_parser("run-all", parents=[common], help="run every stage in order")
    v = sub.add_parser("verify", parents=[common], help="re-check soundness of an items file")
    v.add_argument("items", nargs="?", help="items JSONL (default: <out>/assemble/items.jsonl)")
    return p


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("seed", "out", "jobs", "strict", "endpoint", "model", "mock", "concurrency")}


def _verify(cfg, path) -> int:
    ctx = Context(cfg)
    path = path or ctx.stage_dir("assemble") / "items.jsonl"
    try:
        items = load_items(path)
    except OSError as exc:
        raise StageError(f"cannot read items: {exc}") from None
    bad = 0
    for it in items:
        if it.metadata.get("variant") == "baseline":
            continue
        res = verify_soundness(it, ctx.skills, ctx.rules)
        if not res.passed:
            bad += 1
            print(json.dumps({"id": it.id, "implied": res.implied, "error": res.error}))
    print(f"checked {len(items)} items, {bad} unsound", file=sys.stderr)
    return EXIT_SOUNDNESS if bad else EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, **_overrides(args))
        if args.command == "verify":
            return _verify(cfg, args.items)
        if args.command == "run-all":
            result = run_all(cfg)
        else:
            result = stage_run(args.command, cfg)
        print(json.dumps(result.get("counts", {}), sort_keys=True))
        return EXIT_OK
    except SoundnessGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOUNDNESS
    except (ConfigError, ClientConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, KBError, PairingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
