"""Command-line entry point: ``multisurrogate CONFIG [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, from_dict, load_config
from .runner import RunError, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multisurrogate",
                                description="Run a surrogate-fitting experiment described by a YAML config.")
    p.add_argument("config", help="path to the experiment config (YAML)")
    p.add_argument("--output-dir", help="override the config's output_dir")
    p.add_argument("--threads", type=int, help="replication worker threads")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--validate-only", action="store_true", help="parse and validate, then exit")
    p.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress to stderr")
    return p


def _emit_error(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.output_dir is not None:
            overrides["output_dir"] = args.output_dir
        if overrides:
            config = from_dict({**config.to_dict(), **overrides})
    except ConfigError as exc:
        _emit_error({"status": "error", "stage": "config", "errors": exc.errors})
        return 2
    except OSError as exc:
        _emit_error({"status": "error", "stage": "config", "errors": [str(exc)]})
        return 2
    if args.validate_only:
        print(json.dumps({"status": "valid", "experiment": config.experiment,
                          "config_hash": config.digest()}, sort_keys=True))
        return 0
    try:
        manifest = run(config)
    except RunError as exc:
        _emit_error(exc.to_dict())
        return 1
    print(json.dumps({"status": "ok", "files": manifest.files, "output_dir": config.output_dir,
                      "config_hash": manifest.config_hash}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
