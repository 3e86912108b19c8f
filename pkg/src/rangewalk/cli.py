"""Command-line entry point: ``rangewalk [SUBCOMMAND] [--config FILE] ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from rangewalk.harness import EXIT_CODES, EXPERIMENTS, ConfigError, ExperimentConfig, env_or, run

log = logging.getLogger("rangewalk")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rangewalk", description="Random-walk range and boundary experiments.")
    p.add_argument("subcommand", nargs="?", choices=EXPERIMENTS, help="experiment to run")
    p.add_argument("--subcommand", dest="subcommand_flag", choices=EXPERIMENTS, help="same as the positional argument")
    p.add_argument("--config", help="INI file with a [run] section and optional [params.<experiment>]")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--cache", help="directory for cached Green tables")
    p.add_argument("--param", action="append", default=[], metavar="KEY=JSON",
                   help="override one experiment parameter (repeatable)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config as INI and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args: argparse.Namespace) -> ExperimentConfig:
    """Command line beats RANGEWALK_* environment variables, which beat the config file."""
    name = args.subcommand_flag or args.subcommand or env_or("subcommand", None)
    path = env_or("config", args.config)
    if path:
        cfg = ExperimentConfig.from_file(path, experiment=name)
    elif name:
        cfg = ExperimentConfig.default(name)
    else:
        raise ConfigError("name a subcommand or pass --config")
    seed = env_or("seed", args.seed, int)
    threads = env_or("threads", args.threads, int)
    replicas = env_or("replicas", args.replicas, int)
    out = env_or("out", args.out)
    cache = env_or("cache", args.cache)
    if seed is not None:
        cfg.seed = seed
    if threads is not None:
        cfg.threads = threads
    if replicas is not None:
        cfg.replicas = replicas
    if out is not None:
        cfg.out = out
    if cache is not None:
        cfg.cache = cache
    for item in args.param:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        try:
            cfg.params[key] = json.loads(text)
        except json.JSONDecodeError:
            cfg.params[key] = text
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        if args.dump_config:
            sys.stdout.write(cfg.to_ini())
            return 0
        log.info("running %s with seed %d (config %s)", cfg.experiment, cfg.seed, cfg.hash()[:12])
        rec = run(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CODES["config-error"]
    summary = {"experiment": rec.experiment, "status": rec.status, "config_hash": rec.config_hash,
               "record": str(rec.rows_file).replace("rows.jsonl", "record.json"), "flags": rec.flags}
    print(json.dumps(summary))
    return EXIT_CODES[rec.status]


if __name__ == "__main__":
    sys.exit(main())
