"""Command line interface: run experiments and dump feature images."""

import argparse
import json
import sys

from .data import generate
from .experiment import ConfigError, ExperimentConfig, dump_checkpoint_features, run_experiment

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _load_config(path: str, overrides: argparse.Namespace) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = ExperimentConfig.from_dict(raw)
    updates = {}
    if getattr(overrides, "arms", None):
        updates["arms"] = tuple(a.strip() for a in overrides.arms.split(",") if a.strip())
    if getattr(overrides, "seeds", None) is not None:
        updates["seeds"] = overrides.seeds
    if getattr(overrides, "out", None):
        updates["out_dir"] = overrides.out
    if updates:
        merged = {**{k: v for k, v in cfg.__dict__.items()}, **updates}
        cfg = ExperimentConfig(**merged)
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, args)
    if args.dry_run:
        print(f"config ok: {len(cfg.arms)} arms x {cfg.seeds} seeds -> {cfg.out_dir}")
        return EXIT_OK
    result = run_experiment(cfg)
    for arm, n, mean, std in result.summary_rows():
        print(f"{arm}: {mean:.2f} +/- {std:.2f} over {n} seeds")
    print(f"artifacts written to {cfg.out_dir}")
    return EXIT_OK


def _cmd_dump_features(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config, args)
    dataset = generate(cfg.synth_spec(args.data_seed))
    written = dump_checkpoint_features(args.checkpoint, dataset, args.sample, args.tap, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chanmatch",
        description="Channel-matched feature distillation experiments on synthetic data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run experiment arms over seeds")
    p_run.add_argument("config", help="JSON experiment config")
    p_run.add_argument("--arms", help="comma-separated arm list, overriding the config")
    p_run.add_argument("--seeds", type=int, help="number of seeds, overriding the config")
    p_run.add_argument("--out", help="output directory, overriding the config")
    p_run.add_argument("--dry-run", action="store_true", help="validate config and exit")
    p_run.set_defaults(func=_cmd_run)

    p_dump = sub.add_parser("dump-features", help="dump a checkpoint's tap features as PGMs")
    p_dump.add_argument("config", help="JSON experiment config (for dataset parameters)")
    p_dump.add_argument("--checkpoint", required=True, help="checkpoint path (without extension)")
    p_dump.add_argument("--sample", type=int, default=0, help="dataset sample index")
    p_dump.add_argument("--tap", type=int, default=-1, help="tap index (default: last stage)")
    p_dump.add_argument("--out", default="features", help="output directory")
    p_dump.add_argument("--data-seed", type=int, default=0, help="dataset seed to regenerate")
    p_dump.set_defaults(func=_cmd_dump_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
