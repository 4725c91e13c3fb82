"""Command-line entry point: ``beamlab synth|peb|tables``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__, experiments, hardware
from .errors import BeamlabError, ConfigError, GeometryError, NumericalError, TableValidationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

SEED_ENV = "BEAMLAB_SEED"

log = logging.getLogger("beamlab")


def _load(args, expected: str) -> experiments.ExperimentConfig:
    cfg = experiments.load_config(args.config)
    if cfg.experiment != expected:
        raise ConfigError(f"experiment: this command runs {expected} configs, got {cfg.experiment}")
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            cfg = cfg.with_seed(int(env_seed))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}: expected an integer, got {env_seed!r}") from exc
    if args.out:
        cfg = cfg.with_output_dir(args.out)
    return cfg


def _cmd_synth(args) -> int:
    cfg = _load(args, "beam_fidelity")
    result = experiments.run_beam_fidelity(cfg)
    for name, m in result.metrics.items():
        sec = "none" if m.secondary_peak_db is None else (
            f"{m.secondary_peak_db:.2f} dB at {m.secondary_peak_direction:.3f} rad")
        print(f"{name:>14}: main {m.main_peak_db:.2f} dB, secondary {sec}")
    print(f"wrote {len(result.files)} files to {cfg.output_dir}")
    return EXIT_OK


def _cmd_peb(args) -> int:
    cfg = _load(args, "peb_sweep")
    result = experiments.run_peb_sweep(cfg, workers=args.workers)
    print(f"wrote {len(result.files)} files to {cfg.output_dir}")
    return EXIT_OK


def _cmd_tables_list(args) -> int:
    for t in hardware.builtin_tables():
        if t.is_discrete:
            mags = abs(t.values)
            print(f"{t.name:>14}: {len(t)} values, |v| in [{mags.min():.4f}, {mags.max():.4f}]")
        else:
            print(f"{t.name:>14}: continuous unit circle")
    return EXIT_OK


def _cmd_tables_validate(args) -> int:
    try:
        table = hardware.load_table_csv(args.csv)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.csv}: {exc.strerror}") from exc
    mags = abs(table.values)
    print(f"{args.csv}: valid, {len(table)} distinct values, |v| in [{mags.min():.4f}, {mags.max():.4f}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamlab", description="RIS beam synthesis and localization bounds.")
    parser.add_argument("--version", action="version", version=f"beamlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    presets = ", ".join(experiments.PRESETS)
    synth = sub.add_parser("synth", help="beam-fidelity experiment (patterns and lobe metrics)")
    synth.add_argument("--config", required=True, help=f"JSON config file or preset name ({presets})")
    synth.add_argument("--out", help="override the output directory")
    synth.set_defaults(func=_cmd_synth)

    peb = sub.add_parser("peb", help="PEB sweep over UE positions")
    peb.add_argument("--config", required=True, help=f"JSON config file or preset name ({presets})")
    peb.add_argument("--out", help="override the output directory")
    peb.add_argument("--workers", type=int, default=None, help="worker processes (default: all CPUs)")
    peb.set_defaults(func=_cmd_peb)

    tables = sub.add_parser("tables", help="inspect lookup tables")
    tsub = tables.add_subparsers(dest="tables_command", required=True)
    tsub.add_parser("list", help="list the builtin tables").set_defaults(func=_cmd_tables_list)
    val = tsub.add_parser("validate", help="check a table CSV (re,im or mag_db,phase_deg)")
    val.add_argument("csv")
    val.set_defaults(func=_cmd_tables_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, TableValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, GeometryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except BeamlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
