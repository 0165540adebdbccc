"""Command line: ``gen-data``, ``train``, ``report`` and ``bound``.

Exit codes: 0 success, 1 numeric, client-training or any unexpected
failure, 2 usage, validation or IO error.  Failures are also printed to stderr as a single
JSON object.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import artifacts, datagen, reports, theory
from .config import SEED_ENV, ExperimentConfig, build_config, dump_config, load_config, resolve_seed
from .errors import ClientTrainingError
from .federation import run_experiment
from .slices import describe, profile_for
from .version import __version__

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
DEFAULT_EPSILON_GRID = "0,0.01,0.02,0.05,0.1,0.2,0.5,1"
CONFIG_ECHO = "config.conf"


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _epsilon_grid(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("epsilon grid needs at least one value, all >= 0")
    return values


def _manifest(command: str, **payload) -> dict:
    return {"command": command, "version": __version__, **payload}


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    seed = resolve_seed(args.seed)
    grid = datagen.generate(seed, args.k, args.n, args.d)
    datagen.export_grid(grid, args.out)
    for n in range(grid.N):
        log.info("%s: drop rate %.3f", describe(profile_for(n).kind), grid.slice_positive_rate(n))
    log.info("wrote %d datasets to %s", len(grid.keys()), args.out)
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not (data_dir / artifacts.MANIFEST_NAME).is_file():
        raise FileNotFoundError(f"dataset directory {data_dir} is missing or has no {artifacts.MANIFEST_NAME}")
    if args.config:
        cfg = load_config(args.config, seed=args.seed)
    else:
        cfg = build_config({}, seed=args.seed)
    if args.threads is not None:
        cfg = cfg.with_overrides(threads=args.threads)
    grid = datagen.import_grid(data_dir)
    out = Path(args.out)
    run_experiment(cfg, grid, out)
    (out / CONFIG_ECHO).write_text(dump_config(cfg), encoding="utf-8")
    artifacts.write_manifest(out, _manifest(
        "train",
        config=cfg.to_dict(),
        data_seed=grid.seed,
        data_manifest_sha256=artifacts.sha256_file(data_dir / artifacts.MANIFEST_NAME),
    ))
    log.info("run written to %s", out)
    return 0


def cmd_report(args) -> int:
    written = reports.write_figure(args.run, args.figure)
    figures_dir = written[0].parent
    artifacts.write_manifest(figures_dir, _manifest("report", figure=args.figure))
    return 0


def cmd_bound(args) -> int:
    path = theory.write_bound_report(args.run, args.epsilon_grid)
    artifacts.write_manifest(path.parent, _manifest("bound", epsilon_grid=args.epsilon_grid))
    log.info("bound report written to %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egfl_lab", description="Explanation-guided fair federated learning lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic K x N dataset grid")
    gen.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    gen.add_argument("--k", type=_positive_int, default=ExperimentConfig.K, help="base stations")
    gen.add_argument("--n", type=_positive_int, default=ExperimentConfig.N, help="slices (1..3)")
    gen.add_argument("--d", type=_positive_int, default=ExperimentConfig.D, help="samples per dataset")
    gen.add_argument("--out", type=Path, required=True)
    gen.set_defaults(handler=cmd_gen_data)

    train = sub.add_parser("train", help="run every configured variant")
    train.add_argument("--config", type=Path, default=None, help="flat key = value file")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--threads", type=_positive_int, default=None, help="cap on concurrent clients")
    train.set_defaults(handler=cmd_train)

    report = sub.add_parser("report", help="emit the table behind a figure")
    report.add_argument("--run", type=Path, required=True)
    report.add_argument("--figure", required=True, choices=sorted(reports.FIGURES))
    report.set_defaults(handler=cmd_report)

    bound = sub.add_parser("bound", help="evaluate the convergence-probability bound")
    bound.add_argument("--run", type=Path, required=True)
    bound.add_argument("--epsilon-grid", type=_epsilon_grid, default=_epsilon_grid(DEFAULT_EPSILON_GRID))
    bound.set_defaults(handler=cmd_bound)
    return parser


def _fail(error: BaseException, code: int) -> int:
    log.error("%s: %s", type(error).__name__, error)
    print(json.dumps({"error": type(error).__name__, "message": str(error), "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return args.handler(args)
    except (ArithmeticError, ClientTrainingError) as e:
        return _fail(e, 1)
    except (ValueError, OSError) as e:
        return _fail(e, 2)
    except Exception as e:
        return _fail(e, 1)
