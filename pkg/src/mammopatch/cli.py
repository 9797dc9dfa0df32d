"""Command-line entry point.

One subcommand per pipeline stage plus ``run-pipeline`` for the whole
chain. Settings come from an optional key=value config file; the global
flags override file values. Exit codes: 0 success, 2 configuration
problem, 3 data problem, 4 solver convergence failure.
"""

import argparse
import sys

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    EvaluationError,
    GridSearchError,
    MammopatchError,
)
from .pipeline import (
    build_config,
    parse_config_file,
    run_pipeline,
    stage_evaluate,
    stage_extract_features,
    stage_extract_patches,
    stage_grid_search,
    stage_select_features,
    stage_split,
    stage_synth,
)

_COMMANDS = (
    ("synth", stage_synth, "generate a seeded synthetic image/mask corpus"),
    ("extract-patches", stage_extract_patches, "tile images into labeled patches"),
    ("extract-features", stage_extract_features, "run patches through the network tap"),
    ("select-features", stage_select_features, "rank features and keep the 95%% prefix"),
    ("split", stage_split, "assign rows to the five rotation groups"),
    ("grid-search", stage_grid_search, "search C or nu on the validation folds"),
    ("evaluate", stage_evaluate, "train at the chosen parameter and report test AUCs"),
    ("run-pipeline", run_pipeline, "all stages in order"),
)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mammopatch",
        description="Mass / non-mass patch classification pipeline.",
    )
    ap.add_argument("--config", metavar="PATH", help="key=value config file")
    ap.add_argument("--work-dir", metavar="DIR", help="artifact directory (default: run)")
    ap.add_argument("--seed", type=int, metavar="N", help="master random seed")
    ap.add_argument("--workers", type=int, metavar="N", help="parallel worker count")
    ap.add_argument("--tap", choices=("fc2", "flatten"), help="feature tap")
    ap.add_argument(
        "--augment", action="store_true", default=None,
        help="add flipped and rotated variants of each patch",
    )
    ap.add_argument(
        "--skip-blank", action="store_true", default=None,
        help="drop patches with (near-)constant intensity",
    )
    ap.add_argument(
        "--random-weights", type=int, metavar="SEED",
        help="use a seeded random network instead of a weight file",
    )
    ap.add_argument(
        "--paper-faithful-rows", action="store_true", default=None,
        help="assign split groups by raw row instead of by source patch",
    )
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, _fn, help_text in _COMMANDS:
        sub.add_parser(name, help=help_text)
    return ap


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "work_dir": args.work_dir,
        "seed": args.seed,
        "workers": args.workers,
        "tap": args.tap,
        "augment": args.augment,
        "skip_blank": args.skip_blank,
        "random_weights": args.random_weights,
        "paper_faithful_rows": args.paper_faithful_rows,
    }
    return {k: v for k, v in mapping.items() if v is not None}


def entry(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        cfg = build_config(file_values, _overrides(args))
        stage_fn = dict((name, fn) for name, fn, _ in _COMMANDS)[args.command]
        stage_fn(cfg)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, GridSearchError, EvaluationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MammopatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(entry())


if __name__ == "__main__":
    main()
