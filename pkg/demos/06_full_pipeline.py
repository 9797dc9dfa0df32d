"""End-to-end run on a tiny generated corpus: synth, patches, network
features, selection, split, grid search, and evaluation in one call.

The stage functions behind each step are also callable one at a time;
the command line exposes them as subcommands.
"""

import tempfile
from pathlib import Path

from mammopatch import build_config, run_pipeline

with tempfile.TemporaryDirectory() as td:
    cfg = build_config({
        "work_dir": str(Path(td) / "run"),
        "patch_height": "32",
        "patch_width": "32",
        "stride": "32",
        "synth_positive": "6",
        "synth_negative": "6",
        "augment": "yes",
        "random_weights": "7",
        "c_grid": "0.1, 1, 10",
        "seed": "1",
    })
    run_pipeline(cfg, echo=print)

    print("\nartifacts:")
    for p in sorted(Path(cfg.work_dir).rglob("*")):
        if p.is_file():
            print(f"  {p.relative_to(cfg.work_dir)}  ({p.stat().st_size} bytes)")

    print("\nevaluation report:")
    print((Path(cfg.work_dir) / "evaluation.csv").read_text())
