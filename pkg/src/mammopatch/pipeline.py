"""Stage orchestration with on-disk persistence between stages.

Each stage reads its inputs from the working directory, writes its
artifacts there, and appends a record (timings plus SHA-256 checksums of
files consumed and produced) to ``run_manifest.json``. ``run_pipeline``
is nothing more than the stages composed in order, so a staged run and a
single-shot run produce byte-identical artifacts for the same config.

Stage layout under the working directory::

    corpus/images, corpus/masks      synthetic input data
    patches/                         patch files + manifest.csv
    features.fmat, features_meta.csv feature matrix + row metadata
    selection.csv                    kept features report
    folds.csv                        per-row group assignment
    grid.csv                         per-cell search table
    evaluation.csv, roc_*.csv, roc.svg
    run_manifest.json
"""

import csv
import hashlib
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError
from .evaluation import (
    GridSpec,
    build_cases,
    evaluate_cases,
    grid_search,
    partition_groups,
    read_fold_assignment,
    render_roc_svg,
    write_fold_assignment,
    write_grid_csv,
    write_report_csv,
    write_roc_csv,
)
from .forest import (
    EnsembleConfig,
    fit_ensemble,
    project,
    read_selection,
    select_cumulative,
    write_selection,
)
from .imgfiles import read_image_file, read_mask_file, read_patch_dataset, write_patch_dataset
from .patches import LABEL_MASS, PatchGridConfig, build_dataset
from .svm import KernelSpec, SolverConfig
from .synth import generate_corpus
from .vgg import (
    extract_features,
    load_network,
    read_feature_matrix,
    read_feature_meta,
    seeded_random_network,
    write_feature_matrix,
)

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


def _parse_bool(key, text):
    low = text.strip().lower()
    if low in _TRUE_WORDS:
        return True
    if low in _FALSE_WORDS:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _parse_opt_int(key, text):
    text = text.strip()
    if text == "" or text.lower() == "none":
        return None
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from exc


def _parse_opt_float(key, text):
    text = text.strip()
    if text == "" or text.lower() in ("none", "scale"):
        return None
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from exc


def _parse_grid(key, text):
    text = text.strip()
    if text == "" or text.lower() == "none":
        return None
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from exc


@dataclass
class PipelineConfig:
    """Everything a run needs; every field has a key=value spelling."""

    work_dir: str = "run"
    seed: int = 0
    workers: int = 1
    tap: str = "fc2"
    augment: bool = False
    skip_blank: bool = False
    paper_faithful_rows: bool = False
    patch_height: int = 454
    patch_width: int = 454
    stride: int = 300
    positive_overlap_min: float = 0.10
    images_dir: str = None
    masks_dir: str = None
    weights_file: str = None
    random_weights: int = None
    formulation: str = "c"
    kernel: str = "rbf"
    gamma: float = None
    coef0: float = 0.0
    degree: int = 3
    c_grid: tuple = None
    nu_grid: tuple = None
    n_trees: int = 100
    max_features: str = "sqrt"
    selection_threshold: float = 0.95
    kkt_tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    cache_size: int = None
    synth_positive: int = 200
    synth_negative: int = 200
    synth_rows: int = None
    synth_cols: int = None

    def __post_init__(self):
        if self.tap not in ("fc2", "flatten"):
            raise ConfigError(f"tap must be fc2 or flatten, got {self.tap!r}")
        if self.formulation not in ("c", "nu"):
            raise ConfigError(f"formulation must be c or nu, got {self.formulation!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.kernel not in ("rbf", "linear", "poly", "sigmoid"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        for name in ("patch_height", "patch_width", "stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    # ---- path helpers -----------------------------------------------------

    @property
    def work(self) -> Path:
        return Path(self.work_dir)

    @property
    def corpus_images(self) -> Path:
        return Path(self.images_dir) if self.images_dir else self.work / "corpus" / "images"

    @property
    def corpus_masks(self) -> Path:
        return Path(self.masks_dir) if self.masks_dir else self.work / "corpus" / "masks"

    @property
    def patches_dir(self) -> Path:
        return self.work / "patches"

    @property
    def features_path(self) -> Path:
        return self.work / "features.fmat"

    @property
    def features_meta_path(self) -> Path:
        return self.work / "features_meta.csv"

    @property
    def selection_path(self) -> Path:
        return self.work / "selection.csv"

    @property
    def folds_path(self) -> Path:
        return self.work / "folds.csv"

    @property
    def grid_path(self) -> Path:
        return self.work / "grid.csv"

    @property
    def report_path(self) -> Path:
        return self.work / "evaluation.csv"

    def grid_config(self) -> PatchGridConfig:
        return PatchGridConfig(
            self.patch_height, self.patch_width, self.stride, self.positive_overlap_min
        )

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.gamma, self.coef0, self.degree)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.kkt_tolerance, self.max_iterations, self.cache_size, self.seed)

    def grid_spec(self) -> GridSpec:
        values = self.c_grid if self.formulation == "c" else self.nu_grid
        return GridSpec(self.formulation, values)


_PARSERS = {
    "work_dir": str,
    "seed": int,
    "workers": int,
    "tap": str,
    "augment": _parse_bool,
    "skip_blank": _parse_bool,
    "paper_faithful_rows": _parse_bool,
    "patch_height": int,
    "patch_width": int,
    "stride": int,
    "positive_overlap_min": float,
    "images_dir": str,
    "masks_dir": str,
    "weights_file": str,
    "random_weights": _parse_opt_int,
    "formulation": str,
    "kernel": str,
    "gamma": _parse_opt_float,
    "coef0": float,
    "degree": int,
    "c_grid": _parse_grid,
    "nu_grid": _parse_grid,
    "n_trees": int,
    "max_features": str,
    "selection_threshold": float,
    "kkt_tolerance": float,
    "max_iterations": int,
    "cache_size": _parse_opt_int,
    "synth_positive": int,
    "synth_negative": int,
    "synth_rows": _parse_opt_int,
    "synth_cols": _parse_opt_int,
}


def parse_config_file(path) -> dict:
    """key=value lines; blank lines and # comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    values = {}
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def build_config(file_values: dict = None, overrides: dict = None) -> PipelineConfig:
    """Typed config from file values with override values winning."""
    merged = {}
    for source in (file_values or {}), (overrides or {}):
        for key, val in source.items():
            merged[key] = val
    kwargs = {}
    for key, val in merged.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(val, str):
            parser = _PARSERS[key]
            try:
                val = parser(key, val) if parser in (
                    _parse_bool, _parse_opt_int, _parse_opt_float, _parse_grid,
                ) else parser(val)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"{key}: bad value {val!r}") from exc
        kwargs[key] = val
    return PipelineConfig(**kwargs)


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _checksum_map(paths, base: Path) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        key = os.path.relpath(p, base)
        out[key] = _sha256(p)
    return dict(sorted(out.items()))


class RunManifest:
    """Accumulating JSON record of a run: config, stage timings, checksums."""

    def __init__(self, cfg: PipelineConfig):
        self.path = cfg.work / "run_manifest.json"
        if self.path.is_file():
            with open(self.path) as fh:
                self.data = json.load(fh)
        else:
            self.data = {"tool_version": __version__, "stages": {}}
        self.data["tool_version"] = __version__
        self.data["config"] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()
        }

    def record(self, stage: str, seconds: float, inputs=(), outputs=(), extra=None):
        base = Path(self.data["config"]["work_dir"])
        entry = {
            "seconds": round(seconds, 6),
            "inputs": _checksum_map(inputs, base),
            "outputs": _checksum_map(outputs, base),
        }
        if extra:
            entry.update(extra)
        self.data["stages"][stage] = entry
        self.save()

    def save(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".manifest-")
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(self.data, fh, indent=2, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _require(path: Path, produced_by: str):
    if not Path(path).exists():
        raise DataError(f"{path} not found; run the {produced_by} stage first")


def _quiet(*_args, **_kwargs):
    pass


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_synth(cfg: PipelineConfig, echo=print) -> dict:
    rows = cfg.synth_rows if cfg.synth_rows else cfg.patch_height + 2
    cols = cfg.synth_cols if cfg.synth_cols else cfg.patch_width + 2
    t0 = time.perf_counter()
    count = generate_corpus(
        cfg.work / "corpus", cfg.synth_positive, cfg.synth_negative, rows, cols, cfg.seed
    )
    dt = time.perf_counter() - t0
    outputs = sorted((cfg.work / "corpus" / "images").iterdir()) + sorted(
        (cfg.work / "corpus" / "masks").iterdir()
    )
    RunManifest(cfg).record("synth", dt, outputs=outputs, extra={"images": count})
    echo(f"synth: wrote {count} images ({rows}x{cols}) in {dt:.1f}s")
    return {"images": count, "seconds": dt}


def stage_extract_patches(cfg: PipelineConfig, echo=print) -> dict:
    images_dir = cfg.corpus_images
    masks_dir = cfg.corpus_masks
    if not images_dir.is_dir():
        raise DataError(f"image directory {images_dir} not found")
    image_files = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in (".gimg", ".png")
    )
    if not image_files:
        raise DataError(f"image directory {images_dir} is empty")
    grid = cfg.grid_config()
    t0 = time.perf_counter()
    patches = []
    errors = []
    consumed = []
    for img_path in image_files:
        mask_path = None
        for ext in (".gmsk", ".png"):
            cand = masks_dir / (img_path.stem + ext)
            if cand.is_file():
                mask_path = cand
                break
        try:
            if mask_path is None:
                raise DataError(f"no mask found for {img_path.name} under {masks_dir}")
            image = read_image_file(img_path)
            mask = read_mask_file(mask_path)
            mask.check_matches(image)
            patches.extend(
                build_dataset(image, mask, grid, augment=cfg.augment, skip_blank=cfg.skip_blank)
            )
            consumed.extend([img_path, mask_path])
        except DataError as exc:
            errors.append(f"{img_path.name}: {exc}")
    if errors:
        head = "; ".join(errors[:3])
        raise DataError(f"{len(errors)} input file(s) failed ({head})")
    if not patches:
        raise DataError("no patches were produced; check grid parameters against image sizes")
    manifest_path = write_patch_dataset(patches, cfg.patches_dir)
    dt = time.perf_counter() - t0
    n_mass = sum(1 for p in patches if p.label == LABEL_MASS)
    outputs = sorted(cfg.patches_dir.iterdir())
    RunManifest(cfg).record(
        "extract_patches",
        dt,
        inputs=consumed,
        outputs=outputs,
        extra={"patches": len(patches), "mass": n_mass, "non_mass": len(patches) - n_mass},
    )
    echo(
        f"extract-patches: {len(patches)} patches ({n_mass} mass, "
        f"{len(patches) - n_mass} non-mass) from {len(image_files)} images in {dt:.1f}s"
    )
    return {"patches": len(patches), "mass": n_mass, "manifest": str(manifest_path)}


def stage_extract_features(cfg: PipelineConfig, echo=print) -> dict:
    _require(cfg.patches_dir / "manifest.csv", "extract-patches")
    patches = read_patch_dataset(cfg.patches_dir)
    if cfg.weights_file:
        _require(Path(cfg.weights_file), "weight preparation")
        net = load_network(cfg.weights_file)
        weight_source = f"file:{cfg.weights_file}"
    elif cfg.random_weights is not None:
        net = seeded_random_network(cfg.random_weights)
        weight_source = f"random:{cfg.random_weights}"
    else:
        raise ConfigError(
            "no weight source: set weights_file or random_weights in the config "
            "(or pass --random-weights SEED)"
        )
    t0 = time.perf_counter()
    done_marks = {max(1, len(patches) // 4) * k for k in (1, 2, 3)}

    def progress(done, total):
        if done in done_marks:
            echo(f"extract-features: {done}/{total} patches")

    fm = extract_features(patches, net, cfg.tap, progress=progress)
    checksum = net.checksum()
    del net
    write_feature_matrix(fm, cfg.features_path, cfg.features_meta_path)
    dt = time.perf_counter() - t0
    inputs = [cfg.patches_dir / "manifest.csv"]
    if cfg.weights_file:
        inputs.append(Path(cfg.weights_file))
    RunManifest(cfg).record(
        "extract_features",
        dt,
        inputs=inputs,
        outputs=[cfg.features_path, cfg.features_meta_path],
        extra={
            "tap": cfg.tap,
            "rows": len(fm),
            "cols": int(fm.features.shape[1]),
            "weights": weight_source,
            "weight_checksum": checksum,
        },
    )
    echo(
        f"extract-features: {len(fm)}x{fm.features.shape[1]} matrix "
        f"(tap {cfg.tap}, weights {weight_source}) in {dt:.1f}s"
    )
    return {"rows": len(fm), "cols": int(fm.features.shape[1]), "seconds": dt}


def stage_select_features(cfg: PipelineConfig, echo=print) -> dict:
    _require(cfg.features_path, "extract-features")
    _require(cfg.features_meta_path, "extract-features")
    fm = read_feature_matrix(cfg.features_path, cfg.features_meta_path)
    y01 = (np.asarray(fm.labels) == LABEL_MASS).astype(np.float64)
    t0 = time.perf_counter()
    ens_cfg = EnsembleConfig(
        n_trees=cfg.n_trees, max_features=cfg.max_features, seed=cfg.seed
    )
    ensemble = fit_ensemble(fm.features, y01, ens_cfg)
    selection = select_cumulative(ensemble.importances, cfg.selection_threshold)
    write_selection(selection, cfg.selection_path)
    dt = time.perf_counter() - t0
    RunManifest(cfg).record(
        "select_features",
        dt,
        inputs=[cfg.features_path, cfg.features_meta_path],
        outputs=[cfg.selection_path],
        extra={
            "kept": len(selection),
            "of": selection.n_total,
            "captured": selection.captured,
        },
    )
    echo(
        f"select-features: kept {len(selection)}/{selection.n_total} features "
        f"(captured {selection.captured:.4f}) in {dt:.1f}s"
    )
    return {"kept": len(selection), "seconds": dt}


def stage_split(cfg: PipelineConfig, echo=print) -> dict:
    _require(cfg.features_meta_path, "extract-features")
    labels, sources, orows, ocols, _augs = read_feature_meta(cfg.features_meta_path)
    keys = list(zip(sources, orows, ocols))
    t0 = time.perf_counter()
    groups = partition_groups(keys, labels, cfg.seed, by_source=not cfg.paper_faithful_rows)
    write_fold_assignment(groups, cfg.folds_path)
    dt = time.perf_counter() - t0
    sizes = [int((groups.group_of_row == g).sum()) for g in range(5)]
    RunManifest(cfg).record(
        "split",
        dt,
        inputs=[cfg.features_meta_path],
        outputs=[cfg.folds_path],
        extra={"group_sizes": sizes, "by_source": not cfg.paper_faithful_rows},
    )
    echo(f"split: groups A-E sized {sizes} in {dt:.1f}s")
    return {"group_sizes": sizes, "seconds": dt}


def _load_projected(cfg: PipelineConfig):
    fm = read_feature_matrix(cfg.features_path, cfg.features_meta_path)
    selection = read_selection(cfg.selection_path)
    X = project(fm.features, selection).astype(np.float64)
    y = fm.y()
    groups = read_fold_assignment(cfg.folds_path)
    if len(groups.group_of_row) != len(fm):
        raise DataError(
            f"{cfg.folds_path} covers {len(groups.group_of_row)} rows, "
            f"features have {len(fm)}"
        )
    return X, y, build_cases(groups)


def stage_grid_search(cfg: PipelineConfig, echo=print) -> dict:
    for path, producer in (
        (cfg.features_path, "extract-features"),
        (cfg.selection_path, "select-features"),
        (cfg.folds_path, "split"),
    ):
        _require(path, producer)
    X, y, cases = _load_projected(cfg)
    t0 = time.perf_counter()
    result = grid_search(
        X, y, cases, cfg.grid_spec(), cfg.kernel_spec(), cfg.solver_config(), cfg.workers
    )
    write_grid_csv(result, cfg.grid_path)
    dt = time.perf_counter() - t0
    RunManifest(cfg).record(
        "grid_search",
        dt,
        inputs=[cfg.features_path, cfg.selection_path, cfg.folds_path],
        outputs=[cfg.grid_path],
        extra={
            "formulation": result.formulation,
            "best_param": result.best_param,
            "best_auc": result.best_auc,
            "failed_cells": len(result.failures),
        },
    )
    echo(
        f"grid-search: best {result.formulation}={result.best_param:g} "
        f"(mean validation AUC {result.best_auc:.4f}) in {dt:.1f}s"
    )
    return {"best_param": result.best_param, "best_auc": result.best_auc, "seconds": dt}


def read_grid_best(path) -> float:
    """The chosen parameter from a grid stage's output table."""
    best = None
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["case"] == "best":
                best = float(row["param"])
    if best is None:
        raise DataError(f"{path}: no best-parameter row found")
    return best


def stage_evaluate(cfg: PipelineConfig, echo=print) -> dict:
    for path, producer in (
        (cfg.features_path, "extract-features"),
        (cfg.selection_path, "select-features"),
        (cfg.folds_path, "split"),
        (cfg.grid_path, "grid-search"),
    ):
        _require(path, producer)
    best = read_grid_best(cfg.grid_path)
    X, y, cases = _load_projected(cfg)
    t0 = time.perf_counter()
    report = evaluate_cases(
        X, y, cases, cfg.formulation, best, cfg.kernel_spec(), cfg.solver_config()
    )
    write_report_csv(report, cfg.report_path)
    roc_paths = []
    curves = {}
    for outcome in report.outcomes:
        roc_path = cfg.work / f"roc_{outcome.name}.csv"
        write_roc_csv(outcome.curve, roc_path)
        roc_paths.append(roc_path)
        curves[outcome.name] = outcome.curve
    svg_path = cfg.work / "roc.svg"
    render_roc_svg(curves, svg_path)
    dt = time.perf_counter() - t0
    RunManifest(cfg).record(
        "evaluate",
        dt,
        inputs=[cfg.features_path, cfg.selection_path, cfg.folds_path, cfg.grid_path],
        outputs=[cfg.report_path, svg_path] + roc_paths,
        extra={
            "formulation": report.formulation,
            "param": report.param,
            "aucs": report.aucs,
            "mean_auc": report.mean_auc,
            "std_auc": report.std_auc,
        },
    )
    echo(
        f"evaluate: {cfg.formulation}={best:g} test AUC "
        f"{report.mean_auc:.4f} (+/-{report.std_auc:.4f}) in {dt:.1f}s"
    )
    return {"mean_auc": report.mean_auc, "std_auc": report.std_auc, "seconds": dt}


def run_pipeline(cfg: PipelineConfig, echo=print) -> dict:
    """All stages in order; synthesis runs only when no external image
    directory was configured."""
    t0 = time.perf_counter()
    summary = {}
    if cfg.images_dir is None:
        summary["synth"] = stage_synth(cfg, echo)
    summary["extract_patches"] = stage_extract_patches(cfg, echo)
    summary["extract_features"] = stage_extract_features(cfg, echo)
    summary["select_features"] = stage_select_features(cfg, echo)
    summary["split"] = stage_split(cfg, echo)
    summary["grid_search"] = stage_grid_search(cfg, echo)
    summary["evaluate"] = stage_evaluate(cfg, echo)
    total = time.perf_counter() - t0
    echo(f"run-pipeline: all stages finished in {total:.1f}s")
    summary["total_seconds"] = total
    return summary
