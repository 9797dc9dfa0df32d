"""Rotating five-way splits, ROC analysis, and hyper-parameter search.

Observations are split per class into five equal groups A through E, keyed
by source patch so augmented variants always travel together. Five cases
rotate the roles: train on three groups, validate on one, test on one.
Grid search maximizes mean validation AUC and never touches test groups;
the final evaluation retrains each case's model on its train groups alone
and reports the five test AUCs with their mean and population spread.
"""

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DataError,
    DomainError,
    EvaluationError,
    GridSearchError,
    InfeasibleNuError,
    ShapeError,
)
from .svm import (
    KernelRowCache,
    KernelSpec,
    SolverConfig,
    decision_function,
    kernel_eval,
    train_svm,
)

GROUP_LETTERS = ("A", "B", "C", "D", "E")
CASE_NAMES = ("I", "II", "III", "IV", "V")

#: The five rotations: (train groups, validation group, test group).
ROTATIONS = (
    ("ABC", "D", "E"),
    ("BCD", "E", "A"),
    ("CDE", "A", "B"),
    ("DEA", "B", "C"),
    ("EAB", "C", "D"),
)


@dataclass(frozen=True)
class FoldGroups:
    """Group index (0..4 for A..E) of every observation row."""

    group_of_row: np.ndarray

    def rows_in(self, letters: str) -> np.ndarray:
        ids = [GROUP_LETTERS.index(ch) for ch in letters]
        return np.nonzero(np.isin(self.group_of_row, ids))[0]


def partition_groups(keys, labels, seed: int, by_source: bool = True) -> FoldGroups:
    """Assign rows to groups A-E, balanced within each class.

    ``keys`` identifies each row's source patch (source_id, origin_row,
    origin_col). With ``by_source`` the distinct sources of a class are
    shuffled and dealt round-robin, and every row inherits its source's
    group, so augmented copies can never straddle a split boundary. With
    ``by_source=False`` raw rows are dealt instead.
    """
    keys = list(keys)
    labels = list(labels)
    if len(keys) != len(labels):
        raise ShapeError(f"{len(keys)} keys for {len(labels)} labels")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DomainError("both classes are required to build balanced groups")
    rng = np.random.default_rng(seed)
    group_of_row = np.full(len(keys), -1, dtype=np.int64)
    for cls in classes:
        rows = [i for i, lab in enumerate(labels) if lab == cls]
        if by_source:
            units = sorted(set(keys[i] for i in rows))
        else:
            units = rows
        if len(units) < len(GROUP_LETTERS):
            raise DomainError(
                f"class {cls!r} has only {len(units)} distinct "
                f"{'sources' if by_source else 'rows'}; need at least {len(GROUP_LETTERS)}"
            )
        perm = rng.permutation(len(units))
        assign = {units[k]: g % len(GROUP_LETTERS) for g, k in enumerate(perm)}
        for i in rows:
            group_of_row[i] = assign[keys[i] if by_source else i]
    return FoldGroups(group_of_row)


class SplitCase:
    """One rotation: named train/validation/test index sets.

    ``test`` is a property so instrumented subclasses can count accesses;
    grid search must complete without ever reading it.
    """

    def __init__(self, name, train_letters, val_letter, test_letter, train, val, test):
        self.name = name
        self.train_letters = train_letters
        self.val_letter = val_letter
        self.test_letter = test_letter
        self.train = np.asarray(train, dtype=np.int64)
        self.val = np.asarray(val, dtype=np.int64)
        self._test = np.asarray(test, dtype=np.int64)

    @property
    def test(self) -> np.ndarray:
        return self._test

    def __repr__(self):
        return (
            f"SplitCase({self.name}: {self.train_letters}|{self.val_letter}|"
            f"{self.test_letter}, {len(self.train)}/{len(self.val)}/{len(self._test)})"
        )


def build_cases(groups: FoldGroups):
    """The five rotation cases over a group assignment."""
    cases = []
    for name, (tr, va, te) in zip(CASE_NAMES, ROTATIONS):
        cases.append(
            SplitCase(name, tr, va, te, groups.rows_in(tr), groups.rows_in(va), groups.rows_in(te))
        )
    return cases


def write_fold_assignment(groups: FoldGroups, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "group"])
        for i, g in enumerate(groups.group_of_row):
            writer.writerow([i, GROUP_LETTERS[g]])


def read_fold_assignment(path) -> FoldGroups:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["row", "group"]:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            rows.append((int(rec["row"]), GROUP_LETTERS.index(rec["group"])))
    rows.sort()
    if [r for r, _ in rows] != list(range(len(rows))):
        raise DataError(f"{path}: row indices are not a contiguous range")
    return FoldGroups(np.array([g for _, g in rows], dtype=np.int64))


# ---------------------------------------------------------------------------
# ROC and AUC
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RocCurve:
    """Operating points swept over descending unique score thresholds.

    Starts at (0, 0) with an infinite threshold and ends at (1, 1); one
    point per distinct score, so tied scores fold into a single point.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray


def roc_curve(scores, labels) -> RocCurve:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.shape[0]} scores for {labels.shape[0]} labels")
    if not np.isfinite(scores).all():
        raise DomainError("scores must be finite")
    pos = labels > 0
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("ROC needs both classes present")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    p = pos[order]
    tp = np.cumsum(p)
    fp = np.cumsum(~p)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    return RocCurve(
        np.r_[0.0, fp[last] / n_neg],
        np.r_[0.0, tp[last] / n_pos],
        np.r_[np.inf, s[last]],
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    return float(np.trapezoid(curve.tpr, curve.fpr))


def aggregate_aucs(values):
    """Mean and population standard deviation (divide by the count)."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"need a non-empty vector of AUCs, got shape {v.shape}")
    return float(v.mean()), float(v.std())


# ---------------------------------------------------------------------------
# grid search
# ---------------------------------------------------------------------------

DEFAULT_C_VALUES = tuple(10.0**k for k in range(-3, 5))
DEFAULT_NU_VALUES = (0.001, 0.005, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class GridSpec:
    formulation: str  # "c" or "nu"
    values: tuple = None  # None -> formulation default

    def __post_init__(self):
        if self.formulation not in ("c", "nu"):
            raise DomainError(f"unknown formulation {self.formulation!r}")
        vals = self.values
        if vals is None:
            vals = DEFAULT_C_VALUES if self.formulation == "c" else DEFAULT_NU_VALUES
        vals = tuple(float(v) for v in vals)
        if not vals:
            raise DomainError("grid must be nonempty")
        for v in vals:
            if self.formulation == "c" and v <= 0:
                raise DomainError(f"C grid values must be positive, got {v}")
            if self.formulation == "nu" and not (0.0 < v < 1.0):
                raise DomainError(f"nu grid values must lie in (0, 1), got {v}")
        object.__setattr__(self, "values", vals)


@dataclass
class GridCell:
    param: float
    case_name: str
    auc: float = None
    model: object = field(default=None, repr=False)
    error: str = None


@dataclass
class GridResult:
    formulation: str
    values: tuple
    cells: list
    mean_auc: dict  # param -> mean validation AUC (params with no failed cell)
    failures: list  # (param, case_name, message)
    best_param: float
    best_auc: float


def _grid_case_job(payload):
    """All grid values for one case; the training kernel matrix is computed
    once and shared across fits."""
    ci, X_tr, y_tr, X_val, y_val, formulation, values, kernel, solver = payload
    spec = kernel.resolved(X_tr)
    rows = KernelRowCache.from_matrix(kernel_eval(spec, X_tr, X_tr))
    out = []
    for v in values:
        try:
            model = train_svm(formulation, X_tr, y_tr, v, spec, solver, rows)
            a = auc(roc_curve(decision_function(model, X_val), y_val))
            out.append((v, a, model, None))
        except (ConvergenceError, InfeasibleNuError) as exc:
            out.append((v, None, None, str(exc)))
    return ci, out


def grid_search(X, y, cases, grid: GridSpec, kernel: KernelSpec = KernelSpec(),
                solver: SolverConfig = SolverConfig(), workers: int = 1) -> GridResult:
    """Mean validation AUC for every grid value; argmax wins, ties to the
    smaller value. A value that fails on any case is out of contention; if
    that removes every value the search raises GridSearchError.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    values = tuple(sorted(grid.values))
    payloads = [
        (ci, X[c.train], y[c.train], X[c.val], y[c.val], grid.formulation, values, kernel, solver)
        for ci, c in enumerate(cases)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
            results = dict(pool.map(_grid_case_job, payloads))
    else:
        results = dict(map(_grid_case_job, payloads))
    cells = []
    failures = []
    by_param = {v: [] for v in values}
    for ci, case in enumerate(cases):
        for v, a, model, err in results[ci]:
            cells.append(GridCell(v, case.name, a, model, err))
            if err is None:
                by_param[v].append(a)
            else:
                failures.append((v, case.name, err))
    failed_params = {v for v, _, _ in failures}
    mean_auc = {
        v: float(np.mean(by_param[v])) for v in values if v not in failed_params
    }
    if not mean_auc:
        raise GridSearchError(
            f"every grid value failed on at least one case ({len(failures)} failed cells)"
        )
    best_param = None
    best_auc = -np.inf
    for v in values:  # ascending, so ties keep the smaller value
        if v in mean_auc and mean_auc[v] > best_auc:
            best_param, best_auc = v, mean_auc[v]
    return GridResult(grid.formulation, values, cells, mean_auc, failures, best_param, float(best_auc))


def write_grid_csv(result: GridResult, path):
    """Per-cell table plus mean rows; failed cells carry the error text."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "case", "auc", "error"])
        for cell in result.cells:
            writer.writerow(
                [
                    "%.10g" % cell.param,
                    cell.case_name,
                    "" if cell.auc is None else "%.10g" % cell.auc,
                    cell.error or "",
                ]
            )
        for v in result.values:
            if v in result.mean_auc:
                writer.writerow(["%.10g" % v, "mean", "%.10g" % result.mean_auc[v], ""])
        writer.writerow(["%.10g" % result.best_param, "best", "%.10g" % result.best_auc, ""])


# ---------------------------------------------------------------------------
# final evaluation
# ---------------------------------------------------------------------------


@dataclass
class CaseOutcome:
    name: str
    auc: float
    curve: RocCurve
    n_sv: int
    fit_seconds: float


@dataclass
class CvReport:
    formulation: str
    param: float
    outcomes: list
    aucs: list
    mean_auc: float
    std_auc: float
    timings: dict


def evaluate_cases(X, y, cases, formulation: str, param: float,
                   kernel: KernelSpec = KernelSpec(),
                   solver: SolverConfig = SolverConfig()) -> CvReport:
    """Retrain per case on its train groups and score its test group.

    A solver failure aborts the run with EvaluationError; the exception
    carries the partial report accumulated so far.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    outcomes = []
    timings = {}
    total0 = time.perf_counter()
    for case in cases:
        t0 = time.perf_counter()
        try:
            model = train_svm(formulation, X[case.train], y[case.train], param, kernel, solver)
            scores = decision_function(model, X[case.test])
            curve = roc_curve(scores, y[case.test])
        except (ConvergenceError, InfeasibleNuError, DomainError) as exc:
            partial = _report(formulation, param, outcomes, timings, total0)
            raise EvaluationError(
                f"case {case.name} failed: {exc}", partial=partial
            ) from exc
        dt = time.perf_counter() - t0
        timings[f"case_{case.name}_seconds"] = dt
        outcomes.append(CaseOutcome(case.name, auc(curve), curve, model.n_sv, dt))
    return _report(formulation, param, outcomes, timings, total0)


def _report(formulation, param, outcomes, timings, total0) -> CvReport:
    aucs = [o.auc for o in outcomes]
    if aucs:
        mean, std = aggregate_aucs(aucs)
    else:
        mean = std = float("nan")
    timings = dict(timings)
    timings["evaluate_seconds"] = time.perf_counter() - total0
    return CvReport(formulation, float(param), outcomes, aucs, mean, std, timings)


def write_report_csv(report: CvReport, path):
    """Case/AUC rows followed by mean, std, and the chosen parameter."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case", "auc"])
        for o in report.outcomes:
            writer.writerow([o.name, "%.10g" % o.auc])
        writer.writerow(["mean", "%.10g" % report.mean_auc])
        writer.writerow(["std", "%.10g" % report.std_auc])
        writer.writerow([f"best_{report.formulation}", "%.10g" % report.param])


def write_roc_csv(curve: RocCurve, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in zip(curve.fpr, curve.tpr, curve.thresholds):
            writer.writerow(["%.10g" % f, "%.10g" % t, "inf" if np.isinf(th) else "%.10g" % th])


# ---------------------------------------------------------------------------
# ROC overlay rendering
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd")


def render_roc_svg(named_curves, path, title="Receiver operating characteristic"):
    """Hand-assembled SVG overlay of ROC curves.

    Written directly (no plotting library) so identical inputs produce
    byte-identical files, which keeps staged and end-to-end runs
    comparable artifact by artifact.
    """
    width, height = 640, 480
    left, right, top, bottom = 70, 20, 40, 55
    pw = width - left - right
    ph = height - top - bottom

    def px(fx):
        return left + fx * pw

    def py(fy):
        return top + (1.0 - fy) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    for k in range(6):
        f = k / 5.0
        x = px(f)
        y = py(f)
        parts.append(
            f'<line x1="{x:.2f}" y1="{py(0):.2f}" x2="{x:.2f}" y2="{py(0) + 5:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{py(0) + 20:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{f:.1f}</text>'
        )
        parts.append(
            f'<line x1="{px(0) - 5:.2f}" y1="{y:.2f}" x2="{px(0):.2f}" y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px(0) - 9:.2f}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{f:.1f}</text>'
        )
    parts.append(
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{px(0):.2f}" y1="{py(0):.2f}" x2="{px(1):.2f}" y2="{py(1):.2f}" '
        f'stroke="gray" stroke-dasharray="6,4"/>'
    )
    parts.append(
        f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">False positive rate</text>'
    )
    parts.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">True positive rate</text>'
    )
    items = list(named_curves.items())
    for k, (name, curve) in enumerate(items):
        color = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(
            f"{px(f):.2f},{py(t):.2f}" for f, t in zip(curve.fpr, curve.tpr)
        )
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>'
        )
        a = auc(curve)
        ly = top + 16 + 16 * k
        parts.append(
            f'<line x1="{left + pw - 150:.1f}" y1="{ly - 4:.1f}" '
            f'x2="{left + pw - 128:.1f}" y2="{ly - 4:.1f}" stroke="{color}" stroke-width="2.5"/>'
        )
        parts.append(
            f'<text x="{left + pw - 122:.1f}" y="{ly:.1f}" font-family="sans-serif" '
            f'font-size="11">Case {name} (AUC {a:.3f})</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
