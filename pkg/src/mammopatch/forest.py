"""Randomized tree ensembles and impurity-based feature selection.

Binary Gini trees built iteratively (explicit stack, no recursion limit).
Two splitter modes: "random" draws one uniform threshold per node inside
each candidate feature's value range (extremely randomized trees), "best"
scans midpoints between consecutive sorted values. Feature importance is
mean decrease in impurity, normalized per tree, averaged, renormalized.

Selection keeps the smallest importance-ranked prefix of features whose
cumulative importance reaches a set fraction of the total (default 0.95).
"""

import copy
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, DomainError, SelectionError, ShapeError


def gini(counts) -> float:
    """Gini impurity 1 - sum(p_k^2) of a class-count vector."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0 or (counts < 0).any():
        raise DomainError(f"class counts must be nonnegative, got {counts}")
    n = counts.sum()
    if n == 0:
        raise DomainError("all class counts are zero")
    p = counts / n
    return float(1.0 - np.dot(p, p))


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 100
    max_features: object = "sqrt"  # "sqrt", "log2", "all", or an int
    min_samples_split: int = 2
    max_depth: int = None
    splitter: str = "random"  # "random" or "best"
    bootstrap: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DomainError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_samples_split < 2:
            raise DomainError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.max_depth is not None and self.max_depth < 1:
            raise DomainError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.splitter not in ("random", "best"):
            raise DomainError(f"splitter must be 'random' or 'best', got {self.splitter!r}")

    def resolve_max_features(self, n_features: int) -> int:
        mf = self.max_features
        if mf == "sqrt":
            return max(1, int(np.ceil(np.sqrt(n_features))))
        if mf == "log2":
            return max(1, int(np.log2(n_features)))
        if mf in ("all", None):
            return n_features
        k = int(mf)
        if k < 1:
            raise DomainError(f"max_features must be >= 1, got {mf}")
        return min(k, n_features)


@dataclass
class Tree:
    """Flat array representation; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # class-1 fraction at each node
    raw_importance: np.ndarray = field(repr=False)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index for every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            mask = self.feature[node] >= 0
            if not mask.any():
                return node
            rows = np.nonzero(mask)[0]
            cur = node[rows]
            vals = X[rows, self.feature[cur]]
            node[rows] = np.where(
                vals <= self.threshold[cur], self.left[cur], self.right[cur]
            )

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _random_split(sub, onehot_node, totals, rng):
    """One shared uniform draw positions a threshold inside every candidate
    feature's (min, max) range; the draw is shared so that reordering the
    candidate columns reorders, but does not change, the thresholds."""
    lo = sub.min(axis=0)
    hi = sub.max(axis=0)
    valid = hi > lo
    if not valid.any():
        return None
    u = rng.random()
    thr = lo + u * (hi - lo)
    thr = np.maximum(thr, np.nextafter(lo, hi))
    thr = np.minimum(thr, np.nextafter(hi, lo))
    leftm = sub <= thr
    cnt_left = leftm.T.astype(np.float64) @ onehot_node
    n_left = cnt_left.sum(axis=1)
    cnt_right = totals - cnt_left
    n_right = cnt_right.sum(axis=1)
    n_node = totals.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        gl = 1.0 - (cnt_left**2).sum(axis=1) / n_left**2
        gr = 1.0 - (cnt_right**2).sum(axis=1) / n_right**2
        child = (n_left * gl + n_right * gr) / n_node
    child[~valid | (n_left == 0) | (n_right == 0)] = np.inf
    # impurities are count-based and tie often; break ties by the smaller
    # threshold so the winner follows the data, not the column order
    best = int(np.lexsort((thr, child))[0])
    if not np.isfinite(child[best]):
        return None
    return best, float(thr[best]), float(child[best])


def _best_split(sub, y_node, totals):
    """Exhaustive scan over midpoints between consecutive sorted values."""
    n_node = len(y_node)
    best = None
    for j in range(sub.shape[1]):
        v = sub[:, j].astype(np.float64)
        order = np.argsort(v, kind="stable")
        vs = v[order]
        c1 = np.cumsum(y_node[order])
        pos = np.nonzero(vs[:-1] < vs[1:])[0]
        if pos.size == 0:
            continue
        n_left = pos + 1.0
        c1_left = c1[pos]
        c0_left = n_left - c1_left
        n_right = n_node - n_left
        c1_right = totals[1] - c1_left
        c0_right = n_right - c1_right
        gl = 1.0 - (c0_left**2 + c1_left**2) / n_left**2
        gr = 1.0 - (c0_right**2 + c1_right**2) / n_right**2
        child = (n_left * gl + n_right * gr) / n_node
        k = int(np.argmin(child))
        thr = 0.5 * (vs[pos[k]] + vs[pos[k] + 1])
        # equal impurities break toward the smaller threshold (see _random_split)
        if best is None or child[k] < best[2] or (child[k] == best[2] and thr < best[1]):
            best = (j, float(thr), float(child[k]))
    return best


def _build_tree(X, y, cfg: EnsembleConfig, rng, k_features: int) -> Tree:
    n, m = X.shape
    onehot = np.stack([1.0 - y, y], axis=1)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    imp = np.zeros(m)
    idx0 = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
    stack = [(new_node(), idx0, 0)]
    while stack:
        node, idx, depth = stack.pop()
        y_node = y[idx]
        n_node = len(idx)
        n1 = float(y_node.sum())
        n0 = n_node - n1
        value[node] = n1 / n_node
        if (
            n1 == 0.0
            or n0 == 0.0
            or n_node < cfg.min_samples_split
            or (cfg.max_depth is not None and depth >= cfg.max_depth)
        ):
            continue
        if k_features >= m:
            feats = np.arange(m)
        else:
            feats = rng.permutation(m)[:k_features]
        sub = X[np.ix_(idx, feats)]
        totals = np.array([n0, n1])
        if cfg.splitter == "random":
            split = _random_split(sub, onehot[idx], totals, rng)
        else:
            split = _best_split(sub, y_node, totals)
        if split is None:
            continue
        j, thr, child_imp = split
        f = int(feats[j])
        go_left = sub[:, j] <= thr
        node_gini = 1.0 - (n0 * n0 + n1 * n1) / (n_node * n_node)
        imp[f] += (n_node / n) * (node_gini - child_imp)
        feature[node] = f
        threshold[node] = thr
        lchild = new_node()
        rchild = new_node()
        left[node] = lchild
        right[node] = rchild
        stack.append((lchild, idx[go_left], depth + 1))
        stack.append((rchild, idx[~go_left], depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value),
        imp,
    )


@dataclass
class Ensemble:
    trees: list
    importances: np.ndarray  # normalized to sum 1 (all zero if no splits)
    config: EnsembleConfig
    n_features: int

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict_proba(X)
        return out / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(np.int64)


def fit_ensemble(X, y, config: EnsembleConfig = EnsembleConfig()) -> Ensemble:
    """Fit the forest. ``y`` holds binary labels in {0, 1}.

    Each tree gets an independent generator spawned from one seed sequence,
    so results are reproducible and independent of tree build order.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"feature matrix must be 2-D and non-empty, got {X.shape}")
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (X.shape[0],):
        raise ShapeError(f"labels shape {y.shape} does not match {X.shape[0]} rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DomainError("labels must be 0 or 1")
    if (y == y[0]).all():
        raise DomainError("training data must contain both classes")
    n, m = X.shape
    k = config.resolve_max_features(m)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(config.n_trees)]
    trees = [_build_tree(X, y, config, rng, k) for rng in rngs]
    acc = np.zeros(m)
    used = 0
    for t in trees:
        s = t.raw_importance.sum()
        if s > 0:
            acc += t.raw_importance / s
            used += 1
    if used:
        acc /= used
        total = acc.sum()
        if total > 0:
            acc /= total
    return Ensemble(trees, acc, config, m)


@dataclass(frozen=True)
class SelectionResult:
    """Kept feature indices in descending importance order.

    ``captured`` is the fraction of total importance the prefix covers; it
    is at least ``threshold``, and dropping the last index would break that.
    """

    indices: np.ndarray
    importances: np.ndarray  # importance of each kept feature, same order
    threshold: float
    captured: float
    n_total: int

    def __len__(self):
        return len(self.indices)


def select_cumulative(importances: np.ndarray, threshold: float = 0.95) -> SelectionResult:
    """Minimal descending-importance prefix whose cumulative importance
    reaches ``threshold`` times the total.

    Ties rank toward the lower feature index. All-zero importance vectors
    cannot be ranked and raise SelectionError.
    """
    importances = np.asarray(importances, dtype=np.float64)
    if importances.ndim != 1 or importances.size == 0:
        raise ShapeError(f"importances must be a non-empty vector, got {importances.shape}")
    if not (0.0 < threshold <= 1.0):
        raise DomainError(f"threshold must be in (0, 1], got {threshold}")
    total = importances.sum()
    if total <= 0.0:
        raise SelectionError("all feature importances are zero; nothing to rank")
    order = np.argsort(-importances, kind="stable")
    csum = np.cumsum(importances[order])
    target = threshold * total
    k = int(np.argmax(csum >= target - 1e-12 * total)) + 1
    kept = order[:k]
    return SelectionResult(
        kept,
        importances[kept].copy(),
        float(threshold),
        float(csum[k - 1] / total),
        importances.size,
    )


def project(features, selection: SelectionResult):
    """Column subset in selection order.

    Accepts a bare matrix or a FeatureMatrix-like object (anything with
    ``features`` and ``subset`` attributes is sliced with provenance
    preserved).
    """
    if len(selection) == 0:
        raise DomainError("empty feature selection")
    mat = features.features if hasattr(features, "features") else np.asarray(features)
    if mat.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got {mat.shape}")
    idx = np.asarray(selection.indices, dtype=np.int64)
    if (idx < 0).any() or (idx >= mat.shape[1]).any():
        raise BoundsError(
            f"selection indices reach {int(idx.max())} but the matrix has {mat.shape[1]} columns"
        )
    if hasattr(features, "features"):
        out = copy.copy(features)
        out.features = mat[:, idx]
        return out
    return mat[:, idx]


def write_selection(selection: SelectionResult, path):
    """Selection report: a comment line with the threshold and captured
    total, then one kept feature per row in rank order."""
    with open(path, "w", newline="") as fh:
        fh.write(
            "# threshold=%.10g captured=%.10g n_total=%d\n"
            % (selection.threshold, selection.captured, selection.n_total)
        )
        writer = csv.writer(fh)
        writer.writerow(["feature_index", "importance", "cumulative_importance"])
        cum = 0.0
        for i in range(len(selection)):
            cum += selection.importances[i]
            writer.writerow(
                [int(selection.indices[i]), "%.10g" % selection.importances[i], "%.10g" % cum]
            )


def read_selection(path) -> SelectionResult:
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise SelectionError(f"{path}: missing selection header line")
        meta = dict(item.split("=", 1) for item in header[1:].split())
        indices, imps = [], []
        reader = csv.DictReader(fh)
        for row in reader:
            indices.append(int(row["feature_index"]))
            imps.append(float(row["importance"]))
    if not indices:
        raise SelectionError(f"{path}: empty feature selection")
    imps = np.asarray(imps)
    return SelectionResult(
        np.asarray(indices, dtype=np.int64),
        imps,
        float(meta["threshold"]),
        float(meta["captured"]),
        int(meta["n_total"]),
    )
