"""Support vector machine training via sequential minimal optimization.

Two dual formulations over labels y in {-1, +1} with kernel matrix K and
Q_ij = y_i y_j K_ij:

* C form: minimize 0.5 a'Qa - sum(a) subject to 0 <= a_i <= C, y'a = 0.
* nu form: minimize 0.5 a'Qa subject to 0 <= a_i <= 1/n, y'a = 0,
  sum(a) = nu. Feasible only when nu <= 2 * min(n_pos, n_neg) / n.

Both are solved with maximal-violating-pair working set selection. Each
step moves a pair (i, j) by da_i = y_i * t, da_j = -y_j * t, which keeps
y'a fixed for any pair and additionally keeps sum(a) fixed when the pair
shares a label (the nu form restricts selection to same-label pairs).
The step length t is the unconstrained minimizer of the pair subproblem
clipped to the box, with exact snapping onto hit bounds so that interior
versus bound status stays crisp throughout.
"""

import struct
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConvergenceError,
    DataError,
    DomainError,
    InfeasibleNuError,
    ShapeError,
)

KERNEL_KINDS = ("rbf", "linear", "poly", "sigmoid")
FORMULATIONS = ("c", "nu")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and parameters. ``gamma=None`` defers to the data
    scale rule 1 / (n_features * variance of all feature values)."""

    kind: str = "rbf"
    gamma: float = None
    coef0: float = 0.0
    degree: int = 3

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise DomainError(f"unknown kernel {self.kind!r}, expected one of {KERNEL_KINDS}")
        if self.degree < 1:
            raise DomainError(f"kernel degree must be >= 1, got {self.degree}")
        if self.gamma is not None and self.gamma <= 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")

    def resolved(self, X) -> "KernelSpec":
        """Concrete gamma for this training matrix."""
        if self.gamma is not None or self.kind == "linear":
            return self
        X = np.asarray(X, dtype=np.float64)
        var = float(X.var())
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0 / X.shape[1]
        return replace(self, gamma=gamma)


def kernel_eval(spec: KernelSpec, A, B):
    """Kernel values in float64.

    Two vectors give a scalar; matrix inputs give the dense block K(A, B).
    """
    A_in = np.asarray(A, dtype=np.float64)
    B_in = np.asarray(B, dtype=np.float64)
    scalar = A_in.ndim == 1 and B_in.ndim == 1
    A = np.atleast_2d(A_in)
    B = np.atleast_2d(B_in)
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind != "linear" and spec.gamma is None:
        raise DomainError("kernel gamma is unresolved; call resolved() first")
    G = A @ B.T
    if spec.kind == "rbf":
        sq = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * G
        np.maximum(sq, 0.0, out=sq)
        G = np.exp(-spec.gamma * sq)
    elif spec.kind == "poly":
        G = (spec.gamma * G + spec.coef0) ** spec.degree
    elif spec.kind == "sigmoid":
        G = np.tanh(spec.gamma * G + spec.coef0)
    return float(G[0, 0]) if scalar else G


class KernelRowCache:
    """Serves full kernel rows K[i, :] with least-recently-used eviction.

    ``capacity=None`` keeps every computed row, ``capacity=0`` recomputes on
    every request; any capacity returns identical values. ``from_matrix``
    wraps a precomputed square kernel so grid searches can share one matrix
    across many fits.
    """

    def __init__(self, spec: KernelSpec, X, capacity=None):
        if spec.kind != "linear" and spec.gamma is None:
            raise DomainError("kernel gamma is unresolved; call resolved() first")
        self.spec = spec
        self.X = np.asarray(X, dtype=np.float64)
        self.capacity = capacity
        self._rows = OrderedDict()
        self._matrix = None
        self.n_computed = 0

    @classmethod
    def from_matrix(cls, K) -> "KernelRowCache":
        K = np.asarray(K, dtype=np.float64)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ShapeError(f"precomputed kernel must be square, got {K.shape}")
        obj = cls.__new__(cls)
        obj.spec = None
        obj.X = None
        obj.capacity = None
        obj._rows = OrderedDict()
        obj._matrix = K
        obj.n_computed = 0
        return obj

    def __len__(self):
        return self._matrix.shape[0] if self._matrix is not None else self.X.shape[0]

    def row(self, i: int) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix[i]
        if i in self._rows:
            self._rows.move_to_end(i)
            return self._rows[i]
        r = kernel_eval(self.spec, self.X[i : i + 1], self.X)[0]
        self.n_computed += 1
        if self.capacity is None or self.capacity > 0:
            self._rows[i] = r
            if self.capacity is not None:
                while len(self._rows) > self.capacity:
                    self._rows.popitem(last=False)
        return r

    def diagonal(self) -> np.ndarray:
        if self._matrix is not None:
            return np.ascontiguousarray(np.diag(self._matrix))
        X, spec = self.X, self.spec
        if spec.kind == "linear":
            return (X * X).sum(axis=1)
        if spec.kind == "rbf":
            return np.ones(X.shape[0])
        sq = (X * X).sum(axis=1)
        if spec.kind == "poly":
            return (spec.gamma * sq + spec.coef0) ** spec.degree
        return np.tanh(spec.gamma * sq + spec.coef0)


@dataclass(frozen=True)
class SolverConfig:
    kkt_tolerance: float = 1e-3
    max_iterations: int = 10_000_000
    cache_size: int = None  # None keeps all rows
    seed: int = 0  # reserved; the default pair selection is deterministic
    debug: bool = False  # verify monotone descent of the dual objective

    def __post_init__(self):
        if self.kkt_tolerance <= 0:
            raise DomainError(f"kkt_tolerance must be positive, got {self.kkt_tolerance}")
        if self.max_iterations < 1:
            raise DomainError(f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass
class SvmModel:
    """Trained classifier: decision(x) = sum_t dual_coefs[t] * K(x, sv_t) + bias.

    ``dual_coefs`` holds y_t * alpha_t for the support vectors. ``rho`` is
    the margin target a training point is checked against (fixed at 1 for
    the C form, solved for in the nu form). ``sv_indices`` maps support
    vectors back to training rows; it exists only on freshly trained
    models, not on models loaded from disk.
    """

    formulation: str
    param: float
    kernel: KernelSpec
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    rho: float
    sv_indices: np.ndarray = None
    dual_objective: float = None
    iterations: int = None

    @property
    def n_sv(self) -> int:
        return len(self.dual_coefs)


def decision_function(model: SvmModel, X):
    """Signed decision score(s): a float for one vector, an array for rows."""
    X_in = np.asarray(X, dtype=np.float64)
    X2 = np.atleast_2d(X_in)
    K = kernel_eval(model.kernel, X2, model.support_vectors)
    scores = K @ model.dual_coefs + model.bias
    return float(scores[0]) if X_in.ndim == 1 else scores


def predict(model: SvmModel, X):
    """Hard labels in {-1, +1}; zero scores resolve to +1."""
    scores = decision_function(model, X)
    if isinstance(scores, float):
        return 1.0 if scores >= 0.0 else -1.0
    return np.where(scores >= 0.0, 1.0, -1.0)


def _validate_training(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError(f"training matrix must be 2-D with >= 2 rows, got {X.shape}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ShapeError(f"{y.shape[0]} labels for {X.shape[0]} rows")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise DomainError("labels must be -1 or +1")
    if (y > 0).all() or (y < 0).all():
        raise DomainError("training data must contain both classes")
    return X, y


def _masked_extrema(values, up_mask, low_mask):
    """(max over up, argmax, min over low, argmin) with -inf/+inf when empty."""
    up_vals = np.where(up_mask, values, -np.inf)
    low_vals = np.where(low_mask, values, np.inf)
    i = int(np.argmax(up_vals))
    j = int(np.argmin(low_vals))
    return up_vals[i], i, low_vals[j], j


class _SmoState:
    """Shared machinery for both formulations."""

    def __init__(self, rows: KernelRowCache, y, box, config):
        self.rows = rows
        self.diag = rows.diagonal()
        self.y = y
        self.box = box
        self.config = config
        self.iterations = 0

    def step(self, alpha, grad, i, j, viol, obj):
        """Advance the pair (i, j) along the feasible direction; returns the
        updated dual objective value."""
        y, box = self.y, self.box
        Ki = self.rows.row(i)
        Kj = self.rows.row(j)
        eta = self.diag[i] + self.diag[j] - 2.0 * Ki[j]
        t = viol / max(eta, 1e-12)
        tmax_i = (box - alpha[i]) if y[i] > 0 else alpha[i]
        tmax_j = alpha[j] if y[j] > 0 else (box - alpha[j])
        t = min(t, tmax_i, tmax_j)
        new_obj = obj - viol * t + 0.5 * eta * t * t
        if self.config.debug and not new_obj <= obj + 1e-9 * (1.0 + abs(obj)):
            raise AssertionError(
                f"dual objective rose from {obj!r} to {new_obj!r} at iteration {self.iterations}"
            )
        ai = alpha[i] + y[i] * t
        aj = alpha[j] - y[j] * t
        if t == tmax_i:
            ai = box if y[i] > 0 else 0.0
        if t == tmax_j:
            aj = 0.0 if y[j] > 0 else box
        alpha[i] = ai
        alpha[j] = aj
        grad += (t * y) * (Ki - Kj)
        self.iterations += 1
        return new_obj

    def check_budget(self, alpha, viol):
        if self.iterations >= self.config.max_iterations:
            raise ConvergenceError(
                f"no convergence after {self.iterations} iterations "
                f"(violation {viol:.3e} > tolerance {self.config.kkt_tolerance:.3e})",
                alpha=alpha.copy(),
                residual=float(viol),
            )


def _finalize(formulation, param, spec, X, y, alpha, grad, bias, rho, iterations):
    svi = np.nonzero(alpha > 0.0)[0]
    dual_coefs = (alpha[svi] * y[svi]).astype(np.float64)
    sv = np.asarray(X[svi], dtype=np.float32)
    if formulation == "c":
        obj = 0.5 * float(alpha @ grad) - 0.5 * float(alpha.sum())
    else:
        obj = 0.5 * float(alpha @ grad)
    return SvmModel(
        formulation,
        float(param),
        spec,
        sv,
        dual_coefs,
        float(bias),
        float(rho),
        sv_indices=svi,
        dual_objective=obj,
        iterations=iterations,
    )


def train_csvm(X, y, C: float, kernel: KernelSpec = KernelSpec(),
               config: SolverConfig = SolverConfig(), rows: KernelRowCache = None) -> SvmModel:
    """Fit the C form. ``rows`` may supply a shared kernel provider."""
    X, y = _validate_training(X, y)
    if C <= 0:
        raise DomainError(f"C must be positive, got {C}")
    spec = kernel.resolved(X)
    if rows is None:
        rows = KernelRowCache(spec, X, config.cache_size)
    n = X.shape[0]
    alpha = np.zeros(n)
    grad = np.full(n, -1.0)  # gradient of the dual at alpha = 0
    state = _SmoState(rows, y, float(C), config)
    obj = 0.0
    tol = config.kkt_tolerance
    while True:
        neg_f = -(y * grad)
        up = ((alpha < C) & (y > 0)) | ((alpha > 0.0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0.0) & (y > 0))
        m, i, M, j = _masked_extrema(neg_f, up, low)
        viol = m - M
        if viol <= tol:
            break
        state.check_budget(alpha, viol)
        obj = state.step(alpha, grad, i, j, viol, obj)
    neg_f = -(y * grad)
    interior = (alpha > 0.0) & (alpha < C)
    if interior.any():
        bias = float(neg_f[interior].mean())
    else:
        bias = float((m + M) / 2.0)
    return _finalize("c", C, spec, X, y, alpha, grad, bias, 1.0, state.iterations)


def _nu_bound(y) -> float:
    n_pos = int((y > 0).sum())
    n_neg = len(y) - n_pos
    return 2.0 * min(n_pos, n_neg) / len(y)


def _nu_initial(y, nu, box):
    """Greedy feasible start: fill each class to a mass of nu / 2."""
    n = len(y)
    alpha = np.zeros(n)
    for sign in (1.0, -1.0):
        remaining = nu / 2.0
        for i in np.nonzero(y == sign)[0]:
            if remaining <= 0.0:
                break
            a = min(box, remaining)
            alpha[i] = a
            remaining -= a
    return alpha


def train_nusvm(X, y, nu: float, kernel: KernelSpec = KernelSpec(),
                config: SolverConfig = SolverConfig(), rows: KernelRowCache = None) -> SvmModel:
    """Fit the nu form. Raises InfeasibleNuError when nu exceeds the class
    balance bound 2 * min(n_pos, n_neg) / n."""
    X, y = _validate_training(X, y)
    if not (0.0 < nu <= 1.0):
        raise DomainError(f"nu must be in (0, 1], got {nu}")
    bound = _nu_bound(y)
    if nu > bound:
        raise InfeasibleNuError(
            f"nu={nu} infeasible for this class balance (bound {bound:.6g})"
        )
    spec = kernel.resolved(X)
    if rows is None:
        rows = KernelRowCache(spec, X, config.cache_size)
    n = X.shape[0]
    box = 1.0 / n
    alpha = _nu_initial(y, nu, box)
    nz = np.nonzero(alpha)[0]
    s = np.zeros(n)
    for t in nz:
        s += (alpha[t] * y[t]) * rows.row(t)
    grad = y * s  # gradient of 0.5 a'Qa at the initial point
    state = _SmoState(rows, y, box, config)
    obj = 0.5 * float(alpha @ grad)
    tol = config.kkt_tolerance
    pos = y > 0
    neg = ~pos
    while True:
        neg_f = -(y * grad)
        m_p, ip, M_p, jp = _masked_extrema(neg_f, pos & (alpha < box), pos & (alpha > 0.0))
        m_n, in_, M_n, jn = _masked_extrema(neg_f, neg & (alpha > 0.0), neg & (alpha < box))
        viol_p = m_p - M_p
        viol_n = m_n - M_n
        viol = max(viol_p, viol_n)
        if viol <= tol:
            break
        state.check_budget(alpha, viol)
        if viol_p >= viol_n:
            i, j, v = ip, jp, viol_p
        else:
            i, j, v = in_, jn, viol_n
        obj = state.step(alpha, grad, i, j, v, obj)
    neg_f = -(y * grad)
    interior = (alpha > 0.0) & (alpha < box)
    s_p = _side_intercept(neg_f, interior & pos, m_p, M_p)
    s_n = _side_intercept(neg_f, interior & neg, m_n, M_n)
    bias = (s_p + s_n) / 2.0
    rho = (s_n - s_p) / 2.0
    return _finalize("nu", nu, spec, X, y, alpha, grad, bias, rho, state.iterations)


def _side_intercept(neg_f, interior_mask, band_hi, band_lo):
    if interior_mask.any():
        return float(neg_f[interior_mask].mean())
    vals = [v for v in (band_hi, band_lo) if np.isfinite(v)]
    return float(np.mean(vals)) if vals else 0.0


def train_svm(formulation: str, X, y, param: float, kernel: KernelSpec = KernelSpec(),
              config: SolverConfig = SolverConfig(), rows: KernelRowCache = None) -> SvmModel:
    if formulation == "c":
        return train_csvm(X, y, param, kernel, config, rows)
    if formulation == "nu":
        return train_nusvm(X, y, param, kernel, config, rows)
    raise DomainError(f"unknown formulation {formulation!r}, expected one of {FORMULATIONS}")


def check_kkt(model: SvmModel, X, y) -> float:
    """Maximum optimality residual of a freshly trained model over its own
    training set. Zero-multiplier points must sit on or outside the margin,
    bound points on or inside it, interior points exactly on it; each
    point's residual is the distance by which its condition is missed, and
    the largest one is returned.
    """
    if model.sv_indices is None:
        raise DomainError(
            "per-point multipliers are unavailable on a model loaded from disk"
        )
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(y)
    box = model.param if model.formulation == "c" else 1.0 / n
    alpha = np.zeros(n)
    alpha[model.sv_indices] = model.dual_coefs * y[model.sv_indices]
    margins = y * decision_function(model, X)
    target = model.rho
    at_zero = alpha == 0.0
    at_box = alpha == box
    res = np.abs(margins - target)
    res = np.where(at_zero, np.maximum(0.0, target - margins), res)
    res = np.where(at_box, np.maximum(0.0, margins - target), res)
    return float(res.max())


# ---------------------------------------------------------------------------
# model file format
# ---------------------------------------------------------------------------

SVMM_MAGIC = b"SVMM"
SVMM_VERSION = 1
_FORM_CODE = {"c": 0, "nu": 1}
_KERNEL_CODE = {k: i for i, k in enumerate(KERNEL_KINDS)}


def save_model(model: SvmModel, path):
    spec = model.kernel
    sv = np.ascontiguousarray(model.support_vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(SVMM_MAGIC)
        fh.write(struct.pack("<I", SVMM_VERSION))
        fh.write(struct.pack("<B", _FORM_CODE[model.formulation]))
        fh.write(struct.pack("<d", model.param))
        fh.write(struct.pack("<B", _KERNEL_CODE[spec.kind]))
        fh.write(struct.pack("<d", spec.gamma if spec.gamma is not None else 0.0))
        fh.write(struct.pack("<d", spec.coef0))
        fh.write(struct.pack("<I", spec.degree))
        fh.write(struct.pack("<II", model.n_sv, sv.shape[1] if model.n_sv else 0))
        fh.write(struct.pack("<dd", model.bias, model.rho))
        fh.write(np.ascontiguousarray(model.dual_coefs, dtype="<f8").tobytes())
        fh.write(sv.tobytes())


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != SVMM_MAGIC:
        raise DataError(f"{path}: not a model file")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != SVMM_VERSION:
        raise DataError(f"{path}: unsupported model version {version}")
    off = 8
    form_code, param = struct.unpack_from("<Bd", data, off)
    off += 9
    kern_code, gamma, coef0, degree = struct.unpack_from("<BddI", data, off)
    off += 21
    n_sv, dim = struct.unpack_from("<II", data, off)
    off += 8
    bias, rho = struct.unpack_from("<dd", data, off)
    off += 16
    forms = {v: k for k, v in _FORM_CODE.items()}
    kerns = {v: k for k, v in _KERNEL_CODE.items()}
    if form_code not in forms:
        raise DataError(f"{path}: unknown formulation code {form_code}")
    if kern_code not in kerns:
        raise DataError(f"{path}: unknown kernel code {kern_code}")
    need = n_sv * 8 + n_sv * dim * 4
    if len(data) - off != need:
        raise DataError(f"{path}: expected {need} payload bytes, got {len(data) - off}")
    coefs = np.frombuffer(data, dtype="<f8", count=n_sv, offset=off).copy()
    off += n_sv * 8
    sv = (
        np.frombuffer(data, dtype="<f4", count=n_sv * dim, offset=off)
        .reshape(n_sv, dim)
        .copy()
    )
    spec = KernelSpec(kerns[kern_code], gamma if gamma > 0 else None, coef0, degree)
    return SvmModel(forms[form_code], param, spec, sv, coefs, bias, rho)
