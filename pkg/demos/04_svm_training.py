"""Train both SVM forms on a toy problem, inspect the solutions, and
round-trip a model through its binary file format."""

import tempfile
from pathlib import Path

import numpy as np

from mammopatch import (
    InfeasibleNuError,
    KernelSpec,
    SolverConfig,
    check_kkt,
    decision_function,
    load_model,
    predict,
    save_model,
    train_csvm,
    train_nusvm,
)

rng = np.random.default_rng(5)
n = 40
X = np.vstack([rng.standard_normal((n // 2, 2)) + [1.6, 0.0],
               rng.standard_normal((n // 2, 2)) - [1.6, 0.0]])
y = np.array([1.0] * (n // 2) + [-1.0] * (n // 2))

# C form: the penalty weight trades margin width against violations.
kernel = KernelSpec("rbf", gamma=0.5)
for C in (0.1, 10.0):
    model = train_csvm(X, y, C, kernel)
    acc = float(np.mean(predict(model, X) == y))
    print(f"C={C:<5g} support vectors {model.n_sv:2d}/{n}  "
          f"train accuracy {acc:.2f}  KKT residual {check_kkt(model, X, y):.1e}")

# nu form: nu lower-bounds the support-vector fraction and upper-bounds
# the margin-error fraction. A tight solve keeps margin-sitting points
# from being miscounted as errors.
print()
tight = SolverConfig(kkt_tolerance=1e-8)
for nu in (0.2, 0.5, 0.8):
    model = train_nusvm(X, y, nu, kernel, tight)
    margins = y * decision_function(model, X)
    errors = int(np.sum(margins < model.rho - 1e-6))
    print(f"nu={nu:<4g} margin errors {errors / n:4.2f} <= nu <= "
          f"SV fraction {model.n_sv / n:4.2f}  rho {model.rho:.3f}")

# nu beyond twice the minority share of the data is infeasible.
y_skew = y.copy()
y_skew[: n // 2 - 4] = -1.0  # 4 positives against 36 negatives
try:
    train_nusvm(X, y_skew, 0.5, kernel)
except InfeasibleNuError as exc:
    print(f"\nskewed labels: {exc}")

# Models survive a file round trip with identical decisions.
model = train_csvm(X, y, 1.0, kernel)
with tempfile.TemporaryDirectory() as td:
    path = Path(td) / "toy.svmm"
    save_model(model, path)
    back = load_model(path)
    same = np.array_equal(decision_function(model, X),
                          decision_function(back, X))
print(f"\nsaved and reloaded: decision values identical: {same}")
