"""Rank features with a randomized tree ensemble and keep the smallest
prefix that captures 95 percent of the total importance."""

import numpy as np

from mammopatch import (
    EnsembleConfig,
    FeatureMatrix,
    fit_ensemble,
    project,
    select_cumulative,
)

# Ten features, but only the first three carry any class signal; the
# rest are pure noise. Importances should concentrate on the first three.
rng = np.random.default_rng(7)
n = 120
y = np.array([1.0] * (n // 2) + [-1.0] * (n // 2))
X = rng.standard_normal((n, 10))
X[:, 0] += 2.2 * y
X[:, 1] += 1.4 * y
X[:, 2] += 0.7 * y

ensemble = fit_ensemble(X, (y > 0).astype(int),
                        EnsembleConfig(n_trees=80, seed=3))
imp = ensemble.importances
order = np.argsort(imp)[::-1]
print("mean impurity-decrease importances:")
for j in order:
    bar = "#" * int(round(imp[j] * 60))
    print(f"  feature {j}: {imp[j]:.4f} {bar}")

selection = select_cumulative(imp, 0.95)
print(f"\nkept {len(selection.indices)} of {X.shape[1]} features "
      f"(captured {imp[selection.indices].sum():.4f} of the total)")
print("kept, in rank order:", [int(j) for j in selection.indices])

# project() reorders the columns of a feature matrix accordingly.
fm = FeatureMatrix(X.astype(np.float32), ["mass" if v > 0 else "non-mass" for v in y],
                   [f"s{i}" for i in range(n)], [1] * n, [1] * n,
                   ["original"] * n)
reduced = project(fm, selection)
print(f"projected matrix shape: {reduced.features.shape}")
