"""Independent projected-gradient oracle for the SVM dual problems.

Deliberately shares no code with the package solver: kernels are computed
with direct per-pair formulas, and the dual is minimized by accelerated
projected gradient descent (FISTA with adaptive restart) where projection
onto the feasible set is done by bisection on the equality multiplier.
Run to very high precision, it provides reference objectives and
reference decision functions for small problems.
"""

import numpy as np


def oracle_kernel_matrix(kind, X, Z, gamma=None, coef0=0.0, degree=3):
    """Per-pair kernel evaluation with explicit loops."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    K = np.empty((X.shape[0], Z.shape[0]))
    for i in range(X.shape[0]):
        for j in range(Z.shape[0]):
            if kind == "linear":
                K[i, j] = float(np.dot(X[i], Z[j]))
            elif kind == "rbf":
                d = X[i] - Z[j]
                K[i, j] = np.exp(-gamma * float(np.dot(d, d)))
            elif kind == "poly":
                K[i, j] = (gamma * float(np.dot(X[i], Z[j])) + coef0) ** degree
            elif kind == "sigmoid":
                K[i, j] = np.tanh(gamma * float(np.dot(X[i], Z[j])) + coef0)
            else:
                raise ValueError(kind)
    return K


def _project_box_hyperplane(v, y, lo, hi):
    """Euclidean projection onto {lo <= a <= hi, y.a = 0} by bisection on
    the multiplier of the equality constraint."""
    span = float(np.max(np.abs(v))) + float(hi) + 1.0
    lam_lo, lam_hi = -span, span

    def balance(lam):
        return float(y @ np.clip(v + lam * y, lo, hi))

    for _ in range(80):
        mid = 0.5 * (lam_lo + lam_hi)
        if balance(mid) > 0.0:
            lam_hi = mid
        else:
            lam_lo = mid
    return np.clip(v + 0.5 * (lam_lo + lam_hi) * y, lo, hi)


def _project_box_sum(v, lo, hi, total):
    """Euclidean projection onto {lo <= a <= hi, sum(a) = total}."""
    span = float(np.max(np.abs(v))) + float(hi) + abs(total) + 1.0
    mu_lo, mu_hi = -span, span
    for _ in range(80):
        mid = 0.5 * (mu_lo + mu_hi)
        if float(np.sum(np.clip(v + mid, lo, hi))) > total:
            mu_hi = mid
        else:
            mu_lo = mid
    return np.clip(v + 0.5 * (mu_lo + mu_hi), lo, hi)


def _fista(grad_fn, project, a0, L, max_iter=400_000, tol=1e-13):
    """Accelerated projected gradient with gradient-based adaptive restart."""
    a = a0.copy()
    z = a0.copy()
    t = 1.0
    for _ in range(max_iter):
        g = grad_fn(z)
        a_new = project(z - g / L)
        if float(grad_fn(z) @ (a_new - a)) > 0.0:
            # restart the momentum sequence
            t = 1.0
            z = a.copy()
            g = grad_fn(z)
            a_new = project(z - g / L)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = a_new + ((t - 1.0) / t_new) * (a_new - a)
        step = float(np.max(np.abs(a_new - a)))
        a = a_new
        t = t_new
        if step < tol:
            break
    return a


def solve_csvm_dual(K, y, C, tol=1e-13):
    """min 0.5 a'Qa - sum(a) over {0 <= a <= C, y.a = 0}; Q = yy' * K."""
    y = np.asarray(y, dtype=np.float64)
    Q = (y[:, None] * y[None, :]) * K
    L = max(float(np.linalg.eigvalsh(Q)[-1]), 1e-9)

    def grad(a):
        return Q @ a - 1.0

    def project(v):
        return _project_box_hyperplane(v, y, 0.0, C)

    a = _fista(grad, project, project(np.zeros(len(y))), L, tol=tol)
    obj = 0.5 * float(a @ (Q @ a)) - float(a.sum())
    return a, obj


def solve_nusvm_dual(K, y, nu, tol=1e-13):
    """min 0.5 a'Qa over {0 <= a <= 1/n, y.a = 0, sum(a) = nu}.

    The two equality constraints fix each class's mass at nu/2, so the
    projection decouples into two per-class box-with-sum projections.
    """
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    box = 1.0 / n
    pos = y > 0
    neg = ~pos
    Q = (y[:, None] * y[None, :]) * K
    L = max(float(np.linalg.eigvalsh(Q)[-1]), 1e-9)

    def grad(a):
        return Q @ a

    def project(v):
        out = np.empty_like(v)
        out[pos] = _project_box_sum(v[pos], 0.0, box, nu / 2.0)
        out[neg] = _project_box_sum(v[neg], 0.0, box, nu / 2.0)
        return out

    a = _fista(grad, project, project(np.full(n, nu / n)), L, tol=tol)
    obj = 0.5 * float(a @ (Q @ a))
    return a, obj


def csvm_bias(K, y, a, C):
    """Bias from KKT-interior points, or the feasibility-band midpoint."""
    y = np.asarray(y, dtype=np.float64)
    Q = (y[:, None] * y[None, :]) * K
    neg_f = -(y * (Q @ a - 1.0))
    eps = 1e-8 * max(C, 1.0)
    interior = (a > eps) & (a < C - eps)
    if interior.any():
        return float(neg_f[interior].mean())
    up = ((a < C - eps) & (y > 0)) | ((a > eps) & (y < 0))
    low = ((a < C - eps) & (y < 0)) | ((a > eps) & (y > 0))
    hi = float(neg_f[up].max()) if up.any() else 0.0
    lo = float(neg_f[low].min()) if low.any() else 0.0
    return 0.5 * (hi + lo)


def csvm_decision(kind, X_train, y, a, C, X_test, gamma=None, coef0=0.0, degree=3):
    K = oracle_kernel_matrix(kind, X_train, X_train, gamma, coef0, degree)
    b = csvm_bias(K, y, a, C)
    Kt = oracle_kernel_matrix(kind, X_test, X_train, gamma, coef0, degree)
    return Kt @ (a * np.asarray(y, dtype=np.float64)) + b
