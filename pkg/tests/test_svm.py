"""Tests for kernels, the SMO solvers, KKT checking, and model files."""

import numpy as np
import pytest
from qp_oracle import (
    csvm_decision,
    oracle_kernel_matrix,
    solve_csvm_dual,
    solve_nusvm_dual,
)

from mammopatch import (
    ConvergenceError,
    DomainError,
    InfeasibleNuError,
    KernelRowCache,
    KernelSpec,
    ShapeError,
    SolverConfig,
    SvmModel,
    check_kkt,
    decision_function,
    kernel_eval,
    load_model,
    predict,
    save_model,
    train_csvm,
    train_nusvm,
    train_svm,
)

TIGHT = SolverConfig(kkt_tolerance=1e-9)

TWO_POINT_X = np.array([[1.0, 0.0], [-1.0, 0.0]])
TWO_POINT_Y = np.array([1.0, -1.0])


def random_problem(seed, kernels=("rbf", "linear", "poly", "sigmoid")):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, 15))
    d = int(rng.integers(2, 5))
    X = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    if (y > 0).all() or (y < 0).all():
        y[0] = -y[0]
    kind = kernels[seed % len(kernels)]
    if kind == "sigmoid":
        spec = KernelSpec("sigmoid", gamma=0.05, coef0=0.0)
    elif kind == "poly":
        spec = KernelSpec("poly", gamma=0.5, coef0=1.0, degree=2)
    elif kind == "rbf":
        spec = KernelSpec("rbf", gamma=0.7)
    else:
        spec = KernelSpec("linear")
    return X, y, spec


class TestKernels:
    def test_reference_values(self):
        assert kernel_eval(KernelSpec("rbf", gamma=2.0), [1.0, 2.0], [1.0, 2.0]) == 1.0
        assert abs(kernel_eval(KernelSpec("rbf", gamma=1.0), [0.0], [1.0]) - np.exp(-1)) < 1e-15
        assert kernel_eval(KernelSpec("linear"), [1.0, 2.0], [3.0, 4.0]) == 11.0
        assert kernel_eval(KernelSpec("poly", gamma=1.0, coef0=1.0, degree=2), [1.0, 0.0], [1.0, 1.0]) == 4.0
        assert kernel_eval(KernelSpec("sigmoid", gamma=1.0), [0.0, 1.0], [1.0, 0.0]) == 0.0

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(40)
        A = rng.standard_normal((3, 4))
        B = rng.standard_normal((5, 4))
        for spec in (
            KernelSpec("rbf", gamma=0.3),
            KernelSpec("linear"),
            KernelSpec("poly", gamma=0.5, coef0=1.0, degree=3),
            KernelSpec("sigmoid", gamma=0.2, coef0=0.1),
        ):
            K = kernel_eval(spec, A, B)
            assert K.shape == (3, 5)
            for i in range(3):
                for j in range(5):
                    assert abs(K[i, j] - kernel_eval(spec, A[i], B[j])) < 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(41)
        A = rng.standard_normal((4, 3))
        spec = KernelSpec("rbf", gamma=0.9)
        np.testing.assert_allclose(
            kernel_eval(spec, A, A),
            oracle_kernel_matrix("rbf", A, A, gamma=0.9),
            atol=1e-12,
        )

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            kernel_eval(KernelSpec("linear"), np.zeros((2, 3)), np.zeros((2, 4)))

    def test_unresolved_gamma_rejected(self):
        with pytest.raises(DomainError):
            kernel_eval(KernelSpec("rbf"), [1.0], [2.0])

    def test_gamma_scale_rule(self):
        rng = np.random.default_rng(42)
        X = rng.standard_normal((10, 4)) * 3.0
        spec = KernelSpec("rbf").resolved(X)
        assert abs(spec.gamma - 1.0 / (4 * X.var())) < 1e-15
        # explicit gamma and linear kernels resolve to themselves
        assert KernelSpec("rbf", gamma=2.0).resolved(X).gamma == 2.0
        assert KernelSpec("linear").resolved(X).gamma is None

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            KernelSpec("cubic")
        with pytest.raises(DomainError):
            KernelSpec("poly", degree=0)
        with pytest.raises(DomainError):
            KernelSpec("rbf", gamma=-1.0)


class TestKernelRowCache:
    def _fixture(self):
        rng = np.random.default_rng(43)
        X = rng.standard_normal((6, 3))
        spec = KernelSpec("rbf", gamma=0.4)
        return X, spec, kernel_eval(spec, X, X)

    def test_rows_match_dense(self):
        X, spec, K = self._fixture()
        for capacity in (None, 0, 2):
            cache = KernelRowCache(spec, X, capacity)
            for i in (0, 3, 5, 3):
                np.testing.assert_allclose(cache.row(i), K[i], atol=1e-15)

    def test_unbounded_cache_reuses_rows(self):
        X, spec, _ = self._fixture()
        cache = KernelRowCache(spec, X)
        cache.row(2), cache.row(2), cache.row(2)
        assert cache.n_computed == 1

    def test_zero_cache_recomputes(self):
        X, spec, _ = self._fixture()
        cache = KernelRowCache(spec, X, capacity=0)
        cache.row(2), cache.row(2)
        assert cache.n_computed == 2

    def test_lru_eviction(self):
        X, spec, _ = self._fixture()
        cache = KernelRowCache(spec, X, capacity=1)
        cache.row(0), cache.row(1), cache.row(0)
        assert cache.n_computed == 3

    def test_from_matrix(self):
        X, spec, K = self._fixture()
        cache = KernelRowCache.from_matrix(K)
        assert len(cache) == 6
        np.testing.assert_array_equal(cache.row(4), K[4])
        np.testing.assert_allclose(cache.diagonal(), np.diag(K), atol=1e-15)
        assert cache.n_computed == 0

    def test_diagonal_shortcuts(self):
        rng = np.random.default_rng(44)
        X = rng.standard_normal((5, 3))
        for spec in (
            KernelSpec("rbf", gamma=0.4),
            KernelSpec("linear"),
            KernelSpec("poly", gamma=0.3, coef0=1.0, degree=2),
            KernelSpec("sigmoid", gamma=0.3, coef0=0.2),
        ):
            cache = KernelRowCache(spec, X)
            np.testing.assert_allclose(
                cache.diagonal(), np.diag(kernel_eval(spec, X, X)), atol=1e-14
            )


class TestTwoPointSolutions:
    def test_c_form_analytic(self):
        model = train_csvm(TWO_POINT_X, TWO_POINT_Y, 1.0, KernelSpec("linear"), TIGHT)
        np.testing.assert_allclose(model.dual_coefs, [0.5, -0.5], atol=1e-12)
        assert abs(model.bias) < 1e-12
        assert model.rho == 1.0
        # decision reduces to f(x) = x1
        assert abs(decision_function(model, np.array([2.0, 0.0])) - 2.0) < 1e-12
        assert abs(decision_function(model, np.array([-3.0, 5.0])) + 3.0) < 1e-12
        assert check_kkt(model, TWO_POINT_X, TWO_POINT_Y) < 1e-9

    def test_nu_form_analytic(self):
        model = train_nusvm(TWO_POINT_X, TWO_POINT_Y, 0.5, KernelSpec("linear"), TIGHT)
        np.testing.assert_allclose(model.dual_coefs, [0.25, -0.25], atol=1e-12)
        assert abs(model.bias) < 1e-12
        assert abs(model.rho - 0.5) < 1e-12
        # the decision boundary is the x1 = 0 line
        assert abs(decision_function(model, np.array([0.0, 7.0]))) < 1e-12
        assert predict(model, np.array([0.5, 0.0])) == 1.0
        assert predict(model, np.array([-0.5, 0.0])) == -1.0


class TestAgainstOracle:
    def test_c_form_objective_and_predictions(self):
        for seed in range(12):
            X, y, spec = random_problem(seed)
            C = [0.1, 1.0, 10.0][seed % 3]
            K = oracle_kernel_matrix(spec.kind, X, X, spec.gamma, spec.coef0, spec.degree)
            _, ref_obj = solve_csvm_dual(K, y, C)
            model = train_csvm(X, y, C, spec, TIGHT)
            assert abs(model.dual_objective - ref_obj) <= 1e-6, (seed, spec.kind)
            rng = np.random.default_rng(1000 + seed)
            X_test = rng.standard_normal((6, X.shape[1]))
            a, _ = solve_csvm_dual(K, y, C)
            ref_scores = csvm_decision(
                spec.kind, X, y, a, C, X_test, spec.gamma, spec.coef0, spec.degree
            )
            got = predict(model, X_test)
            np.testing.assert_array_equal(got, np.where(ref_scores >= 0, 1.0, -1.0))

    def test_nu_form_objective(self):
        for seed in range(8):
            X, y, spec = random_problem(seed, kernels=("rbf", "linear"))
            bound = 2.0 * min((y > 0).sum(), (y < 0).sum()) / len(y)
            nu = 0.5 * bound
            K = oracle_kernel_matrix(spec.kind, X, X, spec.gamma, spec.coef0, spec.degree)
            _, ref_obj = solve_nusvm_dual(K, y, nu)
            model = train_nusvm(X, y, nu, spec, TIGHT)
            assert abs(model.dual_objective - ref_obj) <= 1e-6, seed

    def test_kkt_residual_within_tolerance(self):
        for seed in range(6):
            X, y, spec = random_problem(seed)
            model = train_csvm(X, y, 1.0, spec, SolverConfig(kkt_tolerance=1e-4))
            assert check_kkt(model, X, y) <= 1e-3


class TestNuProperties:
    def test_fraction_bounds(self):
        for seed in range(25):
            X, y, spec = random_problem(100 + seed, kernels=("rbf", "linear"))
            n = len(y)
            bound = 2.0 * min((y > 0).sum(), (y < 0).sum()) / n
            rng = np.random.default_rng(seed)
            nu = float(rng.uniform(0.1, 0.9)) * bound
            model = train_nusvm(X, y, nu, spec, SolverConfig(kkt_tolerance=1e-8))
            margins = y * decision_function(model, X)
            # points on the margin sit within solver-tolerance noise of rho;
            # only points clearly inside it count as margin errors
            margin_errors = float((margins < model.rho - 1e-6).sum()) / n
            sv_fraction = model.n_sv / n
            assert margin_errors <= nu + 1e-9, seed
            assert nu <= sv_fraction + 1e-9, seed

    def test_infeasible_nu_raises(self):
        X = np.vstack([np.ones((2, 2)), -np.ones((8, 2))])
        y = np.array([1.0] * 2 + [-1.0] * 8)
        # bound = 2 * 2 / 10 = 0.4
        with pytest.raises(InfeasibleNuError):
            train_nusvm(X, y, 0.5, KernelSpec("linear"))
        train_nusvm(X, y, 0.4, KernelSpec("linear"), TIGHT)  # at the bound: feasible

    def test_nu_outside_unit_interval_rejected(self):
        with pytest.raises(DomainError):
            train_nusvm(TWO_POINT_X, TWO_POINT_Y, 0.0)
        with pytest.raises(DomainError):
            train_nusvm(TWO_POINT_X, TWO_POINT_Y, 1.5)

    def test_saturated_nu_balanced(self):
        rng = np.random.default_rng(45)
        X = rng.standard_normal((8, 2))
        y = np.array([1.0, -1.0] * 4)
        model = train_nusvm(X, y, 1.0, KernelSpec("rbf", gamma=0.5), TIGHT)
        assert model.n_sv == 8
        np.testing.assert_allclose(np.abs(model.dual_coefs), 1.0 / 8.0, atol=1e-12)


class TestSolverBehavior:
    def test_dual_coefs_balance(self):
        for seed in range(6):
            X, y, spec = random_problem(200 + seed)
            model = train_csvm(X, y, 1.0, spec, TIGHT)
            assert abs(model.dual_coefs.sum()) < 1e-6

    def test_row_permutation_invariance(self):
        X, y, spec = random_problem(7)
        perm = np.random.default_rng(46).permutation(len(y))
        a = train_csvm(X, y, 1.0, spec, TIGHT)
        b = train_csvm(X[perm], y[perm], 1.0, spec, TIGHT)
        grid = np.random.default_rng(47).standard_normal((10, X.shape[1]))
        np.testing.assert_allclose(
            decision_function(a, grid), decision_function(b, grid), atol=1e-8
        )

    def test_cache_size_does_not_change_result(self):
        X, y, spec = random_problem(8)
        zero = train_csvm(X, y, 1.0, spec, SolverConfig(kkt_tolerance=1e-9, cache_size=0))
        full = train_csvm(X, y, 1.0, spec, SolverConfig(kkt_tolerance=1e-9, cache_size=None))
        np.testing.assert_array_equal(zero.dual_coefs, full.dual_coefs)
        assert zero.bias == full.bias

    def test_shared_matrix_matches_direct(self):
        X, y, spec = random_problem(9)
        rows = KernelRowCache.from_matrix(kernel_eval(spec, X, X))
        shared = train_csvm(X, y, 1.0, spec, TIGHT, rows=rows)
        direct = train_csvm(X, y, 1.0, spec, TIGHT)
        np.testing.assert_allclose(shared.dual_coefs, direct.dual_coefs, atol=1e-9)
        assert abs(shared.bias - direct.bias) < 1e-9

    def test_conflicting_duplicate_points_converge(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [-1.0, -1.0]])
        y = np.array([1.0, -1.0, 1.0, -1.0])
        model = train_csvm(X, y, 1.0, KernelSpec("rbf", gamma=1.0), TIGHT)
        assert model.iterations is not None

    def test_debug_mode_checks_descent(self):
        X, y, spec = random_problem(10)
        model = train_csvm(X, y, 1.0, spec, SolverConfig(kkt_tolerance=1e-9, debug=True))
        assert model.dual_objective is not None

    def test_iteration_budget_exhaustion(self):
        X, y, spec = random_problem(11)
        with pytest.raises(ConvergenceError) as exc:
            train_csvm(X, y, 1.0, spec, SolverConfig(kkt_tolerance=1e-12, max_iterations=1))
        assert exc.value.alpha.shape == (len(y),)
        assert exc.value.residual > 0

    def test_dispatcher(self):
        a = train_svm("c", TWO_POINT_X, TWO_POINT_Y, 1.0, KernelSpec("linear"), TIGHT)
        b = train_svm("nu", TWO_POINT_X, TWO_POINT_Y, 0.5, KernelSpec("linear"), TIGHT)
        assert a.formulation == "c" and b.formulation == "nu"
        with pytest.raises(DomainError):
            train_svm("epsilon", TWO_POINT_X, TWO_POINT_Y, 1.0)

    def test_input_validation(self):
        with pytest.raises(DomainError):
            train_csvm(TWO_POINT_X, TWO_POINT_Y, 0.0)
        with pytest.raises(DomainError):
            train_csvm(TWO_POINT_X, np.array([1.0, 1.0]), 1.0)
        with pytest.raises(DomainError):
            train_csvm(TWO_POINT_X, np.array([1.0, 2.0]), 1.0)
        with pytest.raises(ShapeError):
            train_csvm(np.zeros((1, 2)), np.array([1.0]), 1.0)

    def test_c_nu_correspondence(self):
        rng = np.random.default_rng(48)
        X = np.vstack(
            [rng.standard_normal((10, 2)) + [2, 0], rng.standard_normal((10, 2)) - [2, 0]]
        )
        y = np.array([1.0] * 10 + [-1.0] * 10)
        spec = KernelSpec("rbf", gamma=0.5)
        grid = rng.standard_normal((30, 2)) * 2.0
        nu_model = train_nusvm(X, y, 0.4, spec, TIGHT)
        nu_labels = predict(nu_model, grid)
        agree = False
        for k in range(-10, 11):
            c_model = train_csvm(X, y, 2.0**k, spec, TIGHT)
            if np.array_equal(predict(c_model, grid), nu_labels):
                agree = True
                break
        assert agree


class TestCheckKkt:
    def test_perturbed_model_fails(self):
        X, y, spec = random_problem(12)
        model = train_csvm(X, y, 1.0, spec, TIGHT)
        assert check_kkt(model, X, y) <= 1e-6
        bad = SvmModel(
            model.formulation,
            model.param,
            model.kernel,
            model.support_vectors,
            model.dual_coefs,
            model.bias + 0.5,
            model.rho,
            sv_indices=model.sv_indices,
        )
        assert check_kkt(bad, X, y) > 0.1

    def test_loaded_model_rejected(self, tmp_path):
        model = train_csvm(TWO_POINT_X, TWO_POINT_Y, 1.0, KernelSpec("linear"), TIGHT)
        path = tmp_path / "m.svmm"
        save_model(model, path)
        back = load_model(path)
        with pytest.raises(DomainError):
            check_kkt(back, TWO_POINT_X, TWO_POINT_Y)


class TestModelFile:
    def test_roundtrip_preserves_decisions_exactly(self, tmp_path):
        for seed in (13, 14):
            X, y, spec = random_problem(seed)
            model = train_csvm(X, y, 1.0, spec, TIGHT)
            path = tmp_path / f"m{seed}.svmm"
            save_model(model, path)
            back = load_model(path)
            assert back.formulation == model.formulation
            assert back.param == model.param
            assert back.kernel == model.kernel
            assert back.bias == model.bias
            assert back.rho == model.rho
            assert back.sv_indices is None
            grid = np.random.default_rng(seed).standard_normal((20, X.shape[1]))
            np.testing.assert_array_equal(
                decision_function(back, grid), decision_function(model, grid)
            )

    def test_nu_roundtrip(self, tmp_path):
        model = train_nusvm(TWO_POINT_X, TWO_POINT_Y, 0.5, KernelSpec("linear"), TIGHT)
        path = tmp_path / "nu.svmm"
        save_model(model, path)
        back = load_model(path)
        assert back.formulation == "nu"
        assert back.rho == model.rho
        assert back.kernel.gamma is None  # linear gamma stays unresolved

    def test_poly_parameters_roundtrip(self, tmp_path):
        spec = KernelSpec("poly", gamma=0.25, coef0=1.5, degree=4)
        rng = np.random.default_rng(49)
        X = rng.standard_normal((8, 3))
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        model = train_csvm(X, y, 1.0, spec, TIGHT)
        path = tmp_path / "p.svmm"
        save_model(model, path)
        back = load_model(path)
        assert back.kernel == spec

    def test_bad_files_rejected(self, tmp_path):
        from mammopatch import DataError

        path = tmp_path / "junk.svmm"
        path.write_bytes(b"JUNK" + bytes(40))
        with pytest.raises(DataError):
            load_model(path)
        model = train_csvm(TWO_POINT_X, TWO_POINT_Y, 1.0, KernelSpec("linear"), TIGHT)
        good = tmp_path / "good.svmm"
        save_model(model, good)
        data = good.read_bytes()
        (tmp_path / "short.svmm").write_bytes(data[:-5])
        with pytest.raises(DataError):
            load_model(tmp_path / "short.svmm")
        bad_version = data[:4] + (99).to_bytes(4, "little") + data[8:]
        (tmp_path / "vers.svmm").write_bytes(bad_version)
        with pytest.raises(DataError):
            load_model(tmp_path / "vers.svmm")
