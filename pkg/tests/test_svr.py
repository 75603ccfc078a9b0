import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kinpred.errors import ConvergenceError, DataError, InvalidInputError, InvalidParameterError
from kinpred.svr import (
    SmoTrace,
    SvrModel,
    default_gamma,
    fit,
    grid_search,
    predict,
    rbf_kernel,
    rbf_matrix,
)

vec3 = arrays(float, 3, elements=st.floats(-5, 5))


def sin_data(n=200):
    x = np.linspace(0, 2 * np.pi, n)
    return x[:, None], np.sin(x)


def noisy_data(seed=0, n=80, d=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = 3 * np.sin(X[:, 0]) + X[:, 1] ** 2 + 0.3 * rng.standard_normal(n)
    return X, y


class TestKernel:
    @given(vec3, st.floats(0.01, 10))
    def test_self_is_one(self, x, g):
        assert rbf_kernel(x, x, g) == 1.0

    def test_unit_distance(self):
        assert rbf_kernel([0, 0], [1, 0], 1.0) == pytest.approx(0.367879, abs=1e-6)

    @given(vec3, vec3, st.floats(0.01, 10))
    def test_symmetric(self, x, y, g):
        assert rbf_kernel(x, y, g) == rbf_kernel(y, x, g)

    def test_width_mismatch(self):
        with pytest.raises(InvalidInputError):
            rbf_kernel([1, 2], [1, 2, 3], 1.0)

    def test_gamma_positive(self):
        with pytest.raises(InvalidParameterError):
            rbf_kernel([1], [2], 0.0)

    def test_matrix_matches_scalar(self, rng):
        A, B = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
        K = rbf_matrix(A, B, 0.3)
        for i in range(4):
            for j in range(5):
                assert K[i, j] == pytest.approx(rbf_kernel(A[i], B[j], 0.3), rel=1e-12)

    def test_default_gamma(self):
        X = np.array([[0.0, 2.0], [2.0, 0.0]])
        assert default_gamma(X) == pytest.approx(1 / (2 * 1.0))


class TestFit:
    def test_constant_labels_inside_tube(self, rng):
        X = rng.standard_normal((40, 2))
        m = fit(X, np.full(40, 4.2), epsilon=0.1)
        p = predict(m, X)
        assert np.all(np.abs(p - 4.2) <= 0.1 + 1e-9)

    def test_sine_fit(self):
        X, y = sin_data()
        m = fit(X, y, C=10, gamma=1.0, epsilon=0.01)
        assert np.sqrt(np.mean((predict(m, X) - y) ** 2)) < 0.05

    def test_dual_objective_non_decreasing(self):
        X, y = noisy_data()
        tr = SmoTrace()
        fit(X, y, C=10, epsilon=0.2, trace=tr)
        obj = np.array(tr.objective)
        assert len(obj) == tr.iterations + 1 > 10
        assert np.all(np.diff(obj) >= -1e-9 * np.maximum(1, np.abs(obj[1:])))

    @pytest.mark.parametrize("seed", range(3))
    def test_kkt_and_box(self, seed):
        X, y = noisy_data(seed)
        tol = 1e-3
        m = fit(X, y, C=5.0, epsilon=0.3, tol=tol)
        assert np.all(np.abs(m.dual_coefs) <= m.C + 1e-12)
        assert abs(m.dual_coefs.sum()) <= tol
        assert m.kkt_residual <= tol
        free = (np.abs(m.dual_coefs) > 1e-8) & (np.abs(m.dual_coefs) < m.C - 1e-8)
        assert free.any()
        rows = [int(np.flatnonzero((X == sv).all(axis=1))[0]) for sv in m.support_vectors[free]]
        f = predict(m, X[rows])
        signed_eps = np.where(m.dual_coefs[free] > 0, -m.epsilon, m.epsilon)
        assert np.all(np.abs(f - y[rows] - signed_eps) <= tol)

    def test_only_support_vectors_stored(self):
        X, y = noisy_data()
        m = fit(X, y, epsilon=0.5)
        assert np.all(m.dual_coefs != 0)
        assert 0 < len(m.dual_coefs) < len(X)

    def test_permutation_invariance(self, rng):
        X, y = noisy_data(1)
        perm = rng.permutation(len(X))
        a = fit(X, y, C=10, epsilon=0.3, tol=1e-6)
        b = fit(X[perm], y[perm], C=10, epsilon=0.3, tol=1e-6)
        Xt = rng.standard_normal((30, 3))
        np.testing.assert_allclose(predict(a, Xt), predict(b, Xt), atol=1e-4)

    def test_non_convergence_reports_residual(self):
        X, y = noisy_data()
        with pytest.raises(ConvergenceError) as exc:
            fit(X, y, tol=1e-9, max_passes=0)
        assert exc.value.residual > 1e-9

    @pytest.mark.parametrize("kw", [{"C": 0}, {"epsilon": -1}, {"gamma": -1.0}, {"tol": 0}])
    def test_bad_hyperparameters(self, kw):
        X, y = noisy_data()
        with pytest.raises(InvalidParameterError):
            fit(X, y, **kw)

    def test_too_few_samples(self):
        with pytest.raises(InvalidInputError):
            fit(np.zeros((1, 2)), np.zeros(1))


class TestPredict:
    def test_single_support_vector(self):
        s = np.array([1.0, 2.0])
        m = SvrModel(s[None], np.array([1.0]), 0.0, 0.5, 10.0, 0.1)
        assert predict(m, s) == 1.0

    def test_far_point_gives_bias(self):
        X, y = noisy_data()
        m = fit(X, y)
        assert predict(m, np.full(3, 1e4)) == pytest.approx(m.bias, abs=1e-12)

    def test_batch_matches_single(self):
        X, y = noisy_data()
        m = fit(X, y)
        batch = predict(m, X[:5])
        assert [predict(m, x) for x in X[:5]] == pytest.approx(list(batch), abs=1e-12)

    def test_width_mismatch(self):
        X, y = noisy_data()
        with pytest.raises(InvalidInputError):
            predict(fit(X, y), np.zeros(4))

    def test_save_load(self, tmp_path):
        X, y = noisy_data()
        m = fit(X, y)
        m.save(tmp_path / "m.json")
        back = SvrModel.load(tmp_path / "m.json")
        np.testing.assert_array_equal(predict(back, X), predict(m, X))

    def test_load_rejects_foreign_document(self, tmp_path):
        (tmp_path / "m.json").write_text('{"format": "other"}')
        with pytest.raises(DataError):
            SvrModel.load(tmp_path / "m.json")


@settings(max_examples=10)
@given(st.integers(0, 2 ** 16))
def test_sum_of_coefficients_vanishes(seed):
    X, y = noisy_data(seed, n=30)
    m = fit(X, y, C=3.0, epsilon=0.2, tol=1e-4)
    assert abs(m.dual_coefs.sum()) <= 1e-4


def test_grid_search_returns_best_validation_model():
    X, y = noisy_data(0, n=120)
    m = grid_search(X[:90], y[:90], X[90:], y[90:], Cs=(1.0, 10.0), gamma_factors=(1.0,))
    g0 = default_gamma(X[:90])
    errs = [np.sqrt(np.mean((predict(fit(X[:90], y[:90], C=C, gamma=g0), X[90:]) - y[90:]) ** 2))
            for C in (1.0, 10.0)]
    assert m.C == (1.0, 10.0)[int(np.argmin(errs))]
