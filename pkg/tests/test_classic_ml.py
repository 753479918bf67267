import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import gaussian_log_density, svm_decision_loop
from painsig.classic_ml import (
    LdaClassifier,
    StandardScaler,
    SvmClassifier,
    lda_fit,
    lda_predict,
    linear_kernel,
    model_from_json,
    model_to_json,
    rbf_kernel,
    smo,
    svm_fit,
    svm_predict,
)
from painsig.errors import DegenerateClass, DimensionMismatch, NotConverged

XOR_X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
XOR_Y = np.array([0, 0, 1, 1])


def _blobs(n=60, sep=5.0, seed=0, d=2):
    rng = np.random.default_rng(seed)
    shift = np.zeros(d)
    shift[0] = sep
    X = np.vstack([rng.normal(size=(n, d)) - shift, rng.normal(size=(n, d)) + shift])
    return X, np.repeat([0, 1], n)


class TestScaler:
    def test_standardizes(self):
        X = np.random.default_rng(0).normal(3, 7, size=(200, 4))
        Z = StandardScaler().fit_transform(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(Z.std(axis=0), 1, atol=1e-12)

    def test_constant_column_is_finite(self):
        Z = StandardScaler().fit_transform(np.ones((5, 2)))
        assert np.all(np.isfinite(Z))


class TestLda:
    def test_separated_gaussians(self):
        X, y = _blobs(100, 5.0, 1)
        Xt, yt = _blobs(100, 5.0, 2)
        model = lda_fit(X, y)
        # Bayes rule for these two unit Gaussians: sign of the first coordinate
        bayes = (Xt[:, 0] > 0).astype(int)
        np.testing.assert_array_equal(model.predict(Xt), bayes)
        assert np.mean(model.predict(Xt) == yt) == 1.0

    def test_single_class(self):
        with pytest.raises(DegenerateClass):
            lda_fit(np.random.default_rng(0).normal(size=(10, 2)), np.zeros(10))

    def test_class_with_one_sample(self):
        with pytest.raises(DegenerateClass):
            lda_fit(np.arange(8.0).reshape(4, 2), [0, 0, 0, 1])

    @pytest.mark.parametrize("mode", ["pooled", "per_class"])
    def test_scores_match_density_oracle(self, mode):
        rng = np.random.default_rng(5)
        X = np.vstack([rng.normal(m, s, size=(40, 3)) for m, s in [(0, 1), (2, 0.7), (-1, 1.5)]])
        y = np.repeat([0, 1, 2], 40)
        model = lda_fit(X, y, mode)
        pts = rng.normal(0, 2, size=(100, 3))
        for x in pts:
            _, scores = lda_predict(model, x)
            for k in range(3):
                ref = gaussian_log_density(x, model.means[k], model.covariances[k], model.priors[k])
                assert abs(scores[k] - ref) <= 1e-9 * abs(ref)

    def test_mean_predicts_own_class(self):
        X, y = _blobs(50, 3.0, 3)
        model = lda_fit(X, y)
        for k in (0, 1):
            assert lda_predict(model, model.means[k])[0] == k

    def test_tie_goes_to_lowest_class(self):
        X = np.array([[-1.0, 0], [-1, 1], [-1, -1], [1, 0], [1, 1], [1, -1]])
        model = lda_fit(X, [3, 3, 3, 7, 7, 7])
        cls, scores = lda_predict(model, np.array([0.0, 0.3]))
        assert scores[0] == scores[1]
        assert cls == 3

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1e3, 1e3))
    def test_argmax_invariant_to_constant_shift(self, c):
        X, y = _blobs(30, 1.0, 4)
        model = lda_fit(X, y)
        s = model.log_scores(_blobs(30, 1.0, 9)[0])
        np.testing.assert_array_equal(np.argmax(s, axis=1), np.argmax(s + c, axis=1))

    def test_priors_sum_to_one(self):
        model = lda_fit(*_blobs(20, 1.0, 0))
        assert model.priors.sum() == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        model = lda_fit(*_blobs(20, 1.0, 0))
        with pytest.raises(DimensionMismatch):
            lda_predict(model, np.zeros(3))


class TestKernels:
    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 5, elements=st.floats(-100, 100)), st.floats(1e-3, 1e3))
    def test_rbf_self_is_one(self, x, sigma):
        assert rbf_kernel(x, x, sigma)[0, 0] == 1.0

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (2, 3), elements=st.floats(-10, 10)), st.floats(1e-1, 1e2))
    def test_symmetry_and_bounds(self, ab, sigma):
        a, b = ab
        assert rbf_kernel(a, b, sigma)[0, 0] == rbf_kernel(b, a, sigma)[0, 0]
        assert linear_kernel(a, b)[0, 0] == linear_kernel(b, a)[0, 0]
        k = rbf_kernel(a, b, sigma)[0, 0]
        assert 0 <= k <= 1

    def test_wide_sigma_gives_ones(self):
        X = np.random.default_rng(0).normal(size=(20, 4))
        np.testing.assert_allclose(rbf_kernel(X, X, 1e6), 1.0, atol=1e-10)

    def test_linear_is_dot(self):
        assert linear_kernel([1.0, 2.0], [3.0, -4.0])[0, 0] == -5.0


def _separable_by_grid(X, y, n_angles=360, n_offsets=201):
    """Search a grid of lines for one that splits the two classes."""
    lim = np.abs(X).max() * 1.5
    for theta in np.linspace(0, np.pi, n_angles, endpoint=False):
        proj = X @ np.array([math.cos(theta), math.sin(theta)])
        for c in np.linspace(-lim, lim, n_offsets):
            side = proj > c
            if np.all(side == (y == 1)) or np.all(side == (y == 0)):
                return True
    return False


class TestSvm:
    def test_separable_blobs(self):
        X, y = _blobs(30, 3.0, 7)
        assert _separable_by_grid(X, y)
        model = svm_fit(X, y, "linear", C=1.0)
        assert np.mean(model.predict(X) == y) == 1.0

    def test_xor_rbf(self):
        model = svm_fit(XOR_X, XOR_Y, "rbf", C=10.0, sigma=0.5)
        np.testing.assert_array_equal(model.predict(XOR_X), XOR_Y)

    def test_xor_linear_at_most_three_of_four(self):
        # no line classifies all four XOR points: enumerate the sign patterns a line can realise
        assert not _separable_by_grid(XOR_X - 0.5, XOR_Y)
        model = svm_fit(XOR_X, XOR_Y, "linear", C=10.0)
        assert np.mean(model.predict(XOR_X) == XOR_Y) <= 0.75

    def test_matches_dual_evaluation_oracle(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(60, 3))
        y = (X[:, 0] * X[:, 1] > 0).astype(int) + (X[:, 2] > 1).astype(int)
        for kernel in ("linear", "rbf"):
            model = svm_fit(X, y, kernel, C=2.0, sigma=1.3)
            pts = rng.normal(size=(200, 3))
            dec = model.decision_function(pts)
            for i, x in enumerate(pts):
                ref = [svm_decision_loop(m, kernel, model.sigma, x) for m in model.machines]
                np.testing.assert_allclose(dec[i], ref, rtol=1e-10, atol=1e-10)
                assert svm_predict(model, x) == model.classes[int(np.argmax(ref))]

    @pytest.mark.parametrize("kernel", ["linear", "rbf"])
    def test_box_and_equality_constraints(self, kernel):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(80, 2))
        y = np.where(X[:, 0] + 0.5 * rng.normal(size=80) > 0, 1.0, -1.0)
        K = linear_kernel(X, X) if kernel == "linear" else rbf_kernel(X, X, 1.0)
        C = 0.7
        alpha, b, ok, _ = smo(K, y, C, tol=1e-3)
        assert ok
        assert np.all(alpha >= -1e-6) and np.all(alpha <= C + 1e-6)
        assert abs(np.dot(alpha, y)) < 1e-6

    def test_kkt_at_tolerance(self):
        X, y01 = _blobs(40, 1.0, 6)
        y = np.where(y01 == 1, 1.0, -1.0)
        K = rbf_kernel(X, X, 1.0)
        C, tol = 1.0, 1e-3
        alpha, b, ok, _ = smo(K, y, C, tol=tol)
        f = K @ (alpha * y) + b
        margin = y * f
        free = (alpha > 1e-8) & (alpha < C - 1e-8)
        assert np.all(margin[alpha <= 1e-8] >= 1 - 2 * tol)
        assert np.all(margin[alpha >= C - 1e-8] <= 1 + 2 * tol)
        np.testing.assert_allclose(margin[free], 1.0, atol=2 * tol)

    def test_multiclass_ovr(self):
        rng = np.random.default_rng(2)
        centers = np.array([[0, 0], [6, 0], [0, 6], [6, 6], [3, 12]])
        X = np.vstack([rng.normal(c, 0.5, size=(20, 2)) for c in centers])
        y = np.repeat(np.arange(5), 20)
        model = svm_fit(X, y, "rbf", C=1.0)
        assert len(model.machines) == 5
        assert np.mean(model.predict(X) == y) == 1.0

    def test_positive_support_vector_far_from_margin(self):
        X, y = _blobs(30, 4.0, 8)
        model = svm_fit(X, y, "linear")
        assert svm_predict(model, np.array([50.0, 0.0])) == 1

    def test_not_converged_warns(self):
        X, y = _blobs(40, 0.3, 0)
        with pytest.warns(NotConverged):
            model = svm_fit(X, y, "rbf", C=100.0, tol=1e-12, max_passes=1)
        assert not model.converged

    def test_deterministic(self):
        X, y = _blobs(40, 1.0, 1)
        a = svm_fit(X, y, "rbf").decision_function(X)
        b = svm_fit(X, y, "rbf").decision_function(X)
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch(self):
        model = svm_fit(*_blobs(10, 3.0, 0))
        with pytest.raises(DimensionMismatch):
            svm_predict(model, np.zeros(5))

    def test_single_class(self):
        with pytest.raises(DegenerateClass):
            svm_fit(np.zeros((4, 2)), [1, 1, 1, 1])


class TestPersistence:
    @pytest.mark.parametrize("make", [
        lambda X, y: lda_fit(X, y, "per_class"),
        lambda X, y: svm_fit(X, y, "rbf", C=3.0),
        lambda X, y: svm_fit(X, y, "linear"),
    ])
    def test_json_round_trip(self, make):
        X, y = _blobs(25, 1.0, 4)
        model = make(X, y)
        again = model_from_json(model_to_json(model))
        Xt = _blobs(25, 1.0, 5)[0]
        np.testing.assert_array_equal(model.predict(Xt), again.predict(Xt))

    def test_schema_version_checked(self):
        text = model_to_json(lda_fit(*_blobs(10, 1.0, 0))).replace('"schema_version": 1', '"schema_version": 99')
        with pytest.raises(ValueError):
            model_from_json(text)


class TestWrappers:
    @pytest.mark.parametrize("clf", [LdaClassifier(), SvmClassifier("linear"), SvmClassifier("rbf")])
    def test_scale_invariant_with_standardization(self, clf):
        X, y = _blobs(30, 2.0, 2)
        a = clf.fit(X, y).predict(X)
        b = clf.fit(X * [1e4, 1e-3], y).predict(X * [1e4, 1e-3])
        np.testing.assert_array_equal(a, b)

    def test_wrapper_suppresses_not_converged(self):
        X, y = _blobs(40, 0.3, 0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            SvmClassifier("rbf", C=100.0, tol=1e-12, max_passes=1).fit(X, y)
