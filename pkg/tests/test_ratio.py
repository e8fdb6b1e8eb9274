import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from cond2st.core import DimensionMismatch, make_rng
from cond2st.kernels import KernelSpec, gram
from cond2st.ratio import (
    DensityRatioModel,
    Diverged,
    estimate_ratio,
    fit_klr,
    fit_ll,
    klr_gradient,
    klr_objective,
    predict_ratio,
    ratio_from_eta,
    ratio_mse,
)
from cond2st.synth import ScenarioConfig, draw_population, oracle_ratio


def brute_logistic(X, t, ridge):
    """Independent minimizer of the ridge-penalized logistic NLL (slopes only)."""
    A = np.column_stack([np.ones(len(t)), X])

    def f(b):
        th = A @ b
        return np.sum(np.logaddexp(0, th) - t * th) + 0.5 * ridge * b[1:] @ b[1:]

    def g(b):
        r = 1 / (1 + np.exp(-(A @ b))) - t
        out = A.T @ r
        out[1:] += ridge * b[1:]
        return out

    def h(b):
        e = 1 / (1 + np.exp(-(A @ b)))
        H = (A * (e * (1 - e))[:, None]).T @ A
        H[1:, 1:] += ridge * np.eye(A.shape[1] - 1)
        return H

    res = minimize(f, np.zeros(A.shape[1]), jac=g, hess=h, method="trust-exact", options={"gtol": 1e-13})
    return res.x


class TestFitLL:
    def test_one_dim_toy(self):
        X = np.array([[-1.0], [-1.0], [1.0], [1.0]])
        t = np.array([0, 0, 1, 1])
        model = fit_ll(X, t, ridge=0.1, tol=1e-12)
        np.testing.assert_allclose(model.coefficients, brute_logistic(X, t, 0.1), atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(4, 8), p=st.integers(1, 3), seed=st.integers(0, 10_000), ridge=st.sampled_from([1e-3, 0.1, 1.0]))
    def test_matches_brute_force(self, n, p, seed, ridge):
        g = np.random.default_rng(seed)
        X = g.standard_normal((n, p))
        t = np.r_[np.zeros(n // 2), np.ones(n - n // 2)]
        g.shuffle(t)
        model = fit_ll(X, t, ridge=ridge, tol=1e-12)
        np.testing.assert_allclose(model.coefficients, brute_logistic(X, t, ridge), atol=1e-6)

    def test_stationarity(self, rng):
        X = rng.standard_normal((200, 4))
        t = (X[:, 0] + rng.standard_normal(200) > 0).astype(float)
        model = fit_ll(X, t)
        A = np.column_stack([np.ones(200), X])
        grad = A.T @ (1 / (1 + np.exp(-(A @ model.coefficients))) - t)
        assert np.abs(grad).max() <= 1e-8
        assert model.diagnostics["grad_norm"] <= 1e-8
        assert 1 <= model.diagnostics["n_iter"] <= 100

    def test_indistinguishable_classes(self, rng):
        X = rng.standard_normal((20000, 2))
        t = np.r_[np.zeros(10000), np.ones(10000)]
        model = fit_ll(X, t)
        probe = rng.standard_normal((50, 2))
        np.testing.assert_allclose(model.eta(probe), 0.5, atol=0.03)
        np.testing.assert_allclose(model(probe), 1.0, atol=0.12)

    def test_prior_correction(self, rng):
        X = rng.standard_normal((300, 2))
        t = np.r_[np.zeros(200), np.ones(100)]
        assert fit_ll(X, t).prior_correction == 2.0

    def test_separable_diverges(self):
        X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        with pytest.raises(Diverged):
            fit_ll(X, [0, 0, 1, 1])

    def test_separable_with_ridge(self):
        model = fit_ll(np.array([[-2.0], [-1.0], [1.0], [2.0]]), [0, 0, 1, 1], ridge=1e-2)
        assert np.all(np.isfinite(model.coefficients))

    def test_duplicate_columns_jitter(self, rng):
        x = rng.standard_normal((50, 1))
        X = np.hstack([x, x])
        t = (x[:, 0] + rng.standard_normal(50) > 0).astype(float)
        model = fit_ll(X, t, ridge=0.0)
        assert np.all(np.isfinite(model.coefficients))
        single = fit_ll(x, t)
        np.testing.assert_allclose(model.decision(X), single.decision(x), atol=1e-6)

    @pytest.mark.parametrize("labels", [[0, 0, 0, 0], [1, 1, 1, 1], [0, 2, 1, 0]])
    def test_bad_labels(self, labels):
        with pytest.raises(ValueError):
            fit_ll(np.arange(4.0)[:, None], labels)


class TestFitKLR:
    def test_descent_and_stationarity(self, rng):
        X = rng.standard_normal((60, 3))
        t = (X[:, 0] + 0.5 * rng.standard_normal(60) > 0).astype(float)
        spec = KernelSpec(2.0)
        model = fit_klr(X, t, kernel=spec, lam=0.05)
        K = gram(spec, X)
        assert klr_objective(K, t, model.coefficients, 0.05) <= klr_objective(K, t, np.zeros(61), 0.05)
        assert np.abs(klr_gradient(K, t, model.coefficients, 0.05)).max() <= 1e-6

    def test_gradient_matches_finite_differences(self, rng):
        X = rng.standard_normal((8, 2))
        t = np.array([0, 1, 0, 1, 1, 0, 0, 1], dtype=float)
        K = gram(KernelSpec(1.0), X)
        coef = rng.standard_normal(9) * 0.3
        h = 1e-6
        fd = np.array([
            (klr_objective(K, t, coef + h * e, 0.2) - klr_objective(K, t, coef - h * e, 0.2)) / (2 * h)
            for e in np.eye(9)
        ])
        np.testing.assert_allclose(klr_gradient(K, t, coef, 0.2), fd, atol=1e-6)

    def test_default_hyperparameters(self, rng):
        X = rng.standard_normal((80, 10))
        t = np.r_[np.zeros(40), np.ones(40)]
        model = fit_klr(X, t)
        assert model.kernel.bandwidth_sq == 200.0
        assert model.diagnostics["objective"] <= model.diagnostics["objective_at_zero"]

    def test_equal_marginals_near_one(self):
        cfg = ScenarioConfig("S1", "B")
        g = make_rng(21, 0)
        a, _ = draw_population(cfg, 1, 500, g)
        b, _ = draw_population(cfg, 1, 500, g)
        held, _ = draw_population(cfg, 1, 200, g)
        model = estimate_ratio(a, b, "KLR")
        # pointwise noise at n = 500 is too large for a sup-norm bound
        assert np.abs(model(held) - 1.0).mean() < 0.2

    def test_huge_penalty_gives_prior(self, rng):
        X = rng.standard_normal((40, 2))
        t = np.r_[np.zeros(20), np.ones(20)]
        t[:5] = 1
        t[20:25] = 0
        model = fit_klr(X, t, kernel=KernelSpec(1.0), lam=1e8)
        np.testing.assert_allclose(model(rng.standard_normal((10, 2))), 1.0, atol=1e-4)

    def test_lambda_positive(self):
        with pytest.raises(ValueError):
            fit_klr(np.zeros((4, 1)), [0, 1, 0, 1], lam=0.0)


class TestPredict:
    def _model(self, coef, clip=(0.0, 100.0), prior=1.0):
        return DensityRatioModel("LL", np.asarray(coef, float), prior, clip)

    def test_half_probability_is_one(self):
        assert predict_ratio(self._model([0.0, 0.0]), np.array([3.0])) == 1.0

    def test_clip_high(self):
        assert predict_ratio(self._model([50.0, 0.0]), np.array([0.0])) == 100.0

    def test_vector_input(self):
        out = predict_ratio(self._model([0.0, 1.0]), np.array([[0.0], [np.log(2.0)]]))
        np.testing.assert_allclose(out, [1.0, 2.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            predict_ratio(self._model([0.0, 1.0, 1.0]), np.zeros(3))

    def test_invalid_clip(self):
        with pytest.raises(ValueError):
            self._model([0.0], clip=(-1.0, 1.0))

    def test_ratio_from_eta(self):
        np.testing.assert_allclose(ratio_from_eta([0.5, 0.75, 1.0], 2.0), [2.0, 6.0, 100.0])

    def test_monotone_in_eta(self):
        eta = np.linspace(0.01, 0.99, 99)
        assert np.all(np.diff(ratio_from_eta(eta, 1.0, clip=(0, np.inf))) > 0)

    def test_label_swap_duality(self, rng):
        X = rng.standard_normal((120, 2))
        t = (X[:, 0] + rng.standard_normal(120) > 0.3).astype(float)
        m = fit_ll(X, t)
        s = fit_ll(X, 1 - t)
        probe = rng.standard_normal((20, 2))
        np.testing.assert_allclose(m.raw_ratio(probe) * s.raw_ratio(probe), 1.0, rtol=1e-9)


def test_joint_model_dimension(rng):
    v1 = rng.standard_normal((50, 3))
    v2 = rng.standard_normal((50, 3))
    m = estimate_ratio(v1, v2, "LL", joint=True)
    assert m.joint and m.dim == 3


def test_mse_decreases_with_n():
    cfg = ScenarioConfig("S1", "U")
    truth = oracle_ratio(cfg)
    med = []
    for n in (500, 20000):
        errs = []
        for s in range(5):
            g = make_rng(s, n)
            a, _ = draw_population(cfg, 1, n, g)
            b, _ = draw_population(cfg, 2, n, g)
            held, _ = draw_population(cfg, 2, 5000, g)
            errs.append(ratio_mse(estimate_ratio(a, b, "LL"), held, truth))
        med.append(np.median(errs))
    assert np.all(np.isfinite(med)) and med[1] < med[0]
