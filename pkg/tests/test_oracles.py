import math

import numpy as np
import pytest

from qscnewton import (
    Metric,
    add_oracles,
    affine_substitute,
    check_function_bounds,
    check_gradient,
    check_gradient_bound,
    check_hessian_stability,
    check_qsc,
    contract_oracle,
    phi,
    scale_oracle,
    with_qsc_constant,
)
from qscnewton.oracles import SmoothOracle, third_derivative_estimate
from qscnewton.problems import QuadraticObjective, SeparableObjective, generate_synthetic


class TestPhi:
    def test_value_at_one(self):
        assert phi(1.0) == pytest.approx(math.e - 2.0, abs=1e-15)

    def test_limit_at_zero(self):
        assert phi(0.0) == 0.5

    def test_value_at_minus_one(self):
        assert phi(-1.0) == pytest.approx(1.0 / math.e, rel=1e-12)

    def test_branches_agree_with_high_precision_oracle(self):
        # mpmath at 50 digits as the independent reference on both sides of
        # the series cutoff
        import mpmath

        mpmath.mp.dps = 50
        for t in (1e-4, -1e-4, 9.9e-5, -9.9e-5, 2e-4, 1e-6):
            exact = float((mpmath.exp(t) - t - 1) / mpmath.mpf(t) ** 2)
            assert phi(t) == pytest.approx(exact, rel=1e-10)

    def test_monotone_and_convex_on_grid(self):
        grid = np.linspace(-10.0, 10.0, 2001)
        values = phi(grid)
        diffs = np.diff(values)
        assert np.all(diffs > 0)
        assert np.all(np.diff(diffs) >= -1e-12)

    def test_vectorized(self):
        out = phi(np.array([0.0, 1.0]))
        assert out.shape == (2,)
        assert out[1] == pytest.approx(math.e - 2.0)


class _Cubic(SmoothOracle):
    """f(x) = (w.x)^3 / 6 with exact constant third derivative w (x) w (x) w."""

    def __init__(self, w):
        super().__init__(Metric.identity(len(w)), 0.0)
        self._w = np.asarray(w, float)

    def value(self, x):
        return float(self._w @ x) ** 3 / 6.0

    def gradient(self, x):
        return 0.5 * float(self._w @ x) ** 2 * self._w

    def hessian(self, x):
        return float(self._w @ x) * np.outer(self._w, self._w)


def test_fd_third_derivative_on_cubic():
    # the estimator must recover an exact constant third derivative
    rng = np.random.default_rng(0)
    w = rng.standard_normal(4)
    oracle = _Cubic(w)
    x = rng.standard_normal(4)
    u = rng.standard_normal(4)
    v = rng.standard_normal(4)
    exact = (w @ u) ** 2 * (w @ v)
    assert third_derivative_estimate(oracle, x, u, v) == pytest.approx(exact, abs=1e-6 * (1 + abs(exact)))


class TestScaleOracle:
    def test_identity_scale(self, zoo):
        o = zoo["logistic"]
        scaled = scale_oracle(o, 1.0)
        x = np.ones(o.dim) * 0.3
        assert scaled.value(x) == o.value(x)
        np.testing.assert_array_equal(scaled.gradient(x), o.gradient(x))

    def test_qsc_constant_unchanged(self, zoo):
        assert scale_oracle(zoo["logistic"], 10.0).qsc_constant == 1.0

    def test_triple_scaling_of_gradient(self):
        rng = np.random.default_rng(1)
        o = generate_synthetic("quadratic", n=5, seed=2)
        x = rng.standard_normal(5)
        np.testing.assert_allclose(scale_oracle(o, 3.0).gradient(x), 3.0 * o.gradient(x))

    def test_nonpositive_rejected(self, zoo):
        with pytest.raises(ValueError):
            scale_oracle(zoo["quadratic"], 0.0)


class TestAffineSubstitute:
    def test_identity_substitution(self, zoo):
        o = zoo["softmax"]
        sub = affine_substitute(o, np.eye(o.dim))
        x = np.full(o.dim, 0.2)
        assert sub.value(x) == pytest.approx(o.value(x))
        np.testing.assert_allclose(sub.gradient(x), o.gradient(x))
        np.testing.assert_allclose(sub.hessian(x), o.hessian(x))
        assert sub.qsc_constant == o.qsc_constant

    def test_contraction_with_kept_metric_scales_constant(self, zoo):
        o = zoo["logistic"]
        gamma = 0.25
        sub = affine_substitute(
            o, gamma * np.eye(o.dim), new_metric=o.metric, norm_bound=gamma
        )
        assert sub.qsc_constant == pytest.approx(gamma * o.qsc_constant)

    def test_one_dimensional_exponential(self):
        # f(t) = e^t composed with t = 2x: second derivative 4 e^{2x}
        o = SeparableObjective(np.array([[1.0]]), np.array([0.0]), "exponential")
        sub = affine_substitute(o, np.array([[2.0]]))
        x = np.array([0.3])
        assert sub.hessian(x)[0, 0] == pytest.approx(4.0 * math.exp(0.6), rel=1e-12)
        assert check_gradient(sub, x) < 1e-8

    def test_metric_override_needs_bound(self, zoo):
        with pytest.raises(ValueError):
            affine_substitute(zoo["quadratic"], np.eye(8), new_metric=Metric.identity(8))


class TestContractOracle:
    def test_gradient_consistency(self, zoo):
        o = zoo["logistic"]
        anchor = np.full(o.dim, 0.1)
        c = contract_oracle(o, 0.4, anchor, 2.5)
        assert check_gradient(c, np.full(o.dim, -0.2)) < 1e-7

    def test_quadratic_keeps_zero_constant(self, zoo):
        c = contract_oracle(zoo["quadratic"], 0.5, np.zeros(8), 3.0)
        assert c.qsc_constant == 0.0

    def test_logistic_constant_contracts(self, zoo):
        c = contract_oracle(zoo["logistic"], 0.25, np.zeros(8), 1.0)
        assert c.qsc_constant == pytest.approx(0.25)

    def test_value_formula(self, zoo):
        o = zoo["softmax"]
        anchor = np.full(o.dim, 0.3)
        x = np.full(o.dim, -0.7)
        c = contract_oracle(o, 0.6, anchor, 4.0)
        assert c.value(x) == pytest.approx(4.0 * o.value(0.6 * x + 0.4 * anchor))

    def test_gamma_out_of_range(self, zoo):
        with pytest.raises(ValueError):
            contract_oracle(zoo["quadratic"], 1.0, np.zeros(8), 1.0)


class TestSumOracle:
    def test_sum_constant_is_max(self, zoo):
        o = zoo["logistic"]
        bump = QuadraticObjective(0.2 * o.metric.matrix, np.zeros(o.dim), metric=o.metric)
        total = add_oracles(o, bump)
        assert total.qsc_constant == 1.0
        x = np.full(o.dim, 0.4)
        assert total.value(x) == pytest.approx(o.value(x) + bump.value(x))

    def test_mismatched_metrics_rejected(self, zoo):
        other = QuadraticObjective(np.eye(8), np.zeros(8))
        with pytest.raises(ValueError):
            add_oracles(zoo["logistic"], other)


class TestCheckGradient:
    def test_quadratic_is_exact(self, zoo):
        assert check_gradient(zoo["quadratic"], np.ones(8) * 0.5) <= 1e-9

    def test_logistic(self, zoo):
        assert check_gradient(zoo["logistic"], np.ones(8) * 0.2, step=1e-5) <= 1e-6

    def test_softmax(self, zoo):
        assert check_gradient(zoo["softmax"], np.ones(8) * -0.3, step=1e-5) <= 1e-6


class TestCheckQsc:
    def test_quadratic_estimates_vanish(self, zoo):
        report = check_qsc(zoo["quadratic"], seed=0, num_samples=200)
        assert report.passed
        assert abs(report.max_violation) <= 1e-8

    def test_matrix_balancing_declared_constant(self, zoo):
        report = check_qsc(zoo["matrix_balancing"], seed=1, num_samples=1000)
        assert report.passed

    def test_undersized_logistic_constant_fails(self):
        # near-square design: the true constant is close to 1, so 0.5 must fail
        o = generate_synthetic("logistic", n=2, m=4, seed=3)
        report = check_qsc(with_qsc_constant(o, 0.5), seed=0, num_samples=2000)
        assert not report.passed
        assert report.max_violation > report.tolerance
        x, u, v = report.worst_triple
        assert x.shape == u.shape == v.shape == (2,)

    def test_deterministic_for_fixed_seed(self, zoo):
        a = check_qsc(zoo["logistic"], seed=5, num_samples=300)
        b = check_qsc(zoo["logistic"], seed=5, num_samples=300)
        assert a.max_violation == b.max_violation
        assert a.samples == b.samples


class TestHessianStability:
    def test_same_point(self, zoo):
        ok, margin = check_hessian_stability(zoo["logistic"], np.zeros(8), np.zeros(8))
        assert ok
        assert margin == pytest.approx(0.0, abs=1e-9)

    def test_quadratic_equality(self, zoo):
        rng = np.random.default_rng(2)
        ok, margin = check_hessian_stability(
            zoo["quadratic"], rng.standard_normal(8), rng.standard_normal(8)
        )
        assert ok
        # identical Hessians: the bound holds with full slack Mr = 0 used
        assert margin == pytest.approx(0.0, abs=1e-9)

    def test_logistic_ratio_within_exponent(self, zoo):
        o = zoo["logistic"]
        rng = np.random.default_rng(3)
        x = rng.standard_normal(8) * 0.5
        d = rng.standard_normal(8)
        d *= 0.5 / o.metric.primal_norm(d)
        ok, margin = check_hessian_stability(o, x, x + d)
        assert ok
        assert margin >= 0.0


class TestSmoothnessBounds:
    @pytest.mark.parametrize("name", ["quadratic", "logistic", "softmax", "matrix_scaling"])
    def test_gradient_bound_random_pairs(self, zoo, name):
        o = zoo[name]
        rng = np.random.default_rng(4)
        for _ in range(50):
            x = rng.standard_normal(o.dim)
            d = rng.standard_normal(o.dim)
            d *= rng.uniform(0, 2.0) / o.metric.primal_norm(d)
            ok, _ = check_gradient_bound(o, x, x + d)
            assert ok

    def test_gradient_bound_quadratic_lhs_zero(self, zoo):
        o = zoo["quadratic"]
        rng = np.random.default_rng(5)
        x, y = rng.standard_normal(8), rng.standard_normal(8)
        ok, slack = check_gradient_bound(o, x, y)
        assert ok
        assert slack == pytest.approx(1e-8, abs=1e-10)  # lhs is exactly zero

    @pytest.mark.parametrize("name", ["quadratic", "logistic", "matrix_scaling"])
    def test_function_bounds_random_pairs(self, zoo, name):
        o = zoo[name]
        rng = np.random.default_rng(6)
        for _ in range(50):
            x = rng.standard_normal(o.dim)
            d = rng.standard_normal(o.dim)
            d *= rng.uniform(0, 2.0) / o.metric.primal_norm(d)
            ok, _ = check_function_bounds(o, x, x + d)
            assert ok

    def test_function_bounds_quadratic_tight(self, zoo):
        # both model sides collapse onto 1/2 r_x^2 when M = 0 (phi(0) = 1/2)
        o = zoo["quadratic"]
        rng = np.random.default_rng(7)
        x, y = rng.standard_normal(8), rng.standard_normal(8)
        gap = o.value(y) - o.value(x) - o.gradient(x) @ (y - x)
        from qscnewton import local_norm

        assert gap == pytest.approx(0.5 * local_norm(y - x, o.hessian(x)) ** 2, rel=1e-9)
