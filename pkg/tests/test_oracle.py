import numpy as np
import pytest

from scmlab.dgp import FactorModelSpec, GaussianOutcomeLaw, simulate
from scmlab.estimators import fit_equal
from scmlab.oracle import (Horizon, LawUnavailable, RiskValue,
                           dilution_diagnostic, equality_multiplier,
                           kkt_closed_form_residual, loss_post,
                           optimal_weight, pretreatment_fit_floor, risk,
                           risk_decompose, risk_with_intercept)
from scmlab.qp import ConstraintSet, WeightVector

from .reference import mc_risk, risk_by_quadrature_two_controls

UNIT_BOX = ConstraintSet(0.0, 1.0)


def random_law(rng, n_units=4, t0=3, t1=5):
    factors = rng.standard_normal((t0 + t1, 2))
    loadings = rng.standard_normal((2, n_units))
    sigmas = rng.uniform(0.5, 2.0, size=n_units)
    from scmlab.dgp import build_error_cov
    return GaussianOutcomeLaw(mu=factors @ loadings,
                              sigma=build_error_cov(sigmas, b=1.0), t0=t0)


def zero_noise_law(mu, t0):
    mu = np.asarray(mu, dtype=float)
    return GaussianOutcomeLaw(mu=mu, sigma=np.zeros((mu.shape[1],) * 2), t0=t0)


class TestRisk:
    def test_exact_fit_no_noise_is_zero(self):
        rng = np.random.default_rng(61)
        controls = rng.normal(size=(6, 3))
        w = np.array([0.2, 0.5, 0.3])
        mu = np.column_stack([controls @ w, controls])
        law = zero_noise_law(mu, t0=2)
        assert float(risk(WeightVector(w), law)) == pytest.approx(0.0, abs=1e-20)

    def test_noise_only_quadratic_form(self):
        law = GaussianOutcomeLaw(mu=np.zeros((4, 3)), sigma=np.eye(3), t0=2)
        w = WeightVector(np.array([0.5, 0.5]))
        assert float(risk(w, law)) == pytest.approx(1.5, abs=1e-14)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(62)
        for _ in range(3):
            law = random_law(rng)
            w = WeightVector(np.array([0.1, 0.6, 0.3]))
            exact = float(risk(w, law))
            est, se = mc_risk(w.values, law.post_rows, law.sigma,
                              ndraws=10 ** 5, rng=rng)
            assert abs(exact - est) <= 3.0 * se

    def test_pre_horizon_uses_pre_rows(self):
        rng = np.random.default_rng(63)
        law = random_law(rng)
        w = WeightVector(np.full(3, 1 / 3))
        pre = float(risk(w, law, Horizon.PRE))
        est, se = mc_risk(w.values, law.pre_rows, law.sigma,
                          ndraws=10 ** 5, rng=rng)
        assert abs(pre - est) <= 3.0 * se

    def test_requires_law(self):
        with pytest.raises(LawUnavailable):
            risk(WeightVector(np.array([1.0])), None)

    def test_weight_length_checked(self):
        law = GaussianOutcomeLaw(mu=np.zeros((3, 3)), sigma=np.eye(3), t0=1)
        with pytest.raises(ValueError):
            risk(WeightVector(np.array([1.0])), law)

    def test_risk_value_rejects_negative(self):
        with pytest.raises(ValueError):
            RiskValue(-0.1)


class TestRiskWithIntercept:
    def test_zero_intercept_reduces_to_risk(self):
        rng = np.random.default_rng(64)
        law = random_law(rng)
        w = WeightVector(np.array([0.3, 0.3, 0.4]))
        assert float(risk_with_intercept(w, 0.0, law)) == float(risk(w, law))

    def test_intercept_absorbs_constant_gap(self):
        gap = 2.5
        controls = np.random.default_rng(65).normal(size=(5, 2))
        w = np.array([0.4, 0.6])
        mu = np.column_stack([controls @ w + gap, controls])
        law = zero_noise_law(mu, t0=2)
        value = risk_with_intercept(WeightVector(w), gap, law)
        assert float(value) == pytest.approx(0.0, abs=1e-20)

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(66)
        law = random_law(rng)
        w = WeightVector(np.array([0.25, 0.25, 0.5]))
        d = 0.8
        exact = float(risk_with_intercept(w, d, law))
        est, se = mc_risk(w.values, law.post_rows, law.sigma,
                          ndraws=10 ** 5, rng=rng, d=d)
        assert abs(exact - est) <= 3.0 * se


class TestOptimalWeight:
    def test_exchangeable_law_gives_uniform(self):
        rng = np.random.default_rng(67)
        shared = rng.normal(size=6)
        treated = rng.normal(size=6)
        mu = np.column_stack([treated] + [shared] * 4)
        law = GaussianOutcomeLaw(mu=mu, sigma=np.eye(5), t0=3)
        report = optimal_weight(law, UNIT_BOX)
        np.testing.assert_allclose(report.weights.values, np.full(4, 0.25),
                                   atol=1e-7)

    def test_two_control_law_matches_quadrature(self):
        rng = np.random.default_rng(68)
        for _ in range(3):
            law = random_law(rng, n_units=3)
            report = optimal_weight(law, UNIT_BOX)
            best_obj, _ = risk_by_quadrature_two_controls(
                law.post_rows, law.sigma, step=1e-5)
            assert report.objective <= best_obj + 1e-8

    def test_single_control_forced(self):
        rng = np.random.default_rng(69)
        law = random_law(rng, n_units=2)
        report = optimal_weight(law, UNIT_BOX)
        np.testing.assert_allclose(report.weights.values, [1.0], atol=1e-12)

    def test_objective_is_risk_at_weights(self):
        rng = np.random.default_rng(70)
        law = random_law(rng)
        report = optimal_weight(law, UNIT_BOX)
        assert report.objective == float(risk(report.weights, law))

    def test_intercept_variant_beats_plain(self):
        rng = np.random.default_rng(71)
        law = random_law(rng)
        cset = ConstraintSet(0.0, 1.0, (-30.0, 30.0))
        plain = optimal_weight(law, UNIT_BOX)
        with_d = optimal_weight(law, cset, with_intercept=True)
        assert with_d.objective <= plain.objective + 1e-10
        assert with_d.objective == float(
            risk_with_intercept(with_d.weights, with_d.intercept, law))

    def test_intercept_needs_domain(self):
        rng = np.random.default_rng(72)
        with pytest.raises(ValueError):
            optimal_weight(random_law(rng), UNIT_BOX, with_intercept=True)

    def test_pre_horizon_optimum_differs(self):
        rng = np.random.default_rng(73)
        law = random_law(rng, t0=6, t1=6)
        post = optimal_weight(law, UNIT_BOX)
        pre = optimal_weight(law, UNIT_BOX, horizon=Horizon.PRE)
        assert not np.allclose(post.weights.values, pre.weights.values,
                               atol=1e-6)


class TestPretreatmentFitFloor:
    def test_zero_when_exact_fit_possible(self):
        rng = np.random.default_rng(74)
        controls = rng.normal(size=(7, 3))
        w = np.array([0.5, 0.2, 0.3])
        mu = np.column_stack([controls @ w, controls])
        law = zero_noise_law(mu, t0=5)
        floor = pretreatment_fit_floor(law, UNIT_BOX)
        assert float(floor) <= 1e-12

    def test_two_control_floor_matches_quadrature(self):
        rng = np.random.default_rng(75)
        law = random_law(rng, n_units=3, t0=6, t1=2)
        floor = pretreatment_fit_floor(law, UNIT_BOX)
        best_obj, _ = risk_by_quadrature_two_controls(
            law.pre_rows, law.sigma, step=1e-5)
        assert float(floor) <= best_obj + 1e-8
        assert float(floor) >= best_obj - 1e-4


class TestLossPost:
    def test_zero_for_exact_counterfactual(self):
        import dataclasses
        panel, _ = simulate(FactorModelSpec(j=3, t0=8, t1=4, seed=81))
        exact = dataclasses.replace(
            fit_equal(panel), counterfactual=panel.outcomes[0, panel.t0:],
            effects=np.zeros(panel.t1))
        assert loss_post(exact, panel) == 0.0

    def test_constant_error(self):
        import dataclasses
        panel, _ = simulate(FactorModelSpec(j=3, t0=8, t1=4, seed=82))
        fit = dataclasses.replace(
            fit_equal(panel),
            counterfactual=panel.outcomes[0, panel.t0:] + 3.0,
            effects=np.full(panel.t1, -3.0))
        assert loss_post(fit, panel) == pytest.approx(9.0, abs=1e-12)

    def test_equals_mean_squared_effects(self):
        panel, _ = simulate(FactorModelSpec(j=4, t0=10, t1=5, seed=83))
        fit = fit_equal(panel)
        want = float(np.mean(np.square(fit.effects)))
        assert abs(loss_post(fit, panel) - want) <= 1e-12


class TestRiskDecompose:
    def test_factor_term_zero_on_exact_loading_match(self):
        rng = np.random.default_rng(84)
        controls = rng.normal(size=(6, 3))
        w = np.array([0.1, 0.2, 0.7])
        mu = np.column_stack([controls @ w, controls])
        law = GaussianOutcomeLaw(mu=mu, sigma=np.eye(4), t0=3)
        dec = risk_decompose(WeightVector(w), law)
        assert dec.factor_term <= 1e-20

    def test_idiosyncratic_zero_without_noise(self):
        rng = np.random.default_rng(85)
        law = zero_noise_law(rng.normal(size=(5, 3)), t0=2)
        dec = risk_decompose(WeightVector(np.array([0.5, 0.5])), law)
        assert dec.idiosyncratic_term == 0.0
        assert dec.covariate_term == 0.0

    def test_parts_sum_to_risk(self):
        rng = np.random.default_rng(86)
        for _ in range(5):
            law = random_law(rng)
            w = WeightVector(np.array([0.2, 0.3, 0.5]))
            dec = risk_decompose(w, law)
            total = float(risk(w, law))
            assert dec.total == pytest.approx(total, rel=1e-10)


def interior_instance(rng, j=5, periods=8, noise=1.0):
    """Law with homoskedastic independent noise and a wide box."""
    factors = rng.standard_normal((periods, 2))
    loadings = rng.standard_normal((2, j + 1))
    mu = factors @ loadings
    law = GaussianOutcomeLaw(mu=mu, sigma=noise * np.eye(j + 1), t0=periods - 4)
    gram = factors[periods - 4:].T @ factors[periods - 4:] / 4
    return law, loadings[:, 1:], gram, loadings[:, 0]


class TestKktClosedForm:
    def test_analytic_inverse_solution_has_zero_residual(self):
        rng = np.random.default_rng(87)
        _, m, gram, mu0 = interior_instance(rng)
        noise = 1.3
        a_mat = m.T @ gram @ m + noise * np.eye(5)
        c_vec = m.T @ gram @ mu0
        inv = np.linalg.inv(a_mat)
        ones = np.ones(5)
        # choose the sum multiplier making the analytic solution sum to one
        rho2 = 2.0 * (ones @ inv @ c_vec - 1.0) / (ones @ inv @ ones)
        w = inv @ (c_vec - 0.5 * rho2 * ones)
        resid = kkt_closed_form_residual(m, gram, mu0, noise,
                                         WeightVector(w),
                                         (np.zeros(5), rho2))
        assert resid <= 1e-12

    def test_solver_output_certified_on_interior_instance(self):
        rng = np.random.default_rng(88)
        for _ in range(5):
            law, m, gram, mu0 = interior_instance(rng)
            wide = ConstraintSet(10.0, 10.0)
            report = optimal_weight(law, wide)
            assert report.converged
            lo, hi = wide.bounds
            assert report.weights.values.min() > lo + 1e-3
            assert report.weights.values.max() < hi - 1e-3
            rho2 = equality_multiplier(m, gram, mu0, 1.0, report.weights, wide)
            resid = kkt_closed_form_residual(m, gram, mu0, 1.0,
                                             report.weights,
                                             (np.zeros(5), rho2))
            assert resid <= 1e-6

    def test_perturbation_breaks_certificate(self):
        rng = np.random.default_rng(89)
        law, m, gram, mu0 = interior_instance(rng)
        wide = ConstraintSet(10.0, 10.0)
        report = optimal_weight(law, wide)
        rho2 = equality_multiplier(m, gram, mu0, 1.0, report.weights, wide)
        bumped = report.weights.values.copy()
        bumped[0] += 1e-2
        bumped[1] -= 1e-2
        resid = kkt_closed_form_residual(m, gram, mu0, 1.0,
                                         WeightVector(bumped),
                                         (np.zeros(5), rho2))
        assert resid > 1e-4

    def test_multiplier_needs_interior_coordinates(self):
        rng = np.random.default_rng(90)
        _, m, gram, mu0 = interior_instance(rng)
        corner = WeightVector(np.eye(5)[0])
        with pytest.raises(ValueError):
            equality_multiplier(m, gram, mu0, 1.0, corner, UNIT_BOX)


class TestDilutionDiagnostic:
    def test_identity_padded_loadings(self):
        m = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        lo, hi, qlo, qhi = dilution_diagnostic(m, np.eye(2))
        assert lo == pytest.approx(1 / 3, abs=1e-15)
        assert hi == pytest.approx(1 / 3, abs=1e-15)
        assert (qlo, qhi) == (1.0, 1.0)

    def test_hand_two_by_two(self):
        m = np.array([[1.0, 1.0], [0.0, 1.0]])
        lo, hi, _, _ = dilution_diagnostic(m, np.eye(2))
        # eigs of [[2,1],[1,1]] are (3 +- sqrt 5)/2, halved by J=2
        assert lo == pytest.approx((3 - np.sqrt(5)) / 4, abs=1e-12)
        assert hi == pytest.approx((3 + np.sqrt(5)) / 4, abs=1e-12)
