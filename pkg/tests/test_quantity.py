#!/usr/bin/env python3
"""
Tests for the across-category share system.
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.errors import DomainError
from mupsim.quantity import (
    ClusterState,
    QuaidsModel,
    budget_shares,
    cost_function,
    effect_on_quantities,
    elasticities,
    indirect_utility,
    marshallian_quantities,
)
from mupsim.quantity_estimation import (
    IrlsConfig,
    PseudoPanel,
    constraint_system,
    draw_parameters,
    estimate_irls,
    predicted_shares,
)

CATEGORIES = ("beers", "spirits", "still-wines")


def make_model():
    gamma = np.array([
        [-0.10, 0.06, 0.04],
        [0.06, -0.08, 0.02],
        [0.04, 0.02, -0.06],
    ])
    return QuaidsModel(
        CATEGORIES,
        intercepts=np.array([[0.40], [0.35], [0.25]]),
        gamma=gamma,
        chi=np.array([0.05, -0.02, -0.03]),
        lam=np.array([0.010, -0.004, -0.006]),
    )


def make_state():
    return ClusterState(np.log([5.0, 8.0, 20.0]), np.log(30.0))


class TestShareSystem(unittest.TestCase):
    """Tests for shares and elasticities."""

    def setUp(self):
        self.model = make_model()
        self.state = make_state()

    def test_restrictions_hold(self):
        """Adding-up, homogeneity and symmetry are satisfied."""
        self.assertLess(self.model.check_constraints(), 1e-12)

    def test_shares_add_up(self):
        """Budget shares sum to one."""
        shares = budget_shares(self.model, self.state)
        self.assertAlmostEqual(shares.sum(), 1.0)
        self.assertTrue(np.all(shares > 0))

    def test_budget_elasticities_by_finite_differences(self):
        """d ln q / d ln Y matches the analytic budget elasticity."""
        step = 1e-6
        up = ClusterState(self.state.ln_prices, self.state.ln_expenditure + step)
        down = ClusterState(self.state.ln_prices, self.state.ln_expenditure - step)
        numeric = (np.log(marshallian_quantities(self.model, up))
                   - np.log(marshallian_quantities(self.model, down))) / (2 * step)
        np.testing.assert_allclose(elasticities(self.model, self.state).budget, numeric, rtol=1e-6)

    def test_price_elasticities_by_finite_differences(self):
        """d ln q_a / d ln P_k matches the uncompensated elasticity."""
        step = 1e-6
        analytic = elasticities(self.model, self.state).uncompensated
        for k in range(self.model.size):
            up, down = self.state.ln_prices.copy(), self.state.ln_prices.copy()
            up[k] += step
            down[k] -= step
            numeric = (np.log(marshallian_quantities(self.model, ClusterState(up, self.state.ln_expenditure)))
                       - np.log(marshallian_quantities(self.model, ClusterState(down, self.state.ln_expenditure))))
            np.testing.assert_allclose(analytic[:, k], numeric / (2 * step), rtol=1e-5, atol=1e-8)

    def test_homogeneity(self):
        """Price elasticities plus the budget elasticity sum to zero by row."""
        values = elasticities(self.model, self.state)
        np.testing.assert_allclose(values.uncompensated.sum(axis=1) + values.budget, 0.0, atol=1e-10)

    def test_slutsky_symmetry(self):
        """w_a e*_ak equals w_k e*_ka."""
        values = elasticities(self.model, self.state)
        weighted = values.shares[:, None] * values.compensated
        np.testing.assert_allclose(weighted, weighted.T, atol=1e-10)

    def test_cobb_douglas(self):
        """Constant shares give unit budget and own-price elasticities."""
        model = QuaidsModel.cobb_douglas([0.5, 0.3, 0.2], CATEGORIES)
        values = elasticities(model, self.state)
        np.testing.assert_allclose(values.budget, 1.0)
        np.testing.assert_allclose(np.diag(values.uncompensated), -1.0)
        np.testing.assert_allclose(np.diag(values.compensated), [-0.5, -0.7, -0.8])

    def test_effect_on_quantities(self):
        """Without a budget response the effect is the uncompensated response."""
        changes = np.array([0.1, 0.0, -0.05])
        effect, budget_change = effect_on_quantities(self.model, self.state, changes)
        self.assertEqual(budget_change, 0.0)
        np.testing.assert_allclose(effect, elasticities(self.model, self.state).uncompensated @ changes)

    def test_budget_response(self):
        """A budget-price elasticity adds a scaled budget response."""
        model = QuaidsModel.cobb_douglas([0.5, 0.3, 0.2], CATEGORIES)
        model.budget_price_elasticity = np.array([0.2, 0.0, 0.0])
        effect, budget_change = effect_on_quantities(model, self.state, np.array([0.1, 0.0, 0.0]))
        self.assertAlmostEqual(budget_change, 0.02)
        np.testing.assert_allclose(effect, [-0.1 + 0.02, 0.02, 0.02])

    def test_indirect_utility_inverts_cost(self):
        """The cost function returns the expenditure behind a utility level."""
        utility = indirect_utility(self.model, self.state.ln_prices, self.state.ln_expenditure)
        recovered = cost_function(self.model, self.state.ln_prices, utility)
        self.assertAlmostEqual(recovered, self.state.ln_expenditure)

    def test_real_expenditure_domain(self):
        """Log expenditure below G1 has no utility."""
        with self.assertRaises(DomainError):
            indirect_utility(self.model, self.state.ln_prices, 0.5)

    def test_dict_round_trip(self):
        """Serialized parameters load back unchanged."""
        restored = QuaidsModel.from_dict(self.model.to_dict())
        np.testing.assert_allclose(restored.to_vector(), self.model.to_vector())


class TestEstimation(unittest.TestCase):
    """Tests for the constrained share-system estimator."""

    def setUp(self):
        self.truth = make_model()
        rng = np.random.default_rng(5)
        n = 80
        ln_prices = np.log(np.array([5.0, 8.0, 20.0])) + rng.normal(0.0, 0.3, size=(n, 3))
        ln_expenditure = np.log(30.0) + rng.normal(0.0, 0.4, size=n)
        demographics = np.ones((n, 1))
        self.panel = PseudoPanel(
            categories=CATEGORIES,
            clusters=np.array([f"c{i % 8}" for i in range(n)]),
            periods=np.arange(n) // 8 + 1,
            ln_prices=ln_prices,
            ln_expenditure=ln_expenditure,
            shares=predicted_shares(self.truth, ln_prices, ln_expenditure, demographics),
            demographics=demographics,
            demographic_names=("const",),
            weights=rng.uniform(0.5, 1.5, size=n),
            ln_income=np.full(n, 10.0),
        )

    def test_constraint_system_holds_for_truth(self):
        """The true parameters satisfy the linear restrictions."""
        constraints, targets = constraint_system(3, 1)
        np.testing.assert_allclose(constraints @ self.truth.to_vector(), targets, atol=1e-12)

    def test_recovers_noiseless_parameters(self):
        """Shares generated by the model are fitted exactly."""
        model = estimate_irls(self.panel, IrlsConfig(period_effects=False, region_controls=False))
        self.assertLess(model.check_constraints(), 1e-8)
        self.assertLess(model.diagnostics["ssr"], 1e-10)
        np.testing.assert_allclose(model.gamma, self.truth.gamma, atol=1e-3)
        np.testing.assert_allclose(model.chi, self.truth.chi, atol=1e-3)

    def test_parameter_draws_keep_restrictions(self):
        """Draws from the covariance stay in the restricted space."""
        model = estimate_irls(self.panel)
        replica = draw_parameters(model, np.random.default_rng(0))
        self.assertLess(replica.check_constraints(), 1e-8)


if __name__ == '__main__':
    unittest.main()
