#!/usr/bin/env python3
"""
Tests for the supply side and the counterfactual price solver.
"""

import sys
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.optimize import brentq, minimize_scalar

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.equilibrium import (
    SolverConfig,
    pass_through,
    solve_mup_counterfactual,
    solve_tax_counterfactual,
)
from mupsim.errors import ConfigError, DomainError, NumericError
from mupsim.quality import MixedLogitMarket, MixedLogitModel, Population, ProductDesign
from mupsim.supply import (
    MarketEquilibrium,
    OwnershipStructure,
    calibrate_marginal_costs,
    channel_profit,
    constrained_margin_map,
    foc_system_residual,
    margin_map,
    profit_decomposition,
)

VAT = 0.2


def logit_market(prices, qualities, alpha=1.0):
    """Plain logit demand over one representative household."""
    brands = [f"B{i + 1}" for i in range(len(prices))]
    products = pd.DataFrame({
        "id": [f"P{i + 1}" for i in range(len(prices))],
        "price": prices,
        "degree": 12.0,
        "subcategory": "still",
        "brand": brands,
    })
    design = ProductDesign.from_products(products, terms=("brand",))
    model = MixedLogitModel("still-wines", alpha=alpha,
                            beta={f"brand={b}": q for b, q in zip(brands, qualities)}, terms=("brand",))
    return MixedLogitMarket(model, design, Population.single())


def ownership(manufacturers, private_label=None):
    n = len(manufacturers)
    private_label = private_label or [False] * n
    return OwnershipStructure([f"P{i + 1}" for i in range(n)], manufacturers, ["R1"] * n,
                              private_label, ["large"] * n, VAT)


class TestMarginMap(unittest.TestCase):
    """Tests for the first-order-condition margins."""

    def setUp(self):
        alpha, s = 2.0, 0.3
        self.shares = np.array([s, s])
        self.jacobian = np.array([
            [-alpha * s * (1 - s), alpha * s * s],
            [alpha * s * s, -alpha * s * (1 - s)],
        ])

    def test_symmetric_single_product_firms(self):
        """Each margin is 1 / (alpha (1 - s))."""
        margins = margin_map(ownership(["M1", "M2"]), self.shares, self.jacobian)
        np.testing.assert_allclose(margins, 1.0 / (2.0 * 0.7))

    def test_merger_raises_margins(self):
        """A single owner of both products prices them higher."""
        separate = margin_map(ownership(["M1", "M2"]), self.shares, self.jacobian)
        merged = margin_map(ownership(["M1", "M2"]).merged("M1", "M2"), self.shares, self.jacobian)
        self.assertTrue(np.all(merged > separate))
        np.testing.assert_allclose(merged, 1.25)

    def test_residual_vanishes(self):
        """The solved margins satisfy the stacked conditions."""
        owners = ownership(["M1", "M2"])
        margins = margin_map(owners, self.shares, self.jacobian)
        self.assertLess(foc_system_residual(owners, margins, self.shares, self.jacobian), 1e-12)

    def test_private_label_mask(self):
        """National brands internalize private labels, not the reverse."""
        owners = ownership(["M1", "M2", "M3"], [False, False, True])
        mask = owners.foc_mask()
        self.assertEqual(list(owners.controllers), ["M:M1", "M:M2", "R:R1"])
        self.assertEqual(mask[0, 2], 1.0)
        self.assertEqual(mask[2, 0], 0.0)
        self.assertEqual(mask[0, 1], 0.0)

    def test_singular_system(self):
        """A zero Jacobian cannot be inverted."""
        with self.assertRaises(NumericError):
            margin_map(ownership(["M1", "M2"]), self.shares, np.zeros((2, 2)))

    def test_duplicate_products(self):
        """Each product has one controller."""
        with self.assertRaises(DomainError):
            OwnershipStructure(["P1", "P1"], ["M1", "M2"], ["R1", "R1"], [False, False], ["large", "large"])


class TestCalibrationAndSolver(unittest.TestCase):
    """Tests for cost calibration and counterfactual equilibria."""

    def setUp(self):
        self.prices0 = np.array([6.0, 8.0, 5.0])
        self.market = logit_market(self.prices0, [3.0, 4.0, 2.5], alpha=0.8)
        self.owners = ownership(["M1", "M2", "M3"], [False, False, True])
        self.costs = np.array([2.0, 2.5, 1.5])
        self.taxes = np.array([0.5, 0.5, 0.5])
        self.config = SolverConfig(tol_price=1e-12, tol_foc=1e-10)

    def test_calibration_inverts_solver(self):
        """Costs calibrated at equilibrium prices are the costs used to solve."""
        result = solve_tax_counterfactual("still-wines", self.market, self.owners, self.taxes,
                                          self.costs, self.prices0, self.config)
        self.assertTrue(result.converged)
        calibration = calibrate_marginal_costs(result.prices, self.taxes, self.owners, self.market)
        np.testing.assert_allclose(calibration.costs, self.costs, atol=1e-8)
        self.assertEqual(calibration.negative, [])

    def test_baseline_is_fixed_point(self):
        """Solving with calibrated costs and unchanged taxes returns the observed prices."""
        calibration = calibrate_marginal_costs(self.prices0, self.taxes, self.owners, self.market)
        result = solve_tax_counterfactual("still-wines", self.market, self.owners, self.taxes,
                                          calibration.costs, self.prices0, self.config)
        np.testing.assert_allclose(result.prices, self.prices0, atol=1e-8)
        self.assertLessEqual(result.iterations, 2)

    def test_single_product_matches_root_finder(self):
        """The solver agrees with a scalar root of the pricing condition."""
        market = logit_market([5.0], [3.0], alpha=1.0)
        owners = ownership(["M1"])
        cost, tax = 2.0, 0.5

        def condition(p):
            share = market.shares(np.array([p]))[0]
            return p / (1 + VAT) - cost - tax - 1.0 / (1.0 - share)

        expected = brentq(condition, 1.0, 50.0, xtol=1e-12)
        result = solve_tax_counterfactual("still-wines", market, owners, np.array([tax]),
                                          np.array([cost]), np.array([5.0]), self.config)
        self.assertAlmostEqual(result.prices[0], expected, places=8)

    def test_tax_increase_raises_prices(self):
        """Higher excise raises every equilibrium price."""
        calibration = calibrate_marginal_costs(self.prices0, self.taxes, self.owners, self.market)
        result = solve_tax_counterfactual("still-wines", self.market, self.owners, self.taxes + 1.0,
                                          calibration.costs, self.prices0, self.config)
        self.assertTrue(np.all(result.prices > self.prices0))

    def test_binding_floor(self):
        """A floor above the unconstrained price holds the product at the floor."""
        calibration = calibrate_marginal_costs(self.prices0, self.taxes, self.owners, self.market)
        floors = np.array([0.0, 0.0, 7.0])
        result = solve_mup_counterfactual("still-wines", self.market, self.owners, floors, self.taxes,
                                          calibration.costs, self.prices0, self.config)
        self.assertTrue(result.converged)
        self.assertAlmostEqual(result.prices[2], 7.0)
        self.assertEqual(result.binding, ["P3"])

    def test_slack_floor(self):
        """Floors below the prices leave the equilibrium unchanged."""
        calibration = calibrate_marginal_costs(self.prices0, self.taxes, self.owners, self.market)
        result = solve_mup_counterfactual("still-wines", self.market, self.owners, np.full(3, 1.0),
                                          self.taxes, calibration.costs, self.prices0, self.config)
        np.testing.assert_allclose(result.prices, self.prices0, atol=1e-8)
        self.assertEqual(result.binding, [])

    def test_solver_config_validation(self):
        """Damping and tolerances are checked."""
        with self.assertRaises(ConfigError):
            SolverConfig(damping=1.5)
        with self.assertRaises(ConfigError):
            SolverConfig(tol_foc=0.0)

    def test_binding_set_independent_of_damping(self):
        """Damping changes the path, not the binding set or the prices."""
        owners = ownership(["M1", "M1", "M2"], [False, False, True])
        calibration = calibrate_marginal_costs(self.prices0, self.taxes, owners, self.market)
        floors = np.array([7.5, 0.0, 7.0])
        results = []
        for damping in (1.0, 0.5, 0.25):
            config = SolverConfig(tol_price=1e-12, tol_foc=1e-10, damping=damping)
            result = solve_mup_counterfactual("still-wines", self.market, owners, floors, self.taxes,
                                              calibration.costs, self.prices0, config)
            self.assertTrue(result.converged)
            results.append(result)
        for result in results:
            self.assertEqual(result.binding, ["P1", "P3"])
            np.testing.assert_allclose(result.prices, results[0].prices, atol=1e-8)


class TestMinimumPriceEquilibrium(unittest.TestCase):
    """Tests for complementary slackness when one of two products is held at its floor."""

    def setUp(self):
        self.market = logit_market([6.0, 8.0], [3.0, 3.0], alpha=0.8)
        self.costs = np.array([2.0, 2.5])
        self.taxes = np.array([0.5, 0.5])
        self.floors = np.array([9.0, 0.0])
        self.config = SolverConfig(tol_price=1e-12, tol_foc=1e-10)

    def owners(self, manufacturers, vat_rate):
        return OwnershipStructure(["P1", "P2"], manufacturers, ["R1", "R1"], [False, False],
                                  ["large", "large"], vat_rate)

    def best_response(self, owners):
        """Profit-maximizing price of the free product with the rival at its floor."""
        shared = owners.controllers[0] == owners.controllers[1]

        def loss(price):
            prices = np.array([self.floors[0], price])
            shares = self.market.shares(prices)
            margins = prices / (1.0 + owners.vat_rate) - self.costs - self.taxes
            return -(margins @ shares if shared else margins[1] * shares[1])

        return minimize_scalar(loss, bounds=(3.0, 20.0), method="bounded", options={"xatol": 1e-10}).x

    def solve(self, owners):
        return solve_mup_counterfactual("still-wines", self.market, owners, self.floors, self.taxes,
                                        self.costs, np.array([6.0, 8.0]), self.config)

    def test_separate_owners_match_profit_maximum(self):
        """The rival of a floored product sets its own profit-maximizing price."""
        owners = self.owners(["M1", "M2"], 0.0)
        result = self.solve(owners)
        self.assertTrue(result.converged)
        self.assertEqual(result.binding, ["P1"])
        self.assertEqual(result.prices[0], 9.0)
        self.assertAlmostEqual(result.prices[1], self.best_response(owners), delta=1e-6)

    def test_shared_owner_matches_profit_maximum(self):
        """A firm owning the floored product prices its other product against the floor margin."""
        owners = self.owners(["M1", "M1"], 0.0)
        result = self.solve(owners)
        self.assertTrue(result.converged)
        self.assertEqual(result.binding, ["P1"])
        self.assertEqual(result.prices[0], 9.0)
        self.assertAlmostEqual(result.prices[1], self.best_response(owners), delta=1e-6)

    def test_free_conditions_hold_at_actual_margins(self):
        """Free products zero their condition; the floored one would rather price lower."""
        owners = self.owners(["M1", "M1"], VAT)
        result = self.solve(owners)
        prices = result.prices
        margins = prices / (1.0 + VAT) - self.costs - self.taxes
        shares, jacobian = self.market.shares(prices), self.market.jacobian(prices)
        self.assertLess(foc_system_residual(owners, margins, shares, jacobian, rows=[False, True]), 1e-8)
        conditions = (owners.foc_mask() * jacobian) @ margins + shares
        self.assertLess(conditions[0], 0.0)

    def test_constrained_margins_keep_held_values(self):
        """Held margins are returned unchanged and free rows are solved given them."""
        owners = self.owners(["M1", "M1"], VAT)
        prices = np.array([9.0, 5.0])
        shares, jacobian = self.market.shares(prices), self.market.jacobian(prices)
        margins, desired = constrained_margin_map(owners, shares, jacobian, np.array([True, False]),
                                                  np.array([6.0, 0.0]))
        self.assertEqual(margins[0], 6.0)
        self.assertEqual(desired[1], margins[1])
        self.assertLess(desired[0], 6.0)
        self.assertLess(foc_system_residual(owners, margins, shares, jacobian, rows=[False, True]), 1e-12)


class TestPassThroughAndProfits(unittest.TestCase):
    """Tests for pass-through, channel profits and their decomposition."""

    def test_pass_through_units(self):
        """Full transmission is 1 + VAT in consumer units and 1 net of VAT."""
        consumer = pass_through([10.0], [12.4], [3.0], [5.0], VAT)
        pretax = pass_through([10.0], [12.4], [3.0], [5.0], VAT, units="pretax")
        self.assertAlmostEqual(consumer[0], 1.2)
        self.assertAlmostEqual(pretax[0], 1.0)

    def test_pass_through_without_cost_change(self):
        """Unchanged costs give NaN."""
        self.assertTrue(np.isnan(pass_through([10.0], [11.0], [3.0], [3.0], VAT)[0]))

    def test_unknown_units(self):
        """Only consumer and pretax units exist."""
        with self.assertRaises(ConfigError):
            pass_through([10.0], [11.0], [3.0], [4.0], VAT, units="retail")

    def make_equilibrium(self, shares, prices, market_size=100.0, tax=0.5):
        owners = ownership(["M1", "M1", "M2"])
        return MarketEquilibrium("still-wines", owners, np.array(prices), np.array(shares), np.eye(3),
                                 np.array([2.0, 2.0, 2.0]), np.full(3, tax), market_size)

    def test_margins_are_pre_vat(self):
        """m = p / (1 + tau) - C - T."""
        equilibrium = self.make_equilibrium([0.2, 0.3, 0.1], [6.0, 4.8, 7.2])
        np.testing.assert_allclose(equilibrium.margins, [2.5, 1.5, 3.5])

    def test_channel_profit_by_firm(self):
        """Profits add up within each pricing firm."""
        equilibrium = self.make_equilibrium([0.2, 0.3, 0.1], [6.0, 4.8, 7.2])
        profits = channel_profit(equilibrium, "firm")
        self.assertAlmostEqual(profits["M:M1"], 100.0 * (2.5 * 0.2 + 1.5 * 0.3))
        self.assertAlmostEqual(profits["M:M2"], 100.0 * 3.5 * 0.1)
        with self.assertRaises(DomainError):
            channel_profit(equilibrium, "region")

    def test_market_size_only(self):
        """A pure market-size change is all quantity effect."""
        before = self.make_equilibrium([0.2, 0.3, 0.1], [6.0, 4.8, 7.2])
        after = self.make_equilibrium([0.2, 0.3, 0.1], [6.0, 4.8, 7.2], market_size=110.0)
        decomposition = profit_decomposition(before, after)
        self.assertAlmostEqual(decomposition.quantity, 0.1)
        self.assertAlmostEqual(decomposition.quality, 0.0)
        self.assertAlmostEqual(decomposition.price, 0.0)
        self.assertAlmostEqual(decomposition.gap, 0.0)

    def test_decomposition_gap(self):
        """The approximation and its gap add up to the exact change."""
        before = self.make_equilibrium([0.2, 0.3, 0.1], [6.0, 4.8, 7.2])
        after = self.make_equilibrium([0.18, 0.28, 0.12], [6.6, 5.4, 7.2], market_size=95.0)
        decomposition = profit_decomposition(before, after)
        self.assertAlmostEqual(decomposition.approximation + decomposition.gap, decomposition.exact)
        self.assertEqual(decomposition.excluded, 0)

    def test_price_term_uses_price_change(self):
        """A tax passed on in full moves prices, not margins; the price term still counts it."""
        before = self.make_equilibrium([0.2, 0.3, 0.1], [6.0, 4.8, 7.2])
        after = self.make_equilibrium([0.2, 0.3, 0.1], [7.2, 6.0, 8.4], tax=1.5)
        np.testing.assert_allclose(after.margins, before.margins)
        decomposition = profit_decomposition(before, after)
        self.assertAlmostEqual(decomposition.price, (50.0 / 2.5 + 45.0 / 1.5 + 35.0 / 3.5) / 130.0)
        self.assertAlmostEqual(decomposition.exact, 0.0)
        self.assertAlmostEqual(decomposition.gap, -decomposition.price)


if __name__ == '__main__':
    unittest.main()
