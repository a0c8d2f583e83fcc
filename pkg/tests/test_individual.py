#!/usr/bin/env python3
"""
Tests for the distribution of household purchases across members.
"""

import sys
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.errors import DomainError
from mupsim.individual import IndividualizationModel, individual_changes, individualize, moderator_matrix
from mupsim.market import MEMBER_CELLS


def member_frame(counts):
    return pd.DataFrame(counts, columns=list(MEMBER_CELLS))


class TestIndividualize(unittest.TestCase):
    """Tests for the member-cell regression."""

    def setUp(self):
        rng = np.random.default_rng(8)
        n = 120
        self.counts = rng.integers(0, 2, size=(n, len(MEMBER_CELLS)))
        self.counts[:, MEMBER_CELLS.index("n_F_55p_high")] = 0
        self.counts[self.counts.sum(axis=1) == 0, 0] = 1
        self.beta = np.linspace(200.0, 800.0, len(MEMBER_CELLS))
        self.beta[MEMBER_CELLS.index("n_F_55p_high")] = 0.0
        self.moderators = rng.integers(0, 2, size=(n, 2)).astype(float)
        self.zeta = np.array([0.3, -0.2])
        self.ethanol = (self.counts @ self.beta) * np.exp(self.moderators @ self.zeta)

    def test_recovers_noiseless_coefficients(self):
        """Exact data give back the cell coefficients and moderators."""
        model = individualize("beers", self.ethanol, member_frame(self.counts), self.moderators,
                              ("small_city", "children"))
        kept = [c for c in MEMBER_CELLS if c != "n_F_55p_high"]
        self.assertEqual(model.cells, tuple(kept))
        expected = np.array([self.beta[MEMBER_CELLS.index(c)] for c in kept])
        np.testing.assert_allclose(model.beta, expected, rtol=1e-5)
        np.testing.assert_allclose(model.zeta, self.zeta, atol=1e-6)

    def test_empty_cell_is_dropped(self):
        """Cells without members are reported."""
        model = individualize("beers", self.ethanol, member_frame(self.counts), self.moderators,
                              ("small_city", "children"))
        self.assertEqual(model.dropped, ["n_F_55p_high"])

    def test_no_purchases(self):
        """A category nobody buys cannot be individualized."""
        with self.assertRaises(DomainError):
            individualize("beers", np.zeros(len(self.counts)), member_frame(self.counts), self.moderators)


class TestIndividualChanges(unittest.TestCase):
    """Tests for member intakes and changes."""

    def setUp(self):
        counts = np.zeros((2, len(MEMBER_CELLS)), dtype=int)
        counts[0, MEMBER_CELLS.index("n_M_35_54_low")] = 1
        counts[0, MEMBER_CELLS.index("n_F_35_54_low")] = 1
        counts[1, MEMBER_CELLS.index("n_F_18_34_high")] = 1
        self.households = pd.DataFrame({
            "id": ["h1", "h2"],
            "children": [2, 0],
            "small_city": [False, True],
            "habit": [1, 2],
            "income": [2, 3],
            "producing_region": [False, False],
        }).join(member_frame(counts))
        beta = np.ones(len(MEMBER_CELLS))
        beta[MEMBER_CELLS.index("n_M_35_54_low")] = 2.0
        self.model = IndividualizationModel("beers", MEMBER_CELLS, beta, (), np.zeros(0))

    def test_member_shares(self):
        """Each member's share follows the cell coefficients."""
        counts = self.households[list(MEMBER_CELLS)].to_numpy(float)
        shares = self.model.member_shares(counts, np.zeros((2, 0)))
        self.assertAlmostEqual(shares[0, MEMBER_CELLS.index("n_M_35_54_low")], 2.0 / 3.0)
        self.assertAlmostEqual(shares[0, MEMBER_CELLS.index("n_F_35_54_low")], 1.0 / 3.0)
        self.assertAlmostEqual(shares[1].sum(), 1.0)

    def test_changes_and_children(self):
        """Adults move with the household; children get zero intake and change."""
        ethanol0 = pd.DataFrame({"beers": [300.0, 50.0]}, index=["h1", "h2"])
        change = pd.DataFrame({"beers": [-0.1, -0.2]}, index=["h1", "h2"])
        frame = individual_changes({"beers": self.model}, self.households, ethanol0, change)
        h1 = frame[frame["household"] == "h1"].set_index("cell")
        self.assertEqual(list(h1.index), ["child", "n_F_35_54_low", "n_M_35_54_low"])
        self.assertAlmostEqual(h1.loc["n_M_35_54_low", "intake0"], 200.0)
        self.assertAlmostEqual(h1.loc["n_F_35_54_low", "dE"], -0.1)
        self.assertEqual(h1.loc["child", "members"], 2.0)
        self.assertEqual(h1.loc["child", "dE"], 0.0)
        h2 = frame[frame["household"] == "h2"]
        self.assertEqual(len(h2), 1)
        self.assertAlmostEqual(float(h2["dE"].iloc[0]), -0.2)

    def test_moderator_matrix(self):
        """Dummies follow the household columns."""
        matrix = moderator_matrix(self.households, ("small_city", "children", "income_3"))
        np.testing.assert_array_equal(matrix, [[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]])


if __name__ == '__main__':
    unittest.main()
