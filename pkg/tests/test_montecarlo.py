#!/usr/bin/env python3
"""
Tests for Monte Carlo confidence intervals.
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.errors import ConfigError, NumericError
from mupsim.montecarlo import monte_carlo_ci, replication_generators


def noisy_mean(rng):
    return {"mean": float(rng.normal(1.0, 0.1, size=50).mean()), "constant": 3.0}


class TestMonteCarlo(unittest.TestCase):
    """Tests for replication seeding and percentile intervals."""

    def test_same_seed_same_intervals(self):
        """Intervals are reproducible from the root seed."""
        first = monte_carlo_ci({"mean": 1.0, "constant": 3.0}, noisy_mean, 40, seed=12)
        second = monte_carlo_ci({"mean": 1.0, "constant": 3.0}, noisy_mean, 40, seed=12)
        self.assertTrue(first.table.equals(second.table))

    def test_other_seed_other_draws(self):
        """Different seeds give different replications."""
        first = monte_carlo_ci({"mean": 1.0}, noisy_mean, 10, seed=1)
        second = monte_carlo_ci({"mean": 1.0}, noisy_mean, 10, seed=2)
        self.assertFalse(np.allclose(first.draws["mean"], second.draws["mean"]))

    def test_substreams_are_independent_of_count(self):
        """The k-th replication does not depend on how many run."""
        short = [rng.random() for rng in replication_generators(5, 3)]
        long = [rng.random() for rng in replication_generators(5, 10)][:3]
        self.assertEqual(short, long)

    def test_interval_covers_point(self):
        """The interval brackets the point estimate of a centered statistic."""
        result = monte_carlo_ci({"mean": 1.0, "constant": 3.0}, noisy_mean, 200, seed=3)
        low, high = result.interval("mean")
        self.assertLess(low, 1.0)
        self.assertGreater(high, 1.0)
        self.assertEqual(result.interval("constant"), (3.0, 3.0))

    def test_zero_replications(self):
        """Without replications the bounds are NaN and the point is kept."""
        result = monte_carlo_ci({"mean": 1.0}, noisy_mean, 0, seed=3)
        row = result.table.iloc[0]
        self.assertEqual(row["point"], 1.0)
        self.assertTrue(np.isnan(row["lo95"]))
        self.assertTrue(np.isnan(row["hi95"]))

    def test_failed_replications_are_excluded(self):
        """Replications raising a numeric error are counted, not used."""
        calls = []

        def sometimes_fails(rng):
            calls.append(1)
            if len(calls) % 2 == 0:
                raise NumericError("no equilibrium")
            return {"mean": 1.0}

        result = monte_carlo_ci({"mean": 1.0}, sometimes_fails, 10, seed=0)
        self.assertEqual(result.failures, 5)
        self.assertEqual(len(result.draws), 5)
        self.assertEqual(len(result.errors), 5)

    def test_invalid_settings(self):
        """Unknown schemes and negative counts are configuration errors."""
        with self.assertRaises(ConfigError):
            monte_carlo_ci({"mean": 1.0}, noisy_mean, 5, seed=0, scheme="jackknife")
        with self.assertRaises(ConfigError):
            monte_carlo_ci({"mean": 1.0}, noisy_mean, -1, seed=0)


if __name__ == '__main__':
    unittest.main()
