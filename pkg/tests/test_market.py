#!/usr/bin/env python3
"""
Tests for the market domain model.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.errors import DomainError, MissingArtifactError, SchemaError
from mupsim.market import (
    PRODUCT_COLUMNS,
    Cluster,
    Product,
    TaxSchedule,
    cluster_ids,
    ethanol_grams,
    excise_vector,
    implicit_tax_rate,
    mup_floor_price,
    read_table,
    risk_class,
    standard_drinks,
    tax_per_liter,
    write_table,
)


def make_product(degree=12.0, price=5.0, excise=0.04):
    return Product("P1", "still-wines", "still", "B1", "M1", "R1", "small", degree, 0.75, price, excise)


class TestAlcoholContent(unittest.TestCase):
    """Tests for ethanol and standard-drink conversions."""

    def test_bottle_of_wine(self):
        """A 75 cl bottle at 12 degrees holds 72 g, 7.2 standard drinks."""
        self.assertAlmostEqual(ethanol_grams(12, 0.75), 72.0)
        self.assertAlmostEqual(standard_drinks(12, 0.75), 7.2)

    def test_alcohol_free(self):
        """Alcohol-free products contain no ethanol."""
        self.assertEqual(ethanol_grams(0, 1.0), 0.0)

    def test_spirits(self):
        """70 cl of spirits at 40 degrees hold 224 g."""
        self.assertAlmostEqual(ethanol_grams(40, 0.7), 224.0)

    def test_vectorized(self):
        """Arrays of degrees give arrays of grams."""
        grams = ethanol_grams(np.array([5.0, 12.0]), 1.0)
        np.testing.assert_allclose(grams, [40.0, 96.0])

    def test_out_of_range_degree(self):
        """Degrees outside [0, 100] are rejected."""
        with self.assertRaises(DomainError):
            ethanol_grams(120, 1.0)
        with self.assertRaises(DomainError):
            ethanol_grams(-1, 1.0)


class TestTaxSchedule(unittest.TestCase):
    """Tests for excise schedules."""

    def test_uniform(self):
        """Uniform excise is base rate times degree."""
        schedule = TaxSchedule("uniform-volumetric", 0.10)
        self.assertAlmostEqual(tax_per_liter(make_product(12.0), schedule), 1.20)

    def test_progressive(self):
        """Degrees in higher bands pay higher multipliers."""
        schedule = TaxSchedule("progressive-volumetric", 0.10)
        self.assertAlmostEqual(tax_per_liter(make_product(12.0), schedule), 2.10)
        self.assertAlmostEqual(tax_per_liter(make_product(4.0), schedule), 0.40)

    def test_current_returns_stored_excise(self):
        """The current schedule keeps the baseline excise."""
        self.assertAlmostEqual(tax_per_liter(make_product(excise=0.037), TaxSchedule()), 0.037)

    def test_excise_vector(self):
        """The vectorized form matches the per-product form."""
        schedule = TaxSchedule("progressive-volumetric", 0.10)
        np.testing.assert_allclose(excise_vector([4.0, 12.0, 40.0], schedule), [0.40, 2.10, 14.5])

    def test_current_vector_needs_baseline(self):
        """The current schedule cannot price products without stored excise."""
        with self.assertRaises(DomainError):
            excise_vector([12.0], TaxSchedule())

    def test_invalid_schedules(self):
        """Bad bands, multipliers and rates are rejected."""
        with self.assertRaises(DomainError):
            TaxSchedule("uniform-volumetric", -0.1)
        with self.assertRaises(DomainError):
            TaxSchedule("progressive-volumetric", 0.1, band_multipliers=(1, 1, 2, 3, 4, 5))
        with self.assertRaises(DomainError):
            TaxSchedule("uniform-volumetric", 0.1, band_edges=(0, 50, 90))


class TestFloorsAndRates(unittest.TestCase):
    """Tests for minimum unit prices and implicit tax rates."""

    def test_mup_floor(self):
        """0.5 EUR per drink gives 4.8 EUR/L at 12 degrees and 16 EUR/L at 40."""
        self.assertAlmostEqual(mup_floor_price(12.0, 0.5), 4.8)
        self.assertAlmostEqual(mup_floor_price(40.0, 0.5), 16.0)
        self.assertAlmostEqual(mup_floor_price(make_product(5.8), 0.5), 2.32)

    def test_mup_must_be_non_negative(self):
        """A negative minimum price is rejected."""
        with self.assertRaises(DomainError):
            mup_floor_price(12.0, -0.1)

    def test_implicit_tax_rate(self):
        """Tax over sales net of tax."""
        self.assertAlmostEqual(implicit_tax_rate(120.0, 20.0), 20.0)
        with self.assertRaises(DomainError):
            implicit_tax_rate(10.0, 10.0)


class TestProductsAndHouseholds(unittest.TestCase):
    """Tests for domain invariants."""

    def test_product_invariants(self):
        """Degree, price and excise are validated."""
        with self.assertRaises(DomainError):
            make_product(degree=101.0)
        with self.assertRaises(DomainError):
            make_product(price=0.0)
        with self.assertRaises(DomainError):
            make_product(excise=-1.0)

    def test_alcohol_content(self):
        """Content in g/L is eight times the degree."""
        self.assertAlmostEqual(make_product(12.5).ethanol_per_liter, 100.0)

    def test_risk_classes(self):
        """Risk groups split at one and two drinks per adult per day."""
        self.assertEqual(list(risk_class([0.5, 1.0, 1.9, 2.0])), ["low", "moderate", "moderate", "high"])

    def test_cluster_ids(self):
        """Cluster ids combine income, age, habit and children."""
        households = pd.DataFrame({"income": [2], "age": [3], "habit": [1], "children": [2]})
        self.assertEqual(cluster_ids(households).iloc[0], "i2-a3-h1-c1")

    def test_cluster_budget_shares(self):
        """Shares sum to one where the cluster buys alcohol."""
        cluster = Cluster("c", (1,), (1.0,), np.array([[1.0, 3.0], [0.0, 0.0]]),
                          np.ones((2, 2)), np.zeros((2, 2)), np.ones((2, 2)))
        np.testing.assert_allclose(cluster.budget_shares(), [[0.25, 0.75], [0.0, 0.0]])


class TestTables(unittest.TestCase):
    """Tests for CSV artifacts."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_missing_artifact_names_stage(self):
        """A missing file points to the stage that writes it."""
        with self.assertRaises(MissingArtifactError) as context:
            read_table(self.dir / "products.csv", PRODUCT_COLUMNS, "generate")
        self.assertIn("mupsim generate", str(context.exception))

    def test_schema_mismatch_lists_columns(self):
        """Missing columns are named."""
        write_table(pd.DataFrame({"id": ["A"], "price": [1.0]}), self.dir / "products.csv")
        with self.assertRaises(SchemaError) as context:
            read_table(self.dir / "products.csv", PRODUCT_COLUMNS)
        self.assertIn("degree", context.exception.missing)

    def test_write_is_reproducible(self):
        """Writing the same frame twice gives identical bytes."""
        frame = pd.DataFrame({"id": ["A", "B"], "value": [1.0 / 3.0, 2.0]})
        first = write_table(frame, self.dir / "a.csv").read_bytes()
        second = write_table(frame, self.dir / "b.csv").read_bytes()
        self.assertEqual(first, second)


if __name__ == '__main__':
    unittest.main()
