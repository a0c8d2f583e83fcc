#!/usr/bin/env python3
"""
End-to-end tests: every stage on a small generated panel.
"""

import contextlib
import io
import json
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import pandas as pd

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.cli import EXIT_OK, main
from mupsim.config import config_from_dict
from mupsim.pipeline import REPORT_COLUMNS, REPORT_TABLES, Pipeline

SCENARIOS = ["high-progressive", "mup"]


def small_profile(root: Path) -> dict:
    return {
        "data_dir": str(root / "data"),
        "out_dir": str(root / "out"),
        "seed": 7,
        "synthetic": {"n_households": 600, "n_periods": 4, "n_retailers": 2},
        "quality": {"draw_level": 5, "posterior_draws": 50},
        "policy": {"scenarios": SCENARIOS, "replications": 2},
    }


class TestPipeline(unittest.TestCase):
    """Runs generate through validate once, through the API and again through the CLI."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        root = Path(cls.tmp.name)
        cls.api_root = root / "api"
        cls.cli_root = root / "cli"

        cls.pipeline = Pipeline(config_from_dict(small_profile(cls.api_root)))
        cls.pipeline.generate()
        cls.pipeline.estimate_quality()
        cls.pipeline.estimate_quantity()
        cls.pipeline.calibrate_supply()
        cls.pipeline.calibrate_tax()
        cls.tables = cls.pipeline.simulate()
        cls.summary = cls.pipeline.report()
        cls.failures = cls.pipeline.validate()

        config = root / "config.json"
        config.write_text(json.dumps(small_profile(cls.cli_root)), encoding="utf-8")
        cls.codes = {}
        with mock.patch.dict("os.environ", {}, clear=True), \
                contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
            for stage in ("generate", "estimate-quality", "estimate-quantity", "calibrate-supply",
                          "calibrate-tax", "simulate", "report", "validate"):
                cls.codes[stage] = main([stage, "--config", str(config)])

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def point(self, table: str, scenario: str, statistic: str) -> float:
        frame = self.tables[table]
        rows = frame[(frame["scenario"] == scenario) & (frame["statistic"] == statistic)]
        self.assertEqual(len(rows), 1, f"{table}: {scenario} {statistic}")
        return float(rows["point"].iloc[0])

    def test_report_tables_written(self):
        """All six report tables exist with the scenario rows and the summary page."""
        report_dir = self.api_root / "out" / "reports"
        for name in REPORT_TABLES:
            frame = pd.read_csv(report_dir / f"{name}.csv")
            self.assertEqual(list(frame.columns), list(REPORT_COLUMNS))
            self.assertEqual(sorted(frame["scenario"].unique()), sorted(SCENARIOS))
        self.assertTrue(self.summary.exists())

    def test_validate_passes(self):
        """The invariant checks hold on a fresh run."""
        self.assertEqual(self.failures, [])
        self.assertEqual(self.codes["validate"], EXIT_OK)

    def test_every_cli_stage_succeeds(self):
        """Each stage run from the command line exits cleanly."""
        self.assertEqual(set(self.codes.values()), {EXIT_OK})

    def test_same_seed_same_outputs(self):
        """Both runs share a seed and write byte-identical data and report tables."""
        names = ["data/products.csv", "data/purchases.csv", "out/pseudo_panel.csv", "out/tax_rates.json"]
        names += [f"out/reports/{name}.csv" for name in REPORT_TABLES]
        for name in names:
            self.assertEqual((self.api_root / name).read_bytes(), (self.cli_root / name).read_bytes(), name)

    def test_policies_reduce_pure_alcohol(self):
        """Both the minimum price and the high progressive tax cut pure alcohol purchases."""
        for scenario in SCENARIOS:
            self.assertLess(self.point("impacts_pure_alcohol", scenario, "dE_pct:all"), 0.0, scenario)

    def test_still_wines_rise_most_under_minimum_price(self):
        """The cheapest alcohol per degree sees the largest unit-price rise."""
        rises = {name: self.point("quantity_effects", "mup", f"unit_price_pct:{name}")
                 for name in ("ciders", "beers", "aperitifs", "spirits", "still-wines", "sparkling-wines")}
        self.assertEqual(max(rises, key=rises.get), "still-wines")
        self.assertGreater(rises["still-wines"], 0.0)
        self.assertGreater(self.point("quantity_effects", "mup", "binding_products:still-wines"), 0.0)

    def test_minimum_price_shifts_revenue_from_excise_to_vat(self):
        """Excise revenue falls with volumes while VAT on dearer wine rises."""
        self.assertLess(self.point("tax_revenue", "mup", "excise_pct:all"), 0.0)
        self.assertGreater(self.point("tax_revenue", "mup", "vat_pct:still-wines"), 0.0)

    def test_heavy_drinkers_cut_more_alcohol(self):
        """High-risk households lose more liters of ethanol per household than low-risk ones."""
        households = pd.read_csv(self.api_root / "out" / "scenarios" / "mup" / "household_impacts.csv")
        change = households["E0"] * households["dE"]
        by_risk = {}
        for group in ("low", "high"):
            rows = households["risk"] == group
            by_risk[group] = abs(float(np.average(change[rows], weights=households.loc[rows, "weight"])))
        self.assertGreater(by_risk["high"], by_risk["low"])

    def test_scenario_directories(self):
        """Each scenario directory carries its prices, impacts and manifest."""
        for scenario in SCENARIOS:
            directory = self.api_root / "out" / "scenarios" / scenario
            for name in ("equilibrium_prices.csv", "household_impacts.csv", "household_categories.csv",
                         "tax_revenue_detail.csv", "manifest.json"):
                self.assertTrue((directory / name).exists(), f"{scenario}/{name}")
        prices = pd.read_csv(self.api_root / "out" / "scenarios" / "mup" / "equilibrium_prices.csv")
        floors = 0.4 * self.pipeline.tables()["products"].set_index("id")["degree"].reindex(prices["product"])
        self.assertTrue(np.all(prices["price1"].to_numpy() >= floors.to_numpy() - 1e-9))


if __name__ == '__main__':
    unittest.main()
