#!/usr/bin/env python3
"""
Tests for the XHTML summary.
"""

import sys
import tempfile
import unittest
from pathlib import Path

import pandas as pd
from lxml import etree

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from mupsim.report import XHTML_NS, build_summary, format_value, write_summary

NS = {"x": XHTML_NS}


def impacts_table():
    return pd.DataFrame({
        "scenario": ["mup", "low-uniform"],
        "statistic": ["dE_pct:all", "dE_pct:all"],
        "point": [-7.25, -1.5],
        "lo95": [-8.0, float("nan")],
        "hi95": [-6.5, float("nan")],
    })


class TestSummary(unittest.TestCase):
    """Tests for the summary document."""

    def test_document_structure(self):
        """One section and table per report, rows in order."""
        content = build_summary({"impacts_pure_alcohol": impacts_table(), "profits": pd.DataFrame()})
        self.assertTrue(content.startswith('<?xml version="1.0" encoding="UTF-8"?>\n<!DOCTYPE html>'))
        root = etree.fromstring(content.encode("utf-8"))
        sections = root.findall(".//x:section", NS)
        self.assertEqual([s.get("id") for s in sections], ["impacts_pure_alcohol", "profits"])
        cells = [td.text for td in sections[0].findall(".//x:tbody/x:tr[1]/x:td", NS)]
        self.assertEqual(cells, ["mup", "dE_pct:all", "-7.25", "-8", "-6.5"])
        self.assertEqual(sections[1].find("x:p", NS).text, "No rows.")

    def test_titles(self):
        """Known tables get readable headings."""
        content = build_summary({"impacts_pure_alcohol": impacts_table()}, title="Run")
        root = etree.fromstring(content.encode("utf-8"))
        self.assertEqual(root.find(".//x:h2", NS).text, "Pure alcohol purchases")
        self.assertEqual(root.find(".//x:title", NS).text, "Run")

    def test_format_value(self):
        """Missing values are blank and large numbers get separators."""
        self.assertEqual(format_value(float("nan")), "")
        self.assertEqual(format_value(1234567.0), "1,234,567")
        self.assertEqual(format_value(0.123456), "0.1235")
        self.assertEqual(format_value("mup"), "mup")

    def test_write_summary(self):
        """The document is written where asked, creating directories."""
        with tempfile.TemporaryDirectory() as tmp:
            path = write_summary({"impacts_pure_alcohol": impacts_table()}, Path(tmp) / "reports" / "summary.xhtml")
            self.assertTrue(path.exists())
            self.assertIn("low-uniform", path.read_text(encoding="utf-8"))


if __name__ == '__main__':
    unittest.main()
