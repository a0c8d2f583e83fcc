"""
XHTML summary of the report tables.
"""

import logging
import math
from pathlib import Path
from typing import Mapping, Union

import pandas as pd
from lxml import etree

logger = logging.getLogger(__name__)

XHTML_NS = "http://www.w3.org/1999/xhtml"

TABLE_TITLES = {
    "impacts_pure_alcohol": "Pure alcohol purchases",
    "quantity_effects": "Quantities, unit prices and pass-through",
    "quality_effects": "Alcohol content",
    "heterogeneity": "Heterogeneity and welfare",
    "profits": "Profits",
    "tax_revenue": "Tax revenue",
}


def format_value(value) -> str:
    """Numbers with four significant decimals; missing values as an empty cell."""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.4g}" if abs(value) < 1e5 else f"{value:,.0f}"
    return str(value)


def build_summary(tables: Mapping[str, pd.DataFrame], title: str = "Simulation summary") -> str:
    """
    Build an XHTML document with one section and table per report.

    Args:
        tables: Report tables by name, in display order.
        title: Document title.

    Returns:
        The document as a string.
    """
    html = etree.Element("html", nsmap={None: XHTML_NS})
    html.set("{http://www.w3.org/XML/1998/namespace}lang", "en")
    head = etree.SubElement(html, "head")
    meta = etree.SubElement(head, "meta")
    meta.set("charset", "UTF-8")
    etree.SubElement(head, "title").text = title
    body = etree.SubElement(html, "body")
    etree.SubElement(body, "h1").text = title

    for name, frame in tables.items():
        section = etree.SubElement(body, "section")
        section.set("id", name)
        etree.SubElement(section, "h2").text = TABLE_TITLES.get(name, name)
        if frame.empty:
            etree.SubElement(section, "p").text = "No rows."
            continue
        table = etree.SubElement(section, "table")
        header = etree.SubElement(etree.SubElement(table, "thead"), "tr")
        for column in frame.columns:
            etree.SubElement(header, "th").text = str(column)
        tbody = etree.SubElement(table, "tbody")
        for record in frame.itertuples(index=False):
            row = etree.SubElement(tbody, "tr")
            for value in record:
                etree.SubElement(row, "td").text = format_value(value)

    body_str = etree.tostring(html, encoding="UTF-8", pretty_print=True).decode("utf-8")
    if body_str.startswith("<?xml"):
        body_str = body_str.split("?>", 1)[1].lstrip("\n")
    return '<?xml version="1.0" encoding="UTF-8"?>\n<!DOCTYPE html>\n' + body_str


def write_summary(tables: Mapping[str, pd.DataFrame], path: Union[str, Path],
                  title: str = "Simulation summary") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(build_summary(tables, title), encoding="utf-8")
    logger.info("Summary written to %s", path)
    return path
