"""
mupsim - Alcohol market simulation of minimum unit prices and volumetric taxes.

Supports:
- Random-coefficient logit demand within categories and a share system across them
- Marginal-cost calibration and counterfactual price equilibria
- Household ethanol, welfare, profit and tax-revenue outcomes with Monte Carlo intervals
"""

__version__ = "1.0.0"

from .config import PipelineConfig, load_config
from .market import Product, TaxSchedule, Household, Cluster
from .quality import MixedLogitModel, MixedLogitMarket
from .quantity import QuaidsModel
from .supply import OwnershipStructure, MarketEquilibrium
from .policy import Scenario, ImpactTable
from .pipeline import Pipeline

__all__ = [
    "PipelineConfig", "load_config", "Product", "TaxSchedule", "Household", "Cluster",
    "MixedLogitModel", "MixedLogitMarket", "QuaidsModel", "OwnershipStructure",
    "MarketEquilibrium", "Scenario", "ImpactTable", "Pipeline",
]
