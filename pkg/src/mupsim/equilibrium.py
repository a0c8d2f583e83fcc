"""
Counterfactual price equilibria.

This module handles:
- The damped fixed-point iteration p = (1 + tau)(M(p) + C + T) for tax changes
- The projected iteration p = max(floor, .) for minimum unit prices
- Convergence certificates (first-order-condition residual) and solver traces
- Pass-through of cost changes to consumer prices
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, NumericError
from .supply import MarketEquilibrium, OwnershipStructure, constrained_margin_map, margin_map

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "step", "residual", "damping")
PASS_THROUGH_UNITS = ("consumer", "pretax")
FLOOR_TOL = 1e-12


@dataclass
class SolverConfig:
    """Iteration limits, tolerances and damping of the price solver."""
    max_iter: int = 2000
    tol_price: float = 1e-8
    tol_foc: float = 1e-6
    damping: float = 0.5
    oscillation_window: int = 8

    def __post_init__(self):
        if self.tol_price <= 0 or self.tol_foc <= 0:
            raise ConfigError("Solver tolerances must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("Solver damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ConfigError("Solver needs at least one iteration")


@dataclass
class SolverResult:
    """Outcome of a counterfactual solve."""
    category: str
    prices: np.ndarray
    converged: bool
    iterations: int
    residual: float
    damping: float
    equilibrium: Optional[MarketEquilibrium] = None
    binding: List[str] = field(default_factory=list)
    trace: List[tuple] = field(default_factory=list)

    def trace_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.trace, columns=list(TRACE_COLUMNS))
        frame.insert(0, "category", self.category)
        return frame


def price_target(market, ownership: OwnershipStructure, prices: np.ndarray, costs: np.ndarray,
                 taxes: np.ndarray, floors: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Right-hand side of the fixed point: max(floor, (1 + tau)(M(p) + C + T)).

    Under floors, products at their floor keep the floor margin and the other
    conditions are solved given it. A product whose free target falls below
    its floor joins the held set before the targets are returned; a held
    product whose own condition asks for a higher price is released.
    """
    shares, jacobian = market.shares(prices), market.jacobian(prices)
    gross = 1.0 + ownership.vat_rate
    if floors is None:
        return gross * (margin_map(ownership, shares, jacobian) + costs + taxes)
    floor_margins = floors / gross - costs - taxes
    held = prices <= floors + FLOOR_TOL * (1.0 + np.abs(floors))
    for _ in range(ownership.size + 1):
        margins, desired = constrained_margin_map(ownership, shares, jacobian, held, floor_margins)
        target = gross * (margins + costs + taxes)
        below = ~held & (target < floors)
        if not np.any(below):
            break
        held = held | below
    target = np.where(held, gross * (desired + costs + taxes), target)
    return np.maximum(floors, target)


def foc_residual(prices: np.ndarray, margins: np.ndarray, costs: np.ndarray, taxes: np.ndarray,
                 vat_rate: float, floors: Optional[np.ndarray] = None) -> float:
    """
    Max-norm of p - max(floor, (1 + tau)(M(p) + C + T)), in consumer-price units.

    Products held at their floor count as satisfied when the unconstrained
    target lies below the floor.
    """
    target = (1.0 + vat_rate) * (np.asarray(margins) + costs + taxes)
    if floors is not None:
        target = np.maximum(floors, target)
    return float(np.max(np.abs(np.asarray(prices, dtype=float) - target)))


def _solve(category: str, market, ownership: OwnershipStructure, start: np.ndarray, costs: np.ndarray,
           taxes: np.ndarray, config: SolverConfig, floors: Optional[np.ndarray],
           market_size: float) -> SolverResult:
    costs = np.asarray(costs, dtype=float)
    taxes = np.asarray(taxes, dtype=float)
    prices = np.asarray(start, dtype=float).copy()
    if floors is not None:
        floors = np.asarray(floors, dtype=float)
        prices = np.maximum(prices, floors)
    damping = config.damping
    halved = False
    trace = []
    best_prices, best_residual = prices.copy(), np.inf
    rising = 0
    previous = np.inf
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        target = price_target(market, ownership, prices, costs, taxes, floors)
        gap = target - prices
        residual = float(np.max(np.abs(gap)))
        step = damping * residual
        trace.append((iteration, step, residual, damping))
        if not np.isfinite(residual):
            raise NumericError(f"Price iteration diverged in {category}")
        if residual < best_residual:
            best_prices, best_residual = prices.copy(), residual
        if residual <= config.tol_foc and step <= config.tol_price * (1.0 + np.max(np.abs(prices))):
            converged = True
            break
        rising = rising + 1 if residual > previous else 0
        previous = residual
        if rising >= config.oscillation_window:
            if halved:
                logger.warning("Price iteration in %s oscillates after halving damping; stopping", category)
                break
            damping /= 2.0
            halved = True
            rising = 0
            logger.warning("Price iteration in %s oscillates; damping halved to %.3g", category, damping)
        prices = prices + damping * gap
    if not converged:
        prices = best_prices
        logger.warning("Price equilibrium in %s not reached after %d iterations (residual %.3g)",
                       category, iteration, best_residual)
    residual = best_residual if not converged else residual
    equilibrium = MarketEquilibrium.at_prices(category, market, ownership, prices, costs, taxes, market_size)
    binding = []
    if floors is not None:
        binding = [str(pid) for pid, p, f in zip(ownership.product_ids, prices, floors)
                   if p <= f + config.tol_foc]
    return SolverResult(category, prices, converged, iteration, residual, damping, equilibrium, binding, trace)


def solve_tax_counterfactual(category: str, market, ownership: OwnershipStructure, taxes: np.ndarray,
                             costs: np.ndarray, prices0: np.ndarray, config: Optional[SolverConfig] = None,
                             market_size: float = 1.0) -> SolverResult:
    """
    Equilibrium prices under a new excise vector.

    Args:
        category: Category name (for logs and traces).
        market: Demand with `shares(p)` and `jacobian(p)`.
        ownership: Pricing-control sets.
        taxes: New excise per liter T1.
        costs: Calibrated marginal costs.
        prices0: Baseline prices, the starting point.
        config: Solver settings.
        market_size: Category market size, carried to the returned equilibrium.
    """
    return _solve(category, market, ownership, prices0, costs, taxes, config or SolverConfig(), None, market_size)


def solve_mup_counterfactual(category: str, market, ownership: OwnershipStructure, floors: np.ndarray,
                             taxes: np.ndarray, costs: np.ndarray, prices0: np.ndarray,
                             config: Optional[SolverConfig] = None,
                             market_size: float = 1.0) -> SolverResult:
    """
    Equilibrium prices when consumer prices may not fall below `floors`.

    The iteration projects each price on its floor; `binding` lists the
    products priced at the floor.
    """
    return _solve(category, market, ownership, prices0, costs, taxes, config or SolverConfig(), floors, market_size)


def pass_through(prices0: np.ndarray, prices1: np.ndarray, cost0: np.ndarray, cost1: np.ndarray,
                 vat_rate: float, units: str = "consumer") -> np.ndarray:
    """
    Price change over the change in pre-tax unit cost (marginal cost plus excise).

    With units "consumer" the consumer price change is divided by the cost
    change, so full mechanical transmission gives 1 + tau; with "pretax" the
    price change is taken net of VAT and full transmission gives 1. Products
    whose cost does not move get NaN.
    """
    if units not in PASS_THROUGH_UNITS:
        raise ConfigError(f"Unknown pass-through units {units!r}")
    change = np.asarray(prices1, dtype=float) - np.asarray(prices0, dtype=float)
    if units == "pretax":
        change = change / (1.0 + vat_rate)
    cost_change = np.asarray(cost1, dtype=float) - np.asarray(cost0, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(cost_change != 0, change / np.where(cost_change != 0, cost_change, 1.0), np.nan)
