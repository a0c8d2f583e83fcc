"""
Vertical-contract supply side of a category.

This module handles:
- Pricing-control sets: manufacturers price their national brands, retailers
  price their private labels
- The margin map M(p) solving the stacked first-order conditions
- Marginal-cost calibration at observed prices
- Channel profits and the quantity / quality / price decomposition of profit changes
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from .errors import DomainError, NumericError
from .market import DEFAULT_VAT_RATE

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12
GROUPINGS = ("category", "size", "firm")


@dataclass
class OwnershipStructure:
    """
    Who sets each product's retail price.

    Each product has exactly one controller: "M:<manufacturer>" for national
    brands (resale price maintenance) or "R:<retailer>" for private labels.
    """
    product_ids: np.ndarray
    manufacturers: np.ndarray
    retailers: np.ndarray
    private_label: np.ndarray
    size_classes: np.ndarray
    vat_rate: float = DEFAULT_VAT_RATE

    def __post_init__(self):
        self.product_ids = np.asarray(self.product_ids).astype(str)
        self.manufacturers = np.asarray(self.manufacturers).astype(str)
        self.retailers = np.asarray(self.retailers).astype(str)
        self.private_label = np.asarray(self.private_label, dtype=bool)
        self.size_classes = np.asarray(self.size_classes).astype(str)
        if len(set(self.product_ids)) != len(self.product_ids):
            raise DomainError("Products must be listed once in an ownership structure")
        if self.vat_rate < 0:
            raise DomainError("VAT rate must be non-negative")

    @classmethod
    def from_products(cls, products: pd.DataFrame, vat_rate: float = DEFAULT_VAT_RATE) -> "OwnershipStructure":
        if "private_label" in products:
            private = products["private_label"].astype(bool).to_numpy()
        else:
            private = np.zeros(len(products), dtype=bool)
        return cls(products["id"].to_numpy(), products["manufacturer"].to_numpy(),
                   products["retailer"].to_numpy(), private, products["size_class"].to_numpy(), vat_rate)

    @property
    def size(self) -> int:
        return len(self.product_ids)

    @property
    def controllers(self) -> np.ndarray:
        return np.where(self.private_label, np.char.add("R:", self.retailers),
                        np.char.add("M:", self.manufacturers))

    def control_sets(self) -> Dict[str, List[int]]:
        """Product indices by pricing firm; the sets partition the products."""
        sets: Dict[str, List[int]] = {}
        for index, controller in enumerate(self.controllers):
            sets.setdefault(controller, []).append(index)
        return sets

    def foc_mask(self) -> np.ndarray:
        """
        mask[j, k] = 1 when margin k enters the first-order condition of product j.

        A national brand's condition covers its manufacturer's portfolio and every
        private label; a private label's covers its retailer's private labels.
        """
        controllers = self.controllers
        same = controllers[:, None] == controllers[None, :]
        national_to_private = (~self.private_label)[:, None] & self.private_label[None, :]
        return (same | national_to_private).astype(float)

    def merged(self, first: str, second: str) -> "OwnershipStructure":
        """Ownership after manufacturer `second` is absorbed by `first`."""
        manufacturers = np.where(self.manufacturers == second, first, self.manufacturers)
        return OwnershipStructure(self.product_ids, manufacturers, self.retailers,
                                  self.private_label, self.size_classes, self.vat_rate)


def _solve_foc(system: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    condition = np.linalg.cond(system)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericError(f"Singular first-order-condition system (condition number {condition:.3g})")
    try:
        return linalg.solve(system, rhs)
    except linalg.LinAlgError as e:
        raise NumericError(f"Singular first-order-condition system (condition number {condition:.3g})") from e


def margin_map(ownership: OwnershipStructure, shares: np.ndarray, jacobian: np.ndarray) -> np.ndarray:
    """
    Margins solving the first-order conditions at the current prices.

    Args:
        ownership: Pricing-control sets.
        shares: Market shares s(p).
        jacobian: jacobian[j, k] = d s_k / d p_j.

    Returns:
        Per-unit margins m, in the units of the VAT-exclusive price.

    Raises:
        NumericError: when the masked system is singular.
    """
    shares = np.asarray(shares, dtype=float)
    system = ownership.foc_mask() * np.asarray(jacobian, dtype=float)
    return _solve_foc(system, -shares)


def constrained_margin_map(ownership: OwnershipStructure, shares: np.ndarray, jacobian: np.ndarray,
                           held: np.ndarray, held_margins: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Margins of the free products when the `held` products keep given margins.

    The conditions of held products are dropped and the free rows are solved
    with the held margins on the right-hand side. For each held product the
    second array holds the margin that would zero its own condition, every
    other margin as returned; a value below the held margin means the firm
    would price lower if it could.

    Returns:
        (margins, desired) with desired equal to margins on free products.
    """
    shares = np.asarray(shares, dtype=float)
    held = np.asarray(held, dtype=bool)
    free = ~held
    system = ownership.foc_mask() * np.asarray(jacobian, dtype=float)
    margins = np.where(held, np.asarray(held_margins, dtype=float), 0.0)
    if np.any(free):
        rhs = -shares[free] - system[np.ix_(free, held)] @ margins[held]
        margins[free] = _solve_foc(system[np.ix_(free, free)], rhs)
    desired = margins.copy()
    if np.any(held):
        condition = shares + system @ margins
        diagonal = np.diag(system)[held]
        if np.any(diagonal >= 0):
            raise NumericError("Own-price share derivative must be negative for a product held at its floor")
        desired[held] = margins[held] - condition[held] / diagonal
    return margins, desired


def foc_system_residual(ownership: OwnershipStructure, margins: np.ndarray, shares: np.ndarray,
                        jacobian: np.ndarray, rows: Optional[np.ndarray] = None) -> float:
    """Max-norm of the stacked first-order conditions at the given margins, optionally on `rows` only."""
    system = ownership.foc_mask() * np.asarray(jacobian, dtype=float)
    conditions = system @ np.asarray(margins, dtype=float) + shares
    if rows is not None:
        conditions = conditions[np.asarray(rows, dtype=bool)]
    return float(np.max(np.abs(conditions), initial=0.0))


@dataclass
class MarketEquilibrium:
    """Prices, demand and margins of one category at a price vector."""
    category: str
    ownership: OwnershipStructure
    prices: np.ndarray
    shares: np.ndarray
    jacobian: np.ndarray
    costs: np.ndarray
    taxes: np.ndarray
    market_size: float
    margins: np.ndarray = field(init=False)

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=float)
        self.margins = self.prices / (1.0 + self.ownership.vat_rate) - self.costs - self.taxes

    @classmethod
    def at_prices(cls, category: str, market, ownership: OwnershipStructure, prices: np.ndarray,
                  costs: np.ndarray, taxes: np.ndarray, market_size: float) -> "MarketEquilibrium":
        prices = np.asarray(prices, dtype=float)
        return cls(category, ownership, prices, market.shares(prices).copy(), market.jacobian(prices).copy(),
                   np.asarray(costs, dtype=float), np.asarray(taxes, dtype=float), market_size)

    @property
    def margin_pct(self) -> np.ndarray:
        """Margin as a percentage of the consumer price."""
        return 100.0 * self.margins * (1.0 + self.ownership.vat_rate) / self.prices

    @property
    def volumes(self) -> np.ndarray:
        return self.market_size * self.shares

    def profits(self) -> np.ndarray:
        """Per-product marginal profit Q m_j s_j (fixed fees excluded)."""
        return self.market_size * self.margins * self.shares


@dataclass
class CostCalibration:
    """Marginal costs recovered from observed prices."""
    category: str
    product_ids: np.ndarray
    costs: np.ndarray
    margins: np.ndarray
    margin_pct: np.ndarray
    negative: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "product": self.product_ids,
            "marginal_cost": self.costs,
            "margin": self.margins,
            "margin_pct": self.margin_pct,
        })


def calibrate_marginal_costs(prices: np.ndarray, taxes: np.ndarray, ownership: OwnershipStructure,
                             demand, category: str = "") -> CostCalibration:
    """
    Marginal costs C = p / (1 + tau) - T0 - M(p) at observed prices.

    Args:
        prices: Observed consumer prices (VAT included).
        taxes: Baseline excise per liter.
        ownership: Pricing-control sets.
        demand: Object with `shares(p)` and `jacobian(p)`.

    Returns:
        CostCalibration; negative costs are kept and listed in `negative`.
    """
    prices = np.asarray(prices, dtype=float)
    margins = margin_map(ownership, demand.shares(prices), demand.jacobian(prices))
    costs = prices / (1.0 + ownership.vat_rate) - np.asarray(taxes, dtype=float) - margins
    negative = [str(pid) for pid, cost in zip(ownership.product_ids, costs) if cost < 0]
    if negative:
        logger.warning("Negative marginal cost calibrated for %d %s product(s): %s",
                       len(negative), category or "category", ", ".join(negative))
    margin_pct = 100.0 * margins * (1.0 + ownership.vat_rate) / prices
    return CostCalibration(category, ownership.product_ids, costs, margins, margin_pct, negative)


def channel_profit(equilibria: Union[MarketEquilibrium, Sequence[MarketEquilibrium]],
                   grouping: str = "category") -> pd.Series:
    """
    Total marginal profit Q sum_j m_j s_j by category, firm-size class or pricing firm.
    """
    if grouping not in GROUPINGS:
        raise DomainError(f"Unknown profit grouping {grouping!r}; expected one of {GROUPINGS}")
    if isinstance(equilibria, MarketEquilibrium):
        equilibria = [equilibria]
    frames = []
    for equilibrium in equilibria:
        keys = {
            "category": np.full(equilibrium.ownership.size, equilibrium.category),
            "size": equilibrium.ownership.size_classes,
            "firm": equilibrium.ownership.controllers,
        }[grouping]
        frames.append(pd.DataFrame({"group": keys, "profit": equilibrium.profits()}))
    frame = pd.concat(frames, ignore_index=True)
    return frame.groupby("group", sort=True)["profit"].sum()


@dataclass
class ProfitDecomposition:
    """Relative profit change split into market-size, share and price terms."""
    quantity: float
    quality: float
    price: float
    exact: float
    excluded: int = 0

    @property
    def approximation(self) -> float:
        return self.quantity + self.quality + self.price

    @property
    def gap(self) -> float:
        return self.exact - self.approximation


def profit_decomposition(before: Union[MarketEquilibrium, Sequence[MarketEquilibrium]],
                         after: Union[MarketEquilibrium, Sequence[MarketEquilibrium]]) -> ProfitDecomposition:
    """
    Decompose the relative change in marginal profit.

    Per product, the terms are dQ/Q (market size), ds_j/s_j (shares) and
    dp_j / (p_j - c_j), the VAT-exclusive price change over the baseline unit
    margin; they are aggregated with baseline profit weights. Under a tax
    change the price term keeps the cost shift out of the approximation, so
    it shows up in the gap.

    Raises:
        DomainError: when product sets differ.
    """
    if isinstance(before, MarketEquilibrium):
        before, after = [before], [after]
    weights, size_terms, share_terms, price_terms = [], [], [], []
    excluded = 0
    total_before = total_after = 0.0
    for old, new in zip(before, after):
        if not np.array_equal(old.ownership.product_ids, new.ownership.product_ids):
            raise DomainError(f"Product sets differ before and after in {old.category}")
        total_before += float(old.profits().sum())
        total_after += float(new.profits().sum())
        valid = (old.shares > 0) & (old.margins > 0)
        excluded += int((~valid).sum())
        weights.append(old.profits()[valid])
        size_terms.append(np.full(valid.sum(), new.market_size / old.market_size - 1.0))
        share_terms.append(new.shares[valid] / old.shares[valid] - 1.0)
        price_change = (new.prices[valid] - old.prices[valid]) / (1.0 + old.ownership.vat_rate)
        price_terms.append(price_change / old.margins[valid])
    if excluded:
        logger.warning("%d product(s) with zero baseline share or margin left out of the decomposition", excluded)
    weights = np.concatenate(weights)
    if weights.sum() <= 0:
        raise DomainError("Baseline profit must be positive to decompose its change")
    weights = weights / weights.sum()
    return ProfitDecomposition(
        quantity=float(weights @ np.concatenate(size_terms)),
        quality=float(weights @ np.concatenate(share_terms)),
        price=float(weights @ np.concatenate(price_terms)),
        exact=total_after / total_before - 1.0,
        excluded=excluded,
    )
