"""
Quadratic almost-ideal demand across the alcohol categories.

This module handles:
- Budget shares and the nonlinear price aggregators G1 and G2
- Budget, uncompensated and compensated price elasticities
- The indirect utility / cost function pair used for equivalent variation
- Marshallian quantities in quality-adjusted units
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError
from .market import CATEGORIES

logger = logging.getLogger(__name__)

PRICE_INDEXES = ("adjusted", "laspeyres")


@dataclass
class QuaidsModel:
    """
    Parameters of the across-category share system.

    Intercepts are linear in cluster characteristics: kappa = K @ D, where the
    first entry of D is a constant.

    Constraints:
    - adding-up: sum_a K[a, const] = 1, other K columns, chi and lam sum to zero
    - homogeneity and adding-up on prices: Gamma rows and columns sum to zero
    - symmetry: Gamma = Gamma'
    """
    categories: Tuple[str, ...]
    intercepts: np.ndarray
    gamma: np.ndarray
    chi: np.ndarray
    lam: np.ndarray
    demographic_names: Tuple[str, ...] = ("const",)
    kappa0: float = 0.0
    price_index: str = "adjusted"
    budget_price_elasticity: Optional[np.ndarray] = None
    income_elasticity: float = float("nan")
    covariance: Optional[np.ndarray] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.categories = tuple(self.categories)
        self.demographic_names = tuple(self.demographic_names)
        n = len(self.categories)
        self.intercepts = np.asarray(self.intercepts, dtype=float).reshape(n, -1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(n, n)
        self.chi = np.asarray(self.chi, dtype=float).reshape(n)
        self.lam = np.asarray(self.lam, dtype=float).reshape(n)
        if self.intercepts.shape[1] != len(self.demographic_names):
            raise DomainError("One intercept column per demographic name is required")
        if self.price_index not in PRICE_INDEXES:
            raise DomainError(f"Unknown price index {self.price_index!r}")
        if self.budget_price_elasticity is None:
            self.budget_price_elasticity = np.zeros(n)
        self.budget_price_elasticity = np.asarray(self.budget_price_elasticity, dtype=float)

    @property
    def size(self) -> int:
        return len(self.categories)

    def kappa(self, demographics: Optional[np.ndarray] = None) -> np.ndarray:
        """Cluster intercepts K @ D; D defaults to the constant alone."""
        if demographics is None:
            demographics = np.zeros(len(self.demographic_names))
            demographics[0] = 1.0
        return self.intercepts @ np.asarray(demographics, dtype=float)

    def check_constraints(self) -> float:
        """Largest violation of adding-up, homogeneity and symmetry."""
        target = np.zeros(self.intercepts.shape[1])
        target[0] = 1.0
        violations = [
            np.abs(self.intercepts.sum(axis=0) - target).max(),
            abs(self.chi.sum()),
            abs(self.lam.sum()),
            np.abs(self.gamma.sum(axis=0)).max(),
            np.abs(self.gamma.sum(axis=1)).max(),
            np.abs(self.gamma - self.gamma.T).max(),
        ]
        return float(max(violations))

    # -- parameter vector ----------------------------------------------------------

    def to_vector(self) -> np.ndarray:
        """Per-equation stacking [K_a, Gamma_a, chi_a, lam_a] for a = 1..A."""
        return np.column_stack([self.intercepts, self.gamma, self.chi, self.lam]).ravel()

    def with_vector(self, vector: np.ndarray) -> "QuaidsModel":
        n, n_d = self.size, len(self.demographic_names)
        table = np.asarray(vector, dtype=float).reshape(n, n_d + n + 2)
        return QuaidsModel(
            self.categories, table[:, :n_d], table[:, n_d:n_d + n], table[:, -2], table[:, -1],
            self.demographic_names, self.kappa0, self.price_index,
            self.budget_price_elasticity.copy(), self.income_elasticity, self.covariance,
        )

    # -- serialization -----------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "categories": list(self.categories),
            "demographic_names": list(self.demographic_names),
            "intercepts": self.intercepts.tolist(),
            "gamma": self.gamma.tolist(),
            "chi": self.chi.tolist(),
            "lam": self.lam.tolist(),
            "kappa0": self.kappa0,
            "price_index": self.price_index,
            "budget_price_elasticity": self.budget_price_elasticity.tolist(),
            "income_elasticity": self.income_elasticity,
            "covariance": None if self.covariance is None else np.asarray(self.covariance).tolist(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuaidsModel":
        return cls(
            categories=tuple(data["categories"]),
            intercepts=np.asarray(data["intercepts"], dtype=float),
            gamma=np.asarray(data["gamma"], dtype=float),
            chi=np.asarray(data["chi"], dtype=float),
            lam=np.asarray(data["lam"], dtype=float),
            demographic_names=tuple(data.get("demographic_names") or ("const",)),
            kappa0=float(data.get("kappa0", 0.0)),
            price_index=data.get("price_index", "adjusted"),
            budget_price_elasticity=np.asarray(data.get("budget_price_elasticity") or np.zeros(len(data["categories"]))),
            income_elasticity=float("nan") if data.get("income_elasticity") is None else float(data["income_elasticity"]),
            covariance=None if data.get("covariance") is None else np.asarray(data["covariance"], dtype=float),
            diagnostics=dict(data.get("diagnostics") or {}),
        )

    @classmethod
    def cobb_douglas(cls, shares: Sequence[float], categories: Sequence[str] = CATEGORIES) -> "QuaidsModel":
        """Model with constant budget shares (chi = lam = Gamma = 0)."""
        shares = np.asarray(shares, dtype=float)
        n = len(shares)
        return cls(tuple(categories), shares[:, None], np.zeros((n, n)), np.zeros(n), np.zeros(n))


@dataclass
class ClusterState:
    """Log prices, log total alcohol expenditure and characteristics of one cluster-period."""
    ln_prices: np.ndarray
    ln_expenditure: float
    demographics: Optional[np.ndarray] = None
    shares: Optional[np.ndarray] = None

    def __post_init__(self):
        self.ln_prices = np.asarray(self.ln_prices, dtype=float)
        if not np.all(np.isfinite(self.ln_prices)):
            raise DomainError("Log prices must be finite")


def price_aggregators(model: QuaidsModel, ln_prices: np.ndarray,
                      demographics: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """
    G1 = kappa0 + kappa'lnP + 0.5 lnP'Gamma lnP and G2 = exp(chi'lnP).
    """
    ln_prices = np.asarray(ln_prices, dtype=float)
    kappa = model.kappa(demographics)
    g1 = model.kappa0 + kappa @ ln_prices + 0.5 * ln_prices @ model.gamma @ ln_prices
    g2 = np.exp(model.chi @ ln_prices)
    return float(g1), float(g2)


def budget_shares(model: QuaidsModel, state: ClusterState) -> np.ndarray:
    """w = kappa + Gamma lnP + chi (lnY - G1) + lam (lnY - G1)^2 / G2."""
    g1, g2 = price_aggregators(model, state.ln_prices, state.demographics)
    real = state.ln_expenditure - g1
    return (model.kappa(state.demographics) + model.gamma @ state.ln_prices
            + model.chi * real + model.lam * real ** 2 / g2)


@dataclass
class Elasticities:
    """Elasticities of the share system at one state; undefined entries are NaN."""
    budget: np.ndarray
    uncompensated: np.ndarray
    compensated: np.ndarray
    budget_price: np.ndarray
    shares: np.ndarray


def elasticities(model: QuaidsModel, state: ClusterState) -> Elasticities:
    """
    Budget and price elasticities of the share system.

    Args:
        model: Share system.
        state: Cluster state where the derivatives are taken.

    Returns:
        Elasticities; rows of categories with a zero share are NaN.
    """
    g1, g2 = price_aggregators(model, state.ln_prices, state.demographics)
    real = state.ln_expenditure - g1
    kappa = model.kappa(state.demographics)
    shares = budget_shares(model, state)
    mu = model.chi + 2.0 * model.lam * real / g2
    g1_gradient = kappa + model.gamma @ state.ln_prices
    mu_prices = (model.gamma - np.outer(mu, g1_gradient)
                 - np.outer(model.lam, model.chi) * real ** 2 / g2)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(shares != 0, shares, np.nan)
        budget = mu / safe + 1.0
        uncompensated = mu_prices / safe[:, None] - np.eye(model.size)
        compensated = uncompensated + np.outer(budget, shares)
    return Elasticities(budget, uncompensated, compensated, model.budget_price_elasticity.copy(), shares)


def marshallian_quantities(model: QuaidsModel, state: ClusterState) -> np.ndarray:
    """Quality-adjusted quantities w_a Y / P_a."""
    shares = budget_shares(model, state)
    return shares * np.exp(state.ln_expenditure - state.ln_prices)


def indirect_utility(model: QuaidsModel, ln_prices: np.ndarray, ln_expenditure: float,
                     demographics: Optional[np.ndarray] = None) -> float:
    """
    lnV = {[(lnY - G1) / G2]^-1 + lam'lnP}^-1.

    Raises:
        DomainError: when lnY <= G1 (non-positive real expenditure).
    """
    ln_prices = np.asarray(ln_prices, dtype=float)
    g1, g2 = price_aggregators(model, ln_prices, demographics)
    if ln_expenditure <= g1:
        raise DomainError(f"Log expenditure {ln_expenditure:.4g} does not exceed G1 = {g1:.4g}")
    real = (ln_expenditure - g1) / g2
    return float(1.0 / (1.0 / real + model.lam @ ln_prices))


def cost_function(model: QuaidsModel, ln_prices: np.ndarray, ln_utility: float,
                  demographics: Optional[np.ndarray] = None) -> float:
    """Inverse of `indirect_utility`: lnY = G1 + G2 lnV / (1 - lam'lnP lnV)."""
    ln_prices = np.asarray(ln_prices, dtype=float)
    g1, g2 = price_aggregators(model, ln_prices, demographics)
    denominator = 1.0 - (model.lam @ ln_prices) * ln_utility
    real = ln_utility / denominator if denominator != 0 else float("nan")
    if not real > 0:
        raise DomainError(f"Utility level {ln_utility:.4g} outside the domain of the cost function")
    return float(g1 + g2 * real)


def effect_on_quantities(model: QuaidsModel, state: ClusterState,
                         price_changes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    First-order relative change of quality-adjusted quantities.

    dQ_a = sum_k e_ak dP_k + Elas_a (E_PY' dP), where the second term is the
    budget response to the price changes.

    Returns:
        (quantity changes, relative budget change)
    """
    price_changes = np.asarray(price_changes, dtype=float)
    values = elasticities(model, state)
    budget_change = float(np.nansum(values.budget_price * price_changes))
    direct = np.nan_to_num(values.uncompensated) @ price_changes
    return direct + np.nan_to_num(values.budget) * budget_change, budget_change
