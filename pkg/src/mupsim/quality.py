"""
Random-coefficient logit demand for product varieties within one category.

This module handles:
- Choice probabilities with an outside option of utility zero
- Market shares and the share Jacobian aggregated over households and draws
- The quality surplus b, its posterior expectation and quality-adjusted price indices
- A market demand object consumed by the supply and equilibrium modules
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .draws import DrawRule, degenerate_rule
from .errors import DomainError, NumericError
from .market import DEMOGRAPHIC_COLUMNS, Household, demographic_dummies
from .numerics import independent_columns, softmax, softmax_with_outside

logger = logging.getLogger(__name__)

DEFAULT_TERMS: Tuple[str, ...] = ("brand", "retailer")
ALPHA_FLOOR = 1e-6
CHUNK_SIZE = 256


@dataclass
class ProductDesign:
    """
    Fixed-effect design for the products of one category.

    Main-effect columns come from product attributes (brand, retailer,
    subcategory, alcohol_free); interaction terms such as
    ``subcategory:habit_3`` multiply attribute dummies by a household dummy.
    """
    ids: np.ndarray
    prices: np.ndarray
    degrees: np.ndarray
    subcategories: np.ndarray
    main: np.ndarray
    main_names: List[str]
    interactions: List[Tuple[str, np.ndarray, List[str]]] = field(default_factory=list)
    eta: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.ids)

    @property
    def psi(self) -> np.ndarray:
        """Alcohol content in grams per liter."""
        return 8.0 * self.degrees

    @property
    def parameter_names(self) -> List[str]:
        names = list(self.main_names)
        for _, _, interaction_names in self.interactions:
            names.extend(interaction_names)
        return names

    def control(self, eta: Optional[np.ndarray] = None) -> np.ndarray:
        if eta is not None:
            return np.asarray(eta, dtype=float)
        if self.eta is not None:
            return self.eta
        return np.zeros(self.size)

    @classmethod
    def from_products(cls, products: pd.DataFrame, terms: Sequence[str] = DEFAULT_TERMS,
                      eta: Optional[np.ndarray] = None) -> "ProductDesign":
        """
        Build the design from a products table of a single category.

        Args:
            products: Products table (one category).
            terms: Fixed-effect terms; the first keeps all levels, later ones drop
                their first level so the outside option stays the reference.
            eta: Optional control-function residual per product.
        """
        if len(products) == 0:
            raise DomainError("A category needs at least one product")
        products = products.reset_index(drop=True)
        attributes = products.assign(alcohol_free=(products["degree"] == 0).map({True: "yes", False: "no"}))
        blocks, names = [], []
        interactions = []
        first = True
        for term in terms:
            attribute, _, demographic = term.partition(":")
            levels = sorted(attributes[attribute].astype(str).unique())
            if attribute == "alcohol_free":
                levels = [level for level in levels if level == "yes"]
            elif not first or demographic:
                levels = levels[1:]
            columns = np.column_stack(
                [(attributes[attribute].astype(str) == level).to_numpy(float) for level in levels]
            ) if levels else np.zeros((len(products), 0))
            labels = [f"{attribute}={level}" for level in levels]
            if demographic:
                if demographic not in DEMOGRAPHIC_COLUMNS:
                    raise DomainError(f"Unknown demographic {demographic!r} in term {term!r}")
                interactions.append((demographic, columns, [f"{label}|{demographic}" for label in labels]))
                continue
            blocks.append(columns)
            names.extend(labels)
            first = False
        main = np.column_stack(blocks) if blocks else np.zeros((len(products), 0))
        main, names, dropped = independent_columns(main, names)
        if dropped:
            logger.warning("Dropped collinear fixed effects: %s", ", ".join(dropped))
        return cls(
            ids=products["id"].astype(str).to_numpy(),
            prices=products["price"].to_numpy(float),
            degrees=products["degree"].to_numpy(float),
            subcategories=products["subcategory"].astype(str).to_numpy(),
            main=main,
            main_names=names,
            interactions=interactions,
            eta=None if eta is None else np.asarray(eta, dtype=float),
        )


@dataclass
class Population:
    """Weighted households over which shares are aggregated."""
    demographics: np.ndarray
    weights: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.demographics = np.atleast_2d(np.asarray(self.demographics, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise DomainError("Population weights must be positive")

    @property
    def size(self) -> int:
        return len(self.weights)

    @classmethod
    def from_households(cls, households: pd.DataFrame) -> "Population":
        return cls(demographic_dummies(households).to_numpy(float),
                   households["weight"].to_numpy(float),
                   households["id"].astype(str).to_numpy())

    @classmethod
    def single(cls, demographics: Optional[np.ndarray] = None) -> "Population":
        if demographics is None:
            demographics = np.zeros(len(DEMOGRAPHIC_COLUMNS))
        return cls(np.atleast_2d(demographics), np.ones(1))

    def subset(self, index: np.ndarray) -> "Population":
        ids = None if self.ids is None else self.ids[index]
        return Population(self.demographics[index], self.weights[index], ids)


@dataclass
class MixedLogitModel:
    """
    Taste parameters of one category.

    Utility of product j for household h at draw zeta:
        V = beta'Z_j - (alpha + delta'D_h + sigma * zeta + shift_j) * p_j + rho * eta_j
    """
    category: str
    alpha: float
    delta: np.ndarray = field(default_factory=lambda: np.zeros(len(DEMOGRAPHIC_COLUMNS)))
    sigma: float = 0.0
    beta: Dict[str, float] = field(default_factory=dict)
    rho: float = 0.0
    price_shifts: Dict[str, float] = field(default_factory=dict)
    terms: Tuple[str, ...] = DEFAULT_TERMS
    draw_rule: Optional[DrawRule] = None
    covariance: Optional[np.ndarray] = None
    alpha_floor: float = ALPHA_FLOOR
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        if self.delta.shape != (len(DEMOGRAPHIC_COLUMNS),):
            raise DomainError(f"delta must have {len(DEMOGRAPHIC_COLUMNS)} entries")
        if self.sigma < 0:
            raise DomainError("sigma must be non-negative")
        self.terms = tuple(self.terms)

    # -- parameter bookkeeping -------------------------------------------------

    def parameter_names(self, design: ProductDesign) -> List[str]:
        names = ["alpha"] + [f"delta:{c}" for c in DEMOGRAPHIC_COLUMNS] + ["sigma"]
        names += [f"shift:{s}" for s in sorted(self.price_shifts)]
        names += [f"beta:{n}" for n in design.parameter_names] + ["rho"]
        return names

    def to_vector(self, design: ProductDesign) -> np.ndarray:
        values = [self.alpha, *self.delta, self.sigma]
        values += [self.price_shifts[s] for s in sorted(self.price_shifts)]
        values += [self.beta.get(n, 0.0) for n in design.parameter_names]
        values.append(self.rho)
        return np.asarray(values, dtype=float)

    def with_vector(self, vector: np.ndarray, design: ProductDesign) -> "MixedLogitModel":
        vector = np.asarray(vector, dtype=float)
        n_demo = len(DEMOGRAPHIC_COLUMNS)
        shifts = sorted(self.price_shifts)
        cursor = 2 + n_demo
        shift_values = vector[cursor:cursor + len(shifts)]
        cursor += len(shifts)
        beta_values = vector[cursor:cursor + len(design.parameter_names)]
        return MixedLogitModel(
            category=self.category, alpha=float(vector[0]), delta=vector[1:1 + n_demo].copy(),
            sigma=float(max(vector[1 + n_demo], 0.0)),
            beta=dict(zip(design.parameter_names, map(float, beta_values))),
            rho=float(vector[-1]), price_shifts=dict(zip(shifts, map(float, shift_values))),
            terms=self.terms, draw_rule=self.draw_rule, covariance=self.covariance,
            alpha_floor=self.alpha_floor,
        )

    # -- utilities -------------------------------------------------------------

    def price_shift(self, design: ProductDesign) -> np.ndarray:
        shift = np.zeros(design.size)
        for subcategory, value in self.price_shifts.items():
            shift[design.subcategories == subcategory] += value
        return shift

    def base_utility(self, design: ProductDesign, demographics: np.ndarray,
                     eta: Optional[np.ndarray] = None) -> np.ndarray:
        """Price-free part of utility, shape (H, J)."""
        demographics = np.atleast_2d(demographics)
        main = design.main @ np.array([self.beta.get(n, 0.0) for n in design.main_names])
        base = np.broadcast_to(main + self.rho * design.control(eta), (len(demographics), design.size)).copy()
        for demographic, columns, names in design.interactions:
            k = DEMOGRAPHIC_COLUMNS.index(demographic)
            effect = columns @ np.array([self.beta.get(n, 0.0) for n in names])
            base += demographics[:, [k]] * effect[None, :]
        return base

    def alpha_draws(self, demographics: np.ndarray, zeta: np.ndarray) -> Tuple[np.ndarray, int]:
        """Effective price disutility (H, R) truncated at alpha_floor, with the truncation count."""
        demographics = np.atleast_2d(demographics)
        raw = self.alpha + demographics @ self.delta
        alpha = raw[:, None] + self.sigma * np.asarray(zeta, dtype=float)[None, :]
        truncated = int(np.count_nonzero(alpha <= self.alpha_floor))
        if truncated:
            alpha = np.maximum(alpha, self.alpha_floor)
        return alpha, truncated

    def utilities(self, design: ProductDesign, prices: np.ndarray, demographics: np.ndarray,
                  zeta: np.ndarray, eta: Optional[np.ndarray] = None):
        """
        Utilities V (H, R, J), price slopes a (H, R, J) and raw alpha (H, R).
        """
        prices = np.asarray(prices, dtype=float)
        if design.size == 0:
            raise DomainError("Empty product set")
        base = self.base_utility(design, demographics, eta)
        alpha, truncated = self.alpha_draws(demographics, zeta)
        if truncated:
            self.diagnostics["truncated_alpha_draws"] = self.diagnostics.get("truncated_alpha_draws", 0) + truncated
        slopes = alpha[:, :, None] + self.price_shift(design)[None, None, :]
        utility = base[:, None, :] - slopes * prices[None, None, :]
        if not np.all(np.isfinite(utility)):
            raise NumericError(f"Non-finite utility in category {self.category}")
        return utility, slopes, alpha

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "category": self.category,
            "alpha": self.alpha,
            "delta": dict(zip(DEMOGRAPHIC_COLUMNS, self.delta.tolist())),
            "sigma": self.sigma,
            "beta": dict(sorted(self.beta.items())),
            "rho": self.rho,
            "price_shifts": dict(sorted(self.price_shifts.items())),
            "terms": list(self.terms),
            "alpha_floor": self.alpha_floor,
            "draw_rule": None if self.draw_rule is None else self.draw_rule.to_dict(),
            "covariance": None if self.covariance is None else np.asarray(self.covariance).tolist(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MixedLogitModel":
        delta = data.get("delta") or {}
        return cls(
            category=data["category"],
            alpha=float(data["alpha"]),
            delta=np.array([float(delta.get(c, 0.0)) for c in DEMOGRAPHIC_COLUMNS]),
            sigma=float(data.get("sigma", 0.0)),
            beta={k: float(v) for k, v in (data.get("beta") or {}).items()},
            rho=float(data.get("rho", 0.0)),
            price_shifts={k: float(v) for k, v in (data.get("price_shifts") or {}).items()},
            terms=tuple(data.get("terms") or DEFAULT_TERMS),
            draw_rule=DrawRule.from_dict(data["draw_rule"]) if data.get("draw_rule") else None,
            covariance=None if data.get("covariance") is None else np.asarray(data["covariance"], dtype=float),
            alpha_floor=float(data.get("alpha_floor", ALPHA_FLOOR)),
            diagnostics=dict(data.get("diagnostics") or {}),
        )


def _demographics_of(household: Union[Household, np.ndarray, None]) -> np.ndarray:
    if household is None:
        return np.zeros((1, len(DEMOGRAPHIC_COLUMNS)))
    if isinstance(household, Household):
        return household.demographics[None, :]
    return np.atleast_2d(np.asarray(household, dtype=float))


def choice_probabilities(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                         household: Union[Household, np.ndarray, None] = None,
                         draw_rule: Optional[DrawRule] = None,
                         eta: Optional[np.ndarray] = None) -> Tuple[np.ndarray, float]:
    """
    Purchase probabilities of one household, integrated over the taste shock.

    Args:
        model: Category taste parameters.
        design: Product design of the category.
        prices: Consumer prices (EUR/L), one per product.
        household: Household or its demographic dummy vector.
        draw_rule: Integration rule; defaults to the model's rule or a single node.
        eta: Control-function residuals (defaults to the design's).

    Returns:
        (inside probabilities, outside-option probability)
    """
    prices = np.asarray(prices, dtype=float)
    if design.size == 0 or prices.size == 0:
        raise DomainError("Empty product set")
    if np.any(prices <= 0):
        raise DomainError("Prices must be positive")
    rule = draw_rule or model.draw_rule or degenerate_rule()
    utility, _, _ = model.utilities(design, prices, _demographics_of(household), rule.zeta, eta)
    inside, outside = softmax_with_outside(utility)
    return rule.weights @ inside[0], float(rule.weights @ outside[0])


@dataclass
class ShareAggregate:
    """Population shares and their price derivatives at one price vector."""
    shares: np.ndarray
    outside: float
    jacobian: np.ndarray
    outside_gradient: np.ndarray


def aggregate_shares(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                     population: Population, draw_rule: Optional[DrawRule] = None,
                     eta: Optional[np.ndarray] = None, chunk_size: int = CHUNK_SIZE) -> ShareAggregate:
    """
    Weighted market shares and Jacobian over households and draws.

    The Jacobian is oriented with rows indexing the price being changed:
    jacobian[j, k] = d s_k / d p_j, so that each row plus the outside-option
    derivative sums to zero.
    """
    prices = np.asarray(prices, dtype=float)
    rule = draw_rule or model.draw_rule or degenerate_rule()
    n = design.size
    shares = np.zeros(n)
    outside = 0.0
    jacobian = np.zeros((n, n))
    outside_gradient = np.zeros(n)
    total_weight = population.weights.sum()
    for start in range(0, population.size, chunk_size):
        block = slice(start, start + chunk_size)
        utility, slopes, _ = model.utilities(design, prices, population.demographics[block], rule.zeta, eta)
        inside, out = softmax_with_outside(utility)
        weight = population.weights[block][:, None] * rule.weights[None, :] / total_weight
        shares += np.einsum("hr,hrj->j", weight, inside)
        outside += float(np.sum(weight * out))
        scaled = weight[:, :, None] * slopes * inside
        jacobian += np.einsum("hrj,hrk->jk", scaled, inside)
        jacobian -= np.diag(scaled.sum(axis=(0, 1)))
        outside_gradient += np.einsum("hrj,hr->j", scaled, out)
    if np.any(shares < 1e-300) or np.any(shares > 1 - 1e-15):
        logger.warning("Degenerate shares in category %s: Jacobian may be singular", model.category)
    return ShareAggregate(shares, outside, jacobian, outside_gradient)


def share_jacobian(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                   population: Population, draw_rule: Optional[DrawRule] = None,
                   eta: Optional[np.ndarray] = None) -> np.ndarray:
    """J x J matrix with entry [j, k] = d s_k / d p_j."""
    return aggregate_shares(model, design, prices, population, draw_rule, eta).jacobian


def surplus_from_utilities(utility: np.ndarray, alpha: np.ndarray, prices: np.ndarray,
                           reference_price: Optional[Union[float, np.ndarray]] = None) -> np.ndarray:
    """
    Quality surplus b from utilities of shape (..., J) and disutilities alpha (...).

    b = [ln sum_j exp(V_j - V*) + alpha sum_j pi_j (p_j - p*)] / alpha with
    V* = sum_j pi_j V_j. Without a reference price, p* = sum_j pi_j p_j.
    """
    pi = softmax(utility)
    reference_utility = np.sum(pi * utility, axis=-1)
    expected_price = pi @ prices
    if reference_price is None:
        reference_price = expected_price
    inclusive = logsumexp(utility - reference_utility[..., None], axis=-1)
    return (inclusive + alpha * (expected_price - reference_price)) / alpha


def quality_surplus(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                    household: Union[Household, np.ndarray, None], zeta: float,
                    reference_price: Union[float, Population, None] = None,
                    eta: Optional[np.ndarray] = None) -> float:
    """
    Consumer surplus from differentiation between products for one draw.

    Args:
        model: Category taste parameters.
        design: Product design.
        prices: Consumer prices.
        household: Household or demographic vector.
        zeta: Standard-normal draw of the price-coefficient shock.
        reference_price: p*, or a Population over which p* = sum_j E_h(pi_j) p_j
            is taken; defaults to the household alone, integrated over the model draws.

    Returns:
        b in EUR per liter-equivalent.
    """
    demographics = _demographics_of(household)
    raw_alpha = model.alpha + float(demographics[0] @ model.delta) + model.sigma * zeta
    if raw_alpha <= 0:
        raise DomainError(f"Price disutility {raw_alpha:.3g} must be positive for the quality surplus")
    utility, _, alpha = model.utilities(design, prices, demographics, np.array([zeta]), eta)
    reference = _resolve_reference(model, design, prices, reference_price, demographics, None, eta)
    return float(surplus_from_utilities(utility[0, 0], alpha[0, 0], np.asarray(prices, float), reference))


def reference_price(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                    population: Population, draw_rule: Optional[DrawRule] = None,
                    eta: Optional[np.ndarray] = None) -> float:
    """p* = sum_j E_h(pi_j) p_j over households and draws."""
    rule = draw_rule or model.draw_rule or degenerate_rule()
    expected = np.zeros(design.size)
    total = population.weights.sum()
    for start in range(0, population.size, CHUNK_SIZE):
        block = slice(start, start + CHUNK_SIZE)
        utility, _, _ = model.utilities(design, prices, population.demographics[block], rule.zeta, eta)
        weight = population.weights[block][:, None] * rule.weights[None, :] / total
        expected += np.einsum("hr,hrj->j", weight, softmax(utility))
    return float(expected @ np.asarray(prices, dtype=float))


def _resolve_reference(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                       reference: Union[float, Population, None], demographics: np.ndarray,
                       draw_rule: Optional[DrawRule], eta: Optional[np.ndarray]) -> float:
    if reference is None:
        reference = Population(demographics, np.ones(len(demographics)))
    if isinstance(reference, Population):
        return reference_price(model, design, prices, reference, draw_rule, eta)
    return float(reference)


def posterior_weights(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                      demographics: np.ndarray, counts: np.ndarray,
                      outside_counts: Optional[np.ndarray] = None,
                      draw_rule: Optional[DrawRule] = None,
                      eta: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Posterior weights over draws given each household's purchases.

    The same draw applies to all purchase acts of a household. Rows whose
    likelihood vanishes fall back to the prior weights with a warning.

    Args:
        counts: (H, J) number of purchase acts of each product.
        outside_counts: (H,) number of occasions without purchase.

    Returns:
        (H, R) weights summing to one per household.
    """
    rule = draw_rule or model.draw_rule or degenerate_rule()
    demographics = np.atleast_2d(demographics)
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    utility, _, _ = model.utilities(design, prices, demographics, rule.zeta, eta)
    inside, outside = softmax_with_outside(utility)
    with np.errstate(divide="ignore"):
        loglik = np.einsum("hj,hrj->hr", counts, np.log(inside))
        if outside_counts is not None:
            loglik += np.asarray(outside_counts, dtype=float)[:, None] * np.log(outside)
    prior = np.log(rule.weights.clip(min=1e-300))
    log_post = np.where(rule.weights[None, :] > 0, loglik + prior[None, :], -np.inf)
    normalizer = logsumexp(log_post, axis=1, keepdims=True)
    weights = np.exp(log_post - normalizer)
    failed = ~np.isfinite(normalizer[:, 0])
    if np.any(failed):
        logger.warning("Zero likelihood for %d household(s); using prior weights", int(failed.sum()))
        weights[failed] = rule.weights
    if rule.method == "sparse-grid" and np.any(rule.weights < 0):
        weights = weights / weights.sum(axis=1, keepdims=True)
    return weights


def posterior_quality(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                      household: Union[Household, np.ndarray, None],
                      observed_choices: Sequence[int], draw_rule: Optional[DrawRule] = None,
                      reference: Union[float, Population, None] = None, outside_count: int = 0,
                      eta: Optional[np.ndarray] = None) -> float:
    """
    Expected quality surplus given the household's observed purchases.

    Args:
        observed_choices: Product indices of the household's purchase acts in the period.
        reference: Reference price p*, or the Population it is taken over;
            defaults to the household alone.
        outside_count: Occasions without purchase in the period.

    Returns:
        The posterior expectation of b over the draw rule.
    """
    rule = draw_rule or model.draw_rule or degenerate_rule()
    demographics = _demographics_of(household)
    counts = np.bincount(np.asarray(observed_choices, dtype=int), minlength=design.size)[None, :]
    weights = posterior_weights(model, design, prices, demographics, counts,
                                np.array([outside_count]), rule, eta)
    utility, _, alpha = model.utilities(design, prices, demographics, rule.zeta, eta)
    reference = _resolve_reference(model, design, prices, reference, demographics, rule, eta)
    surplus = surplus_from_utilities(utility[0], alpha[0], np.asarray(prices, float), reference)
    return float(weights[0] @ surplus)


def posterior_quality_batch(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                            demographics: np.ndarray, weights: np.ndarray,
                            reference: Union[float, Population, None] = None,
                            draw_rule: Optional[DrawRule] = None,
                            eta: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Posterior-expected surplus and conditional probabilities for many households.

    Args:
        weights: (H, R) posterior weights from `posterior_weights`.
        reference: Reference price p*, or its Population; defaults to these
            households with equal weights.

    Returns:
        (B of shape (H,), pi of shape (H, J))
    """
    rule = draw_rule or model.draw_rule or degenerate_rule()
    reference = _resolve_reference(model, design, prices, reference, np.atleast_2d(demographics), rule, eta)
    utility, _, alpha = model.utilities(design, prices, demographics, rule.zeta, eta)
    surplus = surplus_from_utilities(utility, alpha, np.asarray(prices, float), reference)
    pi = softmax(utility)
    return np.sum(weights * surplus, axis=1), np.einsum("hr,hrj->hj", weights, pi)


def adjusted_price_index(expenditure: float, quantity: float, quality: float) -> float:
    """Quality-adjusted price P = Y / (Q (1 + B))."""
    if expenditure <= 0 or quantity <= 0:
        raise DomainError("Expenditure and quantity must be positive")
    if 1.0 + quality <= 0:
        raise DomainError("1 + B must be positive")
    return expenditure / (quantity * (1.0 + quality))


def laspeyres_price_index(shares: Sequence[float], prices: Sequence[float]) -> float:
    """Cluster Laspeyres index sum_j S_j p_j with shares normalized to one."""
    shares = np.asarray(shares, dtype=float)
    if shares.sum() <= 0:
        raise DomainError("Laspeyres shares must have a positive total")
    return float((shares / shares.sum()) @ np.asarray(prices, dtype=float))


@dataclass(frozen=True)
class QualityIndex:
    """Quality surplus, its posterior expectation and the adjusted price/quantity pair."""
    surplus: float
    expected: float
    price: float
    quantity: float

    @classmethod
    def from_purchases(cls, expenditure: float, quantity: float, expected: float,
                       surplus: float = float("nan")) -> "QualityIndex":
        price = adjusted_price_index(expenditure, quantity, expected)
        return cls(surplus, expected, price, expenditure / price)


class MixedLogitMarket:
    """
    Category demand seen by firms: shares and Jacobian as functions of prices.

    Features:
    - Aggregates over a weighted population and a draw rule
    - Caches the last evaluation (the solvers query shares and Jacobian at the same point)
    """

    def __init__(self, model: MixedLogitModel, design: ProductDesign, population: Population,
                 draw_rule: Optional[DrawRule] = None, eta: Optional[np.ndarray] = None):
        self.model = model
        self.design = design
        self.population = population
        self.draw_rule = draw_rule or model.draw_rule or degenerate_rule()
        self.eta = eta
        self._cache_key: Optional[bytes] = None
        self._cache: Optional[ShareAggregate] = None

    @property
    def size(self) -> int:
        return self.design.size

    def evaluate(self, prices: np.ndarray) -> ShareAggregate:
        prices = np.asarray(prices, dtype=float)
        key = prices.tobytes()
        if key != self._cache_key:
            self._cache = aggregate_shares(self.model, self.design, prices, self.population,
                                           self.draw_rule, self.eta)
            self._cache_key = key
        return self._cache

    def shares(self, prices: np.ndarray) -> np.ndarray:
        return self.evaluate(prices).shares

    def jacobian(self, prices: np.ndarray) -> np.ndarray:
        return self.evaluate(prices).jacobian

    def own_price_elasticities(self, prices: np.ndarray) -> np.ndarray:
        aggregate = self.evaluate(prices)
        return np.diag(aggregate.jacobian) * np.asarray(prices, dtype=float) / aggregate.shares
