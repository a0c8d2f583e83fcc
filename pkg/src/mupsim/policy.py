"""
Policy scenarios and their outcomes for households, producers and the state.

This module handles:
- Scenario definitions and tax-rate calibration at fixed quantities
- Household price, quantity, alcohol-content and ethanol changes
- Equivalent variation from the share system's cost function
- Tax revenue, unit-price and heterogeneity tables
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .draws import DrawRule
from .errors import ConfigError, DomainError
from .market import (
    DEFAULT_BAND_EDGES,
    DEFAULT_BAND_MULTIPLIERS,
    DEFAULT_VAT_RATE,
    PERIODS_PER_YEAR,
    TaxSchedule,
    risk_class,
)
from .quality import (
    MixedLogitModel,
    Population,
    ProductDesign,
    posterior_quality_batch,
    reference_price,
)
from .quantity import ClusterState, QuaidsModel, cost_function, effect_on_quantities, indirect_utility

logger = logging.getLogger(__name__)

SCENARIO_NAMES: Tuple[str, ...] = (
    "low-uniform",
    "high-uniform",
    "low-progressive",
    "high-progressive",
    "mup",
    "mup+low-progressive",
)
TARGETS = ("fiscal-neutral", "public-finance-neutral")
DEFAULT_MUP = 0.5
GROUPINGS = ("income", "risk")
RISK_GROUPS = ("low", "moderate", "high")


@dataclass(frozen=True)
class Scenario:
    """
    A policy: an excise schedule, an optional minimum unit price and a revenue target.

    `target_revenue` is the excise revenue R* in EUR per year for
    public-finance neutrality; fiscal neutrality targets the baseline revenue.
    """
    name: str
    schedule: TaxSchedule
    mup: Optional[float] = None
    target: Optional[str] = None
    target_revenue: Optional[float] = None

    def __post_init__(self):
        if self.target is not None and self.target not in TARGETS:
            raise ConfigError(f"Scenario {self.name}: unknown target {self.target!r}")
        if self.mup is not None and self.mup < 0:
            raise ConfigError(f"Scenario {self.name}: minimum unit price must be non-negative")
        if self.target is not None and self.schedule.kind == "current":
            raise ConfigError(f"Scenario {self.name}: the current schedule has no rate to calibrate")

    def with_rate(self, base_rate: float) -> "Scenario":
        return replace(self, schedule=self.schedule.with_rate(base_rate))


def standard_scenarios(vat_rate: float = DEFAULT_VAT_RATE, mup: float = DEFAULT_MUP,
                       external_cost: Optional[float] = None,
                       band_edges: Sequence[float] = DEFAULT_BAND_EDGES,
                       band_multipliers: Sequence[float] = DEFAULT_BAND_MULTIPLIERS) -> List[Scenario]:
    """
    The six standard policies, rates still to be calibrated.

    Low variants are fiscal-neutral, high variants cover `external_cost`.
    """
    def schedule(kind: str) -> TaxSchedule:
        return TaxSchedule(kind, 0.0, tuple(band_edges), tuple(band_multipliers), vat_rate)

    current = TaxSchedule("current", 0.0, tuple(band_edges), tuple(band_multipliers), vat_rate)
    return [
        Scenario("low-uniform", schedule("uniform-volumetric"), target="fiscal-neutral"),
        Scenario("high-uniform", schedule("uniform-volumetric"), target="public-finance-neutral",
                 target_revenue=external_cost),
        Scenario("low-progressive", schedule("progressive-volumetric"), target="fiscal-neutral"),
        Scenario("high-progressive", schedule("progressive-volumetric"), target="public-finance-neutral",
                 target_revenue=external_cost),
        Scenario("mup", current, mup=mup),
        Scenario("mup+low-progressive", schedule("progressive-volumetric"), mup=mup, target="fiscal-neutral"),
    ]


@dataclass
class TaxBase:
    """Baseline annual volumes and prices of every product, the base of tax calibration."""
    degrees: np.ndarray
    quantities: np.ndarray
    prices: np.ndarray
    excise: np.ndarray
    vat_rate: float = DEFAULT_VAT_RATE

    @property
    def excise_revenue(self) -> float:
        return float(self.excise @ self.quantities)

    @property
    def vat_revenue(self) -> float:
        return float(self.vat_rate / (1.0 + self.vat_rate) * self.prices @ self.quantities)


def calibrate_tax_rate(scenario: Scenario, base: TaxBase) -> float:
    """
    Base rate t of the scenario's schedule meeting its revenue target at fixed quantities.

    Fiscal neutrality keeps total revenue (excise plus VAT) at its baseline;
    with prices held fixed VAT does not move, so excise revenue is preserved.
    Public-finance neutrality sets excise revenue to `target_revenue`.

    Raises:
        ConfigError: non-positive target or no taxable alcohol.
    """
    if scenario.target is None:
        return scenario.schedule.base_rate
    if scenario.target == "fiscal-neutral":
        target = scenario.target_revenue
        if target is None:
            target = base.excise_revenue + base.vat_revenue
        excise_target = target - base.vat_revenue
    else:
        if scenario.target_revenue is None:
            raise ConfigError(f"Scenario {scenario.name}: public-finance target revenue is not configured")
        target = excise_target = scenario.target_revenue
    if target <= 0 or excise_target <= 0:
        raise ConfigError(f"Scenario {scenario.name}: target revenue must be positive")
    taxable = float(scenario.schedule.effective_degrees(base.degrees) @ base.quantities)
    if taxable <= 0:
        raise ConfigError(f"Scenario {scenario.name}: no taxable alcohol at baseline")
    rate = excise_target / taxable
    logger.info("Scenario %s: base rate %.5f EUR per degree-liter", scenario.name, rate)
    return rate


@dataclass
class ChoiceState:
    """Household purchase probabilities, quality and price index in one category at given prices."""
    prices: np.ndarray
    probabilities: np.ndarray
    quality: np.ndarray
    price_index: np.ndarray


def choice_state(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray,
                 population: Population, weights: np.ndarray, draw_rule: DrawRule,
                 eta: Optional[np.ndarray] = None) -> ChoiceState:
    """
    Posterior-weighted probabilities pi, quality B and index P = sum_j pi_j p_j / (1 + B).

    The reference price is recomputed at `prices` over the population.
    """
    prices = np.asarray(prices, dtype=float)
    reference = reference_price(model, design, prices, population, draw_rule, eta)
    quality, probabilities = posterior_quality_batch(model, design, prices, population.demographics,
                                                     weights, reference, draw_rule, eta)
    if np.any(1.0 + quality <= 0):
        raise DomainError(f"1 + B must be positive in {model.category}")
    return ChoiceState(prices, probabilities, quality, probabilities @ prices / (1.0 + quality))


@dataclass
class HouseholdBaseline:
    """Per-period baseline volumes and spending by household and category."""
    ids: np.ndarray
    weights: np.ndarray
    categories: Tuple[str, ...]
    quantity: np.ndarray
    expenditure: np.ndarray
    clusters: np.ndarray
    income: np.ndarray
    drinks_per_adult_day: np.ndarray

    @classmethod
    def from_tables(cls, households: pd.DataFrame, purchases: pd.DataFrame, products: pd.DataFrame,
                    clusters: pd.Series, categories: Sequence[str], n_periods: int) -> "HouseholdBaseline":
        ids = households["id"].astype(str).to_numpy()
        acts = purchases.assign(product=purchases["product"].astype(str), household=purchases["household"].astype(str))
        acts = acts.merge(products[["id", "category"]].assign(id=products["id"].astype(str)),
                          left_on="product", right_on="id")
        totals = acts.groupby(["household", "category"])[["quantity_L", "expenditure_eur"]].sum()
        quantity = totals["quantity_L"].unstack("category").reindex(index=ids, columns=list(categories)).fillna(0.0)
        spend = totals["expenditure_eur"].unstack("category").reindex(index=ids, columns=list(categories)).fillna(0.0)
        return cls(ids, households["weight"].to_numpy(float), tuple(categories),
                   quantity.to_numpy(float) / n_periods, spend.to_numpy(float) / n_periods,
                   np.asarray(clusters).astype(str), households["income"].to_numpy(int),
                   households["drinks_per_adult_day"].to_numpy(float))

    def subset(self, index: np.ndarray) -> "HouseholdBaseline":
        return HouseholdBaseline(self.ids[index], self.weights[index], self.categories, self.quantity[index],
                                 self.expenditure[index], self.clusters[index], self.income[index],
                                 self.drinks_per_adult_day[index])


@dataclass(frozen=True)
class HouseholdImpact:
    """One household's outcomes; arrays follow the category order."""
    household: str
    price_change: np.ndarray
    adjusted_quantity_change: np.ndarray
    quantity_change: np.ndarray
    content_change: np.ndarray
    ethanol_change: np.ndarray
    total_ethanol_change: float
    ev: float
    yv: float
    ev_star: float
    utility_change_pct: float


@dataclass
class ImpactTable:
    """
    Outcomes of a scenario for every household.

    `categories` holds one row per household and category, `households` one
    row per household with totals, welfare and classification.
    """
    categories: pd.DataFrame
    households: pd.DataFrame
    ev_failures: int = 0

    def impact(self, household: str) -> HouseholdImpact:
        rows = self.categories[self.categories["household"] == household]
        total = self.households.set_index("household").loc[household]
        return HouseholdImpact(
            household, rows["dP"].to_numpy(), rows["dQadj"].to_numpy(), rows["dQ"].to_numpy(),
            rows["dPsi"].to_numpy(), rows["dE"].to_numpy(), float(total["dE"]),
            float(total["ev"]), float(total["yv"]), float(total["ev_star"]), float(total["utility_pct"]),
        )


def ethanol_change(quantity_change: np.ndarray, content_change: np.ndarray) -> np.ndarray:
    """dE = dQ (1 + dPsi) + dPsi."""
    return quantity_change * (1.0 + content_change) + content_change


def equivalent_variation(model: QuaidsModel, ln_prices0: np.ndarray, ln_prices1: np.ndarray,
                         expenditure0: float, expenditure1: float,
                         demographics: Optional[np.ndarray] = None,
                         household: Optional[str] = None) -> Tuple[float, float, float]:
    """
    Equivalent variation of a price and budget change, in the units of expenditure.

    Args:
        model: Share system providing the cost function.
        ln_prices0, ln_prices1: Log price indices before and after.
        expenditure0, expenditure1: Total alcohol expenditure before and after.
        demographics: Cluster characteristics entering the intercepts.
        household: Identifier added to domain errors.

    Returns:
        (EV, YV, EV*) with EV = c(P0, V1) - c(P0, V0), YV = Y1 - Y0 and EV* = EV - YV.
    """
    try:
        utility1 = indirect_utility(model, ln_prices1, np.log(expenditure1), demographics)
        cost = np.exp(cost_function(model, ln_prices0, utility1, demographics))
    except DomainError as e:
        if household is None:
            raise
        raise DomainError(f"Household {household}: {e}") from e
    ev = float(cost - expenditure0)
    yv = float(expenditure1 - expenditure0)
    return ev, yv, ev - yv


def simulate_household_impacts(baseline: HouseholdBaseline, states0: Dict[str, ChoiceState],
                               states1: Dict[str, ChoiceState], psi: Dict[str, np.ndarray],
                               quaids: QuaidsModel, cluster_states: Dict[str, ClusterState],
                               default_state: ClusterState,
                               periods_per_year: int = PERIODS_PER_YEAR) -> ImpactTable:
    """
    Household outcomes of a counterfactual.

    Per category: dP from the price indices, dQadj from the cluster's
    uncompensated and budget elasticities, physical volume
    Q1 = Qadj1 / (1 + B1) floored at -100%, content change
    dPsi = sum_j psi_j dpi_j / Psi0 and ethanol change dE = dQ (1 + dPsi) + dPsi.
    Households without baseline purchases in a category stay at zero.

    Args:
        baseline: Baseline volumes and spending.
        states0, states1: Choice states at baseline and counterfactual prices.
        psi: Alcohol content (g/L) of each category's products.
        quaids: Share system.
        cluster_states: Average state of each cluster, for elasticities and welfare.
        default_state: State used for households of clusters without one.

    Returns:
        ImpactTable with per-category and per-household rows; EV in EUR per year.
    """
    categories = list(quaids.categories)
    n = len(baseline.ids)
    price_change = np.column_stack([states1[a].price_index / states0[a].price_index - 1.0 for a in categories])
    adjusted_change = np.zeros((n, len(categories)))
    budget_change = np.zeros(n)
    for cluster in np.unique(baseline.clusters):
        members = baseline.clusters == cluster
        state = cluster_states.get(cluster, default_state)
        for h in np.flatnonzero(members):
            adjusted_change[h], budget_change[h] = effect_on_quantities(quaids, state, price_change[h])

    rows = []
    ethanol0 = np.zeros((n, len(categories)))
    ethanol_delta = np.zeros((n, len(categories)))
    for a, category in enumerate(categories):
        q0 = baseline.quantity[:, a]
        buyers = q0 > 0
        before, after = states0[category], states1[category]
        content0 = before.probabilities @ psi[category]
        content1 = after.probabilities @ psi[category]
        volume = (1.0 + adjusted_change[:, a]) * (1.0 + before.quality) / (1.0 + after.quality) - 1.0
        volume = np.where(buyers, np.maximum(volume, -1.0), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            content = np.where(buyers & (content0 > 0), content1 / np.where(content0 > 0, content0, 1.0) - 1.0, 0.0)
        ethanol = np.where(buyers, ethanol_change(volume, content), 0.0)
        ethanol0[:, a] = q0 * content0
        ethanol_delta[:, a] = ethanol
        rows.append(pd.DataFrame({
            "household": baseline.ids,
            "category": category,
            "dP": price_change[:, a],
            "dQadj": np.where(buyers, adjusted_change[:, a], 0.0),
            "dQ": volume,
            "dPsi": content,
            "dE": ethanol,
            "E0": ethanol0[:, a],
            "Q0": q0,
            "B0": before.quality,
            "B1": after.quality,
        }))
    total_ethanol0 = ethanol0.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        total_change = np.where(total_ethanol0 > 0,
                                (ethanol0 * ethanol_delta).sum(axis=1) / np.where(total_ethanol0 > 0, total_ethanol0, 1.0),
                                0.0)

    expenditure0 = baseline.expenditure.sum(axis=1)
    ev = np.zeros(n)
    yv = np.zeros(n)
    failures = 0
    for h in range(n):
        if expenditure0[h] <= 0:
            continue
        state = cluster_states.get(baseline.clusters[h], default_state)
        ln_prices1 = state.ln_prices + np.log1p(price_change[h])
        expenditure1 = expenditure0[h] * (1.0 + budget_change[h])
        try:
            ev[h], yv[h], _ = equivalent_variation(quaids, state.ln_prices, ln_prices1, expenditure0[h],
                                                   expenditure1, state.demographics, baseline.ids[h])
        except DomainError as e:
            logger.debug("%s", e)
            ev[h] = yv[h] = np.nan
            failures += 1
    if failures:
        logger.warning("Equivalent variation undefined for %d household(s) (expenditure below G1)", failures)
    with np.errstate(divide="ignore", invalid="ignore"):
        budget_shares = np.where(expenditure0[:, None] > 0,
                                 baseline.expenditure / np.where(expenditure0 > 0, expenditure0, 1.0)[:, None], 0.0)
    buyers_change = np.where(baseline.quantity > 0, adjusted_change, 0.0)
    households = pd.DataFrame({
        "household": baseline.ids,
        "weight": baseline.weights,
        "cluster": baseline.clusters,
        "income": baseline.income,
        "risk": risk_class(baseline.drinks_per_adult_day),
        "E0": total_ethanol0,
        "dE": total_change,
        "ev": ev * periods_per_year,
        "yv": yv * periods_per_year,
        "ev_star": (ev - yv) * periods_per_year,
        "utility_pct": 100.0 * (budget_shares * buyers_change).sum(axis=1),
    })
    return ImpactTable(pd.concat(rows, ignore_index=True), households, failures)


def market_quantities(baseline: HouseholdBaseline, state: ChoiceState, category: str,
                      quantity_change: Optional[np.ndarray] = None,
                      periods_per_year: int = PERIODS_PER_YEAR) -> np.ndarray:
    """Annual liters per product: sum_h w_h pi_hj Q_h."""
    a = baseline.categories.index(category)
    volume = baseline.quantity[:, a]
    if quantity_change is not None:
        volume = volume * (1.0 + quantity_change)
    return periods_per_year * (baseline.weights * volume) @ state.probabilities


def tax_revenue_report(categories: Sequence[str], quantities0: Sequence[np.ndarray],
                       quantities1: Sequence[np.ndarray], prices0: Sequence[np.ndarray],
                       prices1: Sequence[np.ndarray], taxes0: Sequence[np.ndarray],
                       taxes1: Sequence[np.ndarray], vat_rate: float) -> pd.DataFrame:
    """
    Excise, VAT and producer revenue by category before and after, with a total row.

    Excise is sum_j T_j q_j, VAT sum_j tau / (1 + tau) p_j q_j and producer
    revenue sum_j (p_j / (1 + tau) - T_j) q_j, so the three add up to consumer spending.
    """
    share = vat_rate / (1.0 + vat_rate)
    records = []
    for k, category in enumerate(categories):
        record = {"category": category}
        for tag, q, p, t in (("0", quantities0[k], prices0[k], taxes0[k]), ("1", quantities1[k], prices1[k], taxes1[k])):
            q, p, t = np.asarray(q, float), np.asarray(p, float), np.asarray(t, float)
            record[f"excise{tag}"] = float(t @ q)
            record[f"vat{tag}"] = float(share * p @ q)
            record[f"producer{tag}"] = float((p / (1.0 + vat_rate) - t) @ q)
            record[f"spending{tag}"] = float(p @ q)
        records.append(record)
    frame = pd.DataFrame(records)
    total = frame.drop(columns="category").sum().to_dict()
    frame = pd.concat([frame, pd.DataFrame([{"category": "all", **total}])], ignore_index=True)
    for column in ("excise", "vat", "producer", "spending"):
        with np.errstate(divide="ignore", invalid="ignore"):
            frame[f"{column}_pct"] = 100.0 * (frame[f"{column}1"] / frame[f"{column}0"] - 1.0)
    return frame


def average_unit_price(quantities: np.ndarray, prices: np.ndarray) -> float:
    """Volume-weighted price in EUR per liter."""
    quantities = np.asarray(quantities, dtype=float)
    if quantities.sum() <= 0:
        return float("nan")
    return float(np.asarray(prices, dtype=float) @ quantities / quantities.sum())


def heterogeneity_tables(impacts: ImpactTable, grouping: str = "income") -> pd.DataFrame:
    """
    Group means of ethanol change (%), utility change (%) and EV (EUR per household per year).

    Ethanol changes are weighted by sample weight times baseline ethanol, the
    other columns by sample weight. Empty groups are left out with a warning.
    """
    if grouping not in GROUPINGS:
        raise DomainError(f"Unknown grouping {grouping!r}; expected one of {GROUPINGS}")
    households = impacts.households
    groups = (1, 2, 3, 4) if grouping == "income" else RISK_GROUPS
    records = []
    for group in groups:
        members = households[households[grouping] == group]
        if members.empty:
            logger.warning("No household in %s group %s", grouping, group)
            continue
        ethanol_weight = members["weight"] * members["E0"]
        valid_ev = members["ev"].notna()
        records.append({
            "grouping": grouping,
            "group": str(group),
            "households": len(members),
            "dE_pct": 100.0 * float((ethanol_weight * members["dE"]).sum() / ethanol_weight.sum())
            if ethanol_weight.sum() > 0 else 0.0,
            "utility_pct": float(np.average(members["utility_pct"], weights=members["weight"])),
            "ev": float(np.average(members.loc[valid_ev, "ev"], weights=members.loc[valid_ev, "weight"]))
            if valid_ev.any() else float("nan"),
        })
    return pd.DataFrame(records)


def aggregate_outcomes(impacts: ImpactTable) -> Dict[str, float]:
    """
    Population totals: ethanol change overall and by category, volume and content changes,
    average alcohol content (g/L) and baseline standard drinks per household per week.
    """
    households = impacts.households
    weights = households.set_index("household")["weight"]
    frame = impacts.categories.assign(weight=impacts.categories["household"].map(weights))
    stats: Dict[str, float] = {}
    ethanol_weight = households["weight"] * households["E0"]
    stats["dE_pct:all"] = 100.0 * float((ethanol_weight * households["dE"]).sum() / ethanol_weight.sum())
    total_ethanol = float((frame["weight"] * frame["E0"]).sum())
    for category, rows in frame.groupby("category", sort=False):
        e0 = rows["weight"] * rows["E0"]
        q0 = rows["weight"] * rows["Q0"]
        stats[f"dE_pct:{category}"] = 100.0 * float((e0 * rows["dE"]).sum() / e0.sum()) if e0.sum() > 0 else 0.0
        stats[f"dQ_pct:{category}"] = 100.0 * float((q0 * rows["dQ"]).sum() / q0.sum()) if q0.sum() > 0 else 0.0
        stats[f"dPsi_pct:{category}"] = 100.0 * float((e0 * rows["dPsi"]).sum() / e0.sum()) if e0.sum() > 0 else 0.0
        stats[f"content_gpl:{category}"] = float(e0.sum() / q0.sum()) if q0.sum() > 0 else 0.0
        stats[f"ethanol_share:{category}"] = float(e0.sum() / total_ethanol) if total_ethanol > 0 else 0.0
    drinks = total_ethanol / 10.0 / households["weight"].sum() / 4.0
    stats["drinks_per_week:baseline"] = float(drinks)
    return stats
