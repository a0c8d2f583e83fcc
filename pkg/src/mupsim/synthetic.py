"""
Synthetic household scanner panel for the six alcohol categories.

This module handles:
- A product catalog (brands x retailers, private labels, subcategories) with
  degrees, unit values and current excise close to observed market averages
- Baseline prices solved as the vertical-pricing equilibrium of known costs
- Households with adult member cells, habits, income and shopping occasions
- Period price shocks correlated with demand shocks, Hausman-type instruments
- Purchase acts drawn from random-coefficient logit choices, category budgets
  split by a known share system
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd

from .draws import make_draw_rule
from .equilibrium import SolverConfig, solve_tax_counterfactual
from .market import (
    CATEGORIES,
    CLUSTER_COLUMNS,
    DEFAULT_VAT_RATE,
    HOUSEHOLD_COLUMNS,
    MEMBER_CELLS,
    PRICE_COLUMNS,
    PRODUCT_COLUMNS,
    PURCHASE_COLUMNS,
    cluster_ids,
    demographic_dummies,
    habit_category,
    write_table,
)
from .numerics import softmax_with_outside
from .quality import MixedLogitMarket, MixedLogitModel, Population, ProductDesign
from .quantity import QuaidsModel
from .quantity_estimation import predicted_shares
from .supply import OwnershipStructure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Subcategory:
    name: str
    degree: float
    price_factor: float


@dataclass(frozen=True)
class CategoryProfile:
    """
    Market averages a generated category is built around.

    `price` is the average consumer price (EUR/L, all taxes included),
    `own_elasticity` the average product own-price elasticity and
    `inside_share` the probability of buying in the category at one shopping occasion.
    """
    name: str
    code: str
    price: float
    own_elasticity: float
    inside_share: float
    excise_per_degree: float
    excise_flat: float
    unit_volume: float
    manufacturers: int
    subcategories: Tuple[Subcategory, ...]
    price_shifts: Tuple[Tuple[str, float], ...] = ()


PROFILES: Dict[str, CategoryProfile] = {
    "ciders": CategoryProfile(
        "ciders", "CID", 2.88, -3.40, 0.03, 0.0, 0.015, 0.75, 2,
        (Subcategory("sweet", 3.0, 0.95), Subcategory("raw", 5.0, 1.05)),
    ),
    "beers": CategoryProfile(
        "beers", "BEE", 2.53, -5.02, 0.12, 0.083, 0.0, 1.5, 2,
        (Subcategory("standard", 5.0, 0.9), Subcategory("bock-premium", 7.0, 1.3),
         Subcategory("alcohol-free", 0.0, 0.9)),
    ),
    "aperitifs": CategoryProfile(
        "aperitifs", "APE", 6.40, -3.04, 0.05, 0.097, 0.0, 0.7, 2,
        (Subcategory("cocktails-punch", 10.0, 0.9), Subcategory("liquor-wines", 17.0, 1.1)),
    ),
    "spirits": CategoryProfile(
        "spirits", "SPI", 20.31, -3.55, 0.05, 0.22, 0.0, 0.7, 2,
        (Subcategory("rum", 40.0, 0.95), Subcategory("whisky", 40.0, 1.1)),
    ),
    "still-wines": CategoryProfile(
        "still-wines", "STI", 4.10, -4.43, 0.15, 0.0, 0.034, 0.75, 2,
        (Subcategory("de-table", 11.5, 0.75), Subcategory("de-pays", 12.5, 1.25)),
    ),
    "sparkling-wines": CategoryProfile(
        "sparkling-wines", "SPA", 13.28, -2.71, 0.03, 0.0, 0.064, 0.75, 2,
        (Subcategory("champagne", 12.0, 2.0), Subcategory("other-sparkling", 11.0, 0.6)),
        price_shifts=(("champagne", -0.2),),
    ),
}

# Across-category share system: budget shares, income elasticities and
# budget-price elasticities in CATEGORIES order.
BUDGET_SHARES: Tuple[float, ...] = (0.03, 0.20, 0.12, 0.25, 0.32, 0.08)
INCOME_ELASTICITIES: Tuple[float, ...] = (0.503, 1.210, 1.017, 1.434, 0.349, 0.385)
BUDGET_PRICE_ELASTICITIES: Tuple[float, ...] = (0.007, 0.098, 0.070, 0.071, 0.059, 0.122)

# Price-disutility shifts per demographic dummy, as fractions of alpha.
DELTA_SHARES: Tuple[float, ...] = (-0.05, -0.10, -0.15, 0.0, 0.0, 0.0, 0.10)

INCOME_LEVELS = (14000.0, 24000.0, 34000.0, 55000.0)
AGE_BANDS = ("18_34", "35_54", "55p")
RETAILER_PRICE = (1.0, 0.97, 1.03, 0.99, 1.01)


@dataclass
class SyntheticConfig:
    """Size, seed and shock scales of a generated panel."""
    seed: int = 7
    n_households: int = 2000
    n_periods: int = 13
    n_retailers: int = 3
    vat_rate: float = DEFAULT_VAT_RATE
    price_shock: float = 0.10
    idiosyncratic_shock: float = 0.03
    demand_shock: float = 0.5
    cost_persistence: float = 0.8
    sigma_share: float = 0.15
    gamma_scale: float = 0.4
    spend_per_drink: float = 0.45
    budget_noise: float = 0.15
    population: float = 28.0e6
    draw_level: int = 5


@dataclass
class SyntheticMarket:
    """Generated tables and the parameters that produced them."""
    products: pd.DataFrame
    households: pd.DataFrame
    purchases: pd.DataFrame
    prices: pd.DataFrame
    clusters: pd.DataFrame
    truth: Dict[str, Any] = field(default_factory=dict)

    def write(self, directory: Path) -> List[Path]:
        directory = Path(directory)
        paths = [
            write_table(self.products, directory / "products.csv"),
            write_table(self.households, directory / "households.csv"),
            write_table(self.purchases, directory / "purchases.csv"),
            write_table(self.prices, directory / "prices.csv"),
            write_table(self.clusters, directory / "clusters.csv"),
        ]
        truth_path = directory / "truth.json"
        truth_path.write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        paths.append(truth_path)
        return paths


def generate_households(config: SyntheticConfig, rng: np.random.Generator) -> pd.DataFrame:
    """Households with demographics, adult member cells and shopping occasions."""
    n = config.n_households
    income = rng.integers(1, 5, size=n)
    age = rng.choice([1, 2, 3], size=n, p=[0.25, 0.40, 0.35])
    adults = rng.choice([1, 2, 3], size=n, p=[0.35, 0.55, 0.10])
    drinks = rng.lognormal(np.log(0.7), 0.75, size=n)
    frame = pd.DataFrame({
        "id": [f"H{k:05d}" for k in range(1, n + 1)],
        "weight": config.population / n * rng.lognormal(0.0, 0.2, size=n),
        "income": income,
        "age": age,
        "habit": habit_category(drinks),
        "drinks_per_adult_day": drinks,
        "income_eur": np.asarray(INCOME_LEVELS)[income - 1] * rng.lognormal(0.0, 0.15, size=n),
        "children": np.where(age < 3, np.minimum(rng.poisson(0.8, size=n), 4), 0),
        "region": rng.integers(1, 9, size=n),
        "small_city": rng.random(n) < 0.4,
    })
    frame["occasions"] = 4 + rng.poisson(2.0 * frame["habit"].to_numpy())
    frame["producing_region"] = frame["region"].isin([4, 7])
    members = np.zeros((n, len(MEMBER_CELLS)), dtype=int)
    gender = rng.integers(0, 2, size=n)
    education = rng.random((n, 3)) < 0.4
    for h in range(n):
        people = [(gender[h], AGE_BANDS[age[h] - 1], education[h, 0])]
        if adults[h] >= 2:
            people.append((1 - gender[h], AGE_BANDS[age[h] - 1], education[h, 1]))
        if adults[h] == 3:
            people.append((rng.integers(0, 2), "18_34", education[h, 2]))
        for sex, band, high in people:
            cell = f"n_{'MF'[sex]}_{band}_{'high' if high else 'low'}"
            members[h, MEMBER_CELLS.index(cell)] += 1
    frame = frame.join(pd.DataFrame(members, columns=list(MEMBER_CELLS), index=frame.index))
    return frame[list(HOUSEHOLD_COLUMNS)]


def generate_catalog(profile: CategoryProfile, config: SyntheticConfig, rng: np.random.Generator) -> pd.DataFrame:
    """
    Products of one category: every national brand at every retailer plus one private label per retailer.

    Each manufacturer owns one brand per subcategory; the first manufacturer
    and the retailers are large firms.
    """
    retailers = [f"R{r}" for r in range(1, config.n_retailers + 1)]
    rows = []
    for m in range(1, profile.manufacturers + 1):
        for s, subcategory in enumerate(profile.subcategories):
            brand = f"{profile.code}-B{m}{s + 1}"
            premium = float(np.exp(rng.normal(0.0, 0.1)))
            jitter = 0.0 if subcategory.degree == 0 else float(rng.choice([-0.5, 0.0, 0.5]))
            for r, retailer in enumerate(retailers):
                rows.append({
                    "subcategory": subcategory.name, "brand": brand, "manufacturer": f"{profile.code}-M{m}",
                    "retailer": retailer, "size_class": "large" if m == 1 else "small",
                    "degree": subcategory.degree + jitter, "private_label": False,
                    "target": profile.price * subcategory.price_factor * premium
                    * RETAILER_PRICE[r % len(RETAILER_PRICE)],
                })
    for r, retailer in enumerate(retailers):
        subcategory = profile.subcategories[r % len(profile.subcategories)]
        rows.append({
            "subcategory": subcategory.name, "brand": f"PL-{retailer}", "manufacturer": f"{retailer}-PL",
            "retailer": retailer, "size_class": "large", "degree": subcategory.degree,
            "private_label": True, "target": 0.85 * profile.price * subcategory.price_factor,
        })
    catalog = pd.DataFrame(rows)
    catalog.insert(0, "id", [f"{profile.code}{k:03d}" for k in range(1, len(catalog) + 1)])
    catalog.insert(1, "category", profile.name)
    catalog["unit_volume"] = profile.unit_volume
    catalog["excise"] = profile.excise_per_degree * catalog["degree"] + profile.excise_flat
    return catalog


def true_choice_model(profile: CategoryProfile, catalog: pd.DataFrame, design: ProductDesign,
                      config: SyntheticConfig, rng: np.random.Generator) -> MixedLogitModel:
    """
    Taste parameters matching the profile's elasticity and inside share at target prices.

    alpha = |e| / (p (1 - s)) with s the average product share; brand and
    retailer effects are random, and a common constant sets the inside share.
    """
    n = len(catalog)
    product_share = profile.inside_share / n
    alpha = abs(profile.own_elasticity) / (profile.price * (1.0 - product_share))
    shifts = {name: share * alpha for name, share in profile.price_shifts}
    brands = sorted(catalog["brand"].unique())
    retailers = sorted(catalog["retailer"].unique())
    brand_effect = dict(zip(brands, rng.normal(0.0, 0.3, size=len(brands))))
    retailer_effect = dict(zip(retailers, np.concatenate([[0.0], rng.normal(0.0, 0.2, size=len(retailers) - 1)])))
    slope = alpha + catalog["subcategory"].map(shifts).fillna(0.0).to_numpy()
    relative = (catalog["brand"].map(brand_effect) + catalog["retailer"].map(retailer_effect)).to_numpy()
    constant = np.log(profile.inside_share / (1.0 - profile.inside_share)) \
        - np.log(np.sum(np.exp(relative - slope * catalog["target"].to_numpy())))
    beta = {f"brand={b}": float(constant + brand_effect[b]) for b in brands}
    beta.update({f"retailer={r}": float(retailer_effect[r]) for r in retailers[1:]})
    return MixedLogitModel(
        category=profile.name,
        alpha=float(alpha),
        delta=np.asarray(DELTA_SHARES) * alpha,
        sigma=config.sigma_share * alpha,
        beta={name: value for name, value in beta.items() if name in design.parameter_names},
        price_shifts=shifts,
        draw_rule=make_draw_rule("sparse-grid", level=config.draw_level),
    )


def true_share_system(ln_prices: np.ndarray, ln_budget: float, config: SyntheticConfig) -> QuaidsModel:
    """
    Share system with the target budget shares at the reference prices and budget.

    Gamma = c (diag(w) - w w') keeps symmetry and homogeneity; chi matches the
    income elasticities, lam is a small multiple of chi.
    """
    shares = np.asarray(BUDGET_SHARES)
    gamma = config.gamma_scale * (np.diag(shares) - np.outer(shares, shares))
    chi = shares * (np.asarray(INCOME_ELASTICITIES) - 1.0)
    chi = chi - shares * chi.sum()
    lam = 0.05 * chi
    kappa = shares - gamma @ ln_prices
    kappa0 = ln_budget - kappa @ ln_prices - 0.5 * ln_prices @ gamma @ ln_prices
    return QuaidsModel(CATEGORIES, kappa[:, None], gamma, chi, lam, ("const",), kappa0=float(kappa0),
                       budget_price_elasticity=np.asarray(BUDGET_PRICE_ELASTICITIES))


def _cost_shocks(n_firms: int, config: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Stationary AR(1) paths with unit variance, shape (firms, periods)."""
    rho = config.cost_persistence
    shocks = np.zeros((n_firms, config.n_periods))
    shocks[:, 0] = rng.normal(size=n_firms)
    for t in range(1, config.n_periods):
        shocks[:, t] = rho * shocks[:, t - 1] + np.sqrt(1.0 - rho ** 2) * rng.normal(size=n_firms)
    return shocks


def _instruments(panel: pd.DataFrame, catalog: pd.DataFrame) -> pd.DataFrame:
    """
    Hausman-type instruments from an adjacent period (the previous one, the next for the first).

    mean_price_brand_other is the mean price of the same brand at other
    retailers, mean_price_retailer_other that of the retailer's other products.
    """
    info = catalog.set_index("id")[["brand", "retailer", "subcategory"]]
    panel = panel.join(info, on="product")
    periods = np.sort(panel["period"].unique())
    adjacent = {t: periods[k - 1] if k > 0 else periods[min(1, len(periods) - 1)] for k, t in enumerate(periods)}
    lookup = panel.set_index(["period", "product"])["price"]
    brand_other, retailer_other = [], []
    for row in panel.itertuples(index=False):
        t = adjacent[row.period]
        same_brand = info.index[(info["brand"] == row.brand) & (info["retailer"] != row.retailer)]
        same_retailer = info.index[(info["retailer"] == row.retailer) & (info.index != row.product)]
        brand_other.append(lookup.loc[t].reindex(same_brand).mean() if len(same_brand) else np.nan)
        retailer_other.append(lookup.loc[t].reindex(same_retailer).mean() if len(same_retailer) else np.nan)
    panel["mean_price_brand_other"] = brand_other
    panel["mean_price_retailer_other"] = retailer_other
    # private labels have no brand at other retailers
    panel["mean_price_brand_other"] = panel["mean_price_brand_other"].fillna(panel["mean_price_retailer_other"])
    panel["n_competing"] = panel.groupby(["period", "retailer", "subcategory"])["product"].transform("size") - 1
    same_subcategory = panel.groupby(["period", "subcategory"])["product"].transform("size")
    panel["n_competing_other"] = same_subcategory - 1 - panel["n_competing"]
    return panel


def _simulate_choices(model: MixedLogitModel, design: ProductDesign, prices: np.ndarray, xi: np.ndarray,
                      households: pd.DataFrame, taste: np.ndarray, config: SyntheticConfig,
                      rng: np.random.Generator) -> np.ndarray:
    """Purchase-act counts (H, T, J) over each household's shopping occasions."""
    demographics = demographic_dummies(households).to_numpy(float)
    base = model.base_utility(design, demographics)
    alpha = np.maximum(model.alpha + demographics @ model.delta + model.sigma * taste, model.alpha_floor)
    slopes = alpha[:, None] + model.price_shift(design)[None, :]
    utility = (base[:, None, :] - slopes[:, None, :] * prices[None, :, :]
               + config.demand_shock * xi[None, :, :])
    inside, outside = softmax_with_outside(utility)
    probabilities = np.concatenate([inside, outside[..., None]], axis=-1)
    probabilities = probabilities / probabilities.sum(axis=-1, keepdims=True)
    occasions = np.repeat(households["occasions"].to_numpy(int)[:, None], prices.shape[0], axis=1)
    counts = rng.multinomial(occasions, probabilities)
    return counts[..., :-1]


def _cluster_table(households: pd.DataFrame, purchases: pd.DataFrame, products: pd.DataFrame,
                   n_periods: int) -> pd.DataFrame:
    """Raw cluster x period x category means (non-purchasers included) with unit-value prices."""
    members = households.assign(cluster=cluster_ids(households))
    flows = (purchases.merge(products[["id", "category"]].rename(columns={"id": "product"}), on="product")
             .merge(members[["id", "cluster", "weight"]].rename(columns={"id": "household"}), on="household"))
    flows["w_expenditure"] = flows["weight"] * flows["expenditure_eur"]
    flows["w_quantity"] = flows["weight"] * flows["quantity_L"]
    sums = flows.groupby(["cluster", "period", "category"])[["w_expenditure", "w_quantity"]].sum()
    cluster_weight = members.groupby("cluster")["weight"].sum()
    grid = pd.MultiIndex.from_product([sorted(cluster_weight.index), range(1, n_periods + 1), list(CATEGORIES)],
                                      names=["cluster", "period", "category"])
    table = sums.reindex(grid, fill_value=0.0).reset_index()
    denominator = table["cluster"].map(cluster_weight)
    table["expenditure"] = table["w_expenditure"] / denominator
    table["quantity"] = table["w_quantity"] / denominator
    table["quality"] = 0.0
    positive = table["quantity"] > 0
    table["adjusted_price"] = np.where(positive, table["expenditure"] / table["quantity"].where(positive, 1.0), np.nan)
    table["weight"] = denominator / cluster_weight.sum()
    return table[list(CLUSTER_COLUMNS)]


def generate(config: SyntheticConfig = None) -> SyntheticMarket:
    """
    Generate a full synthetic panel.

    The same config (seed included) always produces identical tables.
    """
    config = config or SyntheticConfig()
    rng = np.random.default_rng(config.seed)
    households = generate_households(config, rng)
    population = Population.from_households(households)
    periods = np.arange(1, config.n_periods + 1)
    solver = SolverConfig()

    catalogs, models, designs, costs = [], {}, {}, {}
    for category in CATEGORIES:
        profile = PROFILES[category]
        catalog = generate_catalog(profile, config, rng)
        design = ProductDesign.from_products(catalog.assign(price=catalog["target"]))
        model = true_choice_model(profile, catalog, design, config, rng)
        excise = catalog["excise"].to_numpy(float)
        target = catalog["target"].to_numpy(float)
        net = target / (1.0 + config.vat_rate) - excise
        cost = np.maximum(net - profile.price / abs(profile.own_elasticity), 0.25 * net)
        ownership = OwnershipStructure.from_products(catalog, config.vat_rate)
        market = MixedLogitMarket(model, design, population)
        result = solve_tax_counterfactual(category, market, ownership, excise, cost, target, solver)
        if not result.converged:
            logger.warning("Baseline equilibrium of synthetic %s not converged (residual %.3g)",
                           category, result.residual)
        catalog["price"] = result.prices
        catalogs.append(catalog)
        models[category] = model
        designs[category] = ProductDesign.from_products(catalog)
        costs[category] = dict(zip(catalog["id"], cost.tolist()))
        logger.info("Generated %s: %d products, alpha %.4f, mean price %.2f EUR/L",
                    category, len(catalog), model.alpha, float(result.prices.mean()))
    products = pd.concat(catalogs, ignore_index=True)

    # Period prices: manufacturer cost shocks plus product shocks that also shift demand.
    firms = sorted(products["manufacturer"].unique())
    nu = dict(zip(firms, _cost_shocks(len(firms), config, rng)))
    xi = rng.normal(size=(len(products), config.n_periods))
    firm_shock = np.vstack([nu[m] for m in products["manufacturer"]])
    period_prices = products["price"].to_numpy(float)[:, None] * np.exp(
        config.price_shock * firm_shock + config.idiosyncratic_shock * xi)
    panel = pd.DataFrame({
        "product": np.repeat(products["id"].to_numpy(), config.n_periods),
        "period": np.tile(periods, len(products)),
        "price": period_prices.ravel(),
        "tax": np.repeat(products["excise"].to_numpy(float), config.n_periods),
    })
    panel = _instruments(panel, products)

    # Category budgets from the share system at period price levels.
    position = {pid: k for k, pid in enumerate(products["id"])}
    ln_levels = np.zeros((config.n_periods, len(CATEGORIES)))
    for a, category in enumerate(CATEGORIES):
        rows = products.index[products["category"] == category]
        ln_levels[:, a] = np.log(period_prices[rows].mean(axis=0))
    reference_levels = ln_levels.mean(axis=0)
    adults = households[list(MEMBER_CELLS)].sum(axis=1).to_numpy(float)
    budget = (households["drinks_per_adult_day"].to_numpy() * adults * 28.0 * config.spend_per_drink
              * (households["income_eur"].to_numpy() / 30000.0) ** 0.3)
    share_system = true_share_system(reference_levels, float(np.log(np.median(budget))), config)
    price_response = np.exp((ln_levels - reference_levels) @ np.asarray(BUDGET_PRICE_ELASTICITIES))
    spend = budget[:, None] * price_response[None, :] * rng.lognormal(0.0, config.budget_noise,
                                                                      size=(len(budget), config.n_periods))
    category_spend = np.zeros((len(budget), config.n_periods, len(CATEGORIES)))
    for t in range(config.n_periods):
        shares = predicted_shares(share_system, np.repeat(ln_levels[[t]], len(budget), axis=0),
                                  np.log(spend[:, t]), np.ones((len(budget), 1)))
        shares = np.clip(shares, 1e-4, None)
        category_spend[:, t] = spend[:, [t]] * shares / shares.sum(axis=1, keepdims=True)

    # Purchase acts: choices at each occasion, category spend split evenly over acts.
    taste = rng.normal(size=len(households))
    acts = []
    for a, category in enumerate(CATEGORIES):
        rows = products.index[products["category"] == category].to_numpy()
        prices = period_prices[rows].T
        counts = _simulate_choices(models[category], designs[category], prices, xi[rows].T,
                                   households, taste, config, rng)
        totals = counts.sum(axis=2)
        h, t, j = np.nonzero(counts)
        n = counts[h, t, j]
        per_act = category_spend[h, t, a] / totals[h, t]
        h, t, j, per_act = (np.repeat(v, n) for v in (h, t, j, per_act))
        acts.append(pd.DataFrame({
            "household": households["id"].to_numpy()[h],
            "period": periods[t],
            "product": products["id"].to_numpy()[rows[j]],
            "quantity_L": per_act / prices[t, j],
            "expenditure_eur": per_act,
        }))
    purchases = (pd.concat(acts, ignore_index=True)
                 .sort_values(["household", "period", "product"], kind="mergesort", ignore_index=True))
    logger.info("Generated %d purchase acts for %d households over %d periods",
                len(purchases), len(households), config.n_periods)

    prices_table = panel[list(PRICE_COLUMNS)].sort_values(["product", "period"], ignore_index=True)
    products = products[list(PRODUCT_COLUMNS) + ["private_label"]]
    truth = {
        "config": asdict(config),
        "quality": {category: model.to_dict() for category, model in models.items()},
        "costs": costs,
        "quantity": share_system.to_dict(),
        "demand_shock": config.demand_shock,
        "product_order": list(position),
    }
    return SyntheticMarket(products, households, purchases[list(PURCHASE_COLUMNS)], prices_table,
                           _cluster_table(households, purchases, products, config.n_periods), truth)
