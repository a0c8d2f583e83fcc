"""
Pseudo-panel construction and estimation of the across-category share system.

This module handles:
- Aggregating household quality indices into cluster x period x category cells
- Cluster Laspeyres price indices
- The expenditure first stage (budget-price and income elasticities)
- Iterated linear least squares under adding-up, homogeneity and symmetry,
  followed by a nonlinear polish of the full share system
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import linalg, optimize

from .errors import DomainError, NumericError
from .market import CATEGORIES, cluster_ids
from .quantity import QuaidsModel

logger = logging.getLogger(__name__)

CLUSTER_DEMOGRAPHICS: Tuple[str, ...] = (
    "income_2", "income_3", "income_4", "age_2", "age_3", "habit_2", "habit_3", "children",
)
REGION_SHARES: Tuple[str, ...] = tuple(f"region_{k}" for k in range(2, 9))
PSEUDO_PANEL_COLUMNS: Tuple[str, ...] = (
    "cluster", "period", "category", "expenditure", "quantity", "quality",
    "adjusted_price", "laspeyres_price", "weight", "ln_income",
) + CLUSTER_DEMOGRAPHICS + REGION_SHARES


def laspeyres_indices(purchases: pd.DataFrame, products: pd.DataFrame, prices: pd.DataFrame,
                      households: pd.DataFrame) -> pd.DataFrame:
    """
    Cluster Laspeyres price indices sum_j S_j p_jt.

    S_j is the cluster-average volume share of product j in the category's
    purchases over the whole panel.

    Returns:
        DataFrame with columns cluster, period, category, laspeyres_price.
    """
    membership = pd.DataFrame({"household": households["id"].astype(str), "cluster": cluster_ids(households)})
    acts = (purchases.assign(household=purchases["household"].astype(str), product=purchases["product"].astype(str))
            .merge(membership, on="household")
            .merge(products[["id", "category"]].rename(columns={"id": "product"}), on="product"))
    volume = acts.groupby(["cluster", "category", "product"], sort=True)["quantity_L"].sum()
    shares = (volume / volume.groupby(level=["cluster", "category"]).transform("sum")).rename("share").reset_index()
    panel = prices[["product", "period", "price"]].assign(product=prices["product"].astype(str))
    indices = shares.merge(panel, on="product")
    indices["laspeyres_price"] = indices["share"] * indices["price"]
    return (indices.groupby(["cluster", "period", "category"], sort=True)["laspeyres_price"]
            .sum().reset_index())


def build_pseudo_panel(household_indices: pd.DataFrame, households: pd.DataFrame,
                       periods: Sequence[int], categories: Sequence[str] = CATEGORIES,
                       laspeyres: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """
    Aggregate household-period quality indices into the cluster pseudo-panel.

    Cluster expenditure and quantity are weighted means over all member
    households, non-purchasers included. The cluster price is
    Y / mean(Q (1 + B)) and the cluster quality is defined so that
    price x quantity x (1 + quality) = expenditure.

    Args:
        household_indices: Rows (household, period, category, expenditure, quantity, quality)
            for household-periods with purchases.
        households: Households table.
        periods: All panel periods.
        categories: Categories of the share system.
        laspeyres: Optional output of `laspeyres_indices`.
    """
    members = households.assign(id=households["id"].astype(str), cluster=cluster_ids(households))
    members["ln_income"] = np.log(members["income_eur"].clip(lower=1.0))
    members["children"] = (members["children"] > 0).astype(float)
    for level in (2, 3, 4):
        members[f"income_{level}"] = (members["income"] == level).astype(float)
    for level in (2, 3):
        members[f"age_{level}"] = (members["age"] == level).astype(float)
        members[f"habit_{level}"] = (members["habit"] == level).astype(float)
    for column in REGION_SHARES:
        members[column] = (members["region"] == int(column.split("_")[1])).astype(float)
    total_weight = members["weight"].sum()
    traits = list(CLUSTER_DEMOGRAPHICS + REGION_SHARES) + ["ln_income"]
    weighted = members[traits].multiply(members["weight"], axis=0).assign(cluster=members["cluster"])
    cluster_weight = members.groupby("cluster")["weight"].sum()
    cluster_traits = weighted.groupby("cluster").sum().div(cluster_weight, axis=0)

    flows = household_indices.assign(household=household_indices["household"].astype(str)).merge(
        members[["id", "cluster", "weight"]], left_on="household", right_on="id")
    flows["w_expenditure"] = flows["weight"] * flows["expenditure"]
    flows["w_quantity"] = flows["weight"] * flows["quantity"]
    flows["w_adjusted"] = flows["weight"] * flows["quantity"] * (1.0 + flows["quality"])
    sums = flows.groupby(["cluster", "period", "category"])[["w_expenditure", "w_quantity", "w_adjusted"]].sum()

    grid = pd.MultiIndex.from_product([sorted(cluster_weight.index), list(periods), list(categories)],
                                      names=["cluster", "period", "category"])
    panel = sums.reindex(grid, fill_value=0.0).reset_index()
    denominator = panel["cluster"].map(cluster_weight)
    panel["expenditure"] = panel["w_expenditure"] / denominator
    panel["quantity"] = panel["w_quantity"] / denominator
    adjusted = panel["w_adjusted"] / denominator
    positive = (panel["quantity"] > 0) & (adjusted > 0)
    panel["adjusted_price"] = np.where(positive, panel["expenditure"] / adjusted.where(positive, 1.0), np.nan)
    panel["quality"] = np.where(positive, adjusted / panel["quantity"].where(positive, 1.0) - 1.0, np.nan)
    panel["weight"] = panel["cluster"].map(cluster_weight) / total_weight
    panel = panel.merge(cluster_traits, left_on="cluster", right_index=True)
    if laspeyres is not None:
        panel = panel.merge(laspeyres, on=["cluster", "period", "category"], how="left")
    else:
        panel["laspeyres_price"] = np.nan
    return panel[list(PSEUDO_PANEL_COLUMNS)]


@dataclass
class PseudoPanel:
    """Wide arrays of the pseudo-panel, one row per cluster-period with positive expenditure."""
    categories: Tuple[str, ...]
    clusters: np.ndarray
    periods: np.ndarray
    ln_prices: np.ndarray
    ln_expenditure: np.ndarray
    shares: np.ndarray
    demographics: np.ndarray
    demographic_names: Tuple[str, ...]
    weights: np.ndarray
    ln_income: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ln_expenditure)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, categories: Sequence[str] = CATEGORIES,
                   price_index: str = "adjusted", period_effects: bool = True,
                   region_controls: bool = True) -> "PseudoPanel":
        """
        Pivot the long pseudo-panel into estimation arrays.

        Missing category prices (no purchase in a cell) are filled with the
        period mean log price of that category over clusters, then its overall mean.
        """
        categories = tuple(categories)
        column = "laspeyres_price" if price_index == "laspeyres" else "adjusted_price"
        keys = ["cluster", "period"]
        expenditure = frame.pivot_table(index=keys, columns="category", values="expenditure",
                                        aggfunc="sum", fill_value=0.0).reindex(columns=categories, fill_value=0.0)
        log_price = np.log(frame.set_index(keys + ["category"])[column].where(lambda s: s > 0))
        log_price = log_price.unstack("category").reindex(index=expenditure.index, columns=categories)
        period_mean = log_price.groupby(level="period").transform("mean")
        log_price = log_price.fillna(period_mean).fillna(log_price.mean())
        if log_price.isna().to_numpy().any():
            raise DomainError(f"No {column} observed for some category")
        total = expenditure.sum(axis=1)
        keep = total > 0
        dropped = int((~keep).sum())
        if dropped:
            logger.info("Dropping %d cluster-periods without alcohol expenditure", dropped)
        expenditure, log_price, total = expenditure[keep], log_price[keep], total[keep]
        traits = frame.drop_duplicates(keys).set_index(keys).reindex(expenditure.index)
        names = ["const"] + list(CLUSTER_DEMOGRAPHICS)
        if region_controls:
            names += list(REGION_SHARES)
        columns = [np.ones(len(traits))] + [traits[name].to_numpy(float) for name in names[1:]]
        periods = expenditure.index.get_level_values("period").to_numpy()
        if period_effects:
            for period in np.unique(periods)[1:]:
                names.append(f"period_{period}")
                columns.append((periods == period).astype(float))
        return cls(
            categories=categories,
            clusters=expenditure.index.get_level_values("cluster").astype(str).to_numpy(),
            periods=periods,
            ln_prices=log_price.to_numpy(float),
            ln_expenditure=np.log(total.to_numpy(float)),
            shares=expenditure.div(total, axis=0).to_numpy(float),
            demographics=np.column_stack(columns),
            demographic_names=tuple(names),
            weights=traits["weight"].to_numpy(float),
            ln_income=traits["ln_income"].to_numpy(float),
        )


@dataclass
class ExpenditureEquation:
    """Log-log regression of the alcohol budget on price indices and income."""
    budget_price_elasticity: np.ndarray
    income_elasticity: float
    fitted: np.ndarray
    rsquared: float
    params: Dict[str, float] = field(default_factory=dict)


def estimate_expenditure_equation(panel: PseudoPanel, period_effects: bool = True) -> ExpenditureEquation:
    """
    Regress lnY on log category price indices, log income and period effects.

    The price coefficients are the budget-price elasticities E_PY and the
    income coefficient the income elasticity of the alcohol budget; the fitted
    values instrument lnY in the share system.
    """
    names = ["const"] + [f"lnP:{c}" for c in panel.categories] + ["ln_income"]
    columns = [np.ones(panel.size), *panel.ln_prices.T, panel.ln_income]
    if period_effects:
        for period in np.unique(panel.periods)[1:]:
            names.append(f"period_{period}")
            columns.append((panel.periods == period).astype(float))
    design = np.column_stack(columns)
    fit = sm.WLS(panel.ln_expenditure, design, weights=panel.weights).fit()
    params = dict(zip(names, map(float, fit.params)))
    return ExpenditureEquation(
        budget_price_elasticity=np.array([params[f"lnP:{c}"] for c in panel.categories]),
        income_elasticity=params["ln_income"],
        fitted=np.asarray(fit.fittedvalues, dtype=float),
        rsquared=float(fit.rsquared),
        params=params,
    )


@dataclass
class IrlsConfig:
    """Settings of the share-system estimator."""
    max_iter: int = 200
    tol: float = 1e-10
    quadratic: bool = True
    polish: bool = True
    ridge: float = 1e-8
    period_effects: bool = True
    region_controls: bool = True
    price_index: str = "adjusted"


def constraint_system(n_categories: int, n_demographics: int, quadratic: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear restrictions C theta = c on the per-equation parameter stacking.

    Each equation a holds [K_a (n_demographics), Gamma_a (n_categories), chi_a, lam_a].
    """
    width = n_demographics + n_categories + 2
    size = n_categories * width

    def index(a: int, column: int) -> int:
        return a * width + column

    rows, targets = [], []

    def add(entries: Dict[int, float], target: float = 0.0):
        row = np.zeros(size)
        for position, value in entries.items():
            row[position] += value
        rows.append(row)
        targets.append(target)

    for d in range(n_demographics):
        add({index(a, d): 1.0 for a in range(n_categories)}, 1.0 if d == 0 else 0.0)
    for k in range(n_categories):
        add({index(a, n_demographics + k): 1.0 for a in range(n_categories)})
        add({index(k, n_demographics + l): 1.0 for l in range(n_categories)})
    for a in range(n_categories):
        for k in range(a + 1, n_categories):
            add({index(a, n_demographics + k): 1.0, index(k, n_demographics + a): -1.0})
    add({index(a, n_demographics + n_categories): 1.0 for a in range(n_categories)})
    if quadratic:
        add({index(a, width - 1): 1.0 for a in range(n_categories)})
    else:
        for a in range(n_categories):
            add({index(a, width - 1): 1.0})
    return np.vstack(rows), np.asarray(targets)


def predicted_shares(model: QuaidsModel, ln_prices: np.ndarray, ln_expenditure: np.ndarray,
                     demographics: np.ndarray) -> np.ndarray:
    """Vectorized budget shares for many states, shape (n, A)."""
    kappa = demographics @ model.intercepts.T
    g1 = (model.kappa0 + np.sum(kappa * ln_prices, axis=1)
          + 0.5 * np.einsum("na,ak,nk->n", ln_prices, model.gamma, ln_prices))
    g2 = np.exp(ln_prices @ model.chi)
    real = ln_expenditure - g1
    return (kappa + ln_prices @ model.gamma.T + np.outer(real, model.chi)
            + np.outer(real ** 2 / g2, model.lam))


def _template(panel: PseudoPanel, config: IrlsConfig) -> QuaidsModel:
    n, n_d = len(panel.categories), len(panel.demographic_names)
    intercepts = np.zeros((n, n_d))
    intercepts[:, 0] = np.average(panel.shares, axis=0, weights=panel.weights)
    return QuaidsModel(panel.categories, intercepts, np.zeros((n, n)), np.zeros(n), np.zeros(n),
                       panel.demographic_names, price_index=config.price_index)


def estimate_irls(panel: PseudoPanel, config: Optional[IrlsConfig] = None,
                  ln_expenditure: Optional[np.ndarray] = None) -> QuaidsModel:
    """
    Estimate the share system by iterated constrained least squares.

    At fixed price aggregators the shares are linear in the parameters; each
    iteration solves the weighted stacked regression in the null space of the
    restrictions, then updates G1 and G2.

    Args:
        panel: Pseudo-panel arrays.
        config: Estimator settings.
        ln_expenditure: Instrumented log expenditure (first-stage fitted values);
            the observed values are used when omitted.

    Returns:
        A model satisfying all restrictions; `diagnostics` reports iterations,
        the share residual sum of squares and convergence.
    """
    config = config or IrlsConfig()
    ln_y = panel.ln_expenditure if ln_expenditure is None else np.asarray(ln_expenditure, dtype=float)
    n_cat, n_d = len(panel.categories), len(panel.demographic_names)
    constraints, targets = constraint_system(n_cat, n_d, config.quadratic)
    particular = linalg.lstsq(constraints, targets)[0]
    null = linalg.null_space(constraints)
    root_weight = np.sqrt(panel.weights / panel.weights.mean())
    response = (panel.shares * root_weight[:, None]).T.ravel()

    model = _template(panel, config)
    theta = model.to_vector()
    ridge_used = False
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iter + 1):
        kappa = panel.demographics @ model.intercepts.T
        g1 = (model.kappa0 + np.sum(kappa * panel.ln_prices, axis=1)
              + 0.5 * np.einsum("na,ak,nk->n", panel.ln_prices, model.gamma, panel.ln_prices))
        if iteration == 1:
            # Stone index start
            g1 = np.sum(np.average(panel.shares, axis=0, weights=panel.weights) * panel.ln_prices, axis=1)
        g2 = np.exp(panel.ln_prices @ model.chi)
        real = ln_y - g1
        regressors = np.column_stack([panel.demographics, panel.ln_prices, real, real ** 2 / g2])
        regressors = regressors * root_weight[:, None]
        stacked = np.kron(np.eye(n_cat), regressors)
        reduced = stacked @ null
        rhs = response - stacked @ particular
        solution, _, rank, singular = np.linalg.lstsq(reduced, rhs, rcond=None)
        if rank < reduced.shape[1] or singular.min() < 1e-12 * singular.max():
            if not ridge_used:
                logger.warning("Singular share-system design (rank %d of %d); using ridge %.0e",
                               rank, reduced.shape[1], config.ridge)
            ridge_used = True
            gram = reduced.T @ reduced + config.ridge * np.eye(reduced.shape[1])
            solution = linalg.solve(gram, reduced.T @ rhs, assume_a="pos")
        updated = particular + null @ solution
        step = float(np.max(np.abs(updated - theta)))
        theta = updated
        model = model.with_vector(theta)
        if step < config.tol:
            converged = True
            break
    if not converged:
        logger.warning("Share-system iterations stopped after %d steps without convergence", iteration)

    def residuals(phi: np.ndarray) -> np.ndarray:
        candidate = model.with_vector(particular + null @ phi)
        fitted = predicted_shares(candidate, panel.ln_prices, ln_y, panel.demographics)
        return ((panel.shares - fitted) * root_weight[:, None]).T.ravel()

    phi = null.T @ (theta - particular)
    jacobian = None
    if config.polish:
        polish = optimize.least_squares(residuals, phi, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                        max_nfev=50 * (len(phi) + 1))
        if 2.0 * polish.cost <= np.sum(residuals(phi) ** 2):
            phi = polish.x
        jacobian = polish.jac
    final = residuals(phi)
    theta = particular + null @ phi
    model = model.with_vector(theta)
    if not np.all(np.isfinite(theta)):
        raise NumericError("Share-system estimation produced non-finite parameters")

    dof = max(final.size - null.shape[1], 1)
    variance = float(final @ final) / dof
    if jacobian is None:
        jacobian = -np.kron(np.eye(n_cat), regressors) @ null
    reduced_covariance = variance * np.linalg.pinv(jacobian.T @ jacobian)
    model.covariance = null @ reduced_covariance @ null.T
    model.diagnostics = {
        "iterations": iteration,
        "converged": converged,
        "ssr": float(final @ final),
        "ridge": ridge_used,
        "n_obs": panel.size,
        "constraint_violation": model.check_constraints(),
    }
    logger.info("Share system: %d iterations, SSR %.4g, max constraint violation %.2e",
                iteration, model.diagnostics["ssr"], model.diagnostics["constraint_violation"])
    return model


def draw_parameters(model: QuaidsModel, rng: np.random.Generator) -> QuaidsModel:
    """Parameters drawn from the estimated covariance; restrictions hold for every draw."""
    if model.covariance is None:
        return model
    drawn = rng.multivariate_normal(model.to_vector(), np.nan_to_num(model.covariance), method="eigh")
    replica = model.with_vector(drawn)
    replica.covariance = model.covariance
    return replica
