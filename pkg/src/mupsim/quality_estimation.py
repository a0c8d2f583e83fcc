"""
Estimation of the category choice models.

This module handles:
- Purchase panels (counts of purchase acts per household, period and product)
- The first-stage price regression producing the control-function residual
- Maximum simulated likelihood with an analytic score and OPG covariance
- Household quality indices from posterior draw weights
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import statsmodels.api as sm
from scipy import optimize
from scipy.special import logsumexp

from .draws import DrawRule, degenerate_rule
from .errors import DomainError, NumericError
from .market import DEMOGRAPHIC_COLUMNS, demographic_dummies
from .numerics import independent_columns, logsumexp_with_outside, softmax
from .quality import (
    MixedLogitModel,
    ProductDesign,
    Population,
    reference_price,
    surplus_from_utilities,
)

logger = logging.getLogger(__name__)

INSTRUMENT_COLUMNS: Tuple[str, ...] = (
    "tax",
    "n_competing",
    "n_competing_other",
    "mean_price_retailer_other",
    "mean_price_brand_other",
)
DEFAULT_INSTRUMENTS: Tuple[str, ...] = ("mean_price_retailer_other", "mean_price_brand_other")
WEAK_INSTRUMENT_F = 10.0
CHUNK_SIZE = 128


@dataclass
class FirstStageResult:
    """Price regression on fixed effects and excluded instruments."""
    coefficients: Dict[str, float]
    residuals: np.ndarray
    f_statistic: float
    f_pvalue: float
    instruments: List[str]
    dropped: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    n_obs: int = 0


def first_stage_price_regression(panel: pd.DataFrame, design: ProductDesign,
                                 instruments: Sequence[str] = DEFAULT_INSTRUMENTS) -> FirstStageResult:
    """
    Regress product prices on the model's fixed effects and excluded instruments.

    Args:
        panel: Price panel (product, period, price and instrument columns).
        design: Fixed-effect design of the category; panel products must be in it.
        instruments: Excluded instrument columns.

    Returns:
        FirstStageResult whose residuals are aligned with `panel` rows.
    """
    unknown = [name for name in instruments if name not in panel.columns]
    if unknown:
        raise DomainError(f"Unknown instrument columns: {unknown}")
    position = {product_id: k for k, product_id in enumerate(design.ids)}
    try:
        rows = panel["product"].astype(str).map(position).to_numpy(int)
    except (ValueError, TypeError):
        raise DomainError("Price panel references products outside the category design")
    fixed = design.main[rows]
    names = list(design.main_names)
    extra = panel[list(instruments)].to_numpy(float)
    matrix, kept, dropped = independent_columns(np.column_stack([fixed, extra]), names + list(instruments))
    warnings = []
    if dropped:
        message = f"Dropped collinear first-stage columns: {', '.join(dropped)}"
        logger.warning(message)
        warnings.append(message)
    price = panel["price"].to_numpy(float)
    full = sm.OLS(price, matrix).fit()
    kept_instruments = [name for name in kept if name in instruments]
    n_fixed = len(kept) - len(kept_instruments)
    if kept_instruments:
        restricted = sm.OLS(price, matrix[:, :n_fixed]).fit()
        with np.errstate(divide="ignore", invalid="ignore"):
            f_statistic, f_pvalue, _ = full.compare_f_test(restricted)
    else:
        f_statistic, f_pvalue = float("nan"), float("nan")
    if not np.isfinite(f_statistic) or f_statistic < WEAK_INSTRUMENT_F:
        message = f"Weak instruments: first-stage F = {f_statistic:.3g} < {WEAK_INSTRUMENT_F:g}"
        logger.warning(message)
        warnings.append(message)
    return FirstStageResult(
        coefficients=dict(zip(kept, map(float, full.params))),
        residuals=np.asarray(full.resid, dtype=float),
        f_statistic=float(f_statistic),
        f_pvalue=float(f_pvalue),
        instruments=kept_instruments,
        dropped=dropped,
        warnings=warnings,
        n_obs=int(full.nobs),
    )


@dataclass
class PurchaseData:
    """
    Purchase acts of a household panel in one category.

    Arrays are indexed by household (H), period (T) and product (J); `occasions`
    holds the number of choice occasions, so that occasions minus purchases are
    the outside-option choices.
    """
    category: str
    design: ProductDesign
    prices: np.ndarray
    eta: np.ndarray
    demographics: np.ndarray
    counts: np.ndarray
    occasions: np.ndarray
    household_ids: np.ndarray
    periods: np.ndarray

    def __post_init__(self):
        self.prices = np.atleast_2d(np.asarray(self.prices, dtype=float))
        self.eta = np.atleast_2d(np.asarray(self.eta, dtype=float))
        self.counts = np.asarray(self.counts, dtype=float)
        self.occasions = np.maximum(np.asarray(self.occasions, dtype=float), self.counts.sum(axis=2))
        if np.any(self.prices <= 0):
            raise DomainError(f"Non-positive price in the {self.category} panel")

    @property
    def n_households(self) -> int:
        return self.counts.shape[0]

    @property
    def outside_counts(self) -> np.ndarray:
        return self.occasions - self.counts.sum(axis=2)

    def subset(self, index: np.ndarray) -> "PurchaseData":
        return PurchaseData(self.category, self.design, self.prices, self.eta,
                            self.demographics[index], self.counts[index], self.occasions[index],
                            self.household_ids[index], self.periods)

    @classmethod
    def from_tables(cls, category: str, products: pd.DataFrame, households: pd.DataFrame,
                    purchases: pd.DataFrame, prices: pd.DataFrame, design: ProductDesign,
                    eta: Optional[np.ndarray] = None) -> "PurchaseData":
        """
        Assemble the panel of one category from the CSV tables.

        Args:
            products: Products of the category.
            households: All panel households (every household is at risk in every period).
            purchases: Purchase acts, one row per act.
            prices: Product x period price panel.
            design: Category design aligned with `products`.
            eta: Control-function residual aligned with `prices` rows.
        """
        ids = list(design.ids)
        periods = np.sort(prices["period"].unique())
        panel = prices.assign(eta=0.0 if eta is None else eta)
        wide_price = panel.pivot(index="period", columns="product", values="price").reindex(index=periods, columns=ids)
        wide_eta = panel.pivot(index="period", columns="product", values="eta").reindex(index=periods, columns=ids)
        if wide_price.isna().to_numpy().any():
            raise DomainError(f"Incomplete price panel for {category}")
        household_ids = households["id"].astype(str).to_numpy()
        h_index = {h: k for k, h in enumerate(household_ids)}
        t_index = {t: k for k, t in enumerate(periods)}
        j_index = {j: k for k, j in enumerate(ids)}
        acts = purchases[purchases["product"].astype(str).isin(j_index)]
        counts = np.zeros((len(household_ids), len(periods), len(ids)))
        np.add.at(
            counts,
            (acts["household"].astype(str).map(h_index).to_numpy(int),
             acts["period"].map(t_index).to_numpy(int),
             acts["product"].astype(str).map(j_index).to_numpy(int)),
            1.0,
        )
        occasions = np.repeat(households["occasions"].to_numpy(float)[:, None], len(periods), axis=1)
        return cls(category, design, wide_price.to_numpy(float), wide_eta.to_numpy(float),
                   demographic_dummies(households).to_numpy(float), counts, occasions,
                   household_ids, periods)


def _panel_utilities(model: MixedLogitModel, data: PurchaseData, block: slice,
                     zeta: np.ndarray):
    """Utilities (H, R, T, J), raw alpha (H, R) for a block of households."""
    design = data.design
    demographics = data.demographics[block]
    base = model.base_utility(design, demographics, np.zeros(design.size))
    alpha, _ = model.alpha_draws(demographics, zeta)
    raw = (model.alpha + demographics @ model.delta)[:, None] + model.sigma * zeta[None, :]
    slopes = alpha[:, :, None] + model.price_shift(design)[None, None, :]
    utility = (base[:, None, None, :] + model.rho * data.eta[None, None, :, :]
               - slopes[:, :, None, :] * data.prices[None, None, :, :])
    if not np.all(np.isfinite(utility)):
        raise NumericError(f"Non-finite utility in category {model.category}")
    return utility, raw


def _draw_loglik(utility: np.ndarray, counts: np.ndarray, occasions: np.ndarray):
    """Per-draw log-likelihood (H, R) and inside probabilities (H, R, T, J)."""
    log_denominator = logsumexp_with_outside(utility)
    loglik = (np.einsum("htj,hrtj->hr", counts, utility)
              - np.einsum("ht,hrt->hr", occasions, log_denominator))
    probabilities = np.exp(utility - log_denominator[..., None])
    return loglik, probabilities


def _draw_scores(model: MixedLogitModel, data: PurchaseData, block: slice, zeta: np.ndarray,
                 probabilities: np.ndarray, raw_alpha: np.ndarray) -> np.ndarray:
    """Derivative of the per-draw log-likelihood, (H, R, K) in `to_vector` order."""
    design = data.design
    demographics = data.demographics[block]
    residual = data.counts[block][:, None] - data.occasions[block][:, None, :, None] * probabilities
    by_product = residual.sum(axis=2)
    price_weighted = np.einsum("hrtj,tj->hrj", residual, data.prices)
    active = (raw_alpha > model.alpha_floor).astype(float)
    price_score = -price_weighted.sum(axis=2) * active
    blocks = [
        price_score[:, :, None],
        price_score[:, :, None] * demographics[:, None, :],
        (price_score * zeta[None, :])[:, :, None],
    ]
    for subcategory in sorted(model.price_shifts):
        indicator = (design.subcategories == subcategory).astype(float)
        blocks.append(-(price_weighted @ indicator)[:, :, None])
    blocks.append(by_product @ design.main)
    for demographic, columns, _ in design.interactions:
        k = DEMOGRAPHIC_COLUMNS.index(demographic)
        blocks.append((by_product @ columns) * demographics[:, None, k, None])
    blocks.append(np.einsum("hrtj,tj->hr", residual, data.eta)[:, :, None])
    return np.concatenate(blocks, axis=2)


def simulated_loglik(model: MixedLogitModel, data: PurchaseData,
                     draw_rule: Optional[DrawRule] = None,
                     with_scores: bool = True) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Simulated log-likelihood of the panel, its gradient and the household scores.

    The same draw applies to every purchase act of a household.

    Returns:
        (log-likelihood, gradient in `to_vector` order, household scores (H, K))
    """
    rule = draw_rule or model.draw_rule or degenerate_rule()
    zeta = rule.zeta
    log_prior = np.log(np.clip(rule.weights, 1e-300, None))
    total = 0.0
    scores = []
    for start in range(0, data.n_households, CHUNK_SIZE):
        block = slice(start, start + CHUNK_SIZE)
        utility, raw_alpha = _panel_utilities(model, data, block, zeta)
        loglik, probabilities = _draw_loglik(utility, data.counts[block], data.occasions[block])
        joint = loglik + log_prior[None, :]
        household = logsumexp(joint, axis=1)
        total += float(household.sum())
        if with_scores:
            posterior = np.exp(joint - household[:, None])
            draw_scores = _draw_scores(model, data, block, zeta, probabilities, raw_alpha)
            scores.append(np.einsum("hr,hrk->hk", posterior, draw_scores))
    if not with_scores:
        return total, np.empty(0), np.empty((0, 0))
    scores = np.concatenate(scores, axis=0)
    return total, scores.sum(axis=0), scores


def panel_posterior_weights(model: MixedLogitModel, data: PurchaseData,
                            draw_rule: Optional[DrawRule] = None) -> np.ndarray:
    """Posterior draw weights (H, R) given each household's purchases over all periods."""
    rule = draw_rule or model.draw_rule or degenerate_rule()
    log_prior = np.log(np.clip(rule.weights, 1e-300, None))
    weights = []
    for start in range(0, data.n_households, CHUNK_SIZE):
        block = slice(start, start + CHUNK_SIZE)
        utility, _ = _panel_utilities(model, data, block, rule.zeta)
        loglik, _ = _draw_loglik(utility, data.counts[block], data.occasions[block])
        joint = loglik + log_prior[None, :]
        normalizer = logsumexp(joint, axis=1, keepdims=True)
        block_weights = np.exp(joint - normalizer)
        failed = ~np.isfinite(normalizer[:, 0])
        if np.any(failed):
            logger.warning("Zero likelihood for %d household(s); using prior weights", int(failed.sum()))
            block_weights[failed] = rule.weights
        weights.append(block_weights)
    return np.concatenate(weights, axis=0)


def _initial_model(data: PurchaseData, init: Optional[MixedLogitModel],
                   price_shifts: Sequence[str], terms: Sequence[str]) -> MixedLogitModel:
    if init is not None:
        return init
    return MixedLogitModel(
        category=data.category,
        alpha=1.0 / float(np.median(data.prices)),
        sigma=0.1 / float(np.median(data.prices)),
        price_shifts={name: 0.0 for name in price_shifts},
        terms=tuple(terms),
    )


def estimate_msl(data: PurchaseData, draw_rule: DrawRule, init: Optional[MixedLogitModel] = None,
                 max_iter: int = 500, gtol: float = 1e-6,
                 price_shifts: Sequence[str] = (), terms: Sequence[str] = ("brand", "retailer")) -> MixedLogitModel:
    """
    Maximum simulated likelihood estimation of one category.

    Args:
        data: Purchase panel with the control-function residual.
        draw_rule: Integration rule over the price-coefficient shock.
        init: Starting values (defaults to a unit-elastic guess).
        max_iter: Quasi-Newton iteration limit.
        gtol: Tolerance on the projected gradient max-norm of the mean log-likelihood.
        price_shifts: Subcategories with an extra price disutility (only used without `init`).
        terms: Fixed-effect terms recorded on the model (only used without `init`).

    Returns:
        The fitted model; `diagnostics` holds the log-likelihood, gradient norm,
        iteration count and a `converged` flag.
    """
    design = data.design
    start = _initial_model(data, init, price_shifts, terms)
    start = MixedLogitModel(**{**start.__dict__, "draw_rule": draw_rule, "diagnostics": {}})
    names = start.parameter_names(design)
    x0 = start.to_vector(design)
    bounds = [(0.0, None) if name == "sigma" else (None, None) for name in names]
    n = max(data.n_households, 1)

    def objective(vector: np.ndarray):
        model = start.with_vector(vector, design)
        loglik, gradient, _ = simulated_loglik(model, data, draw_rule)
        return -loglik / n, -gradient / n

    def value_only(vector: np.ndarray) -> float:
        return -simulated_loglik(start.with_vector(vector, design), data, draw_rule, with_scores=False)[0] / n

    result = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                               options={"maxiter": max_iter, "gtol": gtol})
    if not result.success:
        logger.warning("Analytic-gradient search stopped (%s); retrying with numerical gradient", result.message)
        fallback = optimize.minimize(value_only, result.x, method="L-BFGS-B", bounds=bounds,
                                     options={"maxiter": max_iter, "gtol": gtol})
        if fallback.fun < result.fun:
            result = fallback
    fitted = start.with_vector(result.x, design)
    fitted.draw_rule = draw_rule
    loglik, gradient, scores = simulated_loglik(fitted, data, draw_rule)
    projected = -gradient / n
    at_bound = (np.array([name == "sigma" for name in names]) & (result.x <= 0) & (projected > 0))
    gradient_norm = float(np.max(np.abs(np.where(at_bound, 0.0, projected)))) if projected.size else 0.0
    converged = bool(result.success or gradient_norm <= gtol)
    if not converged:
        logger.warning("MSL for %s did not converge (gradient max-norm %.3g)", data.category, gradient_norm)
    opg = scores.T @ scores
    try:
        covariance = np.linalg.pinv(opg, hermitian=True)
    except np.linalg.LinAlgError:
        covariance = np.full_like(opg, np.nan)
    _, truncated = fitted.alpha_draws(data.demographics, draw_rule.zeta)
    if truncated:
        logger.warning("%d household draws of the %s price disutility truncated at %.0e",
                       truncated, data.category, fitted.alpha_floor)
    fitted.covariance = covariance
    fitted.diagnostics = {
        "loglik": loglik,
        "gradient_max_norm": gradient_norm,
        "iterations": int(result.nit),
        "converged": converged,
        "n_households": data.n_households,
        "truncated_alpha_draws": int(truncated),
        "parameter_names": names,
        "standard_errors": np.sqrt(np.clip(np.diag(covariance), 0, None)).tolist(),
    }
    logger.info("Estimated %s: alpha=%.4f sigma=%.4f loglik=%.2f (%d iterations)",
                data.category, fitted.alpha, fitted.sigma, loglik, result.nit)
    return fitted


def draw_parameters(model: MixedLogitModel, design: ProductDesign,
                    rng: np.random.Generator) -> MixedLogitModel:
    """A model with parameters drawn from the estimated sampling distribution."""
    if model.covariance is None:
        return model
    vector = model.to_vector(design)
    covariance = np.nan_to_num(model.covariance)
    drawn = rng.multivariate_normal(vector, covariance, method="eigh")
    replica = model.with_vector(drawn, design)
    replica.covariance = model.covariance
    return replica


def quality_indices(model: MixedLogitModel, data: PurchaseData, weights: np.ndarray,
                    draw_rule: DrawRule, population: Population) -> Tuple[np.ndarray, np.ndarray]:
    """
    Posterior quality surplus and conditional probabilities per household and period.

    The reference price is recomputed at each period's prices over `population`.

    Returns:
        (B of shape (H, T), pi of shape (H, T, J))
    """
    design = data.design
    n_periods = data.prices.shape[0]
    quality = np.zeros((data.n_households, n_periods))
    probabilities = np.zeros((data.n_households, n_periods, design.size))
    for t in range(n_periods):
        prices = data.prices[t]
        reference = reference_price(model, design, prices, population, draw_rule, data.eta[t])
        for start in range(0, data.n_households, CHUNK_SIZE):
            block = slice(start, start + CHUNK_SIZE)
            utility, _, alpha = model.utilities(design, prices, data.demographics[block], draw_rule.zeta, data.eta[t])
            surplus = surplus_from_utilities(utility, alpha, prices, reference)
            quality[block, t] = np.sum(weights[block] * surplus, axis=1)
            probabilities[block, t] = np.einsum("hr,hrj->hj", weights[block], softmax(utility))
    return quality, probabilities
