"""
Stage orchestration for the command-line pipeline.

This module handles:
- Reading and writing the artifacts of each stage (CSV tables, JSON models)
- Estimation of the choice models and of the share system
- Cost calibration and tax-rate calibration
- Scenario simulation with Monte Carlo intervals and the report tables
- The invariant checks run by `mupsim validate`
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from . import quality_estimation, quantity_estimation
from .config import PipelineConfig
from .draws import DrawRule, make_draw_rule
from .equilibrium import SolverResult, pass_through, solve_mup_counterfactual, solve_tax_counterfactual
from .errors import DomainError, MissingArtifactError, NumericError
from .individual import IndividualizationModel, individual_changes, individualize, moderator_matrix
from .market import (
    CATEGORIES,
    HOUSEHOLD_COLUMNS,
    PERIODS_PER_YEAR,
    PRICE_COLUMNS,
    PRODUCT_COLUMNS,
    PURCHASE_COLUMNS,
    cluster_ids,
    excise_vector,
    mup_floor_price,
    read_table,
    write_table,
)
from .montecarlo import monte_carlo_ci
from .policy import (
    GROUPINGS,
    SCENARIO_NAMES,
    ChoiceState,
    HouseholdBaseline,
    ImpactTable,
    Scenario,
    TaxBase,
    aggregate_outcomes,
    average_unit_price,
    calibrate_tax_rate,
    choice_state,
    heterogeneity_tables,
    market_quantities,
    simulate_household_impacts,
    standard_scenarios,
    tax_revenue_report,
)
from .quality import MixedLogitMarket, MixedLogitModel, Population, ProductDesign
from .quality_estimation import (
    PurchaseData,
    estimate_msl,
    first_stage_price_regression,
    panel_posterior_weights,
    quality_indices,
)
from .quantity import ClusterState, QuaidsModel, elasticities
from .quantity_estimation import (
    PSEUDO_PANEL_COLUMNS,
    PseudoPanel,
    build_pseudo_panel,
    estimate_expenditure_equation,
    estimate_irls,
    laspeyres_indices,
)
from .report import write_summary
from .supply import (
    MarketEquilibrium,
    OwnershipStructure,
    calibrate_marginal_costs,
    channel_profit,
    foc_system_residual,
    profit_decomposition,
)
from .synthetic import generate

logger = logging.getLogger(__name__)

STAGES = (
    "generate", "estimate-quality", "estimate-quantity", "calibrate-supply",
    "calibrate-tax", "simulate", "report", "validate",
)
REPORT_TABLES = (
    "impacts_pure_alcohol", "quantity_effects", "quality_effects",
    "heterogeneity", "profits", "tax_revenue",
)
REPORT_COLUMNS = ("scenario", "statistic", "point", "lo95", "hi95")
VALIDATION_TOLERANCE = 1e-8


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(data: Mapping[str, Any], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    logger.debug("Wrote %s", path)
    return path


def read_json(path: Path, stage: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path), stage)
    return json.loads(path.read_text(encoding="utf-8"))


def package_versions() -> Dict[str, str]:
    """Versions of the numerical stack, recorded in run manifests."""
    import lxml.etree
    import scipy
    import statsmodels

    return {
        "mupsim": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "statsmodels": statsmodels.__version__,
        "lxml": ".".join(map(str, lxml.etree.LXML_VERSION)),
    }


def cluster_states(panel: PseudoPanel) -> Tuple[Dict[str, ClusterState], ClusterState]:
    """Average log prices, log budget and characteristics of each cluster over its periods."""
    states = {}
    for cluster in np.unique(panel.clusters):
        rows = panel.clusters == cluster
        states[str(cluster)] = ClusterState(
            panel.ln_prices[rows].mean(axis=0), float(panel.ln_expenditure[rows].mean()),
            panel.demographics[rows].mean(axis=0), panel.shares[rows].mean(axis=0),
        )
    weights = panel.weights
    default = ClusterState(
        np.average(panel.ln_prices, axis=0, weights=weights),
        float(np.average(panel.ln_expenditure, weights=weights)),
        np.average(panel.demographics, axis=0, weights=weights),
        np.average(panel.shares, axis=0, weights=weights),
    )
    return states, default


@dataclass
class CategoryInputs:
    """Products, design and purchase panel of one category; fixed across scenarios and replications."""
    category: str
    products: pd.DataFrame
    design: ProductDesign
    eta: np.ndarray
    data: PurchaseData
    ownership: OwnershipStructure

    @property
    def prices0(self) -> np.ndarray:
        return self.design.prices

    @property
    def taxes0(self) -> np.ndarray:
        return self.products["excise"].to_numpy(float)


@dataclass
class CategoryMarket:
    """A category's demand, costs and baseline choice state under one set of parameters."""
    inputs: CategoryInputs
    model: MixedLogitModel
    market: MixedLogitMarket
    costs: np.ndarray
    market_size: float
    weights: np.ndarray
    state0: ChoiceState


@dataclass
class SimulationInputs:
    """Everything scenario runs share, built once from the artifacts."""
    households: pd.DataFrame
    baseline: HouseholdBaseline
    categories: Dict[str, CategoryInputs]
    cluster_states: Dict[str, ClusterState]
    default_state: ClusterState
    posterior_rule: DrawRule


@dataclass
class SimulationContext:
    """Inputs plus one parameter set (the estimates or a Monte Carlo replica)."""
    population: Population
    baseline: HouseholdBaseline
    households: pd.DataFrame
    markets: Dict[str, CategoryMarket]
    quaids: QuaidsModel
    inputs: SimulationInputs

    @property
    def states0(self) -> Dict[str, ChoiceState]:
        return {category: market.state0 for category, market in self.markets.items()}

    @property
    def psi(self) -> Dict[str, np.ndarray]:
        return {category: market.inputs.design.psi for category, market in self.markets.items()}


@dataclass
class ScenarioRun:
    """Outcome of one scenario at one parameter set."""
    scenario: Scenario
    statistics: Dict[str, float]
    impacts: ImpactTable
    results: Dict[str, SolverResult]
    revenue: pd.DataFrame
    equilibria0: List[MarketEquilibrium] = field(default_factory=list)
    equilibria1: List[MarketEquilibrium] = field(default_factory=list)


class Pipeline:
    """
    Runs the stages of the simulation and persists their artifacts.

    Raw tables live in `config.data_dir`; models, calibrations, scenario runs
    and reports in `config.out_dir`.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.out_dir = Path(config.out_dir)
        self._tables: Optional[Dict[str, pd.DataFrame]] = None

    # -- artifacts -----------------------------------------------------------------

    def tables(self) -> Dict[str, pd.DataFrame]:
        """The generated tables, read once."""
        if self._tables is None:
            self._tables = {
                "products": read_table(self.data_dir / "products.csv", PRODUCT_COLUMNS),
                "households": read_table(self.data_dir / "households.csv", HOUSEHOLD_COLUMNS),
                "purchases": read_table(self.data_dir / "purchases.csv", PURCHASE_COLUMNS),
                "prices": read_table(self.data_dir / "prices.csv", PRICE_COLUMNS),
            }
            if "private_label" not in self._tables["products"].columns:
                self._tables["products"]["private_label"] = False
        return self._tables

    def scenario_dir(self, name: str) -> Path:
        return self.out_dir / "scenarios" / name

    @property
    def report_dir(self) -> Path:
        return self.out_dir / "reports"

    def write_manifest(self, directory: Path, stage: str, extra: Optional[Mapping[str, Any]] = None) -> Path:
        """Record the stage in the directory's manifest: config digest, seeds and versions, no timestamps."""
        path = Path(directory) / "manifest.json"
        manifest = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {"stages": {}}
        manifest["config_digest"] = self.config.digest()
        manifest["seeds"] = {"seed": self.config.seed, "quality": self.config.quality.seed}
        manifest["versions"] = package_versions()
        manifest["stages"][stage] = {"config_digest": self.config.digest(), **dict(extra or {})}
        return write_json(manifest, path)

    # -- generate --------------------------------------------------------------------

    def generate(self) -> List[Path]:
        """Write the synthetic panel to the data directory."""
        market = generate(self.config.synthetic_config())
        paths = market.write(self.data_dir)
        self._tables = None
        self.write_manifest(self.data_dir, "generate", {
            "households": len(market.households), "products": len(market.products),
            "purchases": len(market.purchases),
        })
        logger.info("Synthetic panel written to %s", self.data_dir)
        return paths

    # -- estimate-quality ------------------------------------------------------------

    def category_inputs(self, category: str, terms: Sequence[str]) -> Tuple[CategoryInputs, Any]:
        """Design, control-function residuals and purchase panel of a category."""
        tables = self.tables()
        products = tables["products"]
        products = products[products["category"] == category].reset_index(drop=True)
        if products.empty:
            raise DomainError(f"No product of category {category} in the products table")
        design = ProductDesign.from_products(products, terms)
        panel = (tables["prices"][tables["prices"]["product"].isin(design.ids)]
                 .sort_values(["product", "period"], ignore_index=True))
        first = first_stage_price_regression(panel, design, self.config.quality.instruments)
        data = PurchaseData.from_tables(category, products, tables["households"], tables["purchases"],
                                        panel, design, first.residuals)
        eta = (pd.Series(first.residuals).groupby(panel["product"].to_numpy()).mean()
               .reindex(design.ids).fillna(0.0).to_numpy(float))
        ownership = OwnershipStructure.from_products(products, self.config.policy.vat_rate)
        return CategoryInputs(category, products, design, eta, data, ownership), first

    def posterior_rule(self) -> DrawRule:
        settings = self.config.quality
        return make_draw_rule("halton", n_draws=settings.posterior_draws, seed=settings.seed)

    def estimate_quality(self) -> Dict[str, MixedLogitModel]:
        """
        Estimate the choice model of each configured category, then build the pseudo-panel.

        Writes model_quality_<category>.json, elasticities.csv,
        household_quality.csv and pseudo_panel.csv.
        """
        settings = self.config.quality
        tables = self.tables()
        households = tables["households"]
        population = Population.from_households(households)
        rule = make_draw_rule(settings.draw_method, level=settings.draw_level,
                              n_draws=settings.n_draws, seed=settings.seed)
        posterior = self.posterior_rule()
        flows = self._household_flows()
        flows["quality"] = 0.0
        models = {}
        elasticity_rows = []
        for category in settings.categories:
            inputs, first = self.category_inputs(category, settings.terms)
            model = estimate_msl(inputs.data, rule, max_iter=settings.max_iter, gtol=settings.gtol,
                                 price_shifts=settings.price_shifts.get(category, ()), terms=settings.terms)
            model.diagnostics["first_stage"] = {
                "f_statistic": first.f_statistic, "f_pvalue": first.f_pvalue,
                "instruments": first.instruments, "warnings": first.warnings, "n_obs": first.n_obs,
            }
            weights = panel_posterior_weights(model, inputs.data, posterior)
            quality, _ = quality_indices(model, inputs.data, weights, posterior, population)
            h_index = {h: k for k, h in enumerate(inputs.data.household_ids)}
            t_index = {t: k for k, t in enumerate(inputs.data.periods)}
            rows = flows["category"] == category
            flows.loc[rows, "quality"] = quality[
                flows.loc[rows, "household"].map(h_index).to_numpy(int),
                flows.loc[rows, "period"].map(t_index).to_numpy(int),
            ]
            document = model.to_dict()
            document["eta"] = dict(zip(inputs.design.ids.tolist(), inputs.eta.tolist()))
            write_json(document, self.out_dir / f"model_quality_{category}.json")
            models[category] = model

            market = MixedLogitMarket(model, inputs.design, population, rule, inputs.eta)
            own = market.own_price_elasticities(inputs.prices0)
            shares = market.shares(inputs.prices0)
            for product, subcategory, value, share in zip(inputs.design.ids, inputs.design.subcategories, own, shares):
                elasticity_rows.append({"category": category, "subcategory": subcategory, "product": product,
                                        "share": share, "own_price_elasticity": value})

        elasticity_frame = pd.DataFrame(elasticity_rows)
        write_table(elasticity_frame, self.out_dir / "elasticities.csv")
        write_table(flows, self.out_dir / "household_quality.csv")
        self._write_pseudo_panel(flows)
        self.write_manifest(self.out_dir, "estimate-quality", {"categories": list(settings.categories)})
        return models

    def _household_flows(self) -> pd.DataFrame:
        """Household x period x category expenditure and volume, for periods with purchases."""
        tables = self.tables()
        products = tables["products"][["id", "category"]].rename(columns={"id": "product"})
        acts = tables["purchases"].merge(products, on="product")
        flows = (acts.groupby(["household", "period", "category"], sort=True)[["expenditure_eur", "quantity_L"]]
                 .sum().reset_index()
                 .rename(columns={"expenditure_eur": "expenditure", "quantity_L": "quantity"}))
        return flows

    def _write_pseudo_panel(self, flows: pd.DataFrame) -> pd.DataFrame:
        tables = self.tables()
        periods = np.sort(tables["prices"]["period"].unique())
        laspeyres = laspeyres_indices(tables["purchases"], tables["products"], tables["prices"], tables["households"])
        panel = build_pseudo_panel(flows, tables["households"], periods, CATEGORIES, laspeyres)
        write_table(panel, self.out_dir / "pseudo_panel.csv")
        return panel

    # -- estimate-quantity -------------------------------------------------------------

    def pseudo_panel(self) -> PseudoPanel:
        frame = read_table(self.out_dir / "pseudo_panel.csv", PSEUDO_PANEL_COLUMNS, "estimate-quality")
        settings = self.config.irls_config()
        return PseudoPanel.from_frame(frame, CATEGORIES, settings.price_index,
                                      settings.period_effects, settings.region_controls)

    def estimate_quantity(self) -> QuaidsModel:
        """
        Expenditure first stage, then the constrained share system.

        Writes model_quantity.json and quantity_elasticities.csv.
        """
        settings = self.config.irls_config()
        panel = self.pseudo_panel()
        expenditure = estimate_expenditure_equation(panel, settings.period_effects)
        model = estimate_irls(panel, settings, expenditure.fitted)
        model.budget_price_elasticity = expenditure.budget_price_elasticity
        model.income_elasticity = expenditure.income_elasticity
        model.diagnostics["expenditure_rsquared"] = expenditure.rsquared
        write_json(model.to_dict(), self.out_dir / "model_quantity.json")
        write_table(self._average_elasticities(model, panel), self.out_dir / "quantity_elasticities.csv")
        self.write_manifest(self.out_dir, "estimate-quantity", {"price_index": settings.price_index})
        return model

    @staticmethod
    def _average_elasticities(model: QuaidsModel, panel: PseudoPanel) -> pd.DataFrame:
        """Weighted means over cluster-periods of budget, uncompensated and compensated elasticities."""
        n = model.size
        budget = np.zeros(n)
        uncompensated = np.zeros((n, n))
        compensated = np.zeros((n, n))
        total = 0.0
        for row in range(panel.size):
            state = ClusterState(panel.ln_prices[row], float(panel.ln_expenditure[row]), panel.demographics[row])
            values = elasticities(model, state)
            if not np.all(np.isfinite(values.budget)):
                continue
            weight = panel.weights[row]
            budget += weight * values.budget
            uncompensated += weight * values.uncompensated
            compensated += weight * values.compensated
            total += weight
        if total <= 0:
            raise NumericError("No cluster-period with defined elasticities")
        records = []
        for a, category in enumerate(model.categories):
            records.append({"kind": "budget", "category": category, "with_respect_to": "budget",
                            "value": budget[a] / total})
            records.append({"kind": "budget-price", "category": category, "with_respect_to": "price",
                            "value": float(model.budget_price_elasticity[a])})
            for k, other in enumerate(model.categories):
                records.append({"kind": "uncompensated", "category": category, "with_respect_to": other,
                                "value": uncompensated[a, k] / total})
                records.append({"kind": "compensated", "category": category, "with_respect_to": other,
                                "value": compensated[a, k] / total})
        records.append({"kind": "income", "category": "all", "with_respect_to": "income",
                        "value": float(model.income_elasticity)})
        return pd.DataFrame(records)

    # -- calibrate-supply ----------------------------------------------------------------

    def load_quality_model(self, category: str) -> Tuple[MixedLogitModel, Dict[str, float]]:
        document = read_json(self.out_dir / f"model_quality_{category}.json", "estimate-quality")
        return MixedLogitModel.from_dict(document), document.get("eta") or {}

    def load_quantity_model(self) -> QuaidsModel:
        return QuaidsModel.from_dict(read_json(self.out_dir / "model_quantity.json", "estimate-quantity"))

    def simulation_inputs(self) -> SimulationInputs:
        """Category panels, household baseline and cluster states shared by every scenario run."""
        tables = self.tables()
        households = tables["households"]
        settings = self.config.quality
        categories = {}
        for category in CATEGORIES:
            model, eta = self.load_quality_model(category)
            inputs, _ = self.category_inputs(category, model.terms)
            inputs.eta = np.array([float(eta.get(pid, 0.0)) for pid in inputs.design.ids]) if eta else inputs.eta
            categories[category] = inputs
        n_periods = int(tables["prices"]["period"].nunique())
        baseline = HouseholdBaseline.from_tables(households, tables["purchases"], tables["products"],
                                                 cluster_ids(households), CATEGORIES, n_periods)
        states, default = cluster_states(self.pseudo_panel())
        logger.debug("Simulation inputs ready: %d households, %d clusters (%s posterior draws)",
                     len(households), len(states), settings.posterior_draws)
        return SimulationInputs(households, baseline, categories, states, default, self.posterior_rule())

    def build_context(self, inputs: SimulationInputs, models: Mapping[str, MixedLogitModel],
                      quaids: QuaidsModel, index: Optional[np.ndarray] = None,
                      weights: Optional[Mapping[str, np.ndarray]] = None,
                      costs: Optional[Mapping[str, np.ndarray]] = None) -> SimulationContext:
        """
        Demand, costs and baseline states for one parameter set.

        Args:
            inputs: Shared inputs.
            models: Choice model per category.
            quaids: Share system.
            index: Resampled household rows (bootstrap); None keeps the sample.
            weights: Posterior draw weights per category on the full sample; recomputed when None.
            costs: Marginal costs per category; recalibrated at baseline prices when None.
        """
        households = inputs.households
        baseline = inputs.baseline
        if index is not None:
            households = households.iloc[index].reset_index(drop=True)
            baseline = baseline.subset(index)
            baseline.ids = np.array([f"{h}#{k}" for k, h in enumerate(baseline.ids)])
        population = Population.from_households(households)
        markets = {}
        for a, category in enumerate(CATEGORIES):
            category_inputs = inputs.categories[category]
            model = models[category]
            market = MixedLogitMarket(model, category_inputs.design, population, model.draw_rule, category_inputs.eta)
            prices0 = category_inputs.prices0
            if costs is not None and category in costs:
                category_costs = np.asarray(costs[category], dtype=float)
            else:
                category_costs = calibrate_marginal_costs(prices0, category_inputs.taxes0, category_inputs.ownership,
                                                          market, category).costs
            shares = market.shares(prices0)
            if shares.sum() <= 0:
                raise NumericError(f"Zero inside share in {category}")
            volume = PERIODS_PER_YEAR * float(baseline.weights @ baseline.quantity[:, a])
            if weights is not None and category in weights:
                category_weights = np.asarray(weights[category])
            else:
                category_weights = panel_posterior_weights(model, category_inputs.data, inputs.posterior_rule)
            if index is not None:
                category_weights = category_weights[index]
            state0 = choice_state(model, category_inputs.design, prices0, population, category_weights,
                                  inputs.posterior_rule, category_inputs.eta)
            markets[category] = CategoryMarket(category_inputs, model, market, category_costs,
                                               volume / float(shares.sum()), category_weights, state0)
        return SimulationContext(population, baseline, households, markets, quaids, inputs)

    def calibrate_supply(self) -> Dict[str, Any]:
        """
        Marginal costs from observed prices and the estimated demand.

        Writes costs_<category>.csv and supply.json.
        """
        inputs = self.simulation_inputs()
        models = {category: self.load_quality_model(category)[0] for category in CATEGORIES}
        population = Population.from_households(inputs.households)
        summary = {}
        for a, category in enumerate(CATEGORIES):
            category_inputs = inputs.categories[category]
            model = models[category]
            market = MixedLogitMarket(model, category_inputs.design, population, model.draw_rule, category_inputs.eta)
            prices0 = category_inputs.prices0
            calibration = calibrate_marginal_costs(prices0, category_inputs.taxes0, category_inputs.ownership,
                                                   market, category)
            shares = market.shares(prices0)
            residual = foc_system_residual(category_inputs.ownership, calibration.margins, shares,
                                           market.jacobian(prices0))
            volume = PERIODS_PER_YEAR * float(inputs.baseline.weights @ inputs.baseline.quantity[:, a])
            frame = calibration.to_frame().assign(
                price=prices0, excise=category_inputs.taxes0, share=shares,
                own_price_elasticity=market.own_price_elasticities(prices0),
            )
            write_table(frame, self.out_dir / f"costs_{category}.csv")
            summary[category] = {
                "market_size": volume / float(shares.sum()),
                "annual_volume_L": volume,
                "foc_residual": residual,
                "negative_costs": calibration.negative,
                "mean_margin_pct": float(np.mean(calibration.margin_pct)),
            }
            logger.info("Calibrated %s: mean margin %.1f%% of price, FOC residual %.2e",
                        category, summary[category]["mean_margin_pct"], residual)
        write_json(summary, self.out_dir / "supply.json")
        self.write_manifest(self.out_dir, "calibrate-supply")
        return summary

    def load_costs(self, category: str) -> np.ndarray:
        frame = read_table(self.out_dir / f"costs_{category}.csv", ("product", "marginal_cost"), "calibrate-supply")
        return frame["marginal_cost"].to_numpy(float)

    # -- calibrate-tax -------------------------------------------------------------------

    def tax_base(self) -> TaxBase:
        """Baseline annual volumes of every product at observed prices, from the calibrated supply."""
        summary = read_json(self.out_dir / "supply.json", "calibrate-supply")
        frames = []
        for category in CATEGORIES:
            frame = read_table(self.out_dir / f"costs_{category}.csv",
                               ("product", "price", "excise", "share"), "calibrate-supply")
            frames.append(frame.assign(volume=frame["share"] * summary[category]["market_size"]))
        frame = pd.concat(frames, ignore_index=True)
        degrees = self.tables()["products"].set_index("id")["degree"].reindex(frame["product"]).to_numpy(float)
        return TaxBase(degrees, frame["volume"].to_numpy(float), frame["price"].to_numpy(float),
                       frame["excise"].to_numpy(float), self.config.policy.vat_rate)

    def scenarios(self, base: TaxBase) -> List[Scenario]:
        """The configured scenarios, external cost resolved against the baseline excise revenue."""
        policy = self.config.policy
        external = policy.external_cost
        if external is None:
            external = policy.external_cost_ratio * base.excise_revenue
        scenarios = standard_scenarios(policy.vat_rate, policy.mup_rate, external,
                                       policy.band_edges, policy.band_multipliers)
        return [scenario for scenario in scenarios if scenario.name in policy.scenarios]

    def calibrate_tax(self) -> Dict[str, Any]:
        """Base rates meeting each scenario's revenue target; writes tax_rates.json."""
        base = self.tax_base()
        rates = {
            "baseline": {"excise_revenue": base.excise_revenue, "vat_revenue": base.vat_revenue},
        }
        for scenario in self.scenarios(base):
            rate = calibrate_tax_rate(scenario, base)
            rates[scenario.name] = {
                "kind": scenario.schedule.kind,
                "base_rate": rate,
                "target": scenario.target,
                "target_revenue": scenario.target_revenue,
                "mup": scenario.mup,
            }
        write_json(rates, self.out_dir / "tax_rates.json")
        self.write_manifest(self.out_dir, "calibrate-tax")
        return rates

    def calibrated_scenarios(self, names: Optional[Sequence[str]] = None) -> List[Scenario]:
        rates = read_json(self.out_dir / "tax_rates.json", "calibrate-tax")
        selected = []
        for scenario in self.scenarios(self.tax_base()):
            if names and scenario.name not in names:
                continue
            if scenario.name not in rates:
                raise MissingArtifactError(str(self.out_dir / "tax_rates.json"), "calibrate-tax")
            selected.append(scenario.with_rate(float(rates[scenario.name]["base_rate"])))
        unknown = sorted(set(names or ()) - {scenario.name for scenario in selected})
        if unknown:
            raise DomainError(f"Scenario(s) not configured: {unknown}")
        return selected

    # -- simulate ------------------------------------------------------------------------

    def point_context(self, inputs: Optional[SimulationInputs] = None) -> SimulationContext:
        inputs = inputs or self.simulation_inputs()
        models = {category: self.load_quality_model(category)[0] for category in CATEGORIES}
        costs = {category: self.load_costs(category) for category in CATEGORIES}
        return self.build_context(inputs, models, self.load_quantity_model(), costs=costs)

    def run_scenario(self, context: SimulationContext, scenario: Scenario) -> ScenarioRun:
        """Equilibrium prices, household impacts and market outcomes of one scenario."""
        policy = self.config.policy
        vat = policy.vat_rate
        states1: Dict[str, ChoiceState] = {}
        results: Dict[str, SolverResult] = {}
        for category, cm in context.markets.items():
            inputs = cm.inputs
            taxes1 = excise_vector(inputs.design.degrees, scenario.schedule, inputs.taxes0)
            if scenario.mup:
                floors = mup_floor_price(inputs.design.degrees, scenario.mup)
                result = solve_mup_counterfactual(category, cm.market, inputs.ownership, floors, taxes1, cm.costs,
                                                  inputs.prices0, self.config.solver, cm.market_size)
            else:
                result = solve_tax_counterfactual(category, cm.market, inputs.ownership, taxes1, cm.costs,
                                                  inputs.prices0, self.config.solver, cm.market_size)
            results[category] = result
            states1[category] = choice_state(cm.model, inputs.design, result.prices, context.population,
                                             cm.weights, context.inputs.posterior_rule, inputs.eta)

        impacts = simulate_household_impacts(context.baseline, context.states0, states1, context.psi,
                                             context.quaids, context.inputs.cluster_states,
                                             context.inputs.default_state)
        stats: Dict[str, float] = {}
        before, after = [], []
        volumes0, volumes1, prices0, prices1, taxes0, taxes1 = [], [], [], [], [], []
        for category, cm in context.markets.items():
            inputs = cm.inputs
            result = results[category]
            change = impacts.categories.loc[impacts.categories["category"] == category, "dQ"].to_numpy(float)
            q0 = market_quantities(context.baseline, cm.state0, category)
            q1 = market_quantities(context.baseline, states1[category], category, change)
            ratio = q1.sum() / q0.sum() if q0.sum() > 0 else 1.0
            eq0 = MarketEquilibrium.at_prices(category, cm.market, inputs.ownership, inputs.prices0, cm.costs,
                                              inputs.taxes0, cm.market_size)
            shares1 = cm.market.shares(result.prices)
            size1 = cm.market_size * ratio * eq0.shares.sum() / shares1.sum() if shares1.sum() > 0 else 0.0
            eq1 = MarketEquilibrium.at_prices(category, cm.market, inputs.ownership, result.prices, cm.costs,
                                              result.equilibrium.taxes, size1)
            before.append(eq0)
            after.append(eq1)
            volumes0.append(eq0.volumes)
            volumes1.append(eq1.volumes)
            prices0.append(inputs.prices0)
            prices1.append(result.prices)
            taxes0.append(inputs.taxes0)
            taxes1.append(eq1.taxes)

            unit0 = average_unit_price(eq0.volumes, inputs.prices0)
            unit1 = average_unit_price(eq1.volumes, result.prices)
            mechanical = inputs.prices0 + (1.0 + vat) * (eq1.taxes - inputs.taxes0)
            if scenario.mup:
                mechanical = np.maximum(mechanical, mup_floor_price(inputs.design.degrees, scenario.mup))
            unit_mechanical = average_unit_price(eq0.volumes, mechanical)
            stats[f"quantity_effects/unit_price0:{category}"] = unit0
            stats[f"quantity_effects/unit_price1:{category}"] = unit1
            stats[f"quantity_effects/unit_price_pct:{category}"] = 100.0 * (unit1 / unit0 - 1.0)
            stats[f"quantity_effects/unit_price_mechanical_pct:{category}"] = 100.0 * (unit_mechanical / unit0 - 1.0)
            stats[f"quantity_effects/market_volume_pct:{category}"] = 100.0 * (ratio - 1.0)
            ratios = pass_through(inputs.prices0, result.prices, cm.costs + inputs.taxes0, cm.costs + eq1.taxes,
                                  vat, policy.pass_through_units)
            finite = ratios[np.isfinite(ratios)]
            stats[f"quantity_effects/pass_through:{category}"] = float(finite.mean()) if finite.size else float("nan")
            stats[f"quantity_effects/binding_products:{category}"] = float(len(result.binding))

        total0 = sum(float(v.sum()) for v in volumes0)
        total1 = sum(float(v.sum()) for v in volumes1)
        for category, v0, v1 in zip(context.markets, volumes0, volumes1):
            stats[f"quantity_effects/volume_share0:{category}"] = float(v0.sum()) / total0 if total0 > 0 else 0.0
            stats[f"quantity_effects/volume_share1:{category}"] = float(v1.sum()) / total1 if total1 > 0 else 0.0

        outcomes = aggregate_outcomes(impacts)
        for name, value in outcomes.items():
            kind = name.split(":")[0]
            table = {
                "dE_pct": "impacts_pure_alcohol", "ethanol_share": "impacts_pure_alcohol",
                "drinks_per_week": "impacts_pure_alcohol", "dQ_pct": "quantity_effects",
            }.get(kind, "quality_effects")
            stats[f"{table}/{name}"] = value
        stats["impacts_pure_alcohol/drinks_per_week:after"] = (
            outcomes["drinks_per_week:baseline"] * (1.0 + outcomes["dE_pct:all"] / 100.0))

        households = impacts.households
        valid = households["ev"].notna()
        stats["heterogeneity/all:ev"] = float(np.average(households.loc[valid, "ev"],
                                                         weights=households.loc[valid, "weight"])) \
            if valid.any() else float("nan")
        stats["heterogeneity/all:ev_star"] = float(np.average(households.loc[valid, "ev_star"],
                                                              weights=households.loc[valid, "weight"])) \
            if valid.any() else float("nan")
        stats["heterogeneity/all:utility_pct"] = float(np.average(households["utility_pct"],
                                                                  weights=households["weight"]))
        stats["heterogeneity/ev_failures"] = float(impacts.ev_failures)
        for grouping in GROUPINGS:
            for record in heterogeneity_tables(impacts, grouping).to_dict("records"):
                for column in ("dE_pct", "utility_pct", "ev"):
                    stats[f"heterogeneity/{grouping}={record['group']}:{column}"] = record[column]

        for grouping in ("category", "size"):
            profit0 = channel_profit(before, grouping)
            profit1 = channel_profit(after, grouping).reindex(profit0.index, fill_value=0.0)
            for group in profit0.index:
                stats[f"profits/profit0:{grouping}={group}"] = float(profit0[group])
                stats[f"profits/profit_pct:{grouping}={group}"] = 100.0 * float(profit1[group] / profit0[group] - 1.0)
        decomposition = profit_decomposition(before, after)
        stats["profits/profit_pct:all"] = 100.0 * decomposition.exact
        stats["profits/decomposition:quantity"] = 100.0 * decomposition.quantity
        stats["profits/decomposition:quality"] = 100.0 * decomposition.quality
        stats["profits/decomposition:price"] = 100.0 * decomposition.price
        stats["profits/decomposition:gap"] = 100.0 * decomposition.gap

        revenue = tax_revenue_report(list(context.markets), volumes0, volumes1, prices0, prices1,
                                     taxes0, taxes1, vat)
        for record in revenue.to_dict("records"):
            for column in ("excise", "vat", "producer", "spending"):
                stats[f"tax_revenue/{column}0:{record['category']}"] = record[f"{column}0"]
                stats[f"tax_revenue/{column}1:{record['category']}"] = record[f"{column}1"]
                stats[f"tax_revenue/{column}_pct:{record['category']}"] = record[f"{column}_pct"]
        return ScenarioRun(scenario, stats, impacts, results, revenue, before, after)

    def replicate(self, context: SimulationContext, scenario: Scenario, rng: np.random.Generator) -> Dict[str, float]:
        """One Monte Carlo replication: drawn parameters or resampled households, costs recalibrated."""
        inputs = context.inputs
        if self.config.policy.scheme == "parameter-draw":
            models = {category: quality_estimation.draw_parameters(cm.model, cm.inputs.design, rng)
                      for category, cm in context.markets.items()}
            quaids = quantity_estimation.draw_parameters(context.quaids, rng)
            replica = self.build_context(inputs, models, quaids)
        else:
            n = len(inputs.households)
            index = np.sort(rng.integers(0, n, size=n))
            models = {category: cm.model for category, cm in context.markets.items()}
            weights = {category: cm.weights for category, cm in context.markets.items()}
            replica = self.build_context(inputs, models, context.quaids, index=index, weights=weights)
        return self.run_scenario(replica, scenario).statistics

    def individual_models(self, context: SimulationContext) -> Dict[str, IndividualizationModel]:
        """Member-cell models fitted on each category's baseline ethanol purchases."""
        households = context.households
        moderators = moderator_matrix(households)
        models = {}
        for a, category in enumerate(CATEGORIES):
            ethanol = (PERIODS_PER_YEAR * context.baseline.quantity[:, a]
                       * (context.markets[category].state0.probabilities @ context.psi[category]))
            buyers = ethanol > 0
            try:
                models[category] = individualize(category, ethanol[buyers], households[buyers], moderators[buyers])
            except DomainError as e:
                logger.warning("Individualization skipped for %s: %s", category, e)
        return models

    def simulate(self, names: Optional[Sequence[str]] = None) -> Dict[str, pd.DataFrame]:
        """
        Run the scenarios end to end and write their directories and the report tables.

        Args:
            names: Scenarios to run; all configured scenarios when empty.

        Returns:
            The report tables by name.
        """
        policy = self.config.policy
        scenarios = self.calibrated_scenarios(names)
        context = self.point_context()
        members = self.individual_models(context) if policy.individualize else {}
        rows: Dict[str, List[pd.DataFrame]] = {table: [] for table in REPORT_TABLES}
        for scenario in scenarios:
            logger.info("Simulating scenario %s", scenario.name)
            run = self.run_scenario(context, scenario)
            seed = self.config.seed * 1000 + SCENARIO_NAMES.index(scenario.name)
            intervals = monte_carlo_ci(run.statistics, lambda rng: self.replicate(context, scenario, rng),
                                       policy.replications, seed, policy.scheme)
            self._write_scenario(context, run, members, intervals.failures)
            table = intervals.table
            split = table["statistic"].str.split("/", n=1, expand=True)
            table = table.assign(scenario=scenario.name, table=split[0], statistic=split[1])
            for name in REPORT_TABLES:
                rows[name].append(table.loc[table["table"] == name, list(REPORT_COLUMNS)])
        return self._write_reports(rows)

    def _write_scenario(self, context: SimulationContext, run: ScenarioRun,
                        members: Mapping[str, IndividualizationModel], mc_failures: int):
        directory = self.scenario_dir(run.scenario.name)
        write_table(run.impacts.households, directory / "household_impacts.csv")
        write_table(run.impacts.categories, directory / "household_categories.csv")
        write_table(run.revenue, directory / "tax_revenue_detail.csv")
        prices = []
        for category, result in run.results.items():
            cm = context.markets[category]
            prices.append(pd.DataFrame({
                "category": category,
                "product": cm.inputs.design.ids,
                "price0": cm.inputs.prices0,
                "price1": result.prices,
                "excise0": cm.inputs.taxes0,
                "excise1": result.equilibrium.taxes,
                "marginal_cost": cm.costs,
                "margin_pct1": result.equilibrium.margin_pct,
                "binding": np.isin(cm.inputs.design.ids, result.binding),
            }))
        write_table(pd.concat(prices, ignore_index=True), directory / "equilibrium_prices.csv")
        if self.config.trace:
            write_table(pd.concat([r.trace_frame() for r in run.results.values()], ignore_index=True),
                        directory / "trace.csv")
        if members:
            frame = run.impacts.categories
            ethanol0 = frame.pivot(index="household", columns="category", values="E0") * PERIODS_PER_YEAR
            change = frame.pivot(index="household", columns="category", values="dE")
            write_table(individual_changes(dict(members), context.households, ethanol0, change),
                        directory / "individual_impacts.csv")
        self.write_manifest(directory, "simulate", {
            "scenario": run.scenario.name,
            "base_rate": run.scenario.schedule.base_rate,
            "converged": {category: result.converged for category, result in run.results.items()},
            "replications": self.config.policy.replications,
            "failed_replications": mc_failures,
            "ev_failures": run.impacts.ev_failures,
        })

    def _write_reports(self, rows: Mapping[str, List[pd.DataFrame]]) -> Dict[str, pd.DataFrame]:
        """Merge new rows into the report tables; rows of scenarios not re-run are kept."""
        tables = {}
        for name in REPORT_TABLES:
            new = pd.concat(rows[name], ignore_index=True) if rows[name] else pd.DataFrame(columns=list(REPORT_COLUMNS))
            path = self.report_dir / f"{name}.csv"
            if path.exists():
                old = pd.read_csv(path)
                old = old[~old["scenario"].isin(new["scenario"].unique())]
                new = pd.concat([old, new], ignore_index=True)
            order = new["scenario"].map({s: k for k, s in enumerate(SCENARIO_NAMES)})
            new = (new.assign(_order=order).sort_values("_order", kind="mergesort")
                   .drop(columns="_order").reset_index(drop=True))
            write_table(new, path)
            tables[name] = new
        self.write_manifest(self.report_dir, "simulate", {"tables": list(REPORT_TABLES)})
        return tables

    # -- report ----------------------------------------------------------------------------

    def report(self) -> Path:
        """Write summary.xhtml with one table per report CSV."""
        tables = {}
        for name in REPORT_TABLES:
            tables[name] = read_table(self.report_dir / f"{name}.csv", REPORT_COLUMNS, "simulate")
        path = write_summary(tables, self.report_dir / "summary.xhtml", title="Alcohol policy simulation")
        self.write_manifest(self.report_dir, "report")
        return path

    # -- validate --------------------------------------------------------------------------

    def validate(self) -> List[str]:
        """
        Check the invariants of the pipeline output.

        Returns:
            Failure messages; empty when everything holds.
        """
        failures: List[str] = []
        frame = read_table(self.out_dir / "pseudo_panel.csv", PSEUDO_PANEL_COLUMNS, "estimate-quality")
        cells = frame[frame["quantity"] > 0]
        rebuilt = cells["adjusted_price"] * cells["quantity"] * (1.0 + cells["quality"])
        error = float(np.max(np.abs(rebuilt - cells["expenditure"]) / cells["expenditure"])) if len(cells) else 0.0
        if error > VALIDATION_TOLERANCE:
            failures.append(f"price x quantity x (1 + quality) differs from expenditure by {error:.3g}")

        quaids = self.load_quantity_model()
        violation = quaids.check_constraints()
        if violation > VALIDATION_TOLERANCE:
            failures.append(f"Share-system restrictions violated by {violation:.3g}")

        inputs = self.simulation_inputs()
        context = self.point_context(inputs)
        for category, cm in context.markets.items():
            prices0 = cm.inputs.prices0
            margins = prices0 / (1.0 + cm.inputs.ownership.vat_rate) - cm.costs - cm.inputs.taxes0
            residual = foc_system_residual(cm.inputs.ownership, margins, cm.market.shares(prices0),
                                           cm.market.jacobian(prices0))
            if residual > VALIDATION_TOLERANCE:
                failures.append(f"Baseline first-order conditions of {category} off by {residual:.3g}")
            result = solve_tax_counterfactual(category, cm.market, cm.inputs.ownership, cm.inputs.taxes0, cm.costs,
                                              prices0, self.config.solver, cm.market_size)
            moved = float(np.max(np.abs(result.prices - prices0)))
            if moved > VALIDATION_TOLERANCE * (1.0 + float(np.max(prices0))):
                failures.append(f"Solver moves baseline prices of {category} by {moved:.3g}")

        null = simulate_household_impacts(context.baseline, context.states0, context.states0, context.psi,
                                          context.quaids, inputs.cluster_states, inputs.default_state)
        ev = null.households["ev"].dropna().to_numpy(float)
        if ev.size and float(np.max(np.abs(ev))) > VALIDATION_TOLERANCE:
            failures.append(f"Equivalent variation of the null scenario reaches {np.max(np.abs(ev)):.3g}")

        for directory in sorted((self.out_dir / "scenarios").glob("*")) if (self.out_dir / "scenarios").exists() else []:
            categories = directory / "household_categories.csv"
            if categories.exists():
                rows = pd.read_csv(categories)
                identity = rows["dQ"] * (1.0 + rows["dPsi"]) + rows["dPsi"]
                gap = float(np.max(np.abs(rows["dE"] - identity))) if len(rows) else 0.0
                if gap > 1e-9:
                    failures.append(f"{directory.name}: ethanol change identity off by {gap:.3g}")
            revenue = directory / "tax_revenue_detail.csv"
            if revenue.exists():
                rows = pd.read_csv(revenue)
                for tag in ("0", "1"):
                    total = rows[f"excise{tag}"] + rows[f"vat{tag}"] + rows[f"producer{tag}"]
                    gap = float(np.max(np.abs(total - rows[f"spending{tag}"]) / rows[f"spending{tag}"].abs().clip(lower=1.0)))
                    if gap > VALIDATION_TOLERANCE:
                        failures.append(f"{directory.name}: revenue accounting off by {gap:.3g}")
        for failure in failures:
            logger.error("Validation failure: %s", failure)
        if not failures:
            logger.info("All invariants hold")
        return failures
