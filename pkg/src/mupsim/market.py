"""
Market domain model: products, tax schedules, households and clusters.

This module handles:
- Alcohol content conversions (degree, grams of ethanol, standard drinks)
- Excise taxes under the current, uniform and progressive volumetric schedules
- Minimum unit price floors and implicit tax rates
- CSV schemas shared by the generator and every estimation stage
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DomainError, MissingArtifactError, SchemaError

logger = logging.getLogger(__name__)

CATEGORIES: Tuple[str, ...] = (
    "ciders",
    "beers",
    "aperitifs",
    "spirits",
    "still-wines",
    "sparkling-wines",
)

PERIODS_PER_YEAR = 13
ETHANOL_DENSITY = 0.8  # g/ml
STANDARD_DRINK_GRAMS = 10.0

DEFAULT_BAND_EDGES: Tuple[float, ...] = (0.0, 5.0, 10.0, 15.0, 25.0, 45.0, 100.0)
DEFAULT_BAND_MULTIPLIERS: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
DEFAULT_VAT_RATE = 0.20

TAX_KINDS = ("current", "uniform-volumetric", "progressive-volumetric")
SIZE_CLASSES = ("small", "large")

# Dummies shifting the price disutility and entering fixed-effect interactions.
DEMOGRAPHIC_COLUMNS: Tuple[str, ...] = (
    "income_2",
    "income_3",
    "income_4",
    "age_2",
    "age_3",
    "habit_2",
    "habit_3",
)

# Adult member cells: gender x age band x education.
MEMBER_CELLS: Tuple[str, ...] = tuple(
    f"n_{gender}_{age}_{education}"
    for gender in ("M", "F")
    for age in ("18_34", "35_54", "55p")
    for education in ("low", "high")
)

PRODUCT_COLUMNS: Tuple[str, ...] = (
    "id", "category", "subcategory", "brand", "manufacturer", "retailer",
    "size_class", "degree", "unit_volume", "price", "excise",
)
HOUSEHOLD_COLUMNS: Tuple[str, ...] = (
    "id", "weight", "income", "age", "habit", "drinks_per_adult_day",
    "income_eur", "occasions", "children", "region", "producing_region",
    "small_city",
) + MEMBER_CELLS
PURCHASE_COLUMNS: Tuple[str, ...] = (
    "household", "period", "product", "quantity_L", "expenditure_eur",
)
PRICE_COLUMNS: Tuple[str, ...] = (
    "product", "period", "price", "tax", "n_competing", "n_competing_other",
    "mean_price_retailer_other", "mean_price_brand_other",
)
CLUSTER_COLUMNS: Tuple[str, ...] = (
    "cluster", "period", "category", "expenditure", "quantity", "quality",
    "adjusted_price", "weight",
)


@dataclass(frozen=True)
class Product:
    """A brand x retailer x subcategory variety."""
    id: str
    category: str
    subcategory: str
    brand: str
    manufacturer: str
    retailer: str
    size_class: str
    degree: float
    unit_volume: float
    price: float
    excise: float
    private_label: bool = False

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise DomainError(f"Product {self.id}: unknown category {self.category!r}")
        if not 0.0 <= self.degree <= 100.0:
            raise DomainError(f"Product {self.id}: degree {self.degree} outside [0, 100]")
        if self.price <= 0:
            raise DomainError(f"Product {self.id}: price must be positive")
        if self.excise < 0:
            raise DomainError(f"Product {self.id}: excise must be non-negative")
        if self.size_class not in SIZE_CLASSES:
            raise DomainError(f"Product {self.id}: size class must be small or large")

    @property
    def ethanol_per_liter(self) -> float:
        """Alcohol content psi in grams per liter (8 x degree)."""
        return ethanol_grams(self.degree, 1.0)


@dataclass(frozen=True)
class TaxSchedule:
    """
    Excise schedule for one scenario.

    `base_rate` is in EUR per degree-liter. Bands partition [0, 100] degrees and
    the progressive kind applies `band_multipliers` to the degrees falling in
    each band.
    """
    kind: str = "current"
    base_rate: float = 0.0
    band_edges: Tuple[float, ...] = DEFAULT_BAND_EDGES
    band_multipliers: Tuple[float, ...] = DEFAULT_BAND_MULTIPLIERS
    vat_rate: float = DEFAULT_VAT_RATE

    def __post_init__(self):
        if self.kind not in TAX_KINDS:
            raise DomainError(f"Unknown tax schedule kind {self.kind!r}")
        if self.base_rate < 0:
            raise DomainError("Tax base rate must be non-negative")
        if self.vat_rate < 0:
            raise DomainError("VAT rate must be non-negative")
        edges = np.asarray(self.band_edges, dtype=float)
        if edges[0] != 0.0 or edges[-1] != 100.0 or np.any(np.diff(edges) <= 0):
            raise DomainError("Tax bands must partition [0, 100] in increasing order")
        if len(self.band_multipliers) != len(edges) - 1:
            raise DomainError("One multiplier per tax band is required")
        if self.kind == "progressive-volumetric" and np.any(np.diff(self.band_multipliers) <= 0):
            raise DomainError("Progressive multipliers must be strictly increasing")

    def with_rate(self, base_rate: float) -> "TaxSchedule":
        """Copy of the schedule with another base rate."""
        return TaxSchedule(self.kind, base_rate, self.band_edges, self.band_multipliers, self.vat_rate)

    def effective_degrees(self, degree: Union[float, np.ndarray]) -> np.ndarray:
        """Degrees weighted by band multipliers (plain degrees for the uniform kind)."""
        degree = np.asarray(degree, dtype=float)
        if self.kind != "progressive-volumetric":
            return degree
        edges = np.asarray(self.band_edges, dtype=float)
        lower, upper = edges[:-1], edges[1:]
        inside = np.clip(degree[..., None], lower, upper) - lower
        return inside @ np.asarray(self.band_multipliers, dtype=float)


@dataclass(frozen=True)
class Household:
    """A panel household with the demographics used by demand and individualization."""
    id: str
    weight: float
    income: int
    age: int
    habit: int
    drinks_per_adult_day: float = 0.0
    income_eur: float = 0.0
    occasions: int = 1
    children: int = 0
    region: int = 1
    producing_region: bool = False
    small_city: bool = False
    members: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.weight <= 0:
            raise DomainError(f"Household {self.id}: weight must be positive")
        if self.income not in (1, 2, 3, 4):
            raise DomainError(f"Household {self.id}: income category must be 1..4")
        if self.age not in (1, 2, 3):
            raise DomainError(f"Household {self.id}: age category must be 1..3")
        if self.habit not in (1, 2, 3):
            raise DomainError(f"Household {self.id}: habit category must be 1..3")
        if any(count < 0 for count in self.members.values()) or self.children < 0:
            raise DomainError(f"Household {self.id}: member counts must be non-negative")

    @property
    def demographics(self) -> np.ndarray:
        """Dummy vector aligned with DEMOGRAPHIC_COLUMNS."""
        return np.array(
            [self.income == 2, self.income == 3, self.income == 4,
             self.age == 2, self.age == 3, self.habit == 2, self.habit == 3],
            dtype=float,
        )

    @property
    def adults(self) -> int:
        return int(sum(self.members.values()))


@dataclass(frozen=True)
class Cluster:
    """
    A demographic cluster of the pseudo-panel.

    Arrays are periods x categories; `demographics` holds the weighted average
    household characteristics D^c.
    """
    id: str
    cells: Tuple[int, ...]
    member_weights: Tuple[float, ...]
    expenditure: np.ndarray
    quantity: np.ndarray
    quality: np.ndarray
    adjusted_price: np.ndarray
    demographics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.quantity) < 0):
            raise DomainError(f"Cluster {self.id}: quantities must be non-negative")

    def budget_shares(self) -> np.ndarray:
        """w^{ac} = Y^{ac} / sum_k Y^{kc}, zero rows left at zero."""
        expenditure = np.asarray(self.expenditure, dtype=float)
        total = expenditure.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            shares = np.where(total > 0, expenditure / np.where(total > 0, total, 1.0), 0.0)
        return shares


def _check_degree(degree: Union[float, np.ndarray]) -> np.ndarray:
    degree = np.asarray(degree, dtype=float)
    if np.any(degree < 0) or np.any(degree > 100) or not np.all(np.isfinite(degree)):
        raise DomainError("Alcohol degree must lie in [0, 100]")
    return degree


def ethanol_grams(degree: Union[float, np.ndarray], volume: Union[float, np.ndarray]):
    """
    Grams of ethanol in `volume` liters at `degree` percent volume.

    Args:
        degree: Alcohol degree (% vol) in [0, 100].
        volume: Volume in liters.

    Returns:
        0.8 x degree x volume x 1000 / 100 = 8 x degree x volume grams.
    """
    degree = _check_degree(degree)
    volume = np.asarray(volume, dtype=float)
    if np.any(volume < 0):
        raise DomainError("Volume must be non-negative")
    grams = ETHANOL_DENSITY * degree * volume * 1000.0 / 100.0
    return float(grams) if grams.ndim == 0 else grams


def standard_drinks(degree, volume):
    """Number of 10 g standard drinks."""
    return ethanol_grams(degree, volume) / STANDARD_DRINK_GRAMS


def tax_per_liter(product: Product, schedule: TaxSchedule) -> float:
    """
    Excise in EUR per liter of `product` under `schedule`.

    The current schedule returns the stored baseline excise T0; the uniform
    schedule charges base_rate per degree; the progressive one charges
    base_rate x multiplier for the degrees falling in each band.
    """
    if schedule.kind == "current":
        return float(product.excise)
    return float(schedule.base_rate * schedule.effective_degrees(product.degree))


def excise_vector(degrees: Sequence[float], schedule: TaxSchedule,
                  current: Optional[Sequence[float]] = None) -> np.ndarray:
    """Vectorized tax_per_liter over a product table."""
    degrees = _check_degree(degrees)
    if schedule.kind == "current":
        if current is None:
            raise DomainError("The current schedule needs the stored baseline excise")
        return np.asarray(current, dtype=float).copy()
    return schedule.base_rate * schedule.effective_degrees(degrees)


def mup_floor_price(product: Union[Product, float], mup: float) -> Union[float, np.ndarray]:
    """
    Minimum consumer price per liter implied by a price per standard drink.

    Args:
        product: A Product, or an alcohol degree (scalar or array).
        mup: Minimum price in EUR per 10 g standard drink.

    Returns:
        mup x (8 x degree / 10) EUR per liter.
    """
    if mup < 0:
        raise DomainError("Minimum unit price must be non-negative")
    degree = product.degree if isinstance(product, Product) else product
    floor = mup * standard_drinks(degree, 1.0)
    return float(floor) if np.ndim(floor) == 0 else floor


def implicit_tax_rate(sales: float, tax_revenue: float) -> float:
    """100 x tax revenue / (sales - tax revenue)."""
    if tax_revenue < 0:
        raise DomainError("Tax revenue must be non-negative")
    if sales <= tax_revenue:
        raise DomainError("Sales must exceed tax revenue")
    return 100.0 * tax_revenue / (sales - tax_revenue)


def habit_category(drinks_per_adult_day: Union[float, np.ndarray]) -> np.ndarray:
    """Prior-year habit: 1 for <=1 drink/adult/day, 2 for (1, 2], 3 above."""
    drinks = np.asarray(drinks_per_adult_day, dtype=float)
    return np.where(drinks <= 1.0, 1, np.where(drinks <= 2.0, 2, 3))


def risk_class(drinks_per_adult_day: Union[float, np.ndarray]) -> np.ndarray:
    """Drinking-risk group: low (<1), moderate ([1, 2)), high (>=2)."""
    drinks = np.asarray(drinks_per_adult_day, dtype=float)
    return np.where(drinks < 1.0, "low", np.where(drinks < 2.0, "moderate", "high"))


def demographic_dummies(households: pd.DataFrame) -> pd.DataFrame:
    """Income/age/habit dummies aligned with DEMOGRAPHIC_COLUMNS."""
    frame = pd.DataFrame(index=households.index)
    for level in (2, 3, 4):
        frame[f"income_{level}"] = (households["income"] == level).astype(float)
    for level in (2, 3):
        frame[f"age_{level}"] = (households["age"] == level).astype(float)
    for level in (2, 3):
        frame[f"habit_{level}"] = (households["habit"] == level).astype(float)
    return frame[list(DEMOGRAPHIC_COLUMNS)]


def cluster_ids(households: pd.DataFrame) -> pd.Series:
    """Pseudo-panel cluster of each household: income x age x habit x presence of children."""
    return ("i" + households["income"].astype(int).astype(str)
            + "-a" + households["age"].astype(int).astype(str)
            + "-h" + households["habit"].astype(int).astype(str)
            + "-c" + (households["children"] > 0).astype(int).astype(str))


def clusters_from_frame(frame: pd.DataFrame, categories: Sequence[str] = CATEGORIES) -> List[Cluster]:
    """Build Cluster values (periods x categories arrays) from a long pseudo-panel table."""
    clusters = []
    periods = np.sort(frame["period"].unique())
    for cluster_id, group in frame.groupby("cluster", sort=True):
        def wide(column: str) -> np.ndarray:
            table = group.pivot(index="period", columns="category", values=column)
            return table.reindex(index=periods, columns=list(categories)).to_numpy(float)
        clusters.append(Cluster(
            id=str(cluster_id),
            cells=tuple(int(part[1:]) for part in str(cluster_id).split("-")),
            member_weights=(float(group["weight"].iloc[0]),),
            expenditure=np.nan_to_num(wide("expenditure")),
            quantity=np.nan_to_num(wide("quantity")),
            quality=wide("quality"),
            adjusted_price=wide("adjusted_price"),
        ))
    return clusters


def products_from_frame(frame: pd.DataFrame) -> List[Product]:
    """Build Product values from a products table."""
    products = []
    for row in frame.itertuples(index=False):
        products.append(Product(
            id=str(row.id), category=row.category, subcategory=str(row.subcategory),
            brand=str(row.brand), manufacturer=str(row.manufacturer),
            retailer=str(row.retailer), size_class=row.size_class,
            degree=float(row.degree), unit_volume=float(row.unit_volume),
            price=float(row.price), excise=float(row.excise),
            private_label=bool(getattr(row, "private_label", False)),
        ))
    return products


def households_from_frame(frame: pd.DataFrame) -> List[Household]:
    """Build Household values from a households table."""
    households = []
    for record in frame.to_dict(orient="records"):
        households.append(Household(
            id=str(record["id"]), weight=float(record["weight"]),
            income=int(record["income"]), age=int(record["age"]), habit=int(record["habit"]),
            drinks_per_adult_day=float(record["drinks_per_adult_day"]),
            income_eur=float(record["income_eur"]), occasions=int(record["occasions"]),
            children=int(record["children"]), region=int(record["region"]),
            producing_region=bool(record["producing_region"]),
            small_city=bool(record["small_city"]),
            members={cell: int(record[cell]) for cell in MEMBER_CELLS},
        ))
    return households


def read_table(path: Union[str, Path], columns: Iterable[str], stage: str = "generate") -> pd.DataFrame:
    """
    Read a CSV artifact and check its schema.

    Args:
        path: CSV file path.
        columns: Columns the caller needs.
        stage: CLI stage producing the file, named in the error when it is missing.

    Returns:
        The table as a DataFrame with string ids.
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path), stage)
    frame = pd.read_csv(path, dtype={"id": str, "product": str, "household": str, "cluster": str})
    missing = set(columns) - set(frame.columns)
    if missing:
        raise SchemaError(path.name, missing)
    return frame


def write_table(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a CSV artifact with a fixed float format so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path
