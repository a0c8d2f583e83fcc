"""
Pipeline configuration.

This module handles:
- The configuration tree (generator, choice models, share system, solver, policy)
- Loading from JSON with strict key checking
- Environment overrides prefixed MUPSIM_
- A stable hash of the effective configuration for run manifests
"""

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from .draws import DRAW_METHODS
from .equilibrium import PASS_THROUGH_UNITS, SolverConfig
from .errors import ConfigError
from .market import CATEGORIES, DEFAULT_BAND_EDGES, DEFAULT_BAND_MULTIPLIERS, DEFAULT_VAT_RATE
from .montecarlo import SCHEMES
from .policy import DEFAULT_MUP, SCENARIO_NAMES
from .quality import DEFAULT_TERMS
from .quality_estimation import DEFAULT_INSTRUMENTS
from .quantity_estimation import IrlsConfig
from .synthetic import SyntheticConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "MUPSIM_"


@dataclass
class QualityConfig:
    """Choice-model estimation settings."""
    categories: List[str] = field(default_factory=lambda: list(CATEGORIES))
    terms: List[str] = field(default_factory=lambda: list(DEFAULT_TERMS))
    instruments: List[str] = field(default_factory=lambda: list(DEFAULT_INSTRUMENTS))
    price_shifts: Dict[str, List[str]] = field(default_factory=lambda: {"sparkling-wines": ["champagne"]})
    draw_method: str = "sparse-grid"
    draw_level: int = 7
    n_draws: int = 200
    posterior_draws: int = 200
    seed: int = 0
    max_iter: int = 500
    gtol: float = 1e-6

    def __post_init__(self):
        unknown = sorted(set(self.categories) - set(CATEGORIES))
        if unknown:
            raise ConfigError(f"Unknown categories in quality.categories: {unknown}")
        if self.draw_method not in DRAW_METHODS:
            raise ConfigError(f"quality.draw_method must be one of {DRAW_METHODS}")
        if self.posterior_draws < 1:
            raise ConfigError("quality.posterior_draws must be at least 1")


@dataclass
class PolicyConfig:
    """Scenario, tax and Monte Carlo settings."""
    scenarios: List[str] = field(default_factory=lambda: list(SCENARIO_NAMES))
    vat_rate: float = DEFAULT_VAT_RATE
    mup_rate: float = DEFAULT_MUP
    external_cost: Optional[float] = None
    external_cost_ratio: float = 1.5
    band_edges: List[float] = field(default_factory=lambda: list(DEFAULT_BAND_EDGES))
    band_multipliers: List[float] = field(default_factory=lambda: list(DEFAULT_BAND_MULTIPLIERS))
    replications: int = 100
    scheme: str = "parameter-draw"
    laspeyres: bool = False
    pass_through_units: str = "consumer"
    individualize: bool = True

    def __post_init__(self):
        unknown = sorted(set(self.scenarios) - set(SCENARIO_NAMES))
        if unknown:
            raise ConfigError(f"Unknown scenarios: {unknown}; expected names from {SCENARIO_NAMES}")
        if self.vat_rate < 0 or self.mup_rate < 0:
            raise ConfigError("VAT and minimum unit price must be non-negative")
        if self.external_cost is not None and self.external_cost <= 0:
            raise ConfigError("policy.external_cost must be positive")
        if self.replications < 0:
            raise ConfigError("policy.replications must be non-negative")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"policy.scheme must be one of {SCHEMES}")
        if self.pass_through_units not in PASS_THROUGH_UNITS:
            raise ConfigError(f"policy.pass_through_units must be one of {PASS_THROUGH_UNITS}")


@dataclass
class PipelineConfig:
    """
    Everything a pipeline run depends on.

    `seed` is the single root of randomness: it seeds the generator and the
    Monte Carlo replications.
    """
    data_dir: str = "data"
    out_dir: str = "out"
    seed: int = 7
    trace: bool = False
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    quality: QualityConfig = field(default_factory=QualityConfig)
    quantity: IrlsConfig = field(default_factory=IrlsConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def synthetic_config(self) -> SyntheticConfig:
        return dataclasses.replace(self.synthetic, seed=self.seed, vat_rate=self.policy.vat_rate)

    def irls_config(self) -> IrlsConfig:
        return dataclasses.replace(self.quantity, price_index="laspeyres" if self.policy.laspeyres else "adjusted")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of the configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


SECTIONS = {
    "synthetic": SyntheticConfig,
    "quality": QualityConfig,
    "quantity": IrlsConfig,
    "solver": SolverConfig,
    "policy": PolicyConfig,
}


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"Section {where} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"Unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"Invalid {where} section: {e}") from e


def config_from_dict(data: Mapping[str, Any]) -> PipelineConfig:
    """Build a PipelineConfig, rejecting unknown keys at every level."""
    data = dict(data)
    sections = {name: _build(cls, data.pop(name, {}), name) for name, cls in SECTIONS.items()}
    top = _build(PipelineConfig, data, "config")
    return dataclasses.replace(top, **sections)


def load_config(path: Optional[Union[str, Path]] = None) -> PipelineConfig:
    """
    Read a JSON configuration; without a path the built-in defaults are used.

    Raises:
        ConfigError: missing file, malformed JSON or unknown keys.
    """
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {path}: {e}") from e
    logger.debug("Loaded configuration from %s", path)
    return config_from_dict(data)


# Environment variable -> (section or None, field, parser)
ENV_OVERRIDES: Dict[str, Tuple[Optional[str], str, type]] = {
    "SEED": (None, "seed", int),
    "OUT": (None, "out_dir", str),
    "DATA": (None, "data_dir", str),
    "VAT_RATE": ("policy", "vat_rate", float),
    "MUP_RATE": ("policy", "mup_rate", float),
    "REPLICATIONS": ("policy", "replications", int),
    "EXTERNAL_COST": ("policy", "external_cost", float),
}


def apply_overrides(config: PipelineConfig, values: Mapping[str, Any]) -> PipelineConfig:
    """Return a copy with `values` ({'policy.vat_rate': 0.2, 'seed': 3, ...}) applied and re-validated."""
    data = config.to_dict()
    for key, value in values.items():
        section, _, name = key.rpartition(".")
        target = data[section] if section else data
        if name not in target:
            raise ConfigError(f"Unknown configuration key {key!r}")
        target[name] = value
    return config_from_dict(data)


def apply_environment(config: PipelineConfig, environ: Optional[Mapping[str, str]] = None) -> PipelineConfig:
    """
    Apply MUPSIM_* environment overrides.

    Raises:
        ConfigError: unparsable value.
    """
    environ = os.environ if environ is None else environ
    values = {}
    for suffix, (section, name, parser) in ENV_OVERRIDES.items():
        raw = environ.get(ENV_PREFIX + suffix)
        if raw is None or raw == "":
            continue
        try:
            value = parser(raw)
        except ValueError as e:
            raise ConfigError(f"{ENV_PREFIX}{suffix}={raw!r} is not a valid {parser.__name__}") from e
        values[f"{section}.{name}" if section else name] = value
        logger.debug("Environment override %s%s=%s", ENV_PREFIX, suffix, raw)
    return apply_overrides(config, values) if values else config
