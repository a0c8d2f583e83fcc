"""
Monte Carlo confidence intervals for reported statistics.

Each replication gets its own random substream spawned from one seed, so
intervals are reproducible and do not depend on the order replications run in.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping

import numpy as np
import pandas as pd

from .errors import ConfigError, MupsimError

logger = logging.getLogger(__name__)

SCHEMES = ("parameter-draw", "household-bootstrap")
INTERVAL_COLUMNS = ("statistic", "point", "lo95", "hi95")

Replicate = Callable[[np.random.Generator], Mapping[str, float]]


@dataclass
class MonteCarloResult:
    """Percentile intervals plus the raw replication draws."""
    table: pd.DataFrame
    draws: pd.DataFrame
    replications: int
    failures: int = 0
    scheme: str = "parameter-draw"
    errors: List[str] = field(default_factory=list)

    def interval(self, statistic: str):
        row = self.table.set_index("statistic").loc[statistic]
        return float(row["lo95"]), float(row["hi95"])


def replication_generators(seed: int, replications: int) -> List[np.random.Generator]:
    """Independent generators, one per replication."""
    children = np.random.SeedSequence(seed).spawn(replications)
    return [np.random.default_rng(child) for child in children]


def monte_carlo_ci(point: Mapping[str, float], replicate: Replicate, replications: int,
                   seed: int, scheme: str = "parameter-draw") -> MonteCarloResult:
    """
    2.5 / 97.5 percentile intervals of statistics over replications.

    Args:
        point: Point estimates by statistic name.
        replicate: Runs one replication with the given generator and returns
            the statistics; the scheme (parameter draws or household
            resampling) is implemented by the callable.
        replications: Number of replications (0 gives NaN bounds).
        seed: Root seed of the replication substreams.
        scheme: Recorded resampling scheme.

    Returns:
        MonteCarloResult; failed replications are excluded and counted.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"Unknown Monte Carlo scheme {scheme!r}; expected one of {SCHEMES}")
    if replications < 0:
        raise ConfigError("Replication count must be non-negative")
    names = list(point)
    rows: List[Dict[str, float]] = []
    errors: List[str] = []
    for index, rng in enumerate(replication_generators(seed, replications)):
        try:
            values = replicate(rng)
        except (MupsimError, np.linalg.LinAlgError, FloatingPointError) as e:
            errors.append(f"replication {index}: {e}")
            logger.debug("Replication %d failed: %s", index, e)
            continue
        rows.append({name: float(values.get(name, np.nan)) for name in names})
    if errors:
        logger.warning("%d of %d Monte Carlo replication(s) failed and were excluded",
                       len(errors), replications)
    draws = pd.DataFrame(rows, columns=names)
    records = []
    for name in names:
        values = draws[name].to_numpy(float) if len(draws) else np.empty(0)
        values = values[np.isfinite(values)]
        if values.size:
            low, high = np.percentile(values, [2.5, 97.5])
        else:
            low = high = float("nan")
        records.append({"statistic": name, "point": float(point[name]), "lo95": float(low), "hi95": float(high)})
    table = pd.DataFrame(records, columns=list(INTERVAL_COLUMNS))
    return MonteCarloResult(table, draws, replications, len(errors), scheme, errors)
