"""
Integration rules over the standard normal taste shock.

Two rules are supported:
- sparse-grid: Smolyak combination of Gauss-Hermite rules (exact for
  polynomials, used for likelihood evaluation)
- halton: scrambled Halton sequence mapped through the normal quantile
  (used for posterior quality indices)
"""

import itertools
from dataclasses import dataclass
from math import comb
from typing import Any, Dict, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.stats import norm, qmc

from .errors import ConfigError

DRAW_METHODS = ("sparse-grid", "halton")


def gauss_hermite_rule(n_points: int):
    """Gauss-Hermite nodes and weights for N(0, 1), weights summing to one."""
    nodes, weights = hermegauss(n_points)
    return nodes, weights / weights.sum()


def sparse_grid(dimension: int, level: int):
    """
    Smolyak sparse grid for the d-dimensional standard normal.

    Args:
        dimension: Number of independent normal shocks.
        level: Accuracy level; the one-dimensional rule at level l has l nodes.

    Returns:
        (nodes, weights) with nodes of shape (R, dimension). Weights sum to one
        and may be negative when dimension > 1.
    """
    if dimension < 1 or level < 1:
        raise ConfigError("Sparse grid needs dimension >= 1 and level >= 1")
    rules = {l: gauss_hermite_rule(l) for l in range(1, level + dimension)}
    accumulated: Dict[tuple, float] = {}
    for total in range(max(dimension, level), level + dimension):
        coefficient = (-1) ** (level + dimension - 1 - total) * comb(dimension - 1, total - level)
        for levels in _compositions(total, dimension):
            grids = [rules[l] for l in levels]
            for combo in itertools.product(*[range(len(g[0])) for g in grids]):
                point = tuple(round(float(grids[i][0][k]), 12) for i, k in enumerate(combo))
                weight = coefficient * np.prod([grids[i][1][k] for i, k in enumerate(combo)])
                accumulated[point] = accumulated.get(point, 0.0) + weight
    points = sorted(p for p, w in accumulated.items() if abs(w) > 1e-15)
    nodes = np.array(points, dtype=float).reshape(-1, dimension)
    weights = np.array([accumulated[p] for p in points])
    return nodes, weights / weights.sum()


def _compositions(total: int, parts: int):
    """Tuples of `parts` positive integers summing to `total`."""
    for cuts in itertools.combinations(range(1, total), parts - 1):
        bounds = (0,) + cuts + (total,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


@dataclass(frozen=True)
class DrawRule:
    """Nodes and weights used to integrate over the unobserved taste shock."""
    method: str
    nodes: np.ndarray
    weights: np.ndarray
    level: int = 0
    n_draws: int = 0
    seed: int = 0

    @property
    def zeta(self) -> np.ndarray:
        """First dimension of the nodes (the price-coefficient shock)."""
        return self.nodes[:, 0]

    @property
    def size(self) -> int:
        return len(self.weights)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "level": self.level,
            "n_draws": self.n_draws,
            "seed": self.seed,
            "dimension": int(self.nodes.shape[1]),
            "nodes": self.zeta.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DrawRule":
        return make_draw_rule(
            data["method"], level=data.get("level") or 0, n_draws=data.get("n_draws") or 0,
            seed=data.get("seed", 0), dimension=data.get("dimension", 1),
        )


def make_draw_rule(method: str = "sparse-grid", level: int = 7, n_draws: int = 200,
                   seed: int = 0, dimension: int = 1) -> DrawRule:
    """
    Build a reproducible draw rule.

    Args:
        method: 'sparse-grid' or 'halton'.
        level: Sparse-grid level.
        n_draws: Number of Halton draws.
        seed: Scrambling seed for Halton draws.
        dimension: Number of normal shocks.
    """
    if method == "sparse-grid":
        nodes, weights = sparse_grid(dimension, level)
        return DrawRule(method, nodes, weights, level=level, seed=seed)
    if method == "halton":
        if n_draws < 1:
            raise ConfigError("Halton rule needs at least one draw")
        sampler = qmc.Halton(d=dimension, scramble=True, seed=seed)
        uniforms = np.clip(sampler.random(n_draws), 1e-10, 1 - 1e-10)
        nodes = norm.ppf(uniforms)
        return DrawRule(method, nodes, np.full(n_draws, 1.0 / n_draws), n_draws=n_draws, seed=seed)
    raise ConfigError(f"Unknown draw method {method!r}; expected one of {DRAW_METHODS}")


def degenerate_rule() -> DrawRule:
    """Single node at zero, for models without unobserved heterogeneity."""
    return DrawRule("sparse-grid", np.zeros((1, 1)), np.ones(1), level=1)


def rule_from_config(config: Optional[Dict[str, Any]]) -> DrawRule:
    config = dict(config or {})
    return make_draw_rule(
        config.get("method", "sparse-grid"), level=int(config.get("level", 7)),
        n_draws=int(config.get("n_draws", 200)), seed=int(config.get("seed", 0)),
    )
