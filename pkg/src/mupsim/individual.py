"""
Distribution of household alcohol purchases across adult members.

This module handles:
- Nonlinear least squares of household ethanol purchases on adult member
  counts by gender x age x education, with multiplicative household moderators
- Member shares of household purchases (children consume nothing)
- Individual relative changes in ethanol intake after a policy
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import optimize

from .errors import DomainError, NumericError
from .market import MEMBER_CELLS

logger = logging.getLogger(__name__)

MODERATORS: Tuple[str, ...] = (
    "small_city", "children", "habit_2", "habit_3", "income_2", "income_3", "income_4", "producing_region",
)


def moderator_matrix(households: pd.DataFrame, names: Sequence[str] = MODERATORS) -> np.ndarray:
    """Household moderators D^h: city size, children, habit and income dummies, producing region."""
    columns = {
        "small_city": households["small_city"].astype(float),
        "children": (households["children"] > 0).astype(float),
        "producing_region": households["producing_region"].astype(float),
    }
    for level in (2, 3):
        columns[f"habit_{level}"] = (households["habit"] == level).astype(float)
    for level in (2, 3, 4):
        columns[f"income_{level}"] = (households["income"] == level).astype(float)
    return np.column_stack([np.asarray(columns[name], dtype=float) for name in names]) if names \
        else np.zeros((len(households), 0))


@dataclass
class IndividualizationModel:
    """
    E^h = [sum_c n_c^h beta_c] exp(zeta'D^h) for one category.

    Cells without any member in the sample are left out of `cells` and listed in `dropped`.
    """
    category: str
    cells: Tuple[str, ...]
    beta: np.ndarray
    moderators: Tuple[str, ...]
    zeta: np.ndarray
    dropped: List[str] = field(default_factory=list)
    diagnostics: Dict[str, float] = field(default_factory=dict)

    def predict(self, members: np.ndarray, moderators: np.ndarray) -> np.ndarray:
        return (np.asarray(members, float) @ self.beta) * np.exp(np.asarray(moderators, float) @ self.zeta)

    def member_shares(self, members: np.ndarray, moderators: np.ndarray) -> np.ndarray:
        """
        eta_c^h = beta_c exp(zeta'D) / sum_k n_k beta_k exp(zeta'D), the share of one member of cell c.

        Rows where no adult has a positive coefficient are zero.
        """
        members = np.asarray(members, dtype=float)
        scale = np.exp(np.asarray(moderators, float) @ self.zeta)[:, None]
        per_member = self.beta[None, :] * scale
        total = (members * per_member).sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(total > 0, per_member / np.where(total > 0, total, 1.0), 0.0) * (members > 0)

    def to_dict(self) -> Dict:
        return {
            "category": self.category,
            "beta": dict(zip(self.cells, self.beta.tolist())),
            "zeta": dict(zip(self.moderators, self.zeta.tolist())),
            "dropped": list(self.dropped),
            "diagnostics": self.diagnostics,
        }


def individualize(category: str, ethanol: np.ndarray, members: pd.DataFrame, moderators: np.ndarray,
                  moderator_names: Sequence[str] = MODERATORS) -> IndividualizationModel:
    """
    Fit cell coefficients beta >= 0 and moderators zeta by nonlinear least squares.

    Args:
        category: Category name.
        ethanol: Yearly household ethanol purchases E^h (grams).
        members: Adult member counts, one column per cell of MEMBER_CELLS.
        moderators: Household moderators (H, M).
        moderator_names: Names of the moderator columns.

    Returns:
        The fitted model.

    Raises:
        DomainError: when no household has both members and purchases.
    """
    ethanol = np.asarray(ethanol, dtype=float)
    counts = members[list(MEMBER_CELLS)].to_numpy(float)
    moderators = np.asarray(moderators, dtype=float)
    present = counts.sum(axis=0) > 0
    dropped = [cell for cell, keep in zip(MEMBER_CELLS, present) if not keep]
    if dropped:
        logger.warning("No %s household member in cell(s) %s; coefficients dropped", category, ", ".join(dropped))
    counts = counts[:, present]
    cells = tuple(cell for cell, keep in zip(MEMBER_CELLS, present) if keep)
    varying = moderators.std(axis=0) > 0 if moderators.size else np.zeros(0, dtype=bool)
    if np.any(~varying):
        logger.debug("Constant moderators left out: %s",
                     ", ".join(n for n, v in zip(moderator_names, varying) if not v))
    moderators = moderators[:, varying]
    names = tuple(n for n, v in zip(moderator_names, varying) if v)
    if counts.shape[1] == 0 or not np.any(ethanol > 0):
        raise DomainError(f"No household with adult members and {category} purchases")

    start_beta, _ = optimize.nnls(counts, ethanol)
    start = np.concatenate([np.maximum(start_beta, 1e-6 * max(ethanol.mean(), 1.0)), np.zeros(len(names))])
    n_cells = counts.shape[1]

    def residuals(x: np.ndarray) -> np.ndarray:
        return (counts @ x[:n_cells]) * np.exp(moderators @ x[n_cells:]) - ethanol

    def jacobian(x: np.ndarray) -> np.ndarray:
        scale = np.exp(moderators @ x[n_cells:])
        fitted = counts @ x[:n_cells]
        return np.column_stack([counts * scale[:, None], moderators * (fitted * scale)[:, None]])

    lower = np.concatenate([np.zeros(n_cells), np.full(len(names), -np.inf)])
    result = optimize.least_squares(residuals, start, jac=jacobian, bounds=(lower, np.inf),
                                    method="trf", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=2000)
    if not np.all(np.isfinite(result.x)):
        raise NumericError(f"Individualization of {category} produced non-finite coefficients")
    if not result.success:
        logger.warning("Individualization of %s stopped: %s", category, result.message)
    return IndividualizationModel(
        category=category,
        cells=cells,
        beta=result.x[:n_cells],
        moderators=names,
        zeta=result.x[n_cells:],
        dropped=dropped,
        diagnostics={"cost": float(result.cost), "nfev": int(result.nfev), "success": bool(result.success)},
    )


def individual_changes(models: Dict[str, IndividualizationModel], households: pd.DataFrame,
                       ethanol0: pd.DataFrame, ethanol_change: pd.DataFrame) -> pd.DataFrame:
    """
    Relative change in intake of each household member.

    Within a category every adult's intake moves with the household's
    relative change; the member's total change weights categories by the
    member's baseline intake. Children get zero intake and zero change.

    Args:
        models: Fitted model per category.
        households: Households table (members, moderators).
        ethanol0: Baseline household ethanol by category (index household, columns categories).
        ethanol_change: Relative household ethanol change by category, same layout.

    Returns:
        One row per household and member cell: household, cell, members,
        baseline intake per member (grams) and relative change.
    """
    ids = households["id"].astype(str).to_numpy()
    counts = households[list(MEMBER_CELLS)].to_numpy(float)
    intake = np.zeros(counts.shape)
    change = np.zeros(counts.shape)
    for category, model in models.items():
        positions = [MEMBER_CELLS.index(cell) for cell in model.cells]
        moderators = moderator_matrix(households, model.moderators)
        shares = model.member_shares(counts[:, positions], moderators)
        base = ethanol0.reindex(ids)[category].fillna(0.0).to_numpy(float)
        delta = ethanol_change.reindex(ids)[category].fillna(0.0).to_numpy(float)
        member_intake = shares * base[:, None]
        intake[:, positions] += member_intake
        change[:, positions] += member_intake * delta[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        relative = np.where(intake > 0, change / np.where(intake > 0, intake, 1.0), 0.0)
    frame = pd.DataFrame({
        "household": np.repeat(ids, len(MEMBER_CELLS)),
        "cell": np.tile(MEMBER_CELLS, len(ids)),
        "members": counts.ravel(),
        "intake0": intake.ravel(),
        "dE": relative.ravel(),
    })
    frame = frame[frame["members"] > 0]
    children = households["children"].to_numpy(int)
    kids = pd.DataFrame({"household": ids, "cell": "child", "members": children.astype(float),
                         "intake0": 0.0, "dE": 0.0})[children > 0]
    return pd.concat([frame, kids], ignore_index=True).sort_values(["household", "cell"], kind="mergesort",
                                                                   ignore_index=True)
