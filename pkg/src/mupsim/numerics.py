"""
Small numerical helpers shared by the estimators.
"""

from typing import List, Sequence, Tuple

import numpy as np
from scipy import linalg


def independent_columns(matrix: np.ndarray, names: Sequence[str],
                        tol: float = 1e-9) -> Tuple[np.ndarray, List[str], List[str]]:
    """
    Drop linearly dependent columns, keeping the earliest ones.

    Args:
        matrix: Design matrix (n x k).
        names: Column names.
        tol: Relative tolerance on the R diagonal of the QR decomposition.

    Returns:
        (reduced matrix, kept names, dropped names)
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[1] == 0:
        return matrix, [], []
    kept: List[int] = []
    dropped: List[str] = []
    scale = max(np.abs(matrix).max(), 1.0)
    for column in range(matrix.shape[1]):
        candidate = kept + [column]
        r = linalg.qr(matrix[:, candidate], mode="r")[0]
        diagonal = np.abs(np.diag(r))
        if diagonal.size and diagonal[-1] > tol * scale * np.sqrt(matrix.shape[0]):
            kept.append(column)
        else:
            dropped.append(names[column])
    return matrix[:, kept], [names[k] for k in kept], dropped


def logsumexp_with_outside(utilities: np.ndarray) -> np.ndarray:
    """log(1 + sum_j exp(V_j)) along the last axis, computed stably."""
    top = np.maximum(utilities.max(axis=-1), 0.0)
    return top + np.log(np.exp(-top) + np.exp(utilities - top[..., None]).sum(axis=-1))


def softmax_with_outside(utilities: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Logit shares with an outside option of utility zero: (inside, outside)."""
    log_denominator = logsumexp_with_outside(utilities)
    inside = np.exp(utilities - log_denominator[..., None])
    outside = np.exp(-log_denominator)
    return inside, outside


def softmax(utilities: np.ndarray) -> np.ndarray:
    """Inside-good logit shares (conditional on purchase)."""
    shifted = utilities - utilities.max(axis=-1, keepdims=True)
    exponentials = np.exp(shifted)
    return exponentials / exponentials.sum(axis=-1, keepdims=True)
