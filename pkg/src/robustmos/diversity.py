"""Router-diversity penalty over a mini-batch of mixture weights.

The batch of router distributions is stacked into a matrix whose Gram matrix
measures pairwise similarity between instances' expert assignments. Zeroing
the top values of each row (row-wise top dropout) tolerates groups of
instances sharing an expert; the Frobenius norm of what remains, normalized
into [0, 1], is the penalty. Minimizing it pushes different inputs toward
different experts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PenaltyComputation",
    "router_matrix",
    "top_value_keep_mask",
    "topl_dropout",
    "penalty",
    "penalty_gradient",
    "set_ell",
]

GRAD_FLOOR = 1e-12  # below this the Frobenius norm is nonsmooth; subgradient 0


def router_matrix(router_dists) -> np.ndarray:
    """Stack a batch of router distributions into a (num_experts, batch) matrix.

    Column m is the router output for instance m. Raises on inconsistent
    expert counts.
    """
    arr = np.asarray(router_dists, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("router distributions must all have the same expert count")
    return arr.T.copy()


def top_value_keep_mask(matrix: np.ndarray, ell: int) -> np.ndarray:
    """Binary mask that keeps everything except the ell largest values per row.

    Largest by signed value; ties broken toward the lowest column index
    (stable order). ell >= row length masks the whole row.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    mask = np.ones_like(a)
    if ell == 0:
        return mask
    ell = min(ell, a.shape[1])
    # stable argsort on the negated row: equal values keep original column order
    order = np.argsort(-a, axis=1, kind="stable")[:, :ell]
    rows = np.arange(a.shape[0])[:, None]
    mask[rows, order] = 0.0
    return mask


def topl_dropout(matrix: np.ndarray, ell: int) -> np.ndarray:
    """Zero the ell largest values in each row at their original positions."""
    a = np.asarray(matrix, dtype=np.float64)
    return a * top_value_keep_mask(a, ell)


@dataclass
class PenaltyComputation:
    """Every intermediate of one penalty evaluation (kept for the backward pass)."""

    pi: np.ndarray            # (num_experts, batch) router matrix
    gram: np.ndarray          # pi.T @ pi - I
    keep_mask: np.ndarray     # 1 = kept entry, 0 = dropped
    numerator: float          # frobenius norm of the masked gram
    denominator: float        # frobenius norm of the masked all-ones reference
    value: float              # numerator / denominator, in [0, 1]
    ell_effective: int        # dropout count after clamping to the batch size


def penalty(router_dists, ell: int) -> PenaltyComputation | None:
    """Normalized diversity penalty for one batch of router distributions.

    ``router_dists`` is a (batch, num_experts) array or a sequence of
    distributions. The dropout count is clamped to batch - 2 so the
    normalizer stays positive; batches smaller than 2 carry no pairwise
    similarity and return None (penalty absent).
    """
    pi = router_matrix(router_dists)
    batch = pi.shape[1]
    if batch < 2:
        return None
    ell_eff = int(min(max(ell, 0), batch - 2))
    gram = pi.T @ pi - np.eye(batch)
    keep = top_value_keep_mask(gram, ell_eff)
    numerator = float(np.linalg.norm(gram * keep))
    reference = np.ones((batch, batch)) - np.eye(batch)
    denominator = float(np.linalg.norm(topl_dropout(reference, ell_eff)))
    return PenaltyComputation(
        pi=pi,
        gram=gram,
        keep_mask=keep,
        numerator=numerator,
        denominator=denominator,
        value=numerator / denominator,
        ell_effective=ell_eff,
    )


def penalty_gradient(comp: PenaltyComputation) -> np.ndarray:
    """Gradient of the penalty value wrt each router distribution.

    Returns a (batch, num_experts) array. The dropout mask is treated as
    constant (max-pooling convention) and the normalizer does not depend on
    the parameters. At a vanishing numerator the norm is nonsmooth; the zero
    subgradient is returned.
    """
    batch = comp.pi.shape[1]
    if comp.numerator <= GRAD_FLOOR:
        return np.zeros((batch, comp.pi.shape[0]))
    # d||A||_F/dA = A/||A||_F with A = keep * gram; chain through gram = pi.T pi - I
    sensitivity = (comp.gram * comp.keep_mask) / (comp.numerator * comp.denominator)
    grad_pi = comp.pi @ (sensitivity + sensitivity.T)
    return grad_pi.T


def set_ell(batch_size: int, min_experts: int) -> int:
    """Smallest power of two ell with min_experts * ell >= batch_size."""
    if batch_size < 1 or min_experts < 1:
        raise ValueError("batch_size and min_experts must be positive")
    ell = 1
    while min_experts * ell < batch_size:
        ell *= 2
    return ell
