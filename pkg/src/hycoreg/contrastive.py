"""Radius-paired contrastive and regression losses.

For 2N views (N anchors and their augmented twins), view j is a positive
of view i when the labels are within an l2 ball of radius r; the twin is
always a positive. The contrastive term is a cross-entropy over cosine
similarities at temperature tau, with the denominator running over
negatives only (views outside the ball, self excluded) and a 1/N overall
normalization; both choices can be flipped by flags for comparison with
the standard formulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateBatchError, ParameterError, ShapeError


@dataclass(frozen=True)
class ContrastiveConfig:
    radius: float = 0.1
    temperature: float = 0.1
    weight: float = 1.0
    per_positive_normalization: bool = False
    include_positives_in_denominator: bool = False

    def __post_init__(self):
        if self.radius < 0:
            raise ParameterError("radius must be non-negative")
        if self.temperature <= 0:
            raise ParameterError("temperature must be positive")
        if self.weight < 0:
            raise ParameterError("loss weight must be non-negative")


@dataclass(frozen=True)
class PositiveSets:
    """Boolean membership mask: mask[i, j] is True when j is a positive of i."""

    mask: np.ndarray
    pairs: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        pairs = np.asarray(self.pairs, dtype=np.intp)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pairs", pairs)
        n = mask.shape[0]
        if mask.shape != (n, n) or n % 2 != 0:
            raise ShapeError("positive mask must be square with even side")
        if pairs.shape != (n,) or np.any(pairs[pairs] != np.arange(n)):
            raise ShapeError("pair map must be a perfect matching")
        if np.any(np.diag(mask)):
            raise ShapeError("a view cannot be its own positive")
        if not mask[np.arange(n), pairs].all():
            raise ShapeError("the paired view must always be a positive")

    @property
    def count(self) -> int:
        return self.mask.shape[0]


def twin_pair_map(n_anchors: int) -> np.ndarray:
    """Pair map for the layout [anchor_0..anchor_{N-1}, twin_0..twin_{N-1}]."""
    idx = np.arange(2 * n_anchors)
    return np.where(idx < n_anchors, idx + n_anchors, idx - n_anchors)


def build_positive_sets(labels: np.ndarray, pairs: np.ndarray, radius: float) -> PositiveSets:
    """B_i = {j != i : ||y_i - y_j||_2 <= r} plus i's paired view."""
    if radius < 0:
        raise ParameterError("radius must be non-negative")
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2:
        raise ShapeError(f"labels must be (2N, s), got {y.shape}")
    n = y.shape[0]
    diff = y[:, None, :] - y[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    mask = dist <= radius
    np.fill_diagonal(mask, False)
    mask[np.arange(n), np.asarray(pairs, dtype=np.intp)] = True
    return PositiveSets(mask=mask, pairs=pairs)


def cosine_similarity_matrix(features: Tensor) -> Tensor:
    """Pairwise cosine similarities of feature rows; zero-norm rows are rejected."""
    norms_sq = ad.tensor_sum(features * features, axis=1, keepdims=True)
    if np.any(norms_sq.data <= 0):
        raise ParameterError("feature rows must have non-zero norm for cosine similarity")
    normalized = features / ad.sqrt(norms_sq)
    return ad.matmul(normalized, ad.transpose(normalized))


def contrastive_loss(
    features: Tensor | np.ndarray,
    positives: PositiveSets,
    temperature: float,
    per_positive_normalization: bool = False,
    include_positives_in_denominator: bool = False,
) -> Tensor:
    """Cross-entropy contrastive loss over cosine similarities.

    Anchors with no negative under the chosen denominator rule are
    skipped; if every anchor is skipped the batch is degenerate.
    """
    if temperature <= 0:
        raise ParameterError("temperature must be positive")
    f = features if isinstance(features, Tensor) else Tensor(features)
    n2 = f.data.shape[0]
    if positives.count != n2:
        raise ShapeError(f"positive sets cover {positives.count} views, features have {n2}")
    n_anchors = n2 // 2

    pos = positives.mask
    eye = np.eye(n2, dtype=bool)
    if include_positives_in_denominator:
        denom_mask = ~eye
    else:
        denom_mask = ~pos & ~eye
    usable = denom_mask.any(axis=1) & pos.any(axis=1)
    if not usable.any():
        raise DegenerateBatchError("no anchor has both a positive and a negative")

    pos_eff = pos & usable[:, None]
    denom_eff = denom_mask & usable[:, None]

    sim = cosine_similarity_matrix(f) * (1.0 / temperature)

    # per-row shift keeps exp() in range; excluded entries are pushed to
    # -1e9 before exp (underflows to exactly 0, no inf*0); rows without
    # negatives get a dummy +1 inside the log and are dropped downstream
    shift = np.where(usable, np.max(np.where(denom_eff, sim.data, -np.inf), axis=1, initial=-np.inf), 0.0)
    denom_f = denom_eff.astype(f.data.dtype)
    logits = (sim - shift[:, None]) * denom_f + (denom_f - 1.0) * 1e9
    denom_sum = ad.tensor_sum(ad.exp(logits), axis=1) + (~usable).astype(f.data.dtype)
    log_denoms = ad.log(denom_sum) + shift

    pos_counts = pos_eff.sum(axis=1).astype(f.data.dtype)
    if per_positive_normalization:
        weights = np.divide(1.0, pos_counts, out=np.zeros_like(pos_counts), where=pos_counts > 0)
    else:
        weights = np.ones_like(pos_counts)

    numerator = ad.tensor_sum(sim * (pos_eff.astype(f.data.dtype) * weights[:, None]))
    denominator = ad.tensor_sum(log_denoms * (weights * pos_counts))
    return (denominator - numerator) * (1.0 / n_anchors)


def regression_loss(predictions: Tensor | np.ndarray, labels: np.ndarray) -> Tensor:
    """Mean over the batch of squared l2 label errors."""
    p = predictions if isinstance(predictions, Tensor) else Tensor(predictions)
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=p.data.dtype)
    if p.data.shape != y.shape:
        raise ShapeError(f"predictions {p.data.shape} and labels {y.shape} differ")
    diff = p - Tensor(y.astype(p.data.dtype))
    return ad.tensor_sum(diff * diff) * (1.0 / p.data.shape[0])


def total_loss(reg: Tensor, con: Tensor | None, alpha: float) -> Tensor:
    """Joint objective: regression + alpha * contrastive."""
    if alpha < 0:
        raise ParameterError("alpha must be non-negative")
    if con is None or alpha == 0:
        return reg
    return reg + con * alpha
