"""Cross-entropy and supervised contrastive objectives on event-level vectors.

Both contrastive losses work on a similarity matrix ``S = cos(anchors, refs) / tau``.
For anchor ``i`` with positive set ``P_i`` and denominator set ``K_i``::

    loss_i = logsumexp_{k in K_i} S_ik - mean_{j in P_i} S_ij

which is the average of ``-log softmax`` over the positives. Anchors with an
empty ``P_i`` contribute zero but still count in the batch average.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor, add, cosine_matrix, cross_entropy, record, scale


class LossContractError(ValueError):
    pass


def ce_batch(logits: Tensor, labels: Sequence[int]) -> Tensor:
    if logits.shape[0] == 0 or len(labels) == 0:
        raise LossContractError("cross-entropy of an empty batch")
    return cross_entropy(logits, labels)


def positive_mask(anchor_labels: Sequence[int], ref_labels: Sequence[int],
                  exclude_self: bool) -> np.ndarray:
    ya = np.asarray(anchor_labels).reshape(-1, 1)
    yr = np.asarray(ref_labels).reshape(1, -1)
    pos = ya == yr
    if exclude_self:
        np.fill_diagonal(pos, False)
    return pos


def has_positives(anchor_labels, ref_labels, exclude_self: bool) -> bool:
    return bool(positive_mask(anchor_labels, ref_labels, exclude_self).any())


def _contrastive_nll(S: Tensor, pos: np.ndarray, denom: np.ndarray) -> Tensor:
    s = S.data
    n = s.shape[0]
    active = pos.any(axis=1)
    n_pos = np.maximum(pos.sum(axis=1), 1)
    masked = np.where(denom, s, -np.inf)
    m = masked.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(denom, np.exp(masked - m), 0.0)
    z = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.where(z[:, 0] > 0, z[:, 0], 1.0))
    pos_mean = np.where(pos, s, 0.0).sum(axis=1) / n_pos
    per_anchor = np.where(active, lse - pos_mean, 0.0)
    value = np.array([[math.fsum(per_anchor) / n]])

    def back(g):
        soft = e / np.where(z > 0, z, 1.0)
        grad = (soft - pos / n_pos[:, None]) * active[:, None]
        return (grad * (g[0, 0] / n),)

    return record(value, (S,), back)


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise LossContractError(f"temperature must be positive, got {tau}")


def scl_source(reprs: Tensor, labels: Sequence[int], tau: float = 0.1) -> Tensor:
    """Supervised contrastive loss within one batch (self-pairs excluded)."""
    _check_tau(tau)
    n = reprs.shape[0]
    if n == 0 or len(labels) != n:
        raise LossContractError(f"{len(labels)} labels for {n} representations")
    S = scale(cosine_matrix(reprs, reprs), 1.0 / tau)
    pos = positive_mask(labels, labels, exclude_self=True)
    denom = ~np.eye(n, dtype=bool)
    return _contrastive_nll(S, pos, denom)


def scl_target(target: Tensor, target_labels: Sequence[int], source: Tensor,
               source_labels: Sequence[int], tau: float = 0.1) -> Tensor:
    """Contrastive loss with target anchors and source references only."""
    _check_tau(tau)
    nt, ns = target.shape[0], source.shape[0]
    if nt == 0 or ns == 0:
        raise LossContractError("scl_target needs nonempty target and source batches")
    if len(target_labels) != nt or len(source_labels) != ns:
        raise LossContractError("label counts do not match representation rows")
    S = scale(cosine_matrix(target, source), 1.0 / tau)
    pos = positive_mask(target_labels, source_labels, exclude_self=False)
    denom = np.ones((nt, ns), dtype=bool)
    return _contrastive_nll(S, pos, denom)


def joint_loss(ce: Tensor, scl: Tensor, alpha: float = 0.5) -> Tensor:
    """``(1 - alpha) * ce + alpha * scl``."""
    if not 0.0 <= alpha <= 1.0:
        raise LossContractError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return ce
    if alpha == 1.0:
        return scl
    return add(scale(ce, 1.0 - alpha), scale(scl, alpha))
