"""Training objective: cross-entropy plus a similarity-consistency term.

The consistency term (weighted by apc_weight) pushes the softmax over
cosine similarities between each fused feature and the label-embedding rows
toward the classifier's predicted distribution, measured with the
Jensen-Shannon divergence. Natural logs throughout, so the divergence lies
in [0, ln 2]. Gradients flow through both distributions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emofuse import autodiff as ad
from emofuse.autodiff import LOG_FLOOR, ShapeError, Tensor

LN2 = float(np.log(2.0))


class DegenerateVectorError(ValueError):
    """Cosine similarity requested against a vector with near-zero norm."""


class DistributionError(ValueError):
    """An input that must be a probability simplex is not one."""


@dataclass
class LossBreakdown:
    ce: float
    apc: float
    total: float
    ce_weight: float
    apc_weight: float

    @classmethod
    def make(cls, ce: float, apc: float, ce_weight: float, apc_weight: float) -> "LossBreakdown":
        return cls(ce=ce, apc=apc, total=ce_weight * ce + apc_weight * apc,
                   ce_weight=ce_weight, apc_weight=apc_weight)


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    """dot(u, v) / (|u| |v|), differentiable in both arguments."""
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_sim: expected two equal-length vectors, got {u.shape} and {v.shape}")
    for name, t in (("first", u), ("second", v)):
        if float(np.linalg.norm(t.data.astype(np.float64))) < 1e-12:
            raise DegenerateVectorError(f"cosine_sim: {name} vector has near-zero norm")
    nu = ad.sqrt(ad.dot(u, u))
    nv = ad.sqrt(ad.dot(v, v))
    return ad.div(ad.dot(u, v), ad.clip_min(ad.mul(nu, nv), LOG_FLOOR))


def similarity_dist(h: Tensor, label_rows: Tensor) -> Tensor:
    """Softmax over cosine similarities between h and each label-embedding row."""
    if label_rows.data.ndim != 2:
        raise ShapeError(f"similarity_dist: expected [n_classes, d] anchors, got {label_rows.shape}")
    n = label_rows.shape[0]
    if n < 2:
        raise ShapeError(f"similarity_dist: need at least 2 anchor rows, got {n}")
    sims = ad.stack_scalars([cosine_sim(h, ad.row(label_rows, j)) for j in range(n)])
    return ad.softmax(sims, axis=0)


def _check_simplex(t: Tensor, name: str):
    d = t.data
    if d.ndim != 1:
        raise ShapeError(f"js_div: {name} must be a vector, got shape {d.shape}")
    if np.any(d < -1e-9) or abs(float(d.sum(dtype=np.float64)) - 1.0) > 1e-6:
        raise DistributionError(f"js_div: {name} is not a probability simplex")


def js_div(q: Tensor, p: Tensor) -> Tensor:
    """Jensen-Shannon divergence between two simplex vectors (natural log).

    0 * ln(.) terms contribute zero; log arguments are floored at LOG_FLOOR,
    so disjoint supports are handled without NaNs.
    """
    _check_simplex(q, "q")
    _check_simplex(p, "p")
    if q.shape != p.shape:
        raise ShapeError(f"js_div: shapes {q.shape} and {p.shape} differ")
    mix = ad.clip_min(ad.add(q, p), LOG_FLOOR)

    def half_term(a):
        return ad.sum_all(ad.mul(a, ad.log(ad.div(ad.scale(a, 2.0), mix))))

    return ad.scale(ad.add(half_term(p), half_term(q)), 0.5)


def apc_loss(fused_batch: Tensor, label_rows: Tensor, p_batch: Tensor) -> Tensor:
    """Mean over the batch of js_div(similarity_dist(fused_i), p_i)."""
    if fused_batch.data.ndim != 2 or p_batch.data.ndim != 2:
        raise ShapeError("apc_loss: fused_batch and p_batch must be matrices")
    m = fused_batch.shape[0]
    if p_batch.shape[0] != m:
        raise ShapeError(f"apc_loss: batch sizes differ ({fused_batch.shape} vs {p_batch.shape})")
    if p_batch.shape[1] != label_rows.shape[0]:
        raise ShapeError(f"apc_loss: class counts differ ({p_batch.shape} vs {label_rows.shape})")
    total = None
    for i in range(m):
        term = js_div(similarity_dist(ad.row(fused_batch, i), label_rows), ad.row(p_batch, i))
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / m)


def cross_entropy(logits_batch: Tensor, class_ids) -> Tensor:
    """Mean negative log-probability of the true class, from logits via log-softmax."""
    if logits_batch.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected [batch, n_classes] logits, got {logits_batch.shape}")
    m, n = logits_batch.shape
    class_ids = list(class_ids)
    if len(class_ids) != m:
        raise ShapeError(f"cross_entropy: {len(class_ids)} labels for batch of {m}")
    for y in class_ids:
        if not 0 <= int(y) < n:
            raise IndexError(f"cross_entropy: class id {y} out of range for {n} classes")
    log_probs = ad.log_softmax(logits_batch, axis=1)
    total = None
    for i, y in enumerate(class_ids):
        picked = ad.element(ad.row(log_probs, i), int(y))
        total = picked if total is None else ad.add(total, picked)
    return ad.scale(total, -1.0 / m)


def total_loss(ce: Tensor, apc: Tensor, ce_weight: float, apc_weight: float) -> Tensor:
    if ce_weight < 0 or apc_weight < 0:
        raise ValueError(f"loss weights must be nonnegative, got {ce_weight}, {apc_weight}")
    return ad.add(ad.scale(ce, ce_weight), ad.scale(apc, apc_weight))
