"""Label-guided feature enhancement and moving-average smoothing of label embeddings.

One learnable embedding row per emotion class. The rows act as attention
queries over each modality's sequence (producing a class-aware summary whose
sigmoid gates the original features) and as cosine anchors for the
consistency objective. Between epochs the live rows are blended back toward
the epoch-start snapshot so the anchor set drifts smoothly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emofuse import autodiff as ad
from emofuse.attention import MhaParams, mha
from emofuse.autodiff import Parameter, ShapeError, Tensor
from emofuse.encoders import mean_pool
from emofuse.init import param_rng


@dataclass
class LabelEmbeddings:
    emb: Parameter                      # [n_classes, d_model]
    snapshot: np.ndarray                # value at the most recent epoch boundary
    ma_alpha: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.ma_alpha <= 1.0:
            raise ValueError(f"ma_alpha must lie in [0, 1], got {self.ma_alpha}")
        if self.snapshot.shape != self.emb.shape:
            raise ShapeError(f"snapshot shape {self.snapshot.shape} != embedding shape {self.emb.shape}")

    @property
    def n_classes(self) -> int:
        return self.emb.shape[0]

    @property
    def d_model(self) -> int:
        return self.emb.shape[1]

    def end_epoch(self, apply_ma: bool = True):
        """Blend the post-epoch rows toward the snapshot (or carry them over verbatim).

        The blended value becomes both the live embedding and the next snapshot.
        """
        if apply_ma:
            blended = ma_update(self.snapshot, self.emb.data, self.ma_alpha)
            self.emb.data[...] = blended
        self.snapshot = self.emb.data.copy()


INIT_STD = 0.02


def init_labels(n_classes: int, d_model: int, seed, ma_alpha: float = 0.99) -> LabelEmbeddings:
    """Random zero-mean Gaussian rows (std 0.02), snapshot equal to the initial value."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if d_model < 1:
        raise ValueError(f"d_model must be positive, got {d_model}")
    rng = param_rng(seed, "labels.emb") if isinstance(seed, int) else np.random.default_rng(seed)
    value = (rng.standard_normal(size=(n_classes, d_model)) * INIT_STD).astype(np.float32)
    return LabelEmbeddings(emb=Parameter(value, "labels.emb"), snapshot=value.copy(), ma_alpha=ma_alpha)


def enhance(labels: LabelEmbeddings, seq_enriched: Tensor, seq_original, att: MhaParams) -> Tensor:
    """Class-aware utterance vector for one modality.

    The label rows query the cross-enriched sequence; the attended rows are
    mean-pooled over the class axis into a summary h, whose sigmoid gates the
    time-pooled original sequence: sigmoid(h) * pooled_original + h.
    """
    attended = mha(labels.emb, seq_enriched, seq_enriched, att)   # [n_classes, d]
    summary = mean_pool(attended)
    pooled_orig = mean_pool(seq_original)
    gate = ad.sigmoid(summary)
    return ad.add(ad.mul(gate, pooled_orig), summary)


def ma_update(prev: np.ndarray, post: np.ndarray, alpha: float) -> np.ndarray:
    """Convex blend alpha * prev + (1 - alpha) * post."""
    prev = np.asarray(prev, dtype=np.float32)
    post = np.asarray(post, dtype=np.float32)
    if prev.shape != post.shape:
        raise ShapeError(f"ma_update: shapes {prev.shape} and {post.shape} differ")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return prev.copy()
    if alpha == 0.0:
        return post.copy()
    return (np.float32(alpha) * prev + np.float32(1.0 - alpha) * post).astype(np.float32)
