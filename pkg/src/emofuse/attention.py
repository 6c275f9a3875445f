"""Multi-head scaled dot-product attention and the bidirectional cross-modal pass."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from emofuse import autodiff as ad
from emofuse.autodiff import Parameter, ShapeError, Tensor
from emofuse.init import glorot_uniform


@dataclass
class MhaParams:
    """Projection matrices for one attention block. All square [d_model, d_model]."""

    w_q: Parameter
    w_k: Parameter
    w_v: Parameter
    w_o: Parameter
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for w in (self.w_q, self.w_k, self.w_v, self.w_o):
            if w.shape != (d, d):
                raise ShapeError(f"attention projections must all be [{d}, {d}], got {w.shape}")
        if self.n_heads < 1 or d % self.n_heads != 0:
            raise ShapeError(f"d_model {d} not divisible by n_heads {self.n_heads}")

    @property
    def d_model(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def init(cls, d_model: int, n_heads: int, seed, prefix: str) -> "MhaParams":
        return cls(
            w_q=Parameter(glorot_uniform((d_model, d_model), seed, f"{prefix}.w_q"), f"{prefix}.w_q"),
            w_k=Parameter(glorot_uniform((d_model, d_model), seed, f"{prefix}.w_k"), f"{prefix}.w_k"),
            w_v=Parameter(glorot_uniform((d_model, d_model), seed, f"{prefix}.w_v"), f"{prefix}.w_v"),
            w_o=Parameter(glorot_uniform((d_model, d_model), seed, f"{prefix}.w_o"), f"{prefix}.w_o"),
            n_heads=n_heads,
        )

    def parameters(self):
        return [self.w_q, self.w_k, self.w_v, self.w_o]


def mha(q_in: Tensor, k_in: Tensor, v_in: Tensor, params: MhaParams, return_weights: bool = False):
    """Attention(q_in, k_in, v_in): softmax(Q Kᵀ / sqrt(head_dim)) V per head, heads concatenated, then output-projected.

    Returns [q, d_model]; with return_weights=True also a [n_heads, q, k] array
    of detached attention weights.
    """
    d = params.d_model
    for name, t in (("query", q_in), ("key", k_in), ("value", v_in)):
        if t.data.ndim != 2 or t.shape[1] != d:
            raise ShapeError(f"mha: {name} must be [*, {d}], got {t.shape}")
    if k_in.shape[0] != v_in.shape[0]:
        raise ShapeError(f"mha: key/value lengths differ ({k_in.shape} vs {v_in.shape})")

    q = ad.matmul(q_in, params.w_q)
    k = ad.matmul(k_in, params.w_k)
    v = ad.matmul(v_in, params.w_v)

    hd = params.head_dim
    inv_scale = 1.0 / math.sqrt(hd)
    head_outs = []
    weights = [] if return_weights else None
    for h in range(params.n_heads):
        j0, j1 = h * hd, (h + 1) * hd
        qh = ad.slice_cols(q, j0, j1)
        kh = ad.slice_cols(k, j0, j1)
        vh = ad.slice_cols(v, j0, j1)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_scale)
        attn = ad.softmax(scores, axis=1)
        if weights is not None:
            weights.append(attn.numpy())
        head_outs.append(ad.matmul(attn, vh))
    out = ad.matmul(ad.concat_cols(head_outs), params.w_o)
    if return_weights:
        return out, np.stack(weights, axis=0)
    return out


def cross_modal_pair(text_seq: Tensor, audio_seq: Tensor, params_text: MhaParams, params_audio: MhaParams):
    """Each modality attends over the other: text queries audio and vice versa.

    Output lengths preserve each query sequence's length.
    """
    text_enriched = mha(text_seq, audio_seq, audio_seq, params_text)
    audio_enriched = mha(audio_seq, text_seq, text_seq, params_audio)
    return text_enriched, audio_enriched
