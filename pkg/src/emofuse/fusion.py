"""Gated fusion of the two modality vectors and the MLP classification head.

A two-way softmax over the concatenated modality vectors yields scalar
weights (one per modality) whose convex combination is the fused feature;
a one-hidden-layer MLP maps it to class logits.
"""

from __future__ import annotations

from dataclasses import dataclass

from emofuse import autodiff as ad
from emofuse.autodiff import Parameter, ShapeError, Tensor
from emofuse.init import glorot_uniform, zeros


@dataclass
class GateParams:
    w: Parameter   # [2 * d_model, 2]
    b: Parameter   # [2]

    @classmethod
    def init(cls, d_model: int, seed, prefix: str = "gate") -> "GateParams":
        return cls(
            w=Parameter(glorot_uniform((2 * d_model, 2), seed, f"{prefix}.w"), f"{prefix}.w"),
            b=Parameter(zeros(2), f"{prefix}.b"),
        )

    @property
    def d_model(self) -> int:
        return self.w.shape[0] // 2

    def parameters(self):
        return [self.w, self.b]


@dataclass
class ClassifierParams:
    w1: Parameter  # [d_model, d_hidden]
    b1: Parameter
    w2: Parameter  # [d_hidden, n_classes]
    b2: Parameter

    @classmethod
    def init(cls, d_model: int, n_classes: int, seed, prefix: str = "classifier") -> "ClassifierParams":
        # hidden width equals d_model
        return cls(
            w1=Parameter(glorot_uniform((d_model, d_model), seed, f"{prefix}.w1"), f"{prefix}.w1"),
            b1=Parameter(zeros(d_model), f"{prefix}.b1"),
            w2=Parameter(glorot_uniform((d_model, n_classes), seed, f"{prefix}.w2"), f"{prefix}.w2"),
            b2=Parameter(zeros(n_classes), f"{prefix}.b2"),
        )

    @property
    def n_classes(self) -> int:
        return self.w2.shape[1]

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def gate(audio_vec: Tensor, text_vec: Tensor, params: GateParams):
    """Softmax over an affine map of concat(audio, text); returns scalar weights (g_audio, g_text)."""
    d = params.d_model
    if audio_vec.shape != (d,) or text_vec.shape != (d,):
        raise ShapeError(f"gate: expected two [{d}] vectors, got {audio_vec.shape} and {text_vec.shape}")
    cat = ad.concat_vec([audio_vec, text_vec])
    logits = ad.add(ad.vecmat(cat, params.w), params.b)
    weights = ad.softmax(logits, axis=0)
    return ad.element(weights, 0), ad.element(weights, 1)


def fuse(audio_vec: Tensor, text_vec: Tensor, g_audio: Tensor, g_text: Tensor) -> Tensor:
    """Convex combination g_audio * audio + g_text * text with scalar gates."""
    if audio_vec.shape != text_vec.shape:
        raise ShapeError(f"fuse: shapes {audio_vec.shape} and {text_vec.shape} differ")
    return ad.add(ad.scale_t(audio_vec, g_audio), ad.scale_t(text_vec, g_text))


def classify(fused: Tensor, params: ClassifierParams):
    """Two-layer MLP with a rectifier; returns (logits, probabilities)."""
    if fused.shape != (params.w1.shape[0],):
        raise ShapeError(f"classify: expected [{params.w1.shape[0]}] vector, got {fused.shape}")
    hidden = ad.relu(ad.add(ad.vecmat(fused, params.w1), params.b1))
    logits = ad.add(ad.vecmat(hidden, params.w2), params.b2)
    return logits, ad.softmax(logits, axis=0)
