"""The assembled network: encoders, cross-modal attention, label enhancement, fusion head.

Per-sample forward over variable-length sequences (no padding): the text
features run through the BiLSTM, the audio features through the affine
projection, each modality attends over the other, the label embeddings
enhance both (unless bypassed), and the gated fusion feeds the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from emofuse import autodiff as ad
from emofuse.attention import MhaParams, cross_modal_pair
from emofuse.autodiff import Tensor
from emofuse.encoders import BiLstmParams, ProjectionParams, bilstm_encode, mean_pool, project_audio
from emofuse.fusion import ClassifierParams, GateParams, classify, fuse, gate
from emofuse.labels import enhance, init_labels


@dataclass
class ForwardResult:
    fused: Tensor        # [d_model]
    logits: Tensor       # [n_classes]
    activations: dict | None = None

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.logits.data))


class Model:
    """Holds every parameter group; forward() runs one sample end to end.

    use_label_enhance toggles the label-query enhancement stage (off = the
    head consumes mean-pooled cross-attended sequences). use_label_anchors
    keeps the label-embedding matrix alive for the consistency loss even
    when enhancement is bypassed.
    """

    def __init__(self, text_dim: int, audio_dim: int, d_model: int, n_heads: int,
                 n_classes: int, seed: int, use_label_enhance: bool = True,
                 use_label_anchors: bool = True, ma_alpha: float = 0.99):
        if d_model % 2 != 0 or d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} must be even and divisible by n_heads {n_heads}")
        self.text_dim = text_dim
        self.audio_dim = audio_dim
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_classes = n_classes
        self.seed = int(seed)
        self.use_label_enhance = bool(use_label_enhance)
        self.use_label_anchors = bool(use_label_anchors)

        self.bilstm = BiLstmParams.init(text_dim, d_model, seed, "bilstm")
        self.audio_proj = ProjectionParams.init(audio_dim, d_model, seed, "audio_proj")
        self.cross_text = MhaParams.init(d_model, n_heads, seed, "cross.text_query")
        self.cross_audio = MhaParams.init(d_model, n_heads, seed, "cross.audio_query")
        if self.use_label_enhance:
            self.enhance_text = MhaParams.init(d_model, n_heads, seed, "enhance.text")
            self.enhance_audio = MhaParams.init(d_model, n_heads, seed, "enhance.audio")
        else:
            self.enhance_text = None
            self.enhance_audio = None
        if self.use_label_enhance or self.use_label_anchors:
            self.labels = init_labels(n_classes, d_model, self.seed, ma_alpha=ma_alpha)
        else:
            self.labels = None
        self.gate = GateParams.init(d_model, seed, "gate")
        self.classifier = ClassifierParams.init(d_model, n_classes, seed, "classifier")

    def parameters(self):
        groups = [self.bilstm.parameters(), self.audio_proj.parameters(),
                  self.cross_text.parameters(), self.cross_audio.parameters()]
        if self.enhance_text is not None:
            groups.append(self.enhance_text.parameters())
            groups.append(self.enhance_audio.parameters())
        if self.labels is not None:
            groups.append([self.labels.emb])
        groups.append(self.gate.parameters())
        groups.append(self.classifier.parameters())
        return [p for g in groups for p in g]

    def forward(self, text_feats: np.ndarray, audio_feats: np.ndarray,
                collect_activations: bool = False) -> ForwardResult:
        text_seq = bilstm_encode(np.asarray(text_feats, dtype=np.float32), self.bilstm)
        audio_seq = project_audio(Tensor(np.asarray(audio_feats, dtype=np.float32)), self.audio_proj)
        assert text_seq.shape[1] == self.d_model and audio_seq.shape[1] == self.d_model
        text_cross, audio_cross = cross_modal_pair(text_seq, audio_seq, self.cross_text, self.cross_audio)
        if self.use_label_enhance:
            text_vec = enhance(self.labels, text_cross, text_seq, self.enhance_text)
            audio_vec = enhance(self.labels, audio_cross, audio_seq, self.enhance_audio)
        else:
            text_vec = mean_pool(text_cross)
            audio_vec = mean_pool(audio_cross)
        g_audio, g_text = gate(audio_vec, text_vec, self.gate)
        fused = fuse(audio_vec, text_vec, g_audio, g_text)
        logits, _ = classify(fused, self.classifier)

        activations = None
        if collect_activations:
            activations = {
                "text_seq": text_seq.numpy(),
                "audio_seq": audio_seq.numpy(),
                "text_cross": text_cross.numpy(),
                "audio_cross": audio_cross.numpy(),
                "text_vec": text_vec.numpy(),
                "audio_vec": audio_vec.numpy(),
                "gate": np.array([g_audio.item(), g_text.item()]),
                "fused": fused.numpy(),
                "logits": logits.numpy(),
            }
        return ForwardResult(fused=fused, logits=logits, activations=activations)

    def end_epoch(self, apply_ma: bool = True):
        if self.labels is not None:
            self.labels.end_epoch(apply_ma=apply_ma)

    def meta(self) -> dict:
        return {
            "text_dim": self.text_dim,
            "audio_dim": self.audio_dim,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "use_label_enhance": self.use_label_enhance,
            "use_label_anchors": self.use_label_anchors,
            "ma_alpha": self.labels.ma_alpha if self.labels is not None else 0.99,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "Model":
        return cls(
            text_dim=int(meta["text_dim"]),
            audio_dim=int(meta["audio_dim"]),
            d_model=int(meta["d_model"]),
            n_heads=int(meta["n_heads"]),
            n_classes=int(meta["n_classes"]),
            seed=int(meta["seed"]),
            use_label_enhance=bool(meta["use_label_enhance"]),
            use_label_anchors=bool(meta["use_label_anchors"]),
            ma_alpha=float(meta["ma_alpha"]),
        )
