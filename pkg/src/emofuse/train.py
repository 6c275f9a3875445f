"""Training/evaluation driver: epoch loop, ablation switches, checkpointing.

Mini-batches are built by looping single samples; the batch loss is the mean
of per-sample terms, so gradients are batch-averaged. The consistency term is
dropped entirely under disable_joo (logged as exactly 0), label enhancement is
bypassed under disable_lsma, and disable_ma carries the post-epoch label
embeddings over verbatim instead of blending them toward the epoch snapshot.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from emofuse import autodiff as ad
from emofuse.autodiff import Tape
from emofuse.data import Dataset
from emofuse.losses import LossBreakdown, apc_loss, cross_entropy, total_loss
from emofuse.metrics import MetricsReport, compute_metrics
from emofuse.model import Model
from emofuse.optim import AdamW

SHUFFLE_STREAM = 0x53484652  # rng stream tag for epoch shuffles, distinct from parameter-init streams

PROFILES = {"four_class": 0.05, "seven_class": 0.1}


class EmptySplitError(ValueError):
    """The requested split holds no samples."""


class TrainingDivergedError(RuntimeError):
    """The loss became non-finite."""


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 50
    ce_weight: float = 1.0
    apc_weight: float = 0.05
    ma_alpha: float = 0.99
    d_model: int = 256
    n_heads: int = 4
    seed: int = 0
    batch_size: int = 16
    disable_ma: bool = False
    disable_joo: bool = False
    disable_lsma: bool = False
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    profile: str | None = None

    def __post_init__(self):
        for name in ("learning_rate", "ma_alpha", "adam_beta1", "adam_beta2", "adam_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.profile is not None and self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}, expected one of {sorted(PROFILES)}")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "profile" in raw and "apc_weight" not in raw:
            raw["apc_weight"] = PROFILES[raw["profile"]]
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Model
    optimizer: AdamW
    history: list = field(default_factory=list)
    checkpoint_path: str | None = None


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence((int(seed), SHUFFLE_STREAM, int(epoch)))).permutation(n)


def build_model(cfg: TrainConfig, dataset: Dataset) -> Model:
    return Model(
        text_dim=dataset.text_dim,
        audio_dim=dataset.audio_dim,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        n_classes=dataset.n_classes,
        seed=cfg.seed,
        use_label_enhance=not cfg.disable_lsma,
        use_label_anchors=not cfg.disable_joo,
        ma_alpha=cfg.ma_alpha,
    )


def train_step(model: Model, cfg: TrainConfig, optimizer: AdamW, batch, epoch: int, step: int):
    """One optimizer step over a list of samples; returns (LossBreakdown, predictions)."""
    optimizer.zero_grad()
    preds = []
    with Tape() as tape:
        logit_rows, fused_rows, ys = [], [], []
        for sample in batch:
            result = model.forward(sample.text, sample.audio)
            logit_rows.append(result.logits)
            fused_rows.append(result.fused)
            ys.append(sample.label)
            preds.append(result.predicted)
        logits_batch = ad.stack_rows(logit_rows)
        ce = cross_entropy(logits_batch, ys)
        if cfg.disable_joo:
            apc_value = 0.0
            total = ad.scale(ce, cfg.ce_weight)
        else:
            p_batch = ad.softmax(logits_batch, axis=1)
            fused_batch = ad.stack_rows(fused_rows)
            apc = apc_loss(fused_batch, model.labels.emb, p_batch)
            apc_value = apc.item()
            total = total_loss(ce, apc, cfg.ce_weight, cfg.apc_weight)
        if not np.isfinite(total.data):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
        tape.backward(total)
    optimizer.step()
    breakdown = LossBreakdown.make(ce.item(), apc_value, cfg.ce_weight,
                                   0.0 if cfg.disable_joo else cfg.apc_weight)
    return breakdown, preds


def train(cfg: TrainConfig, dataset: Dataset, out_dir=None, resume_from=None, log_fn=None) -> TrainResult:
    samples = dataset.split("train")
    if not samples:
        raise EmptySplitError("train split is empty")

    if resume_from is not None:
        model, optimizer, start_epoch, _ = load_checkpoint(resume_from)
    else:
        model = build_model(cfg, dataset)
        optimizer = AdamW(model.parameters(), lr=cfg.learning_rate, beta1=cfg.adam_beta1,
                          beta2=cfg.adam_beta2, eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
        start_epoch = 0

    history = []
    for epoch in range(start_epoch, cfg.epochs):
        order = _epoch_order(cfg.seed, epoch, len(samples))
        ce_sum, apc_sum, seen, correct = 0.0, 0.0, 0, 0
        for step, lo in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [samples[i] for i in order[lo:lo + cfg.batch_size]]
            breakdown, preds = train_step(model, cfg, optimizer, batch, epoch, step)
            ce_sum += breakdown.ce * len(batch)
            apc_sum += breakdown.apc * len(batch)
            correct += sum(int(p == s.label) for p, s in zip(preds, batch))
            seen += len(batch)
        model.end_epoch(apply_ma=not cfg.disable_ma)
        row = {
            "epoch": epoch,
            "ce": ce_sum / seen,
            "apc": apc_sum / seen,
            "train_wa": correct / seen,
        }
        history.append(row)
        if log_fn is not None:
            log_fn(f"epoch={row['epoch']} ce={row['ce']:.6f} apc={row['apc']:.6f} train_wa={row['train_wa']:.4f}")

    checkpoint_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "checkpoint.lsgc")
        save_checkpoint(checkpoint_path, model, optimizer, cfg.epochs, cfg.to_dict())
        with open(os.path.join(out_dir, "train_log.txt"), "w", encoding="utf-8") as fh:
            for row in history:
                fh.write(f"epoch={row['epoch']} ce={row['ce']:.6f} apc={row['apc']:.6f} "
                         f"train_wa={row['train_wa']:.4f}\n")
    return TrainResult(model=model, optimizer=optimizer, history=history, checkpoint_path=checkpoint_path)


def predict(model: Model, samples):
    return [model.forward(s.text, s.audio).predicted for s in samples]


def evaluate(model: Model, dataset: Dataset, split: str = "test") -> MetricsReport:
    samples = dataset.split(split)
    if not samples:
        raise EmptySplitError(f"{split} split is empty")
    if dataset.n_classes != model.n_classes:
        raise ValueError(
            f"class-count mismatch: checkpoint has {model.n_classes}, manifest has {dataset.n_classes}"
        )
    preds = predict(model, samples)
    return compute_metrics([s.label for s in samples], preds, dataset.class_names)


# ---------------------------------------------------------------------------
# checkpoints

CKPT_MAGIC = b"LSGC"
CKPT_VERSION = 1


def save_checkpoint(path, model: Model, optimizer: AdamW, epoch: int, config: dict):
    params = model.parameters()
    meta = {
        "version": CKPT_VERSION,
        "epoch": int(epoch),
        "config": config,
        "model": model.meta(),
        "adam": {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay,
        },
        "params": [{"name": p.name, "shape": list(p.data.shape)} for p in params],
        "has_label_snapshot": model.labels is not None,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p, m, v in zip(params, optimizer.m, optimizer.v):
            for arr in (p.data, m, v):
                fh.write(arr.astype("<f4", copy=False).tobytes())
        if model.labels is not None:
            fh.write(model.labels.snapshot.astype("<f4", copy=False).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        if meta["version"] != CKPT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        model = Model.from_meta(meta["model"])
        params = model.parameters()
        declared = [(d["name"], tuple(d["shape"])) for d in meta["params"]]
        actual = [(p.name, p.data.shape) for p in params]
        if declared != actual:
            raise ValueError("checkpoint parameter layout does not match the rebuilt model")
        adam = meta["adam"]
        optimizer = AdamW(params, lr=adam["lr"], beta1=adam["beta1"], beta2=adam["beta2"],
                          eps=adam["eps"], weight_decay=adam["weight_decay"])
        optimizer.t = int(adam["t"])

        def read_array(shape):
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise ValueError("checkpoint truncated")
            return np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(shape)

        for i, p in enumerate(params):
            p.data[...] = read_array(p.data.shape)
            optimizer.m[i][...] = read_array(p.data.shape)
            optimizer.v[i][...] = read_array(p.data.shape)
        if meta["has_label_snapshot"]:
            model.labels.snapshot = read_array(model.labels.emb.data.shape)
    return model, optimizer, int(meta["epoch"]), meta["config"]
