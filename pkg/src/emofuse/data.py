"""Dataset manifests over precomputed feature tensors, plus a synthetic generator.

A manifest is a tab-separated text file, one record per line:

    version <tab> 1
    dims    <tab> <text_dim> <tab> <audio_dim>
    classes <tab> <name> [<tab> <name> ...]
    sample  <tab> <id> <tab> <split> <tab> <label> <tab> <text_path> <tab> <audio_path> [<tab> <audio_path2>]

Paths are relative to the manifest's directory. Split tags are exactly
"train" and "test". When a record lists two audio paths the streams are
summed elementwise at load time; producing pre-aligned equal-width streams
is the feature exporter's responsibility.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from emofuse.tensorfile import read_tensor, write_tensor

MANIFEST_VERSION = 1
SPLITS = ("train", "test")
DEFAULT_TEXT_DIM = 768
DEFAULT_AUDIO_DIM = 1024


class ManifestError(ValueError):
    """Manifest parse or validation failure."""


@dataclass
class Sample:
    sample_id: str
    text: np.ndarray    # [n, text_dim]
    audio: np.ndarray   # [m, audio_dim], streams already summed
    label: int


@dataclass
class Dataset:
    class_names: list
    text_dim: int
    audio_dim: int
    samples: dict = field(default_factory=dict)   # split -> list[Sample]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split(self, tag: str):
        if tag not in SPLITS:
            raise ManifestError(f"unknown split {tag!r}, expected one of {SPLITS}")
        return self.samples.get(tag, [])


def write_manifest(path, class_names, records, text_dim=DEFAULT_TEXT_DIM, audio_dim=DEFAULT_AUDIO_DIM):
    """records: iterable of (sample_id, split, label, text_relpath, [audio_relpaths])."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"version\t{MANIFEST_VERSION}\n")
        fh.write(f"dims\t{text_dim}\t{audio_dim}\n")
        fh.write("classes\t" + "\t".join(class_names) + "\n")
        for sample_id, split, label, text_path, audio_paths in records:
            fields = ["sample", sample_id, split, str(label), text_path, *audio_paths]
            fh.write("\t".join(fields) + "\n")


def load_dataset(manifest_path) -> Dataset:
    base = os.path.dirname(os.path.abspath(manifest_path))
    version = None
    class_names = None
    text_dim, audio_dim = DEFAULT_TEXT_DIM, DEFAULT_AUDIO_DIM
    dataset = None
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            kind = fields[0]
            if kind == "version":
                version = int(fields[1])
                if version != MANIFEST_VERSION:
                    raise ManifestError(f"line {lineno}: unsupported manifest version {version}")
            elif kind == "dims":
                if len(fields) != 3:
                    raise ManifestError(f"line {lineno}: dims expects two integers")
                text_dim, audio_dim = int(fields[1]), int(fields[2])
            elif kind == "classes":
                class_names = fields[1:]
                if len(class_names) < 2:
                    raise ManifestError(f"line {lineno}: need at least 2 classes")
            elif kind == "sample":
                if version is None or class_names is None:
                    raise ManifestError(f"line {lineno}: sample record before version/classes header")
                if dataset is None:
                    dataset = Dataset(class_names=class_names, text_dim=text_dim, audio_dim=audio_dim)
                _load_sample(dataset, fields, base, lineno)
            else:
                raise ManifestError(f"line {lineno}: unknown record type {kind!r}")
    if version is None or class_names is None:
        raise ManifestError("manifest missing version/classes header")
    if dataset is None:
        dataset = Dataset(class_names=class_names, text_dim=text_dim, audio_dim=audio_dim)
    return dataset


def _load_sample(dataset: Dataset, fields, base, lineno):
    if len(fields) not in (6, 7):
        raise ManifestError(f"line {lineno}: sample record has {len(fields)} fields, expected 6 or 7")
    _, sample_id, split, label_str, text_path = fields[:5]
    audio_paths = fields[5:]
    if split not in SPLITS:
        raise ManifestError(f"line {lineno}: unknown split {split!r}")
    label = int(label_str)
    if not 0 <= label < dataset.n_classes:
        raise ManifestError(f"line {lineno}: label {label} out of range for {dataset.n_classes} classes")

    def load(rel, expect_cols, what):
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise ManifestError(f"line {lineno}: missing file {rel}")
        arr = read_tensor(full)
        if arr.ndim != 2 or arr.shape[1] != expect_cols or arr.shape[0] < 1:
            raise ManifestError(
                f"line {lineno}: {what} tensor {rel} has shape {arr.shape}, expected [n>=1, {expect_cols}]"
            )
        return arr

    text = load(text_path, dataset.text_dim, "text")
    audio = load(audio_paths[0], dataset.audio_dim, "audio")
    if len(audio_paths) == 2:
        second = load(audio_paths[1], dataset.audio_dim, "audio")
        if second.shape != audio.shape:
            raise ManifestError(
                f"line {lineno}: audio streams disagree in shape ({audio.shape} vs {second.shape})"
            )
        audio = audio + second
    dataset.samples.setdefault(split, []).append(
        Sample(sample_id=sample_id, text=text, audio=audio, label=label)
    )


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SynthConfig:
    """Clustered multimodal toy data: one center per (class, modality), Gaussian noise around it.

    A (1 - consistency) fraction of samples draws one modality's rows from a
    different class's center, simulating modality disagreement.
    """

    n_classes: int = 4
    train_per_class: int = 25
    test_per_class: int = 10
    text_dim: int = DEFAULT_TEXT_DIM
    audio_dim: int = DEFAULT_AUDIO_DIM
    seq_len_min: int = 3
    seq_len_max: int = 8
    center_spread: float = 1.0
    noise_std: float = 0.1
    consistency: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if not 1 <= self.seq_len_min <= self.seq_len_max:
            raise ValueError(f"invalid sequence-length range [{self.seq_len_min}, {self.seq_len_max}]")
        if not 0.0 <= self.consistency <= 1.0:
            raise ValueError("consistency must lie in [0, 1]")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def synth_generate(cfg: SynthConfig, out_dir) -> str:
    """Write feature tensors plus a manifest under out_dir; returns the manifest path.

    Deterministic per config: reruns produce byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    centers = {
        "text": rng.normal(0.0, cfg.center_spread, size=(cfg.n_classes, cfg.text_dim)),
        "audio": rng.normal(0.0, cfg.center_spread, size=(cfg.n_classes, cfg.audio_dim)),
    }

    class_names = [f"class{c}" for c in range(cfg.n_classes)]
    records = []
    for split, per_class in (("train", cfg.train_per_class), ("test", cfg.test_per_class)):
        for c in range(cfg.n_classes):
            for k in range(per_class):
                sample_id = f"{split}_c{c}_{k:04d}"
                source = {"text": c, "audio": c}
                if rng.random() > cfg.consistency and cfg.n_classes > 1:
                    flipped = "text" if rng.random() < 0.5 else "audio"
                    others = [j for j in range(cfg.n_classes) if j != c]
                    source[flipped] = int(others[int(rng.integers(len(others)))])
                paths = {}
                for modality, dim in (("text", cfg.text_dim), ("audio", cfg.audio_dim)):
                    length = int(rng.integers(cfg.seq_len_min, cfg.seq_len_max + 1))
                    rows = centers[modality][source[modality]] + rng.normal(
                        0.0, cfg.noise_std, size=(length, dim)
                    )
                    rel = os.path.join("features", f"{sample_id}.{modality}.lsgt")
                    write_tensor(os.path.join(out_dir, rel), rows.astype(np.float32))
                    paths[modality] = rel
                records.append((sample_id, split, c, paths["text"], [paths["audio"]]))

    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest_path, class_names, records, text_dim=cfg.text_dim, audio_dim=cfg.audio_dim)
    return manifest_path
