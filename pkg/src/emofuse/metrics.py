"""Classification metrics: weighted/unweighted accuracy, weighted F1, confusion matrices.

WA is the overall correct fraction (trace / total). UA averages per-class
recall over classes that appear in the evaluated set. WF1 weights each
class's F1 by its share of the true labels; a class's F1 is 0 when its
precision and recall are both 0.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    wa: float
    ua: float
    wf1: float
    confusion: np.ndarray          # [n, n] counts, true class on rows
    class_names: list

    def normalized_confusion(self) -> np.ndarray:
        counts = self.confusion.astype(np.float64)
        sums = counts.sum(axis=1, keepdims=True)
        out = np.zeros_like(counts)
        nonempty = sums[:, 0] > 0
        out[nonempty] = counts[nonempty] / sums[nonempty]
        return out


def compute_metrics(y_true, y_pred, class_names) -> MetricsReport:
    n = len(class_names)
    y_true = [int(y) for y in y_true]
    y_pred = [int(y) for y in y_pred]
    if len(y_true) != len(y_pred):
        raise ValueError(f"{len(y_true)} labels vs {len(y_pred)} predictions")
    if not y_true:
        raise ValueError("cannot compute metrics over an empty set")
    confusion = np.zeros((n, n), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        if not (0 <= t < n and 0 <= p < n):
            raise ValueError(f"class id outside [0, {n}): true={t} pred={p}")
        confusion[t, p] += 1

    total = confusion.sum()
    wa = float(np.trace(confusion)) / float(total)

    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    diag = np.diag(confusion)
    recalls, f1s = np.zeros(n), np.zeros(n)
    for c in range(n):
        r = diag[c] / support[c] if support[c] > 0 else 0.0
        p = diag[c] / predicted[c] if predicted[c] > 0 else 0.0
        recalls[c] = r
        f1s[c] = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
    present = support > 0
    ua = float(recalls[present].mean())
    wf1 = float(np.sum((support[present] / total) * f1s[present]))

    return MetricsReport(wa=wa, ua=ua, wf1=wf1, confusion=confusion, class_names=list(class_names))


def write_report(report: MetricsReport, out_dir) -> dict:
    """Write metrics.json plus a plot-ready normalized confusion TSV; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.json")
    payload = {
        "wa": report.wa,
        "ua": report.ua,
        "wf1": report.wf1,
        "class_names": report.class_names,
        "confusion": report.confusion.tolist(),
    }
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    table_path = write_normalized_confusion(report, out_dir)
    return {"metrics": metrics_path, "confusion_normalized": table_path}


def write_normalized_confusion(report: MetricsReport, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "confusion_normalized.tsv")
    norm = report.normalized_confusion()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("true\\pred\t" + "\t".join(report.class_names) + "\n")
        for i, name in enumerate(report.class_names):
            fh.write(name + "\t" + "\t".join(f"{v:.6f}" for v in norm[i]) + "\n")
    return path


def read_metrics(path) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    report = MetricsReport(
        wa=payload["wa"],
        ua=payload["ua"],
        wf1=payload["wf1"],
        confusion=np.array(payload["confusion"], dtype=np.int64),
        class_names=list(payload["class_names"]),
    )
    return report
