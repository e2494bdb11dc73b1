"""Subject-stratified splits, per-head macro-F1 and metric reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Sequence

import numpy as np

from .types import HEAD_SIZES, HEADS


def fmt3(x: float) -> str:
    """Three decimals, half-up on the shortest decimal form (0.6145 -> 0.615)."""
    if not math.isfinite(x):
        return str(x)
    return str(Decimal(repr(round(x, 12))).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP))


def stratified_subject_split(
    subjects: Sequence, ratio: float = 0.8, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Per-subject train/validation split over day indices.

    Each subject sends ``floor(ratio * n + 0.5)`` days (kept within 1..n-1) to
    training, chosen by a seeded shuffle; indices come back sorted so that
    chronological order is preserved.
    """
    subjects = np.asarray(subjects)
    if subjects.size == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for s in sorted(set(subjects.tolist())):
        idx = np.flatnonzero(subjects == s)
        if idx.size < 2:
            raise ValueError(f"subject {s!r} has {idx.size} day(s); at least 2 are needed")
        n_train = min(max(int(math.floor(ratio * idx.size + 0.5)), 1), idx.size - 1)
        chosen = rng.permutation(idx.size)
        train.append(idx[chosen[:n_train]])
        val.append(idx[chosen[n_train:]])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def confusion_matrix(predictions, labels, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted."""
    p = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    return np.bincount(y * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def macro_f1(predictions, labels, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``n_classes`` classes.

    A class with no true and no predicted samples scores 0. The mean is
    formed exactly and rounded once, so the result does not depend on the
    order of the per-class terms.
    """
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("predictions and labels must be 1-D and equally long")
    if p.size == 0:
        raise ValueError("macro_f1 needs at least one sample")
    cm = confusion_matrix(p, y, n_classes)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2tp + fp + fn
    total = sum((Fraction(2 * int(t), int(d)) for t, d in zip(tp, denom) if d > 0), Fraction(0))
    return float(total / n_classes)


@dataclass
class MetricReport:
    per_head: dict[str, float]
    confusion: dict[str, np.ndarray]
    name: str = ""

    @property
    def average(self) -> float:
        return float(np.mean([self.per_head[h] for h in HEADS]))

    @classmethod
    def from_scores(cls, scores: Sequence[float], name: str = "") -> "MetricReport":
        return cls(dict(zip(HEADS, map(float, scores))), {}, name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "per_head": dict(self.per_head),
            "average": self.average,
            "confusion": {h: m.tolist() for h, m in self.confusion.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            dict(d["per_head"]),
            {h: np.asarray(m) for h, m in d.get("confusion", {}).items()},
            d.get("name", ""),
        )


def format_table(reports: Sequence[MetricReport]) -> str:
    """Aligned text table with columns Model, Q1..S3, Avg."""
    header = ["Model", *(h.upper() for h in HEADS), "Avg"]
    rows = [[r.name or "-", *(fmt3(r.per_head[h]) for h in HEADS), fmt3(r.average)] for r in reports]
    widths = [max(len(str(row[i])) for row in [header, *rows]) for i in range(len(header))]
    lines = []
    for row in [header, *rows]:
        lines.append("  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def evaluate(predictions: np.ndarray, labels: np.ndarray, name: str = "") -> MetricReport:
    """Report from (days, 6) predicted and true class indices."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    per_head, conf = {}, {}
    for j, (h, n) in enumerate(zip(HEADS, HEAD_SIZES)):
        per_head[h] = macro_f1(predictions[:, j], labels[:, j], n)
        conf[h] = confusion_matrix(predictions[:, j], labels[:, j], n)
    return MetricReport(per_head, conf, name)


def evaluate_logits(logits: np.ndarray, labels: np.ndarray, name: str = "") -> MetricReport:
    from .model import predict_array

    return evaluate(predict_array(logits), labels, name)


def accuracy(predictions, labels) -> float:
    return float(np.mean(np.asarray(predictions) == np.asarray(labels)))
