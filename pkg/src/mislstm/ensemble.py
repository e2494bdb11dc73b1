"""Soft voting, hard voting and the confidence-gated UALRE ensemble.

A pool holds ``M`` models' raw logits for the same days as an array of shape
``(M, days, 13)``. Decisions come back as ``(days, 6)`` class indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evaluation import macro_f1
from .model import split_heads
from .types import HEAD_OFFSETS, HEAD_SIZES, HEADS, N_LOGITS, ConfigError


def logit_margin(scores, kind: str = "top2") -> float:
    """Gap between the largest score and the second (or third) largest."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size < 2:
        raise ValueError("a margin needs at least two scores")
    return float(_margins(s[None], kind)[0])


def _margins(scores: np.ndarray, kind: str = "top2") -> np.ndarray:
    """Margins along the last axis."""
    if kind not in ("top2", "top3"):
        raise ConfigError("margin kind must be 'top2' or 'top3'")
    s = np.sort(scores, axis=-1)
    k = scores.shape[-1]
    other = 2 if kind == "top2" else min(3, k)
    return s[..., -1] - s[..., -other]


def head_margins(logits: np.ndarray, kind: str = "top2") -> np.ndarray:
    """(..., 13) logits to (..., 6) margins."""
    return np.stack([_margins(p, kind) for p in split_heads(np.asarray(logits, dtype=np.float64))], axis=-1)


def head_argmax(logits: np.ndarray) -> np.ndarray:
    return np.stack([np.argmax(p, axis=-1) for p in split_heads(np.asarray(logits))], axis=-1)


def fit_thresholds(val_logits: np.ndarray, q: float = 0.5, kind: str = "top2") -> np.ndarray:
    """Per model and head, the q-quantile of validation margins -> (M, 6)."""
    val_logits = np.asarray(val_logits, dtype=np.float64)
    if val_logits.ndim != 3 or val_logits.shape[-1] != N_LOGITS:
        raise ValueError("validation logits must have shape (models, days, 13)")
    if val_logits.shape[1] < 2:
        raise ValueError("fitting thresholds needs at least two validation days")
    if not 0.0 <= q <= 1.0:
        raise ValueError("quantile must lie in [0, 1]")
    return np.quantile(head_margins(val_logits, kind), q, axis=1, method="linear")


def select_best(val_logits: np.ndarray, val_labels: np.ndarray) -> int:
    """Index of the model with the highest mean macro-F1 (lowest index on ties)."""
    scores = []
    for logits in np.asarray(val_logits):
        pred = head_argmax(logits)
        scores.append(np.mean([macro_f1(pred[:, j], val_labels[:, j], n) for j, n in enumerate(HEAD_SIZES)]))
    return int(np.argmax(scores))


@dataclass(frozen=True, eq=False)
class EnsemblePool:
    logits: np.ndarray
    model_ids: tuple[str, ...] = ()
    day_ids: tuple[str, ...] = ()
    best_index: int = 0
    thresholds: np.ndarray | None = None
    margin_kind: str = "top2"

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 3 or logits.shape[-1] != N_LOGITS or logits.shape[0] < 1:
            raise ValueError("pool logits must have shape (models >= 1, days, 13)")
        object.__setattr__(self, "logits", logits)
        m, d = logits.shape[:2]
        if not self.model_ids:
            object.__setattr__(self, "model_ids", tuple(f"model{i}" for i in range(m)))
        if not self.day_ids:
            object.__setattr__(self, "day_ids", tuple(str(i) for i in range(d)))
        if len(self.model_ids) != m or len(self.day_ids) != d:
            raise ValueError("model_ids/day_ids do not match the logits")
        if not 0 <= self.best_index < m:
            raise ValueError("best_index out of range")
        if self.thresholds is not None:
            t = np.asarray(self.thresholds, dtype=np.float64)
            if t.shape != (m, len(HEADS)):
                raise ValueError("thresholds must have shape (models, 6)")
            object.__setattr__(self, "thresholds", t)

    @property
    def n_models(self) -> int:
        return self.logits.shape[0]

    def with_thresholds(self, thresholds: np.ndarray) -> "EnsemblePool":
        return replace(self, thresholds=np.asarray(thresholds, dtype=np.float64))

    def fit(self, val_logits: np.ndarray, val_labels: np.ndarray | None = None, q: float = 0.5) -> "EnsemblePool":
        """Pick the best model (when labels are given) and fit thresholds."""
        best = self.best_index if val_labels is None else select_best(val_logits, val_labels)
        return replace(self, best_index=best, thresholds=fit_thresholds(val_logits, q, self.margin_kind))


def _modal(votes: np.ndarray, valid: np.ndarray, n_classes: int, preferred: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Most frequent valid vote per day; ties prefer ``preferred`` then the
    lowest class. Returns (choice, any_valid)."""
    onehot = (votes[..., None] == np.arange(n_classes)) & valid[..., None]
    counts = onehot.sum(axis=0)  # days x classes
    top = counts.max(axis=1, keepdims=True)
    tied = (counts == top) & (top > 0)
    pref_ok = np.take_along_axis(tied, preferred[:, None], axis=1)[:, 0]
    choice = np.where(pref_ok, preferred, np.argmax(tied, axis=1))
    return choice, top[:, 0] > 0


def soft_vote(pool: EnsemblePool) -> np.ndarray:
    """Argmax of the mean raw logits across models."""
    return head_argmax(pool.logits.mean(axis=0))


def hard_vote(pool: EnsemblePool) -> np.ndarray:
    """Majority of per-model argmaxes; ties -> best model's vote, then lowest class."""
    votes = head_argmax(pool.logits)  # M x days x 6
    out = np.empty(votes.shape[1:], dtype=np.int64)
    valid = np.ones(votes.shape[:2], dtype=bool)
    for j, n in enumerate(HEAD_SIZES):
        out[:, j], _ = _modal(votes[:, :, j], valid, n, votes[pool.best_index, :, j])
    return out


def ualre(pool: EnsemblePool) -> np.ndarray:
    """Confidence-gated ensemble.

    Per day and head: keep the best model's argmax when its margin reaches its
    threshold; otherwise take the majority among the other models that are
    themselves confident (ties -> best model's argmax, then lowest class); if
    none is confident, fall back to the best model.
    """
    if pool.thresholds is None:
        raise ValueError("UALRE needs fitted thresholds; call EnsemblePool.fit first")
    votes = head_argmax(pool.logits)
    conf = head_margins(pool.logits, pool.margin_kind) >= pool.thresholds[:, None, :]
    b = pool.best_index
    others = np.arange(pool.n_models) != b
    out = np.empty(votes.shape[1:], dtype=np.int64)
    for j, n in enumerate(HEAD_SIZES):
        best_vote = votes[b, :, j]
        modal, any_conf = _modal(votes[others, :, j], conf[others, :, j], n, best_vote)
        step2 = np.where(any_conf, modal, best_vote)
        out[:, j] = np.where(conf[b, :, j], best_vote, step2)
    return out


ENSEMBLE_METHODS = {"soft": soft_vote, "hard": hard_vote, "ualre": ualre}


# Logit files: JSON lines {day_id, model_id, q1: [..], ..., s3: [..]}


def write_logits_jsonl(path: str | Path, model_id: str, day_ids: Sequence[str], logits: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for day, row in zip(day_ids, np.asarray(logits, dtype=np.float64)):
            rec = {"day_id": str(day), "model_id": model_id}
            for h, o, n in zip(HEADS, HEAD_OFFSETS, HEAD_SIZES):
                rec[h] = [float(x) for x in row[o:o + n]]
            fh.write(json.dumps(rec) + "\n")


def read_logits_jsonl(path: str | Path) -> dict[str, tuple[list[str], np.ndarray]]:
    """model_id -> (day ids, (days, 13) logits), in file order."""
    out: dict[str, tuple[list[str], list]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                row = np.concatenate([np.asarray(rec[h], dtype=np.float64) for h in HEADS])
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing head {exc}") from exc
            if row.shape != (N_LOGITS,):
                raise ValueError(f"{path}:{lineno}: head lengths must be {HEAD_SIZES}")
            days, rows = out.setdefault(str(rec["model_id"]), ([], []))
            days.append(str(rec["day_id"]))
            rows.append(row)
    return {m: (d, np.stack(r)) for m, (d, r) in out.items()}


def pool_from_files(paths: Iterable[str | Path], margin_kind: str = "top2") -> EnsemblePool:
    """Stack logit files into a pool, aligning days by id."""
    ids, arrays, days = [], [], None
    for p in paths:
        for model_id, (day_ids, logits) in read_logits_jsonl(p).items():
            order = {d: i for i, d in enumerate(day_ids)}
            if days is None:
                days = sorted(order)
            elif sorted(order) != days:
                raise ValueError(f"model {model_id} covers different days than the first model")
            ids.append(model_id)
            arrays.append(logits[[order[d] for d in days]])
    if not arrays:
        raise ValueError("no logits found")
    return EnsemblePool(np.stack(arrays), tuple(ids), tuple(days), margin_kind=margin_kind)


def write_thresholds(path: str | Path, pool: EnsemblePool) -> None:
    if pool.thresholds is None:
        raise ValueError("pool has no thresholds")
    data = {m: dict(zip(HEADS, map(float, t))) for m, t in zip(pool.model_ids, pool.thresholds)}
    Path(path).write_text(json.dumps(data, indent=2))


def read_thresholds(path: str | Path, model_ids: Sequence[str]) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    return np.array([[data[m][h] for h in HEADS] for m in model_ids], dtype=np.float64)
