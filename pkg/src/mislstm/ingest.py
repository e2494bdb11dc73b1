"""Long-format CSV readers and writers for sensor readings and day labels."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .types import (
    HEAD_SIZES,
    HEADS,
    ITEM_INDEX,
    ITEMS,
    SECONDS_PER_DAY,
    DayRecord,
    LabelVector,
    ParseError,
)

log = logging.getLogger(__name__)

SENSOR_HEADER = ("subject_id", "timestamp", "item", "value")
LABEL_HEADER = ("subject_id", "date", "Q1", "Q2", "Q3", "S1", "S2", "S3")
EPOCH = dt.date(1970, 1, 1)


@dataclass
class Dataset:
    days: list[DayRecord]
    labels: list[LabelVector]
    subject_index: dict[str, int]
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.days)

    @property
    def keys(self) -> list[tuple[str, dt.date]]:
        return [d.key for d in self.days]

    def subject_ids(self) -> np.ndarray:
        return np.array([self.subject_index[d.subject_id] for d in self.days], dtype=np.int64)

    def label_matrix(self) -> np.ndarray:
        return np.array([lab.as_tuple() for lab in self.labels], dtype=np.int64).reshape(-1, len(HEADS))


def _read_header(path: Path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        return next(csv.reader(fh), [])


def parse_sensor_frame(frame: pd.DataFrame) -> list[DayRecord]:
    """Group a long-format frame into one DayRecord per (subject, UTC date)."""
    if frame.empty:
        return []
    unknown = sorted(set(frame["item"].unique()) - set(ITEMS))
    if unknown:
        raise ParseError(f"unknown item(s): {', '.join(map(str, unknown))}")
    subjects = frame["subject_id"].astype(str).to_numpy()
    ts = frame["timestamp"].to_numpy(dtype=np.int64)
    items = frame["item"].map(ITEM_INDEX).to_numpy(dtype=np.int16)
    values = frame["value"].to_numpy(dtype=np.float64)
    day_no = ts // SECONDS_PER_DAY

    subj_codes, subj_names = pd.factorize(subjects, sort=True)
    order = np.lexsort((ts, day_no, subj_codes))
    subj_codes, day_no = subj_codes[order], day_no[order]
    ts, items, values = ts[order], items[order], values[order]
    breaks = np.flatnonzero((np.diff(subj_codes) != 0) | (np.diff(day_no) != 0)) + 1
    bounds = np.concatenate([[0], breaks, [len(ts)]])
    records = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        records.append(
            DayRecord(
                subject_id=str(subj_names[subj_codes[a]]),
                date=EPOCH + dt.timedelta(days=int(day_no[a])),
                timestamps=ts[a:b],
                items=items[a:b],
                values=values[a:b],
            )
        )
    return records


def read_sensor_frame(path: str | Path) -> pd.DataFrame:
    path = Path(path)
    header = _read_header(path)
    if tuple(header) != SENSOR_HEADER:
        raise ParseError(f"expected header {','.join(SENSOR_HEADER)}, got {','.join(header)}", line=1)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, engine="c")
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"malformed row: {exc}", line=int(m.group(1)) if m else None) from exc
    ts = pd.to_numeric(raw["timestamp"], errors="coerce")
    val = pd.to_numeric(raw["value"], errors="coerce")
    bad = ts.isna() | val.isna() | (raw["subject_id"] == "") | (raw["item"] == "")
    bad |= ts.notna() & (ts != ts.round())
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(f"malformed row: {','.join(raw.iloc[row].tolist())}", line=row + 2)
    return pd.DataFrame(
        {
            "subject_id": raw["subject_id"],
            "timestamp": ts.astype(np.int64),
            "item": raw["item"],
            "value": val.astype(np.float64),
        }
    )


def parse_sensor_file(path: str | Path) -> list[DayRecord]:
    """Read a sensor CSV into DayRecords, each with time-sorted readings."""
    return parse_sensor_frame(read_sensor_frame(path))


def records_to_frame(records: Iterable[DayRecord]) -> pd.DataFrame:
    parts = []
    for r in records:
        parts.append(
            pd.DataFrame(
                {
                    "subject_id": r.subject_id,
                    "timestamp": r.timestamps,
                    "item": np.array(ITEMS, dtype=object)[r.items],
                    "value": r.values,
                }
            )
        )
    if not parts:
        return pd.DataFrame({c: [] for c in SENSOR_HEADER})
    return pd.concat(parts, ignore_index=True)


def write_sensor_csv(data: pd.DataFrame | Iterable[DayRecord], path: str | Path) -> None:
    frame = data if isinstance(data, pd.DataFrame) else records_to_frame(data)
    frame = frame.loc[:, list(SENSOR_HEADER)]
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def parse_labels_file(path: str | Path) -> dict[tuple[str, dt.date], LabelVector]:
    """Read a label CSV keyed by (subject_id, date)."""
    out: dict[tuple[str, dt.date], LabelVector] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, [])
        if tuple(header) != LABEL_HEADER:
            raise ParseError(f"expected header {','.join(LABEL_HEADER)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LABEL_HEADER):
                raise ParseError(f"expected {len(LABEL_HEADER)} fields, got {len(row)}", line=lineno)
            try:
                date = dt.date.fromisoformat(row[1])
                values = [int(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(f"malformed row: {exc}", line=lineno) from exc
            for head, size, v in zip(HEADS, HEAD_SIZES, values):
                if not 0 <= v < size:
                    raise ParseError(f"range error: {head.upper()}={v} outside 0..{size - 1}", line=lineno)
            key = (row[0], date)
            if key in out:
                raise ParseError(f"duplication error: {row[0]} {row[1]} appears twice", line=lineno)
            out[key] = LabelVector(*values)
    return out


def write_labels_csv(labels: Mapping[tuple[str, dt.date], LabelVector], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for (subject, date), lab in sorted(labels.items()):
            w.writerow([subject, date.isoformat(), *lab.as_tuple()])


def build_dataset(
    records: Iterable[DayRecord], labels: Mapping[tuple[str, dt.date], LabelVector]
) -> Dataset:
    """Pair records with labels; unlabeled days are dropped and counted."""
    days, labs = [], []
    dropped = 0
    for rec in sorted(records, key=lambda r: r.key):
        lab = labels.get(rec.key)
        if lab is None:
            dropped += 1
            continue
        days.append(rec)
        labs.append(lab)
    if dropped:
        log.warning("dropped %d day(s) without labels", dropped)
    subjects = sorted({d.subject_id for d in days})
    return Dataset(days, labs, {s: i for i, s in enumerate(subjects)}, dropped)
