"""Shared data model: channels, sensor records, labels, grids and logits."""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

# Continuous channels, one value per minute after resampling.
CONTINUOUS_CHANNELS: tuple[str, ...] = (
    "mBle",          # max Bluetooth RSSI
    "mGps",          # travel distance (m)
    "mUsageStats",   # app usage time (ms)
    "mWifi_rssi",    # max Wi-Fi RSSI
    "mWifi_count",   # visible Wi-Fi devices
    "wHr",           # mean heart rate (bpm)
    "wLight",        # ambient light (lx)
)

# Raw discrete items as they appear in sensor files.
DISCRETE_ITEMS: tuple[str, ...] = ("mActivity", "mAmbience", "mScreenStatus", "mACStatus")

# Aggregated discrete features, one value per ten-minute window.
DISCRETE_FEATURES: tuple[str, ...] = (
    "mActivity_vehicle",
    "mActivity_bicycle",
    "mActivity_still",
    "mActivity_walking",
    "mAmbience_low",
    "mAmbience_medium",
    "mAmbience_high",
    "mScreenStatus_on",
    "mACStatus_charging",
)

FEATURE_CHANNELS: tuple[str, ...] = CONTINUOUS_CHANNELS + DISCRETE_FEATURES
ITEMS: tuple[str, ...] = CONTINUOUS_CHANNELS + DISCRETE_ITEMS
ITEM_INDEX: dict[str, int] = {name: i for i, name in enumerate(ITEMS)}

# Admissible codes for discrete items.
ITEM_CODES: dict[str, frozenset[int]] = {
    "mActivity": frozenset({0, 1, 2, 3, 4, 5, 7, 8}),
    "mAmbience": frozenset({0, 1, 2}),
    "mScreenStatus": frozenset({0, 1}),
    "mACStatus": frozenset({0, 1}),
}

N_CONTINUOUS = len(CONTINUOUS_CHANNELS)
N_DISCRETE = len(DISCRETE_FEATURES)
MINUTES_PER_DAY = 1440
WINDOWS_PER_DAY = 144
WINDOW_MINUTES = MINUTES_PER_DAY // WINDOWS_PER_DAY
SECONDS_PER_DAY = 86400

HEADS: tuple[str, ...] = ("q1", "q2", "q3", "s1", "s2", "s3")
HEAD_SIZES: tuple[int, ...] = (2, 2, 2, 3, 2, 2)
HEAD_OFFSETS: tuple[int, ...] = tuple(int(x) for x in np.cumsum((0,) + HEAD_SIZES[:-1]))
N_LOGITS = sum(HEAD_SIZES)

ENCODINGS = ("multi_channel", "stacked_vertical")

# Sentinel subject id for people never seen during training.
UNKNOWN_SUBJECT = -1


class ConfigError(ValueError):
    """Invalid configuration value."""


class ShapeError(ValueError):
    """Tensor shape does not match what the operation expects."""


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def day_start(date: dt.date) -> int:
    """Epoch seconds of UTC midnight for ``date``."""
    return int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp())


def date_of(timestamp: int) -> dt.date:
    return dt.datetime.fromtimestamp(int(timestamp), tz=dt.timezone.utc).date()


class SensorReading(NamedTuple):
    subject_id: str
    timestamp: int
    item: str
    value: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DayRecord:
    """One subject-day of raw readings, stored column-wise.

    ``items`` holds indices into :data:`ITEMS`. A name outside the vocabulary is
    stored as ``-1 - k`` where ``k`` indexes ``unknown_items``, so that
    :func:`validate_day_record` can report it.
    """

    subject_id: str
    date: dt.date
    timestamps: np.ndarray
    items: np.ndarray
    values: np.ndarray
    unknown_items: tuple[str, ...] = ()

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        it = np.asarray(self.items, dtype=np.int16)
        vs = np.asarray(self.values, dtype=np.float64)
        if not (ts.shape == it.shape == vs.shape) or ts.ndim != 1:
            raise ShapeError("timestamps, items and values must be 1-D and equally long")
        order = np.argsort(ts, kind="stable")
        object.__setattr__(self, "timestamps", _frozen(ts[order]))
        object.__setattr__(self, "items", _frozen(it[order]))
        object.__setattr__(self, "values", _frozen(vs[order]))

    @classmethod
    def from_readings(cls, subject_id: str, date: dt.date, readings: Sequence[SensorReading]) -> "DayRecord":
        unknown = tuple(sorted({r.item for r in readings if r.item not in ITEM_INDEX}))
        codes = dict(ITEM_INDEX)
        codes.update({name: -1 - k for k, name in enumerate(unknown)})
        return cls(
            subject_id=subject_id,
            date=date,
            timestamps=np.array([r.timestamp for r in readings], dtype=np.int64),
            items=np.array([codes[r.item] for r in readings], dtype=np.int16),
            values=np.array([r.value for r in readings], dtype=np.float64),
            unknown_items=unknown,
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def readings(self) -> Iterator[SensorReading]:
        for t, i, v in zip(self.timestamps, self.items, self.values):
            name = ITEMS[i] if i >= 0 else self.unknown_items[-1 - i]
            yield SensorReading(self.subject_id, int(t), name, float(v))

    def channel(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(timestamps, values) of one item, time-ordered."""
        sel = self.items == ITEM_INDEX[name]
        return self.timestamps[sel], self.values[sel]

    @property
    def key(self) -> tuple[str, dt.date]:
        return (self.subject_id, self.date)


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_day_record(record: DayRecord) -> ValidationResult:
    """Collect every invariant the record breaks, without raising."""
    problems: list[str] = []
    for name in record.unknown_items:
        problems.append(f"unknown channel: {name}")
    start = day_start(record.date)
    outside = (record.timestamps < start) | (record.timestamps >= start + SECONDS_PER_DAY)
    if outside.any():
        problems.append(f"timestamp outside day: {int(outside.sum())} reading(s)")
    bad = ~np.isfinite(record.values)
    if bad.any():
        problems.append(f"non-finite value: {int(bad.sum())} reading(s)")
    for name, codes in ITEM_CODES.items():
        _, vals = record.channel(name)
        vals = vals[np.isfinite(vals)]
        if vals.size and not np.isin(vals, sorted(codes)).all():
            problems.append(f"invalid code for {name}")
    return ValidationResult(tuple(problems))


@dataclass(frozen=True)
class LabelVector:
    q1: int
    q2: int
    q3: int
    s1: int
    s2: int
    s3: int

    def __post_init__(self):
        for name, size in zip(HEADS, HEAD_SIZES):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or not 0 <= v < size:
                raise ValueError(f"{name.upper()} must be in 0..{size - 1}, got {v!r}")
            object.__setattr__(self, name, int(v))

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, h) for h in HEADS)

    @classmethod
    def from_sequence(cls, values: Sequence[int]) -> "LabelVector":
        return cls(*(int(v) for v in values))


@dataclass(frozen=True, eq=False)
class DayFeatureGrid:
    """Preprocessed day: continuous 7x1440, discrete 9x144, observed mask 7x1440."""

    continuous: np.ndarray
    discrete: np.ndarray
    observed_mask: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.continuous, dtype=np.float64)
        d = np.asarray(self.discrete, dtype=np.float64)
        m = np.asarray(self.observed_mask, dtype=bool)
        if c.shape != (N_CONTINUOUS, MINUTES_PER_DAY):
            raise ShapeError(f"continuous grid must be {N_CONTINUOUS}x{MINUTES_PER_DAY}, got {c.shape}")
        if d.shape != (N_DISCRETE, WINDOWS_PER_DAY):
            raise ShapeError(f"discrete grid must be {N_DISCRETE}x{WINDOWS_PER_DAY}, got {d.shape}")
        if m.shape != c.shape:
            raise ShapeError("observed_mask must align with the continuous grid")
        object.__setattr__(self, "continuous", _frozen(c))
        object.__setattr__(self, "discrete", _frozen(d))
        object.__setattr__(self, "observed_mask", _frozen(m))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.continuous).all() and np.isfinite(self.discrete).all())


@dataclass(frozen=True)
class BlockConfig:
    n_hours: int = 4
    raster_height: int = 64
    value_range: tuple[float, float] = (-3.0, 3.0)
    encoding: str = "multi_channel"
    line_fill: bool = True

    def __post_init__(self):
        if self.n_hours < 1 or 24 % self.n_hours:
            raise ConfigError(f"n_hours must divide 24, got {self.n_hours}")
        if self.raster_height < 2:
            raise ConfigError("raster_height must be >= 2")
        lo, hi = self.value_range
        if not lo < hi:
            raise ConfigError("value_range needs lo < hi")
        object.__setattr__(self, "value_range", (float(lo), float(hi)))
        if self.encoding not in ENCODINGS:
            raise ConfigError(f"encoding must be one of {ENCODINGS}, got {self.encoding!r}")

    @property
    def n_blocks(self) -> int:
        return 24 // self.n_hours

    @property
    def block_minutes(self) -> int:
        return 60 * self.n_hours

    @property
    def block_windows(self) -> int:
        return 6 * self.n_hours


@dataclass(frozen=True, eq=False)
class HeadLogits:
    """Raw scores of the six heads for one day."""

    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray

    def __post_init__(self):
        for name, size in zip(HEADS, HEAD_SIZES):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if v.shape != (size,):
                raise ShapeError(f"head {name} needs {size} scores, got {v.shape[0]}")
            if not np.isfinite(v).all():
                raise ValueError(f"head {name} has non-finite scores")
            object.__setattr__(self, name, _frozen(v))

    def __getitem__(self, head: str) -> np.ndarray:
        return getattr(self, head)

    def __eq__(self, other) -> bool:
        if not isinstance(other, HeadLogits):
            return NotImplemented
        return all(np.array_equal(self[h], other[h]) for h in HEADS)

    @classmethod
    def from_flat(cls, flat: Sequence[float]) -> "HeadLogits":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (N_LOGITS,):
            raise ShapeError(f"expected {N_LOGITS} scores, got {flat.shape}")
        return cls(**{h: flat[o:o + s] for h, o, s in zip(HEADS, HEAD_OFFSETS, HEAD_SIZES)})

    def flat(self) -> np.ndarray:
        return np.concatenate([self[h] for h in HEADS])

    def to_dict(self) -> dict[str, list[float]]:
        return {h: [float(x) for x in self[h]] for h in HEADS}

    def to_json(self) -> str:
        # repr-based float formatting round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "HeadLogits":
        return cls(**{h: d[h] for h in HEADS})

    @classmethod
    def from_json(cls, text: str) -> "HeadLogits":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ChannelStats:
    """Training-split statistics used to standardize every day."""

    mean: tuple[float, ...]
    std: tuple[float, ...]
    clip_bounds: dict[str, tuple[float, float]]
    discrete_scale: tuple[float, ...]
    discrete_mean: tuple[float, ...] = field(default=(0.0,) * N_DISCRETE)
    discrete_scaling: str = "max"

    def __post_init__(self):
        if len(self.mean) != N_CONTINUOUS or len(self.std) != N_CONTINUOUS:
            raise ShapeError("mean/std need one entry per continuous channel")
        if any(not s > 0 or not math.isfinite(s) for s in self.std):
            raise ValueError("std must be positive and finite")
        if any(not s > 0 for s in self.discrete_scale):
            raise ValueError("discrete scale must be positive")
        if self.discrete_scaling not in ("max", "zscore"):
            raise ConfigError("discrete_scaling must be 'max' or 'zscore'")

    def to_json(self) -> str:
        return json.dumps(
            {
                "continuous_channels": list(CONTINUOUS_CHANNELS),
                "discrete_features": list(DISCRETE_FEATURES),
                "mean": list(self.mean),
                "std": list(self.std),
                "clip_bounds": {k: list(v) for k, v in self.clip_bounds.items()},
                "discrete_scale": list(self.discrete_scale),
                "discrete_mean": list(self.discrete_mean),
                "discrete_scaling": self.discrete_scaling,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ChannelStats":
        d = json.loads(text)
        return cls(
            mean=tuple(d["mean"]),
            std=tuple(d["std"]),
            clip_bounds={k: (float(v[0]), float(v[1])) for k, v in d["clip_bounds"].items()},
            discrete_scale=tuple(d["discrete_scale"]),
            discrete_mean=tuple(d.get("discrete_mean", (0.0,) * N_DISCRETE)),
            discrete_scaling=d.get("discrete_scaling", "max"),
        )
