"""Raw day records to fixed grids: clip, interpolate, aggregate, standardize."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .types import (
    CONTINUOUS_CHANNELS,
    MINUTES_PER_DAY,
    N_CONTINUOUS,
    N_DISCRETE,
    SECONDS_PER_DAY,
    WINDOW_MINUTES,
    WINDOWS_PER_DAY,
    ChannelStats,
    ConfigError,
    DayFeatureGrid,
    DayRecord,
    day_start,
)

# Physical ranges in raw units; readings outside are clipped.
DEFAULT_CLIP_BOUNDS: dict[str, tuple[float, float]] = {
    "mBle": (-120.0, 0.0),
    "mGps": (0.0, 3000.0),
    "mUsageStats": (0.0, 60000.0),
    "mWifi_rssi": (-120.0, 0.0),
    "mWifi_count": (0.0, 500.0),
    "wHr": (30.0, 220.0),
    "wLight": (0.0, 100000.0),
}

# (raw item, code) feeding each discrete feature row
DISCRETE_SOURCES: tuple[tuple[str, int], ...] = (
    ("mActivity", 0),
    ("mActivity", 1),
    ("mActivity", 3),
    ("mActivity", 7),
    ("mAmbience", 0),
    ("mAmbience", 1),
    ("mAmbience", 2),
    ("mScreenStatus", 1),
    ("mACStatus", 1),
)

MIN_STD = 1e-6


@dataclass(frozen=True)
class PreprocessConfig:
    clip_bounds: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_CLIP_BOUNDS))
    discrete_scaling: str = "max"

    def __post_init__(self):
        if self.discrete_scaling not in ("max", "zscore"):
            raise ConfigError("discrete_scaling must be 'max' or 'zscore'")
        bounds = {**DEFAULT_CLIP_BOUNDS, **self.clip_bounds}
        for name, (lo, hi) in bounds.items():
            if name not in CONTINUOUS_CHANNELS:
                raise ConfigError(f"clip bounds given for unknown channel {name!r}")
            if not lo < hi:
                raise ConfigError(f"clip bounds for {name} need lo < hi")
        object.__setattr__(self, "clip_bounds", bounds)


def interpolate_minutes(minutes: np.ndarray, values: np.ndarray, length: int = MINUTES_PER_DAY) -> np.ndarray:
    """Linear interpolation at integer positions 0..length-1.

    ``minutes`` must be strictly increasing. Positions before the first or after
    the last observation hold the nearest observed value.
    """
    grid = np.arange(length, dtype=np.float64)
    if minutes.size == 0:
        return np.zeros(length)
    if minutes.size == 1:
        return np.full(length, float(values[0]))
    xp = minutes.astype(np.float64)
    j = np.clip(np.searchsorted(xp, grid, side="right") - 1, 0, xp.size - 2)
    x0, x1 = xp[j], xp[j + 1]
    f0, f1 = values[j], values[j + 1]
    out = f0 + (f1 - f0) * (grid - x0) / (x1 - x0)
    out = np.where(grid <= xp[0], values[0], out)
    out = np.where(grid >= xp[-1], values[-1], out)
    return out


def _minute_means(minutes: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(minutes, return_inverse=True)
    sums = np.bincount(inv, weights=values, minlength=uniq.size)
    counts = np.bincount(inv, minlength=uniq.size)
    return uniq, sums / counts


def resample_continuous(
    record: DayRecord, channel: str, bounds: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """One continuous channel on the one-minute grid, plus its observed mask.

    Several readings inside one minute are averaged first. A channel without
    readings yields zeros and an all-false mask.
    """
    if channel not in CONTINUOUS_CHANNELS:
        raise ConfigError(f"{channel!r} is not a continuous channel")
    ts, vals = record.channel(channel)
    offs = ts - day_start(record.date)
    keep = (offs >= 0) & (offs < SECONDS_PER_DAY) & np.isfinite(vals)
    minutes, vals = offs[keep] // 60, vals[keep]
    if bounds is not None:
        vals = np.clip(vals, bounds[0], bounds[1])
    mask = np.zeros(MINUTES_PER_DAY, dtype=bool)
    if minutes.size == 0:
        return np.zeros(MINUTES_PER_DAY), mask
    minutes, vals = _minute_means(minutes, vals)
    mask[minutes] = True
    return interpolate_minutes(minutes, vals), mask


def aggregate_discrete(record: DayRecord) -> np.ndarray:
    """9 x 144 matrix of per-window counts (activity codes, ambience levels,
    screen-on minutes, charging minutes)."""
    out = np.zeros((N_DISCRETE, WINDOWS_PER_DAY))
    start = day_start(record.date)
    for row, (item, code) in enumerate(DISCRETE_SOURCES):
        ts, vals = record.channel(item)
        offs = ts - start
        sel = (offs >= 0) & (offs < SECONDS_PER_DAY) & (vals == code)
        windows = offs[sel] // 60 // WINDOW_MINUTES
        out[row] = np.bincount(windows, minlength=WINDOWS_PER_DAY)
    return out


def raw_grid(record: DayRecord, clip_bounds: dict[str, tuple[float, float]] | None = None) -> DayFeatureGrid:
    """Clipped, resampled, unstandardized grid of one day."""
    bounds = clip_bounds if clip_bounds is not None else DEFAULT_CLIP_BOUNDS
    cont = np.zeros((N_CONTINUOUS, MINUTES_PER_DAY))
    mask = np.zeros((N_CONTINUOUS, MINUTES_PER_DAY), dtype=bool)
    for k, name in enumerate(CONTINUOUS_CHANNELS):
        cont[k], mask[k] = resample_continuous(record, name, bounds.get(name))
    return DayFeatureGrid(cont, aggregate_discrete(record), mask)


def fit_stats(train_grids: Sequence[DayFeatureGrid], config: PreprocessConfig | None = None) -> ChannelStats:
    """Per-channel statistics over observed entries of training days only.

    Population (divide-by-n) standard deviation; values below 1e-6 become 1.
    """
    config = config or PreprocessConfig()
    if len(train_grids) == 0:
        raise ValueError("fit_stats needs at least one training day")
    sums = np.zeros(N_CONTINUOUS)
    counts = np.zeros(N_CONTINUOUS)
    for g in train_grids:
        sums += np.where(g.observed_mask, g.continuous, 0.0).sum(axis=1)
        counts += g.observed_mask.sum(axis=1)
    mean = np.divide(sums, counts, out=np.zeros(N_CONTINUOUS), where=counts > 0)
    sq = np.zeros(N_CONTINUOUS)
    for g in train_grids:
        sq += np.where(g.observed_mask, (g.continuous - mean[:, None]) ** 2, 0.0).sum(axis=1)
    var = np.divide(sq, counts, out=np.zeros(N_CONTINUOUS), where=counts > 0)
    std = np.sqrt(var)
    std = np.where(std < MIN_STD, 1.0, std)

    disc = np.stack([g.discrete for g in train_grids])
    if config.discrete_scaling == "max":
        scale = disc.max(axis=(0, 2))
        scale = np.where(scale > 0, scale, 1.0)
        dmean = np.zeros(N_DISCRETE)
    else:
        dmean = disc.mean(axis=(0, 2))
        scale = disc.std(axis=(0, 2))
        scale = np.where(scale < MIN_STD, 1.0, scale)
    return ChannelStats(
        mean=tuple(float(x) for x in mean),
        std=tuple(float(x) for x in std),
        clip_bounds=dict(config.clip_bounds),
        discrete_scale=tuple(float(x) for x in scale),
        discrete_mean=tuple(float(x) for x in dmean),
        discrete_scaling=config.discrete_scaling,
    )


def standardize(raw: DayFeatureGrid, stats: ChannelStats) -> DayFeatureGrid:
    mean = np.asarray(stats.mean)[:, None]
    std = np.asarray(stats.std)[:, None]
    cont = (raw.continuous - mean) / std
    # a channel never observed that day sits at the training mean
    cont[~raw.observed_mask.any(axis=1)] = 0.0
    scale = np.asarray(stats.discrete_scale)[:, None]
    if stats.discrete_scaling == "max":
        disc = np.clip(raw.discrete / scale, 0.0, 1.0)
    else:
        disc = (raw.discrete - np.asarray(stats.discrete_mean)[:, None]) / scale
    return DayFeatureGrid(cont, disc, raw.observed_mask)


def transform(record: DayRecord, stats: ChannelStats, config: PreprocessConfig | None = None) -> DayFeatureGrid:
    """Clip with the fitted bounds, resample, then standardize with training stats."""
    bounds = stats.clip_bounds if config is None else config.clip_bounds
    return standardize(raw_grid(record, bounds), stats)


def preprocess_days(
    records: Iterable[DayRecord], train_mask: np.ndarray, config: PreprocessConfig | None = None
) -> tuple[list[DayFeatureGrid], ChannelStats]:
    """Fit statistics on the training days and standardize every day."""
    config = config or PreprocessConfig()
    raws = [raw_grid(r, config.clip_bounds) for r in records]
    stats = fit_stats([g for g, t in zip(raws, train_mask) if t], config)
    return [standardize(g, stats) for g in raws], stats


# Grid cache: little-endian, magic b"MISG", uint32 version, then three
# matrices (continuous, observed mask as 0/1, discrete), each preceded by
# uint32 rows and uint32 cols and stored row-major as float32.
GRID_MAGIC = b"MISG"
GRID_VERSION = 1


def write_grid(path: str | Path, grid: DayFeatureGrid) -> None:
    parts = [GRID_MAGIC, struct.pack("<I", GRID_VERSION)]
    for m in (grid.continuous, grid.observed_mask.astype(np.float32), grid.discrete):
        parts.append(struct.pack("<II", *m.shape))
        parts.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_grid(path: str | Path) -> DayFeatureGrid:
    buf = Path(path).read_bytes()
    if buf[:4] != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid file")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != GRID_VERSION:
        raise ValueError(f"{path}: unsupported grid version {version}")
    pos = 8
    mats = []
    for _ in range(3):
        rows, cols = struct.unpack_from("<II", buf, pos)
        pos += 8
        n = rows * cols
        mats.append(np.frombuffer(buf, dtype="<f4", count=n, offset=pos).reshape(rows, cols).astype(np.float64))
        pos += 4 * n
    cont, mask, disc = mats
    return DayFeatureGrid(cont, disc, mask > 0.5)
