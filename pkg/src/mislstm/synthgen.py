"""Deterministic synthetic lifelog data with label-dependent planted effects.

Every subject-day is generated at the native item rates (one reading per
minute for wHr, mGps, mActivity, mScreenStatus and mACStatus, every two
minutes for mAmbience, every ten minutes for the rest). The effects below are
multiplied by ``signal_strength``, so a strength of 0 leaves sensors
independent of the labels:

* Q1 = 0: night light (00:00-06:00) raised by 150 lx.
* Q2 = 0: daytime travel distance (08:00-20:00) raised by 40 m/min and
  walking share raised by 0.25.
* Q3 = 0: evening heart rate (18:00-24:00) raised by 15 bpm.
* S1: sleep window starting 01:00 lasts 6 + 2*(S1 - 1) hours, which moves the
  count of "still" minutes and the low-heart-rate stretch.
* S2 = 0: screen-on probability 0.3 per sleeping minute (otherwise 0.02).
* S3 = 0: app usage (21:00-24:00) raised by 30 s/min.

Labels are drawn with exact per-head quotas over all subject-days, so the
label marginals match the configured priors up to rounding.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .types import HEAD_SIZES, HEADS, ConfigError, LabelVector, day_start

START_DATE = dt.date(2025, 1, 1)

# Activity codes and their awake-time probabilities.
_ACTIVITY_CODES = np.array([0, 1, 2, 3, 4, 5, 7, 8])
_ACTIVITY_P = np.array([0.08, 0.03, 0.05, 0.50, 0.05, 0.02, 0.22, 0.05])


def _default_priors() -> dict[str, tuple[float, ...]]:
    return {h: tuple([1.0 / n] * n) for h, n in zip(HEADS, HEAD_SIZES)}


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 10
    days_per_subject: int = 60
    seed: int = 1
    signal_strength: float = 1.0
    label_balance: dict[str, tuple[float, ...]] = field(default_factory=_default_priors)
    missing_fraction: float = 0.05

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ConfigError("n_subjects must be >= 2")
        if self.days_per_subject < 2:
            raise ConfigError("days_per_subject must be >= 2")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError("signal_strength must lie in [0, 1]")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ConfigError("missing_fraction must lie in [0, 1)")
        priors = {**_default_priors(), **{k.lower(): tuple(v) for k, v in self.label_balance.items()}}
        for head, size in zip(HEADS, HEAD_SIZES):
            p = priors[head]
            if len(p) != size or any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-6:
                raise ConfigError(f"priors for {head} must be {size} non-negative values summing to 1")
        object.__setattr__(self, "label_balance", priors)

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "SynthConfig":
        """Build from flat string pairs, e.g. ``prior_s1 = 0.2,0.3,0.5``."""
        kwargs: dict = {}
        priors: dict[str, tuple[float, ...]] = {}
        casts = {
            "n_subjects": int,
            "days_per_subject": int,
            "seed": int,
            "signal_strength": float,
            "missing_fraction": float,
        }
        for key, raw in kv.items():
            key = key.strip()
            if key in casts:
                try:
                    kwargs[key] = casts[key](str(raw).strip())
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
            elif key.startswith("prior_") and key[6:] in HEADS:
                priors[key[6:]] = tuple(float(x) for x in str(raw).split(","))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        if priors:
            kwargs["label_balance"] = priors
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "SynthConfig":
        kv = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
        return cls.from_mapping(kv)


def subject_ids(n: int) -> list[str]:
    width = max(2, len(str(n)))
    return [f"u{i + 1:0{width}d}" for i in range(n)]


def _quota_labels(rng: np.random.Generator, n: int, priors: tuple[float, ...]) -> np.ndarray:
    # largest-remainder allocation, then a seeded shuffle
    exact = np.asarray(priors) * n
    counts = np.floor(exact).astype(int)
    rest = n - counts.sum()
    counts[np.argsort(-(exact - counts), kind="stable")[:rest]] += 1
    labels = np.repeat(np.arange(len(priors)), counts)
    return rng.permutation(labels)


def draw_labels(config: SynthConfig) -> np.ndarray:
    """(n_subjects * days_per_subject, 6) label matrix, subject-major."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xABE1]))
    n = config.n_subjects * config.days_per_subject
    return np.stack([_quota_labels(rng, n, config.label_balance[h]) for h in HEADS], axis=1)


@dataclass(frozen=True)
class _Subject:
    hr_base: float
    light_scale: float
    gps_scale: float
    usage_base: float
    ble_base: float
    wifi_rssi_base: float
    wifi_count_base: float
    charge_habit: float


def _subject_profile(rng: np.random.Generator) -> _Subject:
    return _Subject(
        hr_base=rng.normal(68.0, 4.0),
        light_scale=rng.uniform(0.7, 1.3),
        gps_scale=rng.uniform(0.7, 1.3),
        usage_base=rng.uniform(8000.0, 16000.0),
        ble_base=rng.normal(-75.0, 5.0),
        wifi_rssi_base=rng.normal(-65.0, 5.0),
        wifi_count_base=rng.uniform(5.0, 15.0),
        charge_habit=rng.uniform(0.3, 0.9),
    )


def _day_streams(
    rng: np.random.Generator, prof: _Subject, lab: np.ndarray, s: float
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per item: (minute offsets, values) for one day."""
    q1, q2, q3, s1, s2, s3 = (int(x) for x in lab)
    minute = np.arange(1440)
    hour = minute / 60.0
    sleep_end = 1.0 + 6.0 + s * 2.0 * (s1 - 1)
    asleep = (hour >= 1.0) & (hour < sleep_end)
    evening = hour >= 18.0
    daytime = (hour >= 8.0) & (hour < 20.0)
    ten = minute[::10]
    two = minute[::2]
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    hr = prof.hr_base + rng.normal(0.0, 2.0) + rng.normal(0.0, 4.0, 1440)
    hr = hr - 10.0 * asleep + 6.0 * daytime
    if q3 == 0:
        hr = hr + s * 15.0 * evening
    out["wHr"] = (minute, np.round(hr, 1))

    is_day = (hour[ten] >= 7.0) & (hour[ten] < 19.0)
    light = np.where(is_day, prof.light_scale * rng.lognormal(np.log(250.0), 0.5, ten.size), rng.uniform(0.0, 5.0, ten.size))
    if q1 == 0:
        light = light + s * 150.0 * (hour[ten] < 6.0)
    out["wLight"] = (ten, np.round(np.maximum(light, 0.0), 2))

    awake = ~asleep
    gps = np.where(awake, rng.exponential(15.0 * prof.gps_scale, 1440), 0.0)
    if q2 == 0:
        gps = gps + s * 40.0 * (daytime & awake)
    out["mGps"] = (minute, np.round(gps, 2))

    usage = np.where(awake[ten], prof.usage_base * rng.uniform(0.3, 1.7, ten.size), 0.0)
    if s3 == 0:
        usage = usage + s * 30000.0 * (hour[ten] >= 21.0)
    out["mUsageStats"] = (ten, np.round(np.clip(usage, 0.0, 60000.0), 0))

    out["mBle"] = (ten, np.round(prof.ble_base + rng.normal(0.0, 6.0, ten.size), 0))
    home = (hour[ten] < 8.0) | (hour[ten] >= 20.0)
    out["mWifi_rssi"] = (ten, np.round(prof.wifi_rssi_base + 8.0 * home + rng.normal(0.0, 5.0, ten.size), 0))
    count = rng.poisson(prof.wifi_count_base * np.where(home, 0.6, 1.4))
    out["mWifi_count"] = (ten, count.astype(np.float64))

    p = np.tile(_ACTIVITY_P, (1440, 1))
    if q2 == 0:
        shift = s * 0.25 * daytime
        p[:, 3] -= shift  # still
        p[:, 6] += shift  # walking
    u = rng.random(1440)[:, None]
    awake_code = _ACTIVITY_CODES[(u > np.cumsum(p, axis=1)).sum(axis=1).clip(max=len(_ACTIVITY_CODES) - 1)]
    sleep_code = np.where(rng.random(1440) < 0.95, 3, 4)
    out["mActivity"] = (minute, np.where(asleep, sleep_code, awake_code).astype(np.float64))

    amb = np.where(asleep[two], rng.choice(3, two.size, p=[0.9, 0.08, 0.02]), rng.choice(3, two.size, p=[0.3, 0.45, 0.25]))
    out["mAmbience"] = (two, amb.astype(np.float64))

    p_screen = np.where(asleep, 0.3 * s if s2 == 0 else 0.0, 0.3) + 0.02 * asleep
    out["mScreenStatus"] = (minute, (rng.random(1440) < p_screen).astype(np.float64))

    charge = asleep & (rng.random() < prof.charge_habit)
    charge |= (rng.random(1440) < 0.03) & awake
    out["mACStatus"] = (minute, charge.astype(np.float64))
    return out


def _drop_window(rng: np.random.Generator, offsets: np.ndarray, values: np.ndarray, frac: float):
    if frac <= 0:
        return offsets, values
    width = int(round(frac * 1440))
    start = int(rng.integers(0, 1440 - width + 1))
    keep = (offsets < start) | (offsets >= start + width)
    return offsets[keep], values[keep]


def _generate_subject(config: SynthConfig, index: int, labels: np.ndarray) -> pd.DataFrame:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    prof = _subject_profile(rng)
    sid = subject_ids(config.n_subjects)[index]
    frames = []
    for d in range(config.days_per_subject):
        base = day_start(START_DATE + dt.timedelta(days=d))
        streams = _day_streams(rng, prof, labels[d], config.signal_strength)
        for item, (offs, vals) in streams.items():
            offs, vals = _drop_window(rng, offs, vals, config.missing_fraction)
            frames.append(
                pd.DataFrame({"timestamp": base + 60 * offs.astype(np.int64), "item": item, "value": vals})
            )
    df = pd.concat(frames, ignore_index=True)
    df = df.sort_values(["timestamp", "item"], kind="stable", ignore_index=True)
    df.insert(0, "subject_id", sid)
    return df


def generate(config: SynthConfig) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Return (sensor rows, label rows) in the ingest CSV layouts."""
    labels = draw_labels(config)
    per = config.days_per_subject
    sensors = pd.concat(
        [_generate_subject(config, i, labels[i * per:(i + 1) * per]) for i in range(config.n_subjects)],
        ignore_index=True,
    )
    sids = subject_ids(config.n_subjects)
    rows = []
    for i, sid in enumerate(sids):
        for d in range(per):
            date = (START_DATE + dt.timedelta(days=d)).isoformat()
            rows.append([sid, date, *labels[i * per + d]])
    label_frame = pd.DataFrame(rows, columns=["subject_id", "date", "Q1", "Q2", "Q3", "S1", "S2", "S3"])
    return sensors, label_frame


def label_frame_to_mapping(frame: pd.DataFrame) -> dict[tuple[str, dt.date], LabelVector]:
    return {
        (row[0], dt.date.fromisoformat(row[1])): LabelVector(*(int(v) for v in row[2:]))
        for row in frame.itertuples(index=False)
    }


def write(config: SynthConfig, out_dir: str | Path) -> tuple[Path, Path]:
    """Generate and write ``sensors.csv`` and ``labels.csv`` into ``out_dir``."""
    from .ingest import write_sensor_csv

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sensors, labels = generate(config)
    sp, lp = out_dir / "sensors.csv", out_dir / "labels.csv"
    write_sensor_csv(sensors, sp)
    labels.to_csv(lp, index=False, lineterminator="\n")
    return sp, lp
