import datetime as dt

import numpy as np
import pytest
import torch

from mislstm import ingest, pipeline, synthgen
from mislstm.types import ITEMS, DayRecord, SensorReading, day_start

torch.set_num_threads(1)

# acceptance outcomes, keyed by criterion number
_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA[n] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, title = _CRITERIA[n]
        terminalreporter.write_line(f"[{status}] criterion {n}: {title}")


def make_record(subject="u01", date=dt.date(2025, 1, 1), readings=()):
    """readings: (minute, item, value) triples."""
    base = day_start(date)
    return DayRecord.from_readings(
        subject, date, [SensorReading(subject, base + int(m * 60), item, float(v)) for m, item, v in readings]
    )


def random_record(rng, subject="u01", date=dt.date(2025, 1, 1), n=300):
    base = day_start(date)
    readings = []
    for _ in range(n):
        item = ITEMS[rng.integers(len(ITEMS))]
        value = float(rng.integers(0, 4)) if item.startswith(("mActivity", "mAmbience", "mScreen", "mAC")) else float(rng.normal(50, 20))
        readings.append(SensorReading(subject, base + int(rng.integers(0, 86400)), item, value))
    return DayRecord.from_readings(subject, date, readings)


def synthetic_prepared(n_subjects=10, days=60, seed=1, strength=1.0):
    cfg = synthgen.SynthConfig(n_subjects=n_subjects, days_per_subject=days, seed=seed, signal_strength=strength)
    sensors, labels = synthgen.generate(cfg)
    ds = ingest.build_dataset(ingest.parse_sensor_frame(sensors), synthgen.label_frame_to_mapping(labels))
    return pipeline.prepare(ds)


@pytest.fixture(scope="session")
def small_data():
    """4 subjects x 8 days; fast enough for unit tests."""
    return synthetic_prepared(n_subjects=4, days=8, seed=3)


@pytest.fixture(scope="session")
def planted_data():
    """The acceptance dataset: 10 subjects x 60 days, strength 1, seed 1."""
    return synthetic_prepared()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
