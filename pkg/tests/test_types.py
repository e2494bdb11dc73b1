import datetime as dt

import numpy as np
import pytest

from mislstm.types import (
    HEAD_SIZES,
    BlockConfig,
    ChannelStats,
    ConfigError,
    DayFeatureGrid,
    HeadLogits,
    LabelVector,
    ShapeError,
    day_start,
    validate_day_record,
)

from conftest import make_record


def test_valid_record_passes():
    rec = make_record(readings=[(720, "wHr", 72.0)])
    assert validate_day_record(rec).ok


def test_unknown_channel_is_reported():
    rec = make_record(readings=[(10, "wFoo", 1.0)])
    res = validate_day_record(rec)
    assert not res.ok
    assert any(v.startswith("unknown channel: wFoo") for v in res.violations)
    assert [r.item for r in rec.readings()] == ["wFoo"]


def test_reading_on_next_day_is_reported():
    rec = make_record(readings=[(1440 + 5, "wHr", 70.0)])
    assert any("timestamp outside day" in v for v in validate_day_record(rec).violations)


def test_non_finite_and_bad_codes_are_reported():
    rec = make_record(readings=[(1, "wHr", float("nan")), (2, "mActivity", 6.0)])
    v = validate_day_record(rec).violations
    assert any("non-finite" in x for x in v)
    assert any("invalid code for mActivity" in x for x in v)


def test_record_sorted_and_read_only():
    rec = make_record(readings=[(5, "wHr", 1.0), (1, "wHr", 2.0)])
    assert list(rec.timestamps) == sorted(rec.timestamps)
    with pytest.raises(ValueError):
        rec.values[0] = 3.0


def test_day_start_is_utc_midnight():
    assert day_start(dt.date(2025, 1, 1)) == 1735689600


def test_label_vector_ranges():
    LabelVector(1, 0, 1, 2, 1, 0)
    with pytest.raises(ValueError):
        LabelVector(0, 0, 0, 3, 0, 0)
    with pytest.raises(ValueError):
        LabelVector(2, 0, 0, 0, 0, 0)


def test_grid_shapes_are_checked():
    ok = DayFeatureGrid(np.zeros((7, 1440)), np.zeros((9, 144)), np.ones((7, 1440), bool))
    assert ok.is_finite()
    with pytest.raises(ShapeError):
        DayFeatureGrid(np.zeros((7, 1439)), np.zeros((9, 144)), np.ones((7, 1439), bool))


def test_block_config_validation():
    cfg = BlockConfig(n_hours=4)
    assert (cfg.n_blocks, cfg.block_minutes, cfg.block_windows) == (6, 240, 24)
    for bad in (dict(n_hours=5), dict(raster_height=1), dict(value_range=(1, 1)), dict(encoding="x")):
        with pytest.raises(ConfigError):
            BlockConfig(**bad)


def test_head_logits_round_trip_exact(rng):
    flat = rng.normal(size=13) * 1e3
    h = HeadLogits.from_flat(flat)
    assert [len(h[k]) for k in ("q1", "q2", "q3", "s1", "s2", "s3")] == list(HEAD_SIZES)
    back = HeadLogits.from_json(h.to_json())
    assert back == h
    assert np.array_equal(back.flat(), flat)


def test_head_logits_rejects_wrong_sizes():
    with pytest.raises(ShapeError):
        HeadLogits.from_flat(np.zeros(12))
    with pytest.raises(ValueError):
        HeadLogits.from_flat([np.inf] + [0.0] * 12)


def test_channel_stats_json_round_trip():
    s = ChannelStats(tuple(range(7)), (1.0,) * 7, {"wHr": (30.0, 220.0)}, (2.0,) * 9)
    assert ChannelStats.from_json(s.to_json()) == s
