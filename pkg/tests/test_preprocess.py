import numpy as np
import pytest

from mislstm import preprocess
from mislstm.types import ChannelStats, ConfigError, DayFeatureGrid, DISCRETE_FEATURES

from conftest import make_record, random_record


def test_midpoint_interpolation():
    rec = make_record(readings=[(0, "wHr", 10.0), (2, "wHr", 20.0)])
    vals, mask = preprocess.resample_continuous(rec, "wHr")
    assert vals[1] == 15.0
    assert mask[:3].tolist() == [True, False, True]
    assert (vals[2:] == 20.0).all()


def test_single_observation_held_everywhere():
    vals, _ = preprocess.resample_continuous(make_record(readings=[(100, "wHr", 5.0)]), "wHr")
    assert (vals == 5.0).all()


def test_no_observation_gives_zeros_and_false_mask():
    vals, mask = preprocess.resample_continuous(make_record(), "wLight")
    assert not vals.any() and not mask.any()


def test_clipping_before_interpolation():
    rec = make_record(readings=[(0, "wHr", 500.0), (10, "wHr", 100.0)])
    vals, _ = preprocess.resample_continuous(rec, "wHr", (30.0, 220.0))
    assert vals[0] == 220.0
    assert vals[5] == 160.0


def test_readings_in_one_minute_are_averaged():
    rec = make_record(readings=[(3.0, "wHr", 60.0), (3.5, "wHr", 80.0)])
    vals, _ = preprocess.resample_continuous(rec, "wHr")
    assert vals[3] == 70.0


def test_discrete_counts():
    acts = [(m, "mActivity", c) for m, c in zip(range(5), [7, 7, 3, 3, 3])]
    screen = [(m, "mScreenStatus", s) for m, s in zip(range(4), [1, 1, 0, 1])]
    d = preprocess.aggregate_discrete(make_record(readings=acts + screen))
    col = dict(zip(DISCRETE_FEATURES, d[:, 0]))
    assert col["mActivity_walking"] == 2 and col["mActivity_still"] == 3
    assert col["mActivity_vehicle"] == 0 and col["mActivity_bicycle"] == 0
    assert col["mScreenStatus_on"] == 3
    assert not preprocess.aggregate_discrete(make_record()).any()


def _grid(continuous):
    return DayFeatureGrid(continuous, np.zeros((9, 144)), np.ones((7, 1440), bool))


def test_population_std_and_constant_fallback():
    c = np.zeros((7, 1440))
    c[0, :720] = 4.0
    c[0, 720:] = 6.0
    c[1] = 3.0
    stats = preprocess.fit_stats([_grid(c)])
    assert stats.mean[0] == 5.0 and stats.std[0] == 1.0
    assert stats.std[1] == 1.0
    z = preprocess.standardize(_grid(c), stats)
    assert (z.continuous[1] == 0).all()


def test_z_score_example():
    c = np.full((7, 1440), 7.0)
    stats = ChannelStats((5.0,) * 7, (2.0,) * 7, {}, (1.0,) * 9)
    assert (preprocess.standardize(_grid(c), stats).continuous == 1.0).all()


def test_empty_training_set_errors():
    with pytest.raises(ValueError):
        preprocess.fit_stats([])


def test_stats_only_from_training_days(rng):
    recs = [random_record(rng) for _ in range(4)]
    mask = np.array([True, True, False, False])
    _, stats = preprocess.preprocess_days(recs, mask)
    ref = preprocess.fit_stats([preprocess.raw_grid(r) for r in recs[:2]])
    assert stats == ref


def test_full_pipeline_day_is_finite(small_data):
    g = small_data.grid(0)
    assert g.continuous.shape == (7, 1440) and g.discrete.shape == (9, 144)
    assert g.is_finite()


def test_refit_on_standardized_is_identity_in_distribution(rng):
    recs = [random_record(rng, n=2000) for _ in range(3)]
    grids, _ = preprocess.preprocess_days(recs, np.ones(3, bool))
    again = preprocess.fit_stats(grids)
    assert np.allclose(again.mean, 0.0, atol=1e-9)
    assert np.allclose(again.std, 1.0, atol=1e-9)


def test_zscore_discrete_switch(rng):
    recs = [random_record(rng, n=2000) for _ in range(3)]
    grids, stats = preprocess.preprocess_days(recs, np.ones(3, bool), preprocess.PreprocessConfig(discrete_scaling="zscore"))
    d = np.stack([g.discrete for g in grids])
    assert stats.discrete_scaling == "zscore"
    assert np.allclose(d.mean(axis=(0, 2)), 0.0, atol=1e-9)
    with pytest.raises(ConfigError):
        preprocess.PreprocessConfig(discrete_scaling="minmax")


def test_grid_file_round_trip(tmp_path, small_data):
    g = small_data.grid(1)
    preprocess.write_grid(tmp_path / "g.grid", g)
    back = preprocess.read_grid(tmp_path / "g.grid")
    assert np.array_equal(back.continuous, g.continuous.astype(np.float32))
    assert np.array_equal(back.observed_mask, g.observed_mask)
    assert np.array_equal(back.discrete, g.discrete.astype(np.float32))
