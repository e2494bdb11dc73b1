import numpy as np
import pytest

from mislstm import pipeline
from mislstm.types import BlockConfig, ConfigError


def test_prepared_shapes(small_data):
    n = len(small_data)
    assert n == 32 and small_data.n_subjects == 4
    assert small_data.continuous.shape == (n, 7, 1440)
    assert small_data.discrete.shape == (n, 9, 144)
    assert len(small_data.train_idx) + len(small_data.val_idx) == n


@pytest.mark.parametrize(
    "encoding, discrete_branch, image_shape",
    [
        ("multi_channel", True, (3, 6, 7, 16, 240)),
        ("stacked_vertical", True, (3, 6, 1, 112, 240)),
        ("multi_channel", False, (3, 6, 16, 16, 240)),
    ],
)
def test_builder_shapes(small_data, encoding, discrete_branch, image_shape):
    block = BlockConfig(n_hours=4, raster_height=16, encoding=encoding)
    b = pipeline.InputBuilder(small_data, "mis_lstm", block, discrete_branch).batch([0, 1, 2])
    assert tuple(b["images"].shape) == image_shape
    assert ("discrete" in b) == discrete_branch
    if discrete_branch:
        assert tuple(b["discrete"].shape) == (3, 6, 9, 24)
    assert b["images"].max() == 1.0 and b["images"].min() == 0.0


def test_builder_baselines(small_data):
    block = BlockConfig(n_hours=4, raster_height=16)
    seq = pipeline.InputBuilder(small_data, "lstm_baseline", block).batch([0])["sequence"]
    assert tuple(seq.shape) == (1, 144, 16)
    img = pipeline.InputBuilder(small_data, "cnn2d_baseline", block).batch([0])["images"]
    assert tuple(img.shape) == (1, 1, 7, 16, 1440)
    with pytest.raises(ConfigError):
        pipeline.InputBuilder(small_data, "transformer", block)


def test_sequence_means_continuous_per_window():
    cont = np.arange(7 * 1440, dtype=np.float32).reshape(1, 7, 1440)
    seq = pipeline.ten_minute_sequence(cont, np.zeros((1, 9, 144), np.float32))
    assert seq[0, 0, 0] == pytest.approx(4.5)
    assert seq[0, 143, 6] == pytest.approx(cont[0, 6, -10:].mean())


def test_save_load_round_trip(tmp_path, small_data):
    pipeline.save_prepared(small_data, tmp_path)
    back = pipeline.load_prepared(tmp_path)
    assert back.day_ids == small_data.day_ids
    assert back.subject_index == small_data.subject_index
    for name in ("subjects", "labels", "continuous", "discrete", "train_idx", "val_idx", "observed"):
        assert np.array_equal(getattr(back, name), getattr(small_data, name)), name
    assert back.stats.discrete_scaling == small_data.stats.discrete_scaling
