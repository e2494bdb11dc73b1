from dataclasses import replace

import numpy as np
import pytest
import torch

from mislstm import model as M
from mislstm.encoders import ContinuousEncoderConfig
from mislstm.types import HEAD_SIZES, UNKNOWN_SUBJECT, ConfigError, HeadLogits, LabelVector

SMALL = M.ModelConfig(
    n_subjects=3,
    lstm_hidden=16,
    subject_embed_dim=4,
    continuous=ContinuousEncoderConfig(stages=((8, 1), (16, 2)), embed_dim=16, stem_kernel=(4, 8), stem_stride=(4, 8)),
)


def day_batch(n=2, blocks=6, h=16, w=240, channels=7):
    torch.manual_seed(0)
    return {
        "images": (torch.rand(n, blocks, channels, h, w) > 0.9).float(),
        "discrete": torch.rand(n, blocks, 9, w // 10),
        "subject": torch.tensor([0, 1][:n]),
    }


def test_cbam_preserves_shape_and_bounds():
    torch.manual_seed(0)
    cbam = M.CBAM(320, 8, (1, 3))
    x = torch.randn(2, 320, 1, 6)
    cg, sg = cbam.gates(x)
    assert cbam(x).shape == x.shape
    assert ((cg > 0) & (cg < 1)).all() and ((sg > 0) & (sg < 1)).all()
    assert not cbam(torch.zeros_like(x)).any()
    seq = torch.randn(2, 6, 320)
    assert M.cbam_refine(seq, cbam).shape == (2, 6, 320)


def test_forward_shapes():
    model = M.build_model("mis_lstm", SMALL).eval()
    out = model(day_batch())
    assert out.shape == (2, 13)
    assert model.block_embeddings(day_batch()).shape == (2, 6, 16 + 64)


def test_forward_day_and_predict():
    model = M.build_model("mis_lstm", SMALL)
    b = day_batch(1)
    logits = M.forward_day(model, list(b["images"][0].numpy()), list(b["discrete"][0].numpy()), 0)
    assert isinstance(logits, HeadLogits)
    assert [len(logits[h]) for h in ("q1", "q2", "q3", "s1", "s2", "s3")] == list(HEAD_SIZES)
    assert isinstance(M.predict(logits), LabelVector)
    assert model.training  # mode restored


def test_predict_argmax_and_ties():
    flat = np.zeros(13)
    flat[6:9] = (0.1, 0.9, 0.3)
    lab = M.predict(HeadLogits.from_flat(flat))
    assert lab.s1 == 1 and lab.q1 == 0


def test_unknown_subject_only_changes_embedding_path():
    model = M.build_model("mis_lstm", SMALL).eval()
    b = day_batch(1)
    known = model(b)
    unknown = model({**b, "subject": torch.tensor([UNKNOWN_SUBJECT])})
    assert not torch.allclose(known, unknown)
    flat = M.build_model("mis_lstm", replace(SMALL, subject_embed_dim=0)).eval()
    assert torch.equal(flat(b), flat({**b, "subject": torch.tensor([UNKNOWN_SUBJECT])}))


def test_invalid_subject():
    model = M.build_model("mis_lstm", SMALL).eval()
    with pytest.raises(ValueError):
        model({**day_batch(1), "subject": torch.tensor([3])})


def test_feature_map_placement():
    model = M.build_model("mis_lstm", replace(SMALL, cbam_placement="feature_map")).eval()
    assert model.cbam is None and model(day_batch()).shape == (2, 13)


def test_no_discrete_branch_uses_image_only():
    cfg = replace(SMALL, discrete_branch=False, continuous=replace(SMALL.continuous, input_channels=16))
    model = M.build_model("mis_lstm", cfg).eval()
    b = day_batch(channels=16)
    del b["discrete"]
    assert model(b).shape == (2, 13)


@pytest.mark.parametrize("kind", ["lstm_baseline", "cnn1d_baseline"])
def test_sequence_baselines(kind):
    model = M.build_model(kind, SMALL).eval()
    out = model({"sequence": torch.rand(3, 144, 16), "subject": torch.tensor([0, 1, 2])})
    assert out.shape == (3, 13)


def test_cnn2d_baseline():
    model = M.build_model("cnn2d_baseline", SMALL).eval()
    out = model({"images": torch.rand(2, 1, 7, 16, 1440), "subject": torch.tensor([0, 1])})
    assert out.shape == (2, 13)


def test_config_errors():
    with pytest.raises(ConfigError):
        M.ModelConfig(cbam_placement="after")
    with pytest.raises(ConfigError):
        M.build_model("transformer", SMALL)
