import pytest
import torch

from mislstm.encoders import (
    ContinuousEncoder,
    DiscreteEncoder,
    DiscreteEncoderConfig,
    encode_continuous,
    encode_discrete,
    parameter_count,
)
from mislstm.types import ConfigError, ShapeError


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return ContinuousEncoder().eval()


def test_default_embedding_length(encoder):
    emb, fmap = encode_continuous(torch.rand(7, 64, 240), encoder)
    assert emb.shape == (256,)
    assert fmap.shape[0] == 256


def test_zero_images_embed_identically(encoder):
    a, _ = encode_continuous(torch.zeros(7, 64, 240), encoder)
    b, _ = encode_continuous(torch.zeros(7, 64, 240), encoder)
    assert torch.equal(a, b)


def test_wider_block_same_embedding_length(encoder):
    emb, _ = encode_continuous(torch.rand(7, 64, 480), encoder)
    assert emb.shape == (256,)


def test_channel_mismatch(encoder):
    with pytest.raises(ShapeError):
        encoder(torch.zeros(1, 1, 64, 240))


def test_default_encoder_is_small():
    assert parameter_count(ContinuousEncoder()) < 5_000_000


def test_discrete_default_length():
    torch.manual_seed(0)
    enc = DiscreteEncoder()
    assert enc.out_dim == 64
    assert encode_discrete(torch.rand(9, 24), enc).shape == (64,)


def test_discrete_block_shorter_than_kernel():
    with pytest.raises(ConfigError):
        DiscreteEncoder()(torch.zeros(1, 9, 5))


def test_max_over_time_matches_sliding_windows():
    torch.manual_seed(1)
    enc = DiscreteEncoder(DiscreteEncoderConfig(kernel_sizes=(3,), filters_per_size=4))
    x = torch.rand(1, 9, 24)
    conv = enc.convs[0]
    brute = torch.stack(
        [torch.relu((conv.weight * x[0, :, t:t + 3]).sum(dim=(1, 2)) + conv.bias) for t in range(22)]
    ).amax(dim=0)
    assert torch.allclose(enc(x)[0], brute, atol=1e-6)


def test_lone_event_shift_invariance():
    torch.manual_seed(2)
    enc = DiscreteEncoder()
    a = torch.zeros(1, 9, 24)
    b = torch.zeros(1, 9, 24)
    a[0, 3, 10] = 1.0
    b[0, 3, 11] = 1.0
    # the event stays inside every kernel's valid range, so the pooled max is unchanged
    assert torch.allclose(enc(a), enc(b), atol=1e-6)
