import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import max_rel_error, numeric_grad_at
from ostr import autograd as ag
from ostr.encoder import Encoder, EncoderConfig, encode, grad_encode
from ostr.errors import InvalidArgument

SMALL = EncoderConfig(base_channels=2, blocks_per_stage=1, height=32, width=32)


@pytest.mark.parametrize("width", [64, 256])
def test_shape_law(width, rng):
    cfg = EncoderConfig(base_channels=4, blocks_per_stage=1, height=32, width=width)
    enc = Encoder(cfg, np.random.default_rng(0), np.float64)
    f = encode(enc, rng.random((2, 32, width)))
    assert f.shape == (2, 4, width // 8, 16)
    assert cfg.downsample == 8


@given(st.integers(0, 2**31))
@settings(max_examples=5)
def test_shape_law_default_width(seed):
    enc = Encoder(EncoderConfig(base_channels=2, blocks_per_stage=1), np.random.default_rng(seed))
    x = np.random.default_rng(seed).random((1, 32, 256))
    assert encode(enc, x).shape == (1, 4, 32, 8)


def test_wrong_input_size_is_rejected():
    enc = Encoder(SMALL, np.random.default_rng(0))
    with pytest.raises(InvalidArgument):
        enc(np.zeros((1, 32, 40)))


def test_gradients_match_finite_differences(rng):
    enc = Encoder(SMALL, np.random.default_rng(1), np.float64)
    enc.eval()  # fixed normalization statistics make the map smooth in the input
    x = rng.random((2, 32, 32))
    up = rng.standard_normal((2, 4, 4, 8))
    grads, gx = grad_encode(enc, x, up)

    def f():
        with ag.no_grad():
            return float(np.sum(enc(x).data * up))

    idx = rng.choice(x.size, 12, replace=False)
    num = numeric_grad_at(f, x, idx)
    assert max_rel_error(gx.reshape(-1)[idx], num) < 1e-4
    for name in ("stem.w", "stage3.0.conv2.w", "stage2.0.proj.w"):
        p = dict(enc.named_parameters())[name]
        idx = rng.choice(p.data.size, 6, replace=False)
        num = numeric_grad_at(f, p.data, idx)
        assert max_rel_error(grads[name].reshape(-1)[idx], num) < 1e-4, name


def test_zero_upstream_gives_zero_gradients(rng):
    enc = Encoder(SMALL, np.random.default_rng(2), np.float64)
    grads, gx = grad_encode(enc, rng.random((2, 32, 32)), np.zeros((2, 4, 4, 8)))
    assert not np.any(gx)
    assert all(not np.any(g) for g in grads.values())


def test_identity_block_passes_shortcut():
    enc = Encoder(SMALL, np.random.default_rng(3), np.float64)
    block = enc.stage1[0]
    assert block.proj is None
    for p in (block.conv1.w, block.conv2.w):
        p.data[:] = 0.0
    block.eval()
    x = ag.Tensor(np.abs(np.random.default_rng(0).standard_normal((1, 8, 8, 2))))
    out = block(x).data
    # zeroed convolutions leave only the BN shift (zero at init) on the residual path
    np.testing.assert_allclose(out, x.data, atol=1e-12)
