import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import check_op
from ostr import autograd as ag
from ostr.cirn import (CIRN, CharacterBundle, CirnConfig, char_features, classify_heads, exchange_and_reconstruct,
                       extract_content, extract_orientation, fuse, make_bundle, reconstruct, split_fused)
from ostr.corpus import Orientation, rot90ccw
from ostr.errors import InvalidArgument

CFG = CirnConfig(content_dim=8, orient_dim=6, deconv_channels=(8, 8, 4, 4))


def make(seed=0, channels=5):
    return CIRN(CFG, channels, 4, np.random.default_rng(seed), np.float64)


def test_char_features_is_positionwise_product(rng):
    f = rng.standard_normal((2, 4, 3))
    a = rng.random((2, 4))
    got = char_features(f, a).data
    np.testing.assert_allclose(got, f * a[..., None])
    with pytest.raises(InvalidArgument):
        char_features(f, rng.random((4, 2)))


def test_content_sums_and_orientation_averages(rng):
    cirn = make()
    fc = ag.Tensor(rng.standard_normal((2, 4, 5)))
    cmap, cvec = extract_content(cirn, fc)
    w = cirn.content.w.data
    assert cirn.content.b is None
    np.testing.assert_allclose(cmap.data, fc.data @ w, atol=1e-12)
    np.testing.assert_allclose(cvec.data, (fc.data @ w).sum(axis=(0, 1)), atol=1e-12)
    ovec = extract_orientation(cirn, fc)
    np.testing.assert_allclose(ovec.data, (fc.data @ cirn.orient.w.data + cirn.orient.b.data).mean(axis=(0, 1)),
                               atol=1e-12)
    assert cvec.shape == (8,) and ovec.shape == (6,)


def test_one_hot_attention_pools_a_single_position(rng):
    cirn = make()
    f = rng.standard_normal((4, 6, 5))
    a = np.zeros((4, 6))
    a[2, 3] = 1.0
    _, cvec = extract_content(cirn, char_features(f, a))
    np.testing.assert_allclose(cvec.data, f[2, 3] @ cirn.content.w.data, atol=1e-12)


def test_identity_content_transform_and_constant_orientation(rng):
    cirn = CIRN(CirnConfig(5, 6, (8, 8, 4, 4)), 5, 4, np.random.default_rng(0), np.float64)
    cirn.content.w.data[...] = np.eye(5)
    fc = rng.standard_normal((3, 4, 5))
    np.testing.assert_array_equal(extract_content(cirn, fc)[0].data, fc)
    const = np.broadcast_to(rng.standard_normal(5), (3, 4, 5))
    ovec = extract_orientation(cirn, const).data
    np.testing.assert_allclose(ovec, const[0, 0] @ cirn.orient.w.data + cirn.orient.b.data, atol=1e-12)
    cirn.orient.b.data[...] = 0.0
    assert not np.any(extract_orientation(cirn, np.zeros((3, 4, 5))).data)


def test_orientation_init_matches_content_scale(rng):
    """Uniform attention over P positions: with the init gain, the averaged
    orientation transform sees the same input scale as the summed content one."""
    p = 24
    plain = CIRN(CFG, 5, 4, np.random.default_rng(3), np.float64)
    scaled = CIRN(CFG, 5, 4, np.random.default_rng(3), np.float64, grid_positions=p)
    np.testing.assert_allclose(scaled.orient.w.data, p * plain.orient.w.data)
    np.testing.assert_array_equal(scaled.content.w.data, plain.content.w.data)
    f = rng.standard_normal((4, 6, 5))
    fc = char_features(f, np.full((4, 6), 1.0 / p))
    np.testing.assert_allclose(extract_orientation(scaled, fc).data - scaled.orient.b.data,
                               f.mean(axis=(0, 1)) @ plain.orient.w.data, rtol=1e-12, atol=1e-12)


def test_fuse_and_split_round_trip(rng):
    c, o = rng.standard_normal((3, 8)), rng.standard_normal((3, 6))
    fused = fuse(ag.Tensor(c), ag.Tensor(o))
    assert fused.shape == (3, 14)
    c2, o2 = split_fused(fused, 8)
    np.testing.assert_array_equal(c2.data, c)
    np.testing.assert_array_equal(o2.data, o)


@given(st.integers(0, 2**31), st.floats(0.1, 100))
@settings(max_examples=10)
def test_reconstruction_shape_and_range(seed, scale):
    cirn = make(seed % 7)
    fused = np.random.default_rng(seed).standard_normal((3, 14)) * scale
    out = reconstruct(cirn, fused).data
    assert out.shape == (3, 32, 32)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_reconstruction_keeps_leading_dims(rng):
    out = reconstruct(make(), rng.standard_normal((2, 3, 14)))
    assert out.shape == (2, 3, 32, 32)


def test_reconstruction_gradients(rng):
    cirn = make(1)
    check_op(lambda x: reconstruct(cirn, x), rng.standard_normal((2, 14)), tol=1e-4)


def test_heads_shapes(rng):
    cirn = make()
    cls, ori = classify_heads(cirn, ag.Tensor(rng.standard_normal((5, 8))), ag.Tensor(rng.standard_normal((5, 6))))
    assert cls.shape == (5, 4) and ori.shape == (5, 2)


def test_exchange_swaps_orientation(rng, charset8):
    cirn = make(channels=5)
    f = rng.standard_normal((4, 4, 5))
    att = rng.random((4, 4))
    a = make_bundle(cirn, f, att / att.sum(), 2, Orientation.HORIZONTAL)
    b = make_bundle(cirn, f[::-1], att / att.sum(), 5, "V")
    assert isinstance(a, CharacterBundle) and b.orient_target is Orientation.VERTICAL
    pair = exchange_and_reconstruct(cirn, a, b, charset8)
    np.testing.assert_array_equal(pair.target_V_a, rot90ccw(charset8.glyphs[2].bitmap))
    np.testing.assert_array_equal(pair.target_H_b, charset8.glyphs[5].bitmap)
    # V_a is the decoder fed a's content with b's orientation
    want = reconstruct(cirn, fuse(a.content_vec, b.orient_vec)).data
    np.testing.assert_allclose(pair.V_a.data, want, atol=1e-12)
    with pytest.raises(InvalidArgument):
        exchange_and_reconstruct(cirn, b, a, charset8)


def test_rejects_wrong_depth():
    with pytest.raises(InvalidArgument):
        CIRN(CirnConfig(8, 8, (8, 8, 8)), 5, 4, np.random.default_rng(0))
