import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ostr.corpus import NoiseConfig, Orientation, synth_text_line
from ostr.errors import InvalidArgument, WidthOverflowError
from ostr.preprocess import (PreprocessConfig, preprocess, preprocess_batch, resize_normalize,
                             rotate_if_vertical)


def test_rotation_rule_on_exhaustive_grid():
    for h in range(1, 65):
        for w in range(1, 65):
            img = np.zeros((h, w))
            out, rotated = rotate_if_vertical(img)
            assert rotated == (h > 1.5 * w)
            assert out.shape == ((w, h) if rotated else (h, w))


def test_rotation_is_anticlockwise():
    img = np.arange(3.0).reshape(3, 1)   # 0 on top, 2 at the bottom
    out, rotated = rotate_if_vertical(img)
    assert rotated
    np.testing.assert_array_equal(out, [[0.0, 1.0, 2.0]])


def test_square_and_boundary_are_not_rotated():
    assert not rotate_if_vertical(np.zeros((3, 2)))[1]    # exactly 1.5
    assert rotate_if_vertical(np.zeros((4, 2)))[1]


@given(st.integers(1, 40), st.integers(1, 40), st.floats(0, 1))
def test_constant_images_stay_constant(h, w, c):
    if w * 32 / h > 256:
        return
    canvas, valid = resize_normalize(np.full((h, w), c))
    np.testing.assert_allclose(canvas[:, :valid], c, atol=1e-12)
    assert np.all(canvas[:, valid:] == 0.0)


@given(arrays(np.float64, st.tuples(st.integers(8, 32), st.integers(2, 64)), elements=st.floats(0, 1)))
@settings(max_examples=40)
def test_resize_output_contract(img):
    canvas, valid = resize_normalize(img)
    assert canvas.shape == (32, 256)
    assert 1 <= valid <= 256
    assert valid == max(1, round(img.shape[1] * 32 / img.shape[0]))
    assert canvas.min() >= 0 and canvas.max() <= 1


def test_canonical_input_is_left_untouched(rng):
    img = rng.random((32, 100))
    canvas, valid = resize_normalize(img)
    assert valid == 100
    np.testing.assert_array_equal(canvas[:, :100], img)


def test_resize_roughly_preserves_mean_ink(rng):
    img = rng.random((64, 96))
    canvas, valid = resize_normalize(img)
    assert valid == 48
    assert abs(canvas[:, :valid].mean() - img.mean()) < 0.02


def test_preprocess_is_idempotent_on_its_output(charset8):
    s = synth_text_line(charset8, [1, 2, 3], Orientation.VERTICAL, NoiseConfig.default(), 4)
    p = preprocess(s.image)
    assert p.was_rotated and p.orientation_label is Orientation.VERTICAL
    again = preprocess(p.image[:, :p.valid_width])
    assert not again.was_rotated
    np.testing.assert_array_equal(again.image, p.image)


def test_rotation_switch_off_keeps_vertical_label(charset8):
    s = synth_text_line(charset8, [1, 2], Orientation.VERTICAL, NoiseConfig(), 0)
    p = preprocess(s.image, PreprocessConfig(rotation=False))
    assert not p.was_rotated and p.orientation_label is Orientation.VERTICAL
    assert p.valid_width == 16


def test_overflow_and_empty():
    with pytest.raises(WidthOverflowError):
        resize_normalize(np.zeros((32, 300)))
    with pytest.raises(InvalidArgument):
        resize_normalize(np.zeros((0, 4)))


def test_batch_skips_overflowing_samples_with_warning(charset8):
    ok = synth_text_line(charset8, [1, 2], Orientation.HORIZONTAL, NoiseConfig(), 0)
    wide = synth_text_line(charset8, [1] * 5, Orientation.HORIZONTAL, NoiseConfig(), 0)
    with pytest.warns(UserWarning):
        images, widths, vertical, kept = preprocess_batch([ok, wide, ok], PreprocessConfig(canonical_width=128))
    assert kept == [0, 2] and images.shape == (2, 32, 128)
    np.testing.assert_array_equal(widths, [64, 64])
    assert not vertical.any()
