import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from leanresnet.tensor import crop2d, max_abs_diff, pad2d, seeded_fill


def test_pad_ones():
    out = pad2d(np.ones((1, 1, 2, 2)), 1)
    assert out.shape == (1, 1, 4, 4)
    assert out[0, 0, 1:3, 1:3].sum() == 4 and out.sum() == 4


def test_pad_zero_is_identity(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    assert np.array_equal(pad2d(x, 0), x)


def test_pad_row():
    out = pad2d(np.array([[[[1.0, 2.0, 3.0]]]]), 1)
    assert out.shape == (1, 1, 3, 5)
    assert out[0, 0, 1].tolist() == [0, 1, 2, 3, 0]
    assert out[0, 0, 0].tolist() == [0] * 5


def test_pad_negative():
    with pytest.raises(ValueError):
        pad2d(np.ones((1, 1, 1, 1)), -1)


shapes4 = hnp.array_shapes(min_dims=4, max_dims=4, min_side=1, max_side=5)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, shapes4, elements=st.floats(-1e3, 1e3)), st.integers(0, 3))
def test_pad_then_crop_identity(x, pad):
    assert np.array_equal(crop2d(pad2d(x, pad), pad), x)


def test_max_abs_diff_basic(rng):
    a = rng.standard_normal((2, 2, 3, 3))
    assert max_abs_diff(a, a) == 0
    assert max_abs_diff(np.zeros((1, 1, 2, 2)), np.full((1, 1, 2, 2), 0.5)) == 0.5


def test_max_abs_diff_matches_loop(rng):
    a, b = rng.standard_normal((2, 2, 3, 4, 5))
    expected = 0.0
    for i in range(a.size):
        expected = max(expected, abs(a.flat[i] - b.flat[i]))
    assert max_abs_diff(a, b) == expected


def test_max_abs_diff_shape_mismatch():
    with pytest.raises(ValueError):
        max_abs_diff(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.data())
def test_max_abs_diff_metric(data):
    shape = data.draw(shapes4)
    arrs = [data.draw(hnp.arrays(np.float64, shape, elements=st.floats(-100, 100))) for _ in range(3)]
    a, b, c = arrs
    assert max_abs_diff(a, b) == max_abs_diff(b, a)
    assert max_abs_diff(a, c) <= max_abs_diff(a, b) + max_abs_diff(b, c) + 1e-12


def test_seeded_fill_deterministic():
    a = seeded_fill((2, 3, 4, 4), seed=7)
    b = seeded_fill((2, 3, 4, 4), seed=7)
    c = seeded_fill((2, 3, 4, 4), seed=8)
    assert max_abs_diff(a, b) == 0
    assert max_abs_diff(a, c) > 0
    assert a.dtype == np.float32
    assert seeded_fill((1, 1, 2, 2), 0, "normal", 2.0, "double").dtype == np.float64


def test_seeded_fill_uniform_mean():
    x = seeded_fill((1, 1, 1000, 1000), seed=3, distribution="uniform", scale=1.0, precision="double")
    assert abs(x.mean()) < 0.01
    assert x.min() >= -1 and x.max() < 1


def test_seeded_fill_rejects_bad_scale():
    with pytest.raises(ValueError):
        seeded_fill((1, 1, 1, 1), 0, scale=0)
