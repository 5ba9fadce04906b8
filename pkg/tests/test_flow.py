import numpy as np
import pytest
from scipy import ndimage

from respifusion.errors import InvalidTimestep, PatchTooSmall
from respifusion.flow import (FlowField, FlowParams, dense_flow, expand_frame,
                              flow_from_expansions, vertical_velocities)


def shift_bilinear(img, dy, dx):
    """Oracle: resample the image displaced by a known (dy, dx)."""
    h, w = img.shape
    rows, cols = np.mgrid[0:h, 0:w]
    return ndimage.map_coordinates(img, [rows - dy, cols - dx], order=1,
                                   mode="nearest")


def texture(seed, n=64):
    return np.random.default_rng(seed).random((n, n))


def test_identical_patches_zero_flow():
    img = texture(0)
    field = dense_flow(img, img)
    assert np.abs(field.flow).max() < 1e-3


def test_integer_shift_down():
    img = texture(1)
    field = dense_flow(img, shift_bilinear(img, 1.0, 0.0))
    assert 0.8 <= np.median(field.vy) <= 1.2
    assert abs(np.median(field.vx)) < 0.2


def test_subpixel_shift():
    img = texture(2)
    field = dense_flow(img, shift_bilinear(img, 0.5, 0.0))
    assert 0.35 <= np.median(field.vy) <= 0.65


def test_antisymmetry_small_displacement():
    sums = []
    for seed in range(10):
        img = texture(seed)
        moved = shift_bilinear(img, 0.7, 0.3)
        f = dense_flow(img, moved)
        b = dense_flow(moved, img)
        sums.append(np.median(np.abs(f.flow + b.flow)))
    assert np.median(sums) < 0.1


def test_translation_unbiased_within_20pct():
    errs = []
    for seed in range(30):
        img = texture(seed)
        for shift in (0.5, 1.0, 2.0):
            field = dense_flow(img, shift_bilinear(img, shift, 0.0))
            errs.append(abs(np.median(field.vy) - shift) / shift)
    assert np.median(errs) < 0.2


def test_horizontal_shift_recovered_in_vx():
    img = texture(3)
    field = dense_flow(img, shift_bilinear(img, 0.0, 1.5))
    assert 1.2 <= np.median(field.vx) <= 1.8


def test_patch_too_small():
    with pytest.raises(PatchTooSmall):
        dense_flow(np.zeros((4, 4)), np.zeros((4, 4)))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        dense_flow(np.zeros((10, 10)), np.zeros((10, 12)))


def test_poly_n_must_be_odd():
    with pytest.raises(ValueError):
        FlowParams(poly_n=4)


def test_vertical_velocities_arithmetic():
    flow = np.zeros((4, 4, 2))
    flow[..., 1] = 1.0
    field = FlowField(flow=flow, t_prev=0.0, t_curr=1 / 15.0)
    v = vertical_velocities(field, 1 / 15.0)
    assert np.allclose(v, 15.0)


def test_vertical_velocities_zero_field():
    field = FlowField(flow=np.zeros((4, 4, 2)), t_prev=0.0, t_curr=0.1)
    assert np.all(vertical_velocities(field, 0.1) == 0)


def test_vertical_velocities_half_pixel():
    flow = np.zeros((2, 2, 2))
    flow[..., 1] = 0.5
    field = FlowField(flow=flow, t_prev=0.0, t_curr=1 / 8.7)
    assert np.allclose(vertical_velocities(field, 1 / 8.7), 4.35)


def test_invalid_timestep():
    field = FlowField(flow=np.zeros((2, 2, 2)), t_prev=0.0, t_curr=0.0)
    with pytest.raises(InvalidTimestep):
        vertical_velocities(field, 0.0)


def test_expansion_reuse_matches_direct():
    a, b = texture(5), shift_bilinear(texture(5), 0.8, 0.0)
    params = FlowParams()
    direct = dense_flow(a, b, params)
    cached = flow_from_expansions(expand_frame(a, params), expand_frame(b, params), params)
    assert np.array_equal(direct.flow, cached.flow)
