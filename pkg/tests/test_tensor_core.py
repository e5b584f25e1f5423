"""Tensor kernel tests: hand oracles for every derived value, plus the
determinism and permutation invariants."""

import numpy as np
import pytest

from unilvc import tensor_core as tc
from unilvc.errors import InvalidArgument

RNG = np.random.default_rng(20260810)


def rand_t(n, c, h, w, rng=RNG):
    return rng.standard_normal((n, c, h, w)).astype(np.float32)


# ---------------------------------------------------------------- depthwise

class TestDepthwiseConv:
    def test_zero_kernel(self):
        t = np.ones((1, 1, 3, 3), dtype=np.float32)
        k = np.zeros((1, 3, 3), dtype=np.float32)
        out = tc.depthwise_conv(t, k, 1, 1)
        assert np.array_equal(out, np.zeros_like(t))

    def test_identity_kernel(self):
        t = rand_t(1, 4, 5, 6)
        k = np.zeros((4, 3, 3), dtype=np.float32)
        k[:, 1, 1] = 1.0
        assert np.array_equal(tc.depthwise_conv(t, k, 1, 1), t)

    def test_ramp_neighborhood_sum(self):
        # direct summation by hand oracle
        t = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        k = np.ones((1, 3, 3), dtype=np.float32)
        out = tc.depthwise_conv(t, k, 1, 1)
        expect = sum(t[0, 0, i, j] for i in (0, 1, 2) for j in (0, 1, 2))
        assert out[0, 0, 1, 1] == expect

    def test_oracle_loop(self):
        t = rand_t(1, 3, 6, 5)
        k = RNG.standard_normal((3, 3, 3)).astype(np.float32)
        out = tc.depthwise_conv(t, k, 1, 1)
        tp = np.pad(t, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for c in range(3):
            for i in range(6):
                for j in range(5):
                    acc = 0.0
                    for dy in range(3):
                        for dx in range(3):
                            acc += k[c, dy, dx] * tp[0, c, i + dy, j + dx]
                    ref[0, c, i, j] = acc
        np.testing.assert_allclose(out, ref, rtol=0, atol=1e-5)

    def test_stride_two(self):
        t = rand_t(1, 2, 8, 8)
        k = RNG.standard_normal((2, 3, 3)).astype(np.float32)
        out = tc.depthwise_conv(t, k, 2, 1)
        full = tc.depthwise_conv(t, k, 1, 1)
        np.testing.assert_array_equal(out, full[:, :, ::2, ::2])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            tc.depthwise_conv(rand_t(1, 2, 4, 4), np.zeros((3, 3, 3), np.float32), 1, 1)


# ---------------------------------------------------------------- linear mix

class TestLinearMix:
    def test_identity(self):
        t = rand_t(1, 4, 3, 3)
        out = tc.linear_mix(t, np.eye(4, dtype=np.float32), np.zeros(4, np.float32))
        np.testing.assert_array_equal(out, t)

    def test_zero_weights_bias(self):
        t = rand_t(1, 4, 3, 3)
        b = np.arange(4, dtype=np.float32)
        out = tc.linear_mix(t, np.zeros((4, 4), np.float32), b)
        np.testing.assert_array_equal(out, np.broadcast_to(b[None, :, None, None], t.shape))

    def test_hand_matrix(self):
        t = np.zeros((1, 2, 1, 1), dtype=np.float32)
        t[0, 0], t[0, 1] = 1.0, 2.0
        w = np.array([[1, 1], [1, -1]], dtype=np.float32)
        out = tc.linear_mix(t, w, np.zeros(2, np.float32))
        assert out[0, 0, 0, 0] == 3.0 and out[0, 1, 0, 0] == -1.0

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            tc.linear_mix(rand_t(1, 3, 2, 2), np.eye(4, dtype=np.float32))


# ---------------------------------------------------------------- wsilu

class TestWsilu:
    def test_zero(self):
        assert tc.wsilu(np.zeros((1, 1, 1, 1), np.float32))[0, 0, 0, 0] == 0.0

    def test_asymptote(self):
        x = np.full((1, 1, 1, 1), 40.0, np.float32)
        np.testing.assert_allclose(tc.wsilu(x), x, rtol=1e-6)

    def test_at_one(self):
        # scalar sigmoid evaluation: 1 * 1/(1 + e^-4)
        got = tc.wsilu(np.ones((1, 1, 1, 1), np.float32))[0, 0, 0, 0]
        assert abs(got - 0.9820137900379085) < 1e-6

    def test_extreme_negative_is_finite(self):
        out = tc.wsilu(np.full((1, 1, 1, 1), -1e4, np.float32))
        assert np.isfinite(out).all()


# ---------------------------------------------------------------- pixel shuffle

class TestPixelShuffle:
    def test_inverse_pair_exact(self):
        t = rand_t(2, 3, 16, 24)
        assert np.array_equal(tc.pixel_shuffle(tc.pixel_unshuffle(t, 8), 8), t)

    def test_two_by_two_channel_order(self):
        t = np.array([[1, 2], [3, 4]], dtype=np.float32).reshape(1, 1, 2, 2)
        out = tc.pixel_unshuffle(t, 2)
        assert out.shape == (1, 4, 1, 1)
        np.testing.assert_array_equal(out[0, :, 0, 0], [1, 2, 3, 4])

    def test_r_one_identity(self):
        t = rand_t(1, 2, 3, 3)
        assert np.array_equal(tc.pixel_unshuffle(t, 1), t)
        assert np.array_equal(tc.pixel_shuffle(t, 1), t)

    def test_indivisible_errors(self):
        with pytest.raises(InvalidArgument):
            tc.pixel_unshuffle(rand_t(1, 1, 3, 4), 2)
        with pytest.raises(InvalidArgument):
            tc.pixel_shuffle(rand_t(1, 3, 2, 2), 2)


# ---------------------------------------------------------------- spatial shift

class TestSpatialShift:
    def test_zero_in_zero_out(self):
        t = np.zeros((1, 8, 4, 4), np.float32)
        assert np.array_equal(tc.spatial_shift(t), t)

    def test_right_group_moves_one_pixel(self):
        # index-map oracle for the "right" group (channel 0 of 8)
        t = np.zeros((1, 8, 4, 4), np.float32)
        t[0, 0, 2, 1] = 1.0
        out = tc.spatial_shift(t)
        assert out[0, 0, 2, 2] == 1.0 and out[0, 0].sum() == 1.0

    def test_right_edge_drops(self):
        t = np.zeros((1, 8, 4, 4), np.float32)
        t[0, 0, 1, 3] = 1.0
        assert tc.spatial_shift(t)[0, 0].sum() == 0.0

    def test_direction_map(self):
        t = np.zeros((1, 16, 5, 5), np.float32)
        for c in range(8):
            t[0, c, 2, 2] = 1.0
        out = tc.spatial_shift(t)
        assert out[0, 0, 2, 3] == 1.0   # right
        assert out[0, 1, 2, 3] == 1.0
        assert out[0, 2, 2, 1] == 1.0   # left
        assert out[0, 4, 3, 2] == 1.0   # down
        assert out[0, 6, 1, 2] == 1.0   # up

    def test_second_half_passthrough(self):
        t = rand_t(1, 16, 4, 4)
        out = tc.spatial_shift(t)
        assert np.array_equal(out[:, 8:], t[:, 8:])

    def test_interior_mass_conserved(self):
        t = np.zeros((1, 8, 6, 6), np.float32)
        t[:, :, 2:4, 2:4] = RNG.standard_normal((1, 8, 2, 2)).astype(np.float32)
        out = tc.spatial_shift(t)
        np.testing.assert_allclose(out.sum(axis=(2, 3)), t.sum(axis=(2, 3)), atol=1e-5)

    def test_indivisible(self):
        with pytest.raises(InvalidArgument):
            tc.spatial_shift(rand_t(1, 6, 4, 4))


# ---------------------------------------------------------------- channel shuffle

class TestChannelShuffle:
    def test_groups_one_identity(self):
        t = rand_t(1, 6, 2, 2)
        assert np.array_equal(tc.channel_shuffle(t, 1), t)

    def test_permutation_table(self):
        t = np.zeros((1, 4, 1, 1), np.float32)
        t[0, :, 0, 0] = [1, 2, 3, 4]  # a, b, c, d
        out = tc.channel_shuffle(t, 2)
        np.testing.assert_array_equal(out[0, :, 0, 0], [1, 3, 2, 4])  # a, c, b, d

    def test_permutation_order(self):
        t = rand_t(1, 4, 2, 2)
        twice = tc.channel_shuffle(tc.channel_shuffle(t, 2), 2)
        assert np.array_equal(twice, t)

    def test_is_permutation(self):
        t = rand_t(1, 12, 3, 3)
        out = tc.channel_shuffle(t, 3)
        a = np.sort(t.reshape(12, -1), axis=0)
        b = np.sort(out.reshape(12, -1), axis=0)
        np.testing.assert_array_equal(a, b)

    def test_indivisible(self):
        with pytest.raises(InvalidArgument):
            tc.channel_shuffle(rand_t(1, 5, 2, 2), 2)


# ---------------------------------------------------------------- bilinear

class TestBilinearSample:
    def test_integer_coordinate_exact(self):
        t = rand_t(1, 3, 5, 6)
        coords = np.zeros((1, 2, 1, 1), np.float32)
        coords[0, 0], coords[0, 1] = 2.0, 3.0
        out = tc.bilinear_sample(t, coords)
        np.testing.assert_array_equal(out[0, :, 0, 0], t[0, :, 2, 3])

    def test_midpoint(self):
        t = np.zeros((1, 1, 1, 2), np.float32)
        t[0, 0, 0, 1] = 1.0
        coords = np.zeros((1, 2, 1, 1), np.float32)
        coords[0, 1] = 0.5
        assert tc.bilinear_sample(t, coords)[0, 0, 0, 0] == 0.5

    def test_four_term_expansion(self):
        # hand oracle: (0.25, 0.75) in [[0,1],[2,3]] -> 1.25
        t = np.array([[0, 1], [2, 3]], dtype=np.float32).reshape(1, 1, 2, 2)
        coords = np.zeros((1, 2, 1, 1), np.float32)
        coords[0, 0], coords[0, 1] = 0.25, 0.75
        got = tc.bilinear_sample(t, coords)[0, 0, 0, 0]
        assert abs(got - 1.25) < 1e-6

    def test_out_of_range_clamps(self):
        t = rand_t(1, 2, 3, 3)
        coords = np.zeros((1, 2, 1, 2), np.float32)
        coords[0, 0, 0] = [-5.0, 10.0]
        coords[0, 1, 0] = [-3.0, 99.0]
        out = tc.bilinear_sample(t, coords)
        np.testing.assert_array_equal(out[0, :, 0, 0], t[0, :, 0, 0])
        np.testing.assert_array_equal(out[0, :, 0, 1], t[0, :, 2, 2])

    def test_linear_along_axis(self):
        t = np.arange(8, dtype=np.float32).reshape(1, 1, 1, 8)
        xs = np.linspace(0, 7, 15, dtype=np.float32)
        coords = np.zeros((1, 2, 1, 15), np.float32)
        coords[0, 1, 0] = xs
        out = tc.bilinear_sample(t, coords)[0, 0, 0]
        np.testing.assert_allclose(out, xs, atol=1e-6)


# ---------------------------------------------------------------- reductions

class TestReduceMeanSpatial:
    def test_constant(self):
        t = np.full((1, 3, 4, 4), 2.5, np.float32)
        out = tc.reduce_mean_spatial(t)
        np.testing.assert_array_equal(out.ravel(), [2.5, 2.5, 2.5])

    def test_arith_mean(self):
        t = np.array([1, 2, 3, 4], dtype=np.float32).reshape(1, 1, 2, 2)
        assert tc.reduce_mean_spatial(t)[0, 0, 0, 0] == 2.5

    def test_centered_mean_is_zero(self):
        t = rand_t(1, 4, 8, 8)
        t -= t.reshape(1, 4, -1).mean(axis=2)[:, :, None, None]
        assert np.abs(tc.reduce_mean_spatial(t)).max() < 1e-6


# ---------------------------------------------------------------- rounding + determinism

class TestRoundHalfAway:
    def test_ties(self):
        x = np.array([0.5, -0.5, 1.5, -1.5, 0.4, -0.6, 2.0], np.float32)
        np.testing.assert_array_equal(tc.round_half_away(x), [1, -1, 2, -2, 0, -1, 2])


_DW_K = RNG.standard_normal((8, 3, 3)).astype(np.float32)
_MIX_W = RNG.standard_normal((8, 8)).astype(np.float32)


@pytest.mark.parametrize("op", [
    lambda t: tc.depthwise_conv(t, _DW_K, 1, 1),
    lambda t: tc.linear_mix(t, _MIX_W),
    lambda t: tc.wsilu(t),
    lambda t: tc.pixel_unshuffle(t, 2),
    lambda t: tc.spatial_shift(t),
    lambda t: tc.channel_shuffle(t, 4),
    lambda t: tc.reduce_mean_spatial(t),
])
def test_bitwise_determinism(op):
    t = rand_t(1, 8, 8, 8)
    a, b = op(t.copy()), op(t.copy())
    assert a.tobytes() == b.tobytes()
