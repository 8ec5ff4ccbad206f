import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfield.core import (
    Aabb,
    PositionalEncoding,
    bin_point,
    density_to_alpha,
    flatten_cell_index,
    positional_encode,
    unflatten_cell_index,
)


class TestAabb:
    def test_rejects_degenerate_bounds(self):
        with pytest.raises(ValueError):
            Aabb((0, 0, 0), (1, 0.5, 0))

    def test_extent_and_center(self):
        box = Aabb((0, 0, 0), (2, 4, 6))
        assert np.allclose(box.extent, [2, 4, 6])
        assert np.allclose(box.center, [1, 2, 3])


class TestBinPoint:
    def setup_method(self):
        self.aabb = Aabb((0, 0, 0), (1, 1, 1))
        self.r = (16, 16, 16)

    def test_lower_corner(self):
        assert np.array_equal(bin_point(np.zeros(3), self.aabb, self.r), [0, 0, 0])

    def test_interior_point(self):
        idx = bin_point(np.array([0.999, 0.5, 0.25]), self.aabb, self.r)
        assert np.array_equal(idx, [15, 8, 4])

    def test_upper_boundary_clamps_to_last_cell(self):
        assert np.array_equal(bin_point(np.ones(3), self.aabb, self.r), [15, 15, 15])

    def test_outside_point_reports_component(self):
        with pytest.raises(ValueError, match="component 1"):
            bin_point(np.array([0.5, 1.5, 0.5]), self.aabb, self.r)

    def test_batched_points(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
        idx = bin_point(pts, self.aabb, self.r)
        assert idx.shape == (2, 3)

    @given(
        res=st.tuples(*[st.integers(1, 16)] * 3),
        lo=st.tuples(*[st.floats(-5, 5)] * 3),
        size=st.tuples(*[st.floats(0.1, 10)] * 3),
        seed=st.integers(0, 2**16),
    )
    @settings(max_examples=60, deadline=None)
    def test_cell_center_round_trip(self, res, lo, size, seed):
        aabb = Aabb(np.array(lo), np.array(lo) + np.array(size))
        r = np.array(res)
        rng = np.random.default_rng(seed)
        idx = np.stack([rng.integers(0, c, size=8) for c in r], axis=-1)
        centers = aabb.b_min + (idx + 0.5) * aabb.cell_size(r)
        assert np.array_equal(bin_point(centers, aabb, r), idx)

    @given(res=st.tuples(*[st.integers(1, 16)] * 3), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_flatten_round_trip(self, res, seed):
        r = np.array(res)
        rng = np.random.default_rng(seed)
        idx = np.stack([rng.integers(0, c, size=16) for c in r], axis=-1)
        assert np.array_equal(unflatten_cell_index(flatten_cell_index(idx, r), r), idx)


class TestPositionalEncode:
    def test_zero_vector(self):
        out = positional_encode(np.zeros(3), num_freqs=1, include_raw=True)
        assert np.allclose(out, [0, 0, 0, 0, 0, 0, 1, 1, 1])

    def test_half_gives_unit_sine(self):
        out = positional_encode(np.array([0.5, 0.0, 0.0]), num_freqs=1, include_raw=True)
        assert out[3] == pytest.approx(np.sin(np.pi * 0.5))
        assert out[6] == pytest.approx(0.0, abs=1e-12)

    def test_dimensionality_matches_teacher_input(self):
        enc = PositionalEncoding(num_freqs_position=10, include_raw_input=True)
        assert enc.position_dim == 63
        assert enc.encode_position(np.zeros(3)).shape == (63,)
        assert PositionalEncoding().direction_dim == 27

    @given(num_freqs=st.integers(1, 10), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_range_and_length(self, num_freqs, seed):
        rng = np.random.default_rng(seed)
        v = rng.uniform(-1, 1, (5, 3))
        out = positional_encode(v, num_freqs=num_freqs, include_raw=True)
        assert out.shape == (5, 3 * (1 + 2 * num_freqs))
        assert np.all(np.abs(out[:, 3:]) <= 1.0 + 1e-12)
        assert np.allclose(out[:, :3], v)

    def test_preserves_dtype(self):
        out = positional_encode(np.zeros(3, dtype=np.float32), num_freqs=4)
        assert out.dtype == np.float32


class TestDensityToAlpha:
    def test_vacuum(self):
        assert density_to_alpha(0.0, 0.1) == 0.0

    def test_opaque_limit(self):
        assert density_to_alpha(1e6, 0.1) == pytest.approx(1.0)

    def test_closed_form(self):
        assert density_to_alpha(10.0, 0.01) == pytest.approx(1 - np.exp(-0.1), rel=1e-12)
        assert density_to_alpha(10.0, 0.01) == pytest.approx(0.095163, abs=1e-6)

    @given(
        sigma=st.floats(0, 1e3),
        delta=st.floats(0, 0.5),
        ds=st.floats(1e-6, 10.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_monotone_both_arguments(self, sigma, delta, ds):
        a = density_to_alpha(sigma, delta)
        assert density_to_alpha(sigma + ds, delta) >= a
        assert density_to_alpha(sigma, delta + ds * 1e-3) >= a

    @given(sigma=st.floats(0, 60.0), delta=st.floats(0, 0.5))
    @settings(max_examples=100, deadline=None)
    def test_unit_interval(self, sigma, delta):
        # Strict < 1 holds until exp(-sigma*delta) drops below the float64
        # rounding step near 1 (around optical depth 36); past that the
        # value saturates to exactly 1.0, checked separately below.
        a = density_to_alpha(sigma, delta)
        assert 0.0 <= a < 1.0

    def test_saturates_to_exactly_one_at_extreme_depth(self):
        assert density_to_alpha(1e6, 0.1) == 1.0

    @given(
        sigma=st.floats(1e-3, 100.0),
        d1=st.floats(1e-4, 0.5),
        d2=st.floats(1e-4, 0.5),
    )
    @settings(max_examples=100, deadline=None)
    def test_transmittance_multiplicativity(self, sigma, d1, d2):
        a1 = density_to_alpha(sigma, d1)
        a2 = density_to_alpha(sigma, d2)
        combined = density_to_alpha(sigma, d1 + d2)
        assert combined == pytest.approx(1 - (1 - a1) * (1 - a2), abs=1e-12)
