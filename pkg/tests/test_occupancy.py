import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridfield.core import Aabb
from gridfield.occupancy import (
    OccupancyGrid,
    extract_occupancy,
    is_occupied,
    occupancy_resolution,
)


def unit_box():
    return Aabb((0, 0, 0), (1, 1, 1))


class TestExtraction:
    def test_zero_field_all_empty(self):
        occ = extract_occupancy(lambda p: np.zeros(len(p)), unit_box(), (8, 8, 8), tau=10.0)
        assert not occ.to_bool_array().any()

    def test_uniform_field_above_tau_all_occupied(self):
        occ = extract_occupancy(lambda p: np.full(len(p), 20.0), unit_box(), (8, 8, 8), tau=10.0)
        assert occ.to_bool_array().all()

    def test_threshold_is_strict(self):
        occ = extract_occupancy(lambda p: np.full(len(p), 10.0), unit_box(), (4, 4, 4), tau=10.0)
        assert not occ.to_bool_array().any()

    def test_sphere_against_geometric_oracle(self):
        center = np.array([0.5, 0.5, 0.5])
        radius = 0.3

        def field(p):
            return np.where(np.linalg.norm(p - center, axis=-1) <= radius, 100.0, 0.0)

        res = np.array([32, 32, 32])
        occ = extract_occupancy(field, unit_box(), res, tau=10.0)

        # independent oracle: probe lattice point-in-sphere test per cell
        cell = 1.0 / res
        offs = np.stack(np.meshgrid(*([np.array([0.0, 0.5, 1.0])] * 3), indexing="ij"), -1).reshape(-1, 3)
        flat = np.arange(res.prod())
        i3 = np.stack([flat % 32, (flat // 32) % 32, flat // 1024], axis=-1)
        probes = i3[:, None, :] * cell + offs[None, :, :] * cell
        expected = (np.linalg.norm(probes - center, axis=-1) <= radius).any(axis=1)
        assert np.array_equal(occ.to_bool_array(), expected)

    def test_conservative_on_cellwise_empty_field(self):
        # density nonzero only in x > 0.5; every cell fully in x <= 0.5 stays empty
        def field(p):
            return np.where(p[:, 0] > 0.5, 50.0, 0.0)

        res = (8, 8, 8)
        occ = extract_occupancy(field, unit_box(), res, tau=10.0)
        flat = occ.to_bool_array()
        ix = np.arange(8**3) % 8
        fully_left = (ix + 1) / 8.0 <= 0.5
        assert not flat[fully_left].any()

    @given(tau1=st.floats(0, 30), tau2=st.floats(0, 30), seed=st.integers(0, 100))
    @settings(max_examples=25, deadline=None)
    def test_monotone_in_tau(self, tau1, tau2, seed):
        lo, hi = min(tau1, tau2), max(tau1, tau2)
        rng = np.random.default_rng(seed)
        centers = rng.uniform(0, 1, (3, 3))

        def field(p):
            return 40.0 * np.exp(-np.linalg.norm(p[:, None, :] - centers, axis=-1) ** 2 / 0.05).sum(1)

        occ_lo = extract_occupancy(field, unit_box(), (6, 6, 6), tau=lo)
        occ_hi = extract_occupancy(field, unit_box(), (6, 6, 6), tau=hi)
        assert not np.any(occ_hi.to_bool_array() & ~occ_lo.to_bool_array())

    def test_extraction_parallel_matches_serial(self):
        def field(p):
            return np.where(np.linalg.norm(p - 0.5, axis=-1) < 0.25, 30.0, 0.0)

        a = extract_occupancy(field, unit_box(), (16, 16, 16), tau=10.0, workers=1, chunk_cells=100)
        b = extract_occupancy(field, unit_box(), (16, 16, 16), tau=10.0, workers=4, chunk_cells=100)
        assert np.array_equal(a.bits, b.bits)


class TestQueries:
    def test_all_empty_grid(self):
        occ = OccupancyGrid.solid(unit_box(), (4, 4, 4), value=False)
        assert not is_occupied(occ, (0.5, 0.5, 0.5))

    def test_all_occupied_grid(self):
        occ = OccupancyGrid.solid(unit_box(), (4, 4, 4), value=True)
        assert is_occupied(occ, (0.5, 0.5, 0.5))

    def test_round_trip_with_extraction(self):
        def field(p):
            return np.where(np.linalg.norm(p - 0.5, axis=-1) <= 0.3, 100.0, 0.0)

        res = np.array([16, 16, 16])
        occ = extract_occupancy(field, unit_box(), res, tau=10.0)
        flat = occ.to_bool_array()
        cell = 1.0 / res
        occupied_idx = np.flatnonzero(flat)[:50]
        for fi in occupied_idx:
            i3 = np.array([fi % 16, (fi // 16) % 16, fi // 256])
            center = (i3 + 0.5) * cell
            assert is_occupied(occ, center)

    def test_out_of_bounds_query_raises(self):
        occ = OccupancyGrid.solid(unit_box(), (4, 4, 4))
        with pytest.raises(ValueError, match="outside bounds"):
            is_occupied(occ, (2.0, 0.5, 0.5))

    def test_batched_query(self):
        occ = OccupancyGrid.solid(unit_box(), (4, 4, 4))
        pts = np.random.default_rng(0).uniform(0, 1, (100, 3))
        assert occ.occupied_at(pts).all()


class TestPacking:
    @given(n_bits=st.integers(1, 256), seed=st.integers(0, 2**16))
    @settings(max_examples=40, deadline=None)
    def test_pack_unpack_identity(self, n_bits, seed):
        rng = np.random.default_rng(seed)
        r = (n_bits, 1, 1)
        pattern = rng.random(n_bits) < 0.5
        occ = OccupancyGrid.from_bool_array(unit_box(), r, pattern)
        assert np.array_equal(occ.to_bool_array(), pattern)
        for i in range(min(n_bits, 64)):
            assert occ.get_bit(i) == pattern[i]

    def test_set_get_every_bit(self):
        occ = OccupancyGrid.solid(unit_box(), (2, 2, 2), value=False)
        for i in range(8):
            occ.set_bit(i, True)
            assert occ.get_bit(i)
            occ.set_bit(i, False)
            assert not occ.get_bit(i)

    def test_resolution_cap(self):
        with pytest.raises(ValueError, match="capped"):
            OccupancyGrid.solid(unit_box(), (512, 16, 16))

    def test_factor_rule_and_cap(self):
        assert np.array_equal(occupancy_resolution((16, 16, 16)), [256, 256, 256])
        assert np.array_equal(occupancy_resolution((16, 8, 16), factor=16), [256, 128, 256])
        assert np.array_equal(occupancy_resolution((16, 16, 16), factor=32), [256, 256, 256])
