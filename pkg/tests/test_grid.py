import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitprior.grid import (
    GridSpec,
    ImageField,
    RegionMask,
    embed,
    extract,
    make_circular_mask,
    make_cylindrical_mask,
    make_full_mask,
    make_polygon_mask,
)


def brute_force_circle_count(n, radius=None):
    r = n / 2 if radius is None else radius
    count = 0
    for iy in range(n):
        for ix in range(n):
            if (ix + 0.5 - n / 2) ** 2 + (iy + 0.5 - n / 2) ** 2 <= r * r:
                count += 1
    return count


class TestCircularMask:
    def test_published_count_64(self):
        mask = make_circular_mask(64)
        assert abs(mask.n_inside - 3228) <= 0.02 * 3228

    def test_small_grid_matches_enumeration(self):
        mask = make_circular_mask(4)
        assert mask.n_inside == brute_force_circle_count(4)

    def test_radius_covering_all_centers(self):
        mask = make_circular_mask(2, radius=2.0)
        assert mask.n_inside == 4

    def test_count_monotone_in_n(self):
        counts = [make_circular_mask(n).n_inside for n in range(4, 65, 4)]
        assert all(b >= a for a, b in zip(counts, counts[1:]))

    @pytest.mark.parametrize("n", [32, 40, 48, 64])
    def test_count_near_disk_area(self, n):
        mask = make_circular_mask(n)
        assert abs(mask.n_inside - np.pi / 4 * n * n) <= 0.02 * np.pi / 4 * n * n

    def test_too_small(self):
        with pytest.raises(ValueError):
            make_circular_mask(1)


class TestCylindricalMask:
    def test_published_count(self):
        mask = make_cylindrical_mask(32, 32, 40)
        assert abs(mask.n_inside - 32480) <= 0.02 * 32480

    def test_per_slice_replication(self):
        mask = make_cylindrical_mask(4, 4, 5)
        assert mask.n_inside == 5 * make_circular_mask(4).n_inside

    def test_single_slice_degenerate(self):
        mask = make_cylindrical_mask(32, 32, 1)
        assert mask.n_inside == make_circular_mask(32).n_inside

    def test_anisotropic_rejected(self):
        with pytest.raises(ValueError):
            make_cylindrical_mask(8, 12, 4)


def ray_cast_inside(px, py, verts):
    # even-odd crossing rule, independent of the winding-number code
    crossings = 0
    nv = len(verts)
    for k in range(nv):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % nv]
        if (y1 > py) != (y2 > py):
            x_at = x1 + (py - y1) / (y2 - y1) * (x2 - x1)
            if x_at > px:
                crossings += 1
    return crossings % 2 == 1


class TestPolygonMask:
    def test_square_covering_grid(self):
        grid = GridSpec(2, 8, 8)
        mask = make_polygon_mask(grid, [(-1, -1), (9, -1), (9, 9), (-1, 9)])
        assert mask.n_inside == 64

    def test_triangle_matches_ray_cast_oracle(self):
        grid = GridSpec(2, 8, 8)
        verts = [(-0.1, -0.1), (8.3, -0.1), (-0.1, 8.3)]
        mask = make_polygon_mask(grid, verts)
        expected = sum(
            ray_cast_inside(ix + 0.5, iy + 0.5, verts)
            for iy in range(8)
            for ix in range(8)
        )
        assert mask.n_inside == expected
        for iy in range(8):
            for ix in range(8):
                assert mask.inside[iy, ix] == ray_cast_inside(ix + 0.5, iy + 0.5, verts)

    def test_collinear_polygon_rejected(self):
        grid = GridSpec(2, 8, 8)
        with pytest.raises(ValueError):
            make_polygon_mask(grid, [(0, 0), (4, 4), (8, 8)])

    def test_extrusion_replicates_slices(self):
        grid = GridSpec(3, 8, 8, 5)
        verts = [(1, 1), (7, 1), (4, 7)]
        mask = make_polygon_mask(grid, verts)
        assert mask.shape == (5, 8, 8)
        for z in range(5):
            assert np.array_equal(mask.inside[z], mask.inside[0])


class TestEmbedExtract:
    def test_round_trip_on_circle(self):
        mask = make_circular_mask(16)
        rng = np.random.default_rng(0)
        field = ImageField(mask, rng.normal(size=mask.n_inside))
        back = extract(embed(field), mask)
        assert np.array_equal(back.values, field.values)

    def test_all_ones_embedded_sum(self):
        mask = make_circular_mask(16)
        field = ImageField(mask, np.ones(mask.n_inside))
        assert embed(field).sum() == mask.n_inside

    def test_shape_mismatch(self):
        mask = make_circular_mask(16)
        with pytest.raises(ValueError):
            extract(np.zeros((8, 8)), mask)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_round_trip_random_mask_and_field(self, seed):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(2, 7, size=rng.integers(2, 4)))
        inside = rng.random(shape) < 0.6
        inside.reshape(-1)[rng.integers(0, inside.size)] = True  # keep nonempty
        mask = RegionMask(inside)
        field = ImageField(mask, rng.normal(size=mask.n_inside))
        back = extract(embed(field), mask)
        assert np.array_equal(back.values, field.values)


class TestIndexMaps:
    def test_scan_order_x_fastest(self):
        mask = make_full_mask(3, 2)
        coords = np.unravel_index(mask.flat_indices, mask.shape)
        # first cells walk along x before y increments
        assert coords[1][:3].tolist() == [0, 1, 2]
        assert coords[0][:3].tolist() == [0, 0, 0]

    def test_index_map_bijection_and_order(self):
        mask = make_circular_mask(12)
        assert np.all(np.diff(mask.flat_indices) > 0)
        assert mask.inverse[mask.flat_indices].tolist() == list(range(mask.n_inside))
        outside = np.setdiff1d(np.arange(mask.inside.size), mask.flat_indices)
        assert np.all(mask.inverse[outside] == -1)


class TestValidation:
    def test_gridspec_rejects_bad_ndim(self):
        with pytest.raises(ValueError):
            GridSpec(4, 8, 8)

    def test_gridspec_rejects_nz_for_2d(self):
        with pytest.raises(ValueError):
            GridSpec(2, 8, 8, 3)

    def test_gridspec_default_extent(self):
        assert GridSpec(3, 8, 8, 4).extent == (1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            GridSpec(2, 8, 8, extent=(1.0, -1.0))

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError):
            RegionMask(np.zeros((4, 4), dtype=bool))

    def test_field_length_checked(self):
        mask = make_circular_mask(8)
        with pytest.raises(ValueError):
            ImageField(mask, np.zeros(mask.n_inside + 1))

    def test_field_must_be_finite(self):
        mask = make_circular_mask(8)
        values = np.zeros(mask.n_inside)
        values[0] = np.nan
        with pytest.raises(ValueError):
            ImageField(mask, values)
