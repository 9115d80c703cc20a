import json

import numpy as np
import pytest

from eitprior.grid import make_circular_mask, make_cylindrical_mask, make_full_mask
from eitprior.phantom import (
    PhantomSpec,
    ShapePrimitive,
    builtin_case,
    phantom_from_json,
    rasterize,
)


class TestRasterize:
    def test_background_only(self):
        mask = make_circular_mask(16)
        field = rasterize(PhantomSpec(2.0), mask)
        assert np.all(field.values == 2.0)

    def test_case1_two_levels(self):
        mask = make_circular_mask(64)
        field = rasterize(builtin_case(1), mask)
        assert set(np.unique(field.values)) == {0.8, 2.0}

    def test_sphere_count_matches_enumeration(self):
        # radius of 3 cells at the center of a 16^3 box
        mask = make_full_mask(16, 16, 16)
        sphere = ShapePrimitive("sphere", (0.5, 0.5, 0.5), (3 / 16,))
        field = rasterize(PhantomSpec(2.0, ((sphere, 1.0),)), mask)
        expected = 0
        for iz in range(16):
            for iy in range(16):
                for ix in range(16):
                    d2 = sum(((c + 0.5) / 16 - 0.5) ** 2 for c in (ix, iy, iz))
                    expected += d2 <= (3 / 16) ** 2
        assert int(np.sum(field.values == 1.0)) == expected

    def test_values_subset_of_spec_levels(self):
        mask = make_cylindrical_mask(12, 12, 10)
        for case in (3, 4, 5):
            spec = builtin_case(case)
            field = rasterize(spec, mask)
            allowed = {spec.background} | {c for _, c in spec.inclusions}
            assert set(np.unique(field.values)) <= allowed
            # every inclusion should actually hit some cells at this size
            assert set(np.unique(field.values)) == allowed

    def test_last_inclusion_wins(self):
        mask = make_full_mask(8, 8)
        big = ShapePrimitive("rectangle", (0.5, 0.5), (0.8, 0.8))
        small = ShapePrimitive("rectangle", (0.5, 0.5), (0.3, 0.3))
        field = rasterize(PhantomSpec(2.0, ((big, 0.5), (small, 1.5))), mask)
        center = field.values.reshape(8, 8)[4, 4]
        assert center == 1.5

    def test_dimensionality_mismatch(self):
        with pytest.raises(ValueError):
            rasterize(builtin_case(3), make_circular_mask(16))


class TestBuiltinCases:
    def test_case1_conductivities(self):
        spec = builtin_case(1)
        assert spec.background == 2.0
        ((shape, cond),) = spec.inclusions
        assert shape.kind == "triangle" and cond == 0.8

    def test_case4_conductivities(self):
        spec = builtin_case(4)
        kinds = {shape.kind: cond for shape, cond in spec.inclusions}
        assert kinds == {"cone": 0.8, "cylinder": 1.2}
        assert spec.background == 2.0

    def test_case5_conductivities(self):
        spec = builtin_case(5)
        kinds = {shape.kind: cond for shape, cond in spec.inclusions}
        assert kinds == {"cone": 0.4, "sphere": 1.0, "cuboid": 1.2}

    @pytest.mark.parametrize("case", [1, 2, 3, 4, 5])
    def test_inclusions_below_background(self, case):
        spec = builtin_case(case)
        assert all(cond < spec.background for _, cond in spec.inclusions)

    @pytest.mark.parametrize("case", [0, 6, -1])
    def test_bad_case_id(self, case):
        with pytest.raises(ValueError):
            builtin_case(case)


class TestJson:
    def test_round_trip_equivalence(self):
        doc = {
            "background": 2.0,
            "inclusions": [
                {
                    "kind": "triangle",
                    "pose": [0.30, 0.32, 0.64, 0.40, 0.38, 0.68],
                    "dims": [],
                    "conductivity": 0.8,
                }
            ],
        }
        mask = make_circular_mask(32)
        from_doc = rasterize(phantom_from_json(doc), mask)
        direct = rasterize(builtin_case(1), mask)
        assert np.array_equal(from_doc.values, direct.values)

    def test_parses_literal_string(self):
        spec = phantom_from_json(json.dumps({"background": 1.5, "inclusions": []}))
        assert spec.background == 1.5

    def test_malformed_document(self):
        with pytest.raises(ValueError):
            phantom_from_json({"inclusions": []})
        with pytest.raises(ValueError):
            phantom_from_json({"background": 2.0, "inclusions": [{"kind": "sphere"}]})


class TestShapeValidation:
    def test_degenerate_triangle(self):
        with pytest.raises(ValueError):
            ShapePrimitive("triangle", (0, 0, 1, 1, 2, 2))

    def test_nonpositive_dims(self):
        with pytest.raises(ValueError):
            ShapePrimitive("sphere", (0.5, 0.5, 0.5), (0.0,))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ShapePrimitive("torus", (0.5, 0.5, 0.5), (0.1,))

    def test_nonpositive_conductivity(self):
        with pytest.raises(ValueError):
            PhantomSpec(2.0, ((ShapePrimitive("sphere", (0.5, 0.5, 0.5), (0.1,)), 0.0),))

    def test_mixed_dimensionality(self):
        tri = ShapePrimitive("triangle", (0.1, 0.1, 0.5, 0.1, 0.3, 0.5))
        ball = ShapePrimitive("sphere", (0.5, 0.5, 0.5), (0.1,))
        with pytest.raises(ValueError):
            PhantomSpec(2.0, ((tri, 1.0), (ball, 1.0)))

    def test_cone_tapers(self):
        cone = ShapePrimitive("cone", (0.5, 0.5, 0.2), (0.2, 0.5))
        # near the base the full radius is inside, near the apex it is not
        assert cone.contains(np.array(0.65), np.array(0.5), np.array(0.25))
        assert not cone.contains(np.array(0.65), np.array(0.5), np.array(0.65))
        assert cone.contains(np.array(0.5), np.array(0.5), np.array(0.65))
