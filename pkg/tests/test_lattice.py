import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coverlab.lattice import (AnnulusSpec, GeometryError, ShapeSpec,
                              TorusGeometry, annulus_for_flavor, decompose,
                              round_half_up, shape_boundary, torus_distance)


def brute_min_distance(n, a, b, metric):
    """Oracle: exhaustive minimization over all +/-n translates per axis."""
    best = math.inf
    for shifts in itertools.product((-n, 0, n), repeat=len(a)):
        d = [a[i] - b[i] + shifts[i] for i in range(len(a))]
        if metric == "euclidean":
            val = math.sqrt(sum(x * x for x in d))
        else:
            val = max(abs(x) for x in d)
        best = min(best, val)
    return best


class TestTorusDistance:
    def test_wraparound_adjacency(self):
        g = TorusGeometry(10, 3)
        assert torus_distance(g, (0, 0, 0), (9, 0, 0)) == 1.0

    def test_identity(self):
        g = TorusGeometry(10, 3)
        assert torus_distance(g, (3, 7, 2), (3, 7, 2)) == 0.0

    def test_diagonal_against_shift_oracle(self):
        g = TorusGeometry(10, 3)
        expected = brute_min_distance(10, (0, 0, 0), (5, 5, 5), "euclidean")
        assert expected == pytest.approx(math.sqrt(75))
        assert torus_distance(g, (0, 0, 0), (5, 5, 5)) == pytest.approx(expected)

    def test_geometry_mismatch(self):
        g = TorusGeometry(10, 3)
        with pytest.raises(GeometryError):
            torus_distance(g, (0, 0), (1, 1))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(5, 15), st.data())
    def test_symmetry_triangle_and_oracle(self, n, data):
        g = TorusGeometry(n, 3)
        pts = [tuple(data.draw(st.integers(0, n - 1)) for _ in range(3))
               for _ in range(3)]
        a, b, c = pts
        for metric in ("euclidean", "linf"):
            dab = torus_distance(g, a, b, metric)
            assert dab == pytest.approx(torus_distance(g, b, a, metric))
            assert dab == pytest.approx(brute_min_distance(n, a, b, metric))
            dac = torus_distance(g, a, c, metric)
            dcb = torus_distance(g, c, b, metric)
            assert dab <= dac + dcb + 1e-9
            assert (dab == 0) == (a == b)


class TestGeometry:
    def test_guards(self):
        with pytest.raises(GeometryError):
            TorusGeometry(10, 2)
        with pytest.raises(GeometryError):
            TorusGeometry(1, 3)
        with pytest.raises(GeometryError):
            TorusGeometry(10**7, 3)

    def test_flat_roundtrip(self):
        g = TorusGeometry(5, 3)
        for flat in (0, 1, 17, 124):
            assert g.flat_index(g.site_of(flat)) == flat
        coords = np.array([[0, 0, 1], [4, 4, 4], [2, 3, 1]])
        assert np.array_equal(g.coords_array(g.flat_array(coords)), coords)


class TestShapes:
    def test_ball_radius1_boundary(self):
        g = TorusGeometry(10, 3)
        b = shape_boundary(g, ShapeSpec("ball", (0, 0, 0), 1))
        assert len(b) == 6  # the six axis neighbors; the center is interior

    def test_box_side1(self):
        g = TorusGeometry(10, 3)
        b = shape_boundary(g, ShapeSpec("box", (2, 2, 2), 1))
        assert b == [(2, 2, 2)]

    def test_box_side3(self):
        g = TorusGeometry(10, 3)
        b = shape_boundary(g, ShapeSpec("box", (0, 0, 0), 3))
        assert len(b) == 26  # 27-site cube minus its center

    def test_too_large(self):
        g = TorusGeometry(10, 3)
        with pytest.raises(GeometryError):
            shape_boundary(g, ShapeSpec("ball", (0, 0, 0), 6))

    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from(["box", "ball"]), st.integers(1, 4))
    def test_boundary_correctness(self, kind, size):
        # every boundary site has a neighbor outside; interior sites have none
        g = TorusGeometry(12, 3)
        shape = ShapeSpec(kind, (6, 6, 6), size if kind == "ball" else 2 * size + 1)
        members = set(shape.sites(g))
        boundary = set(shape_boundary(g, shape))
        assert boundary <= members
        for s in members:
            outside = [nb for nb in g.neighbors(s) if nb not in members]
            if s in boundary:
                assert outside
            else:
                assert not outside

    def test_sites_deterministic_order(self):
        g = TorusGeometry(10, 3)
        s = ShapeSpec("ball", (1, 2, 3), 2.5)
        assert s.sites(g) == s.sites(g)


class TestAnnulus:
    def test_flavors(self):
        g = TorusGeometry(16, 3)
        for flavor in ("box_in_ball", "box_in_box", "ball_in_ball"):
            ann = annulus_for_flavor(g, (8, 8, 8), 2, 6, flavor)
            assert ann.inner.linf_reach < ann.outer.linf_reach

    def test_inner_must_fit(self):
        with pytest.raises(GeometryError):
            AnnulusSpec(ShapeSpec("ball", (0, 0, 0), 3),
                        ShapeSpec("ball", (0, 0, 0), 3.5))

    def test_center_mismatch(self):
        with pytest.raises(GeometryError):
            AnnulusSpec(ShapeSpec("ball", (0, 0, 0), 2),
                        ShapeSpec("ball", (1, 0, 0), 6))

    def test_self_wrap_guard(self):
        g = TorusGeometry(8, 3)
        with pytest.raises(GeometryError):
            annulus_for_flavor(g, (0, 0, 0), 2, 6, "ball_in_ball")


class TestDecomposition:
    def test_example_16(self):
        g = TorusGeometry(16, 3)
        beta = math.log(3) / math.log(16)
        phi = math.log(1.2) / math.log(16)  # rounds to 1
        dec = decompose(g, beta, phi)
        assert dec.outer_side == 4
        assert dec.num_tiles == 64
        assert dec.core_side == 2
        assert dec.annular_size == 4096 - 64 * 8

    def test_divisibility_error_names_candidates(self):
        g = TorusGeometry(16, 3)
        beta = math.log(4) / math.log(16)
        phi = math.log(1.2) / math.log(16)  # outer side 5, does not divide 16
        with pytest.raises(GeometryError, match="admissible"):
            decompose(g, beta, phi)

    def test_partition_property(self):
        # every site in exactly one tile; in at most one core box;
        # |A| + sum |core| = n^d
        g = TorusGeometry(16, 3)
        dec = decompose(g, math.log(3) / math.log(16),
                        math.log(1.2) / math.log(16))
        mask = dec.core_mask()
        assert mask.size == g.num_sites
        assert int(mask.sum()) == dec.num_tiles * dec.core_side**3
        assert dec.annular_size + int(mask.sum()) == g.num_sites
        # classification agrees with the per-site predicate
        rng = np.random.default_rng(0)
        for flat in rng.integers(0, g.num_sites, size=60):
            site = g.site_of(int(flat))
            assert dec.in_core(site) == bool(mask[flat])
            assert dec.in_annular_region(site) != dec.in_core(site)
            tile = dec.tile_of(site)
            assert all(0 <= t < dec.tiles_per_axis for t in tile)

    def test_box_center_inside(self):
        g = TorusGeometry(32, 3)
        dec = decompose(g, math.log(13) / math.log(32),
                        math.log(3) / math.log(32))
        z = dec.box_center_site((0, 0, 0))
        assert dec.in_box(z) and dec.in_core(z)

    def test_core_must_be_positive(self):
        g = TorusGeometry(16, 3)
        with pytest.raises(GeometryError):
            decompose(g, math.log(2) / math.log(16), math.log(2) / math.log(16) - 1e-9)


def test_round_half_up():
    assert round_half_up(2.5) == 3
    assert round_half_up(2.49) == 2
    assert round_half_up(3.0) == 3
