"""Torus geometry, lattice shapes, and the concentric-box decomposition.

Everything here is immutable after construction and safe to share across
workers.  Sites are plain tuples of ints reduced mod n; bulk operations use
integer numpy arrays of offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

Site = tuple[int, ...]

MAX_SITES = 2**62  # flat indices must fit comfortably in int64


def round_half_up(x: float) -> int:
    """Deterministic exponent-to-size rounding: 2.5 -> 3, not banker's 2."""
    return int(math.floor(x + 0.5))


def round_steps(x: float) -> int:
    """Round a (possibly fractional) time like alpha*t_star to whole steps."""
    return max(0, round_half_up(x))


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TorusGeometry:
    """The lattice Z_n^d with periodic wraparound."""

    n: int
    d: int

    def __post_init__(self):
        if self.d < 3:
            raise GeometryError(f"dimension must be >= 3, got d={self.d}")
        if self.n < 2:
            raise GeometryError(f"side length must be >= 2, got n={self.n}")
        if self.n**self.d > MAX_SITES:
            raise GeometryError(
                f"n^d = {self.n}^{self.d} exceeds the supported index range"
            )

    @property
    def num_sites(self) -> int:
        return self.n**self.d

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(self.n ** (self.d - 1 - i) for i in range(self.d))

    def site(self, coords: Sequence[int]) -> Site:
        if len(coords) != self.d:
            raise GeometryError(
                f"expected {self.d} coordinates, got {len(coords)}"
            )
        return tuple(int(c) % self.n for c in coords)

    def flat_index(self, site: Sequence[int]) -> int:
        idx = 0
        for c in site:
            idx = idx * self.n + (int(c) % self.n)
        return idx

    def site_of(self, flat: int) -> Site:
        coords = []
        for _ in range(self.d):
            coords.append(flat % self.n)
            flat //= self.n
        return tuple(reversed(coords))

    def flat_array(self, coords: np.ndarray) -> np.ndarray:
        """Flat indices for an (m, d) int array of (possibly unreduced) coords."""
        coords = np.asarray(coords, dtype=np.int64) % self.n
        out = np.zeros(coords.shape[0], dtype=np.int64)
        for i in range(self.d):
            out = out * self.n + coords[:, i]
        return out

    def coords_array(self, flat: np.ndarray) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        out = np.empty((flat.shape[0], self.d), dtype=np.int64)
        for i in range(self.d - 1, -1, -1):
            out[:, i] = flat % self.n
            flat = flat // self.n
        return out

    def min_image(self, a: Sequence[int], b: Sequence[int]) -> np.ndarray:
        """Per-axis minimal absolute displacement between two sites."""
        delta = (np.asarray(a, dtype=np.int64) - np.asarray(b, dtype=np.int64)) % self.n
        return np.minimum(delta, self.n - delta)

    def neighbors(self, site: Sequence[int]) -> list[Site]:
        s = self.site(site)
        out = []
        for i in range(self.d):
            for sign in (1, -1):
                c = list(s)
                c[i] = (c[i] + sign) % self.n
                out.append(tuple(c))
        return out


def torus_distance(
    g: TorusGeometry,
    a: Sequence[int],
    b: Sequence[int],
    metric: Literal["euclidean", "linf"] = "euclidean",
) -> float:
    """Minimal distance between a and b over all lattice translates by n.

    Symmetric, zero iff a == b; per-axis minimization is valid for both
    metrics because they are coordinate-separable and monotone.
    """
    if len(a) != g.d or len(b) != g.d:
        raise GeometryError("points do not match the geometry's dimension")
    delta = g.min_image(a, b)
    if metric == "euclidean":
        return float(math.sqrt(int(np.sum(delta * delta))))
    if metric == "linf":
        return float(np.max(delta))
    raise GeometryError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class ShapeSpec:
    """A box S(x, s) (side length s, sup-norm) or closed Euclidean ball B(x, r).

    Sizes may be non-integral; membership is |y_i - x_i| <= s/2 per axis for
    boxes and ||y - x||_2 <= r for balls, displacements taken minimal-image.
    A box therefore always spans an odd number 2*floor(s/2) + 1 of sites per
    axis; exact even-width boxes appear only inside Decomposition tiles.
    """

    kind: Literal["box", "ball"]
    center: Site
    size: float

    def __post_init__(self):
        if self.kind not in ("box", "ball"):
            raise GeometryError(f"unknown shape kind {self.kind!r}")
        if self.size <= 0:
            raise GeometryError("shape size must be positive")

    @property
    def linf_reach(self) -> int:
        """Largest per-axis offset of a member site from the center."""
        if self.kind == "box":
            return int(math.floor(self.size / 2))
        return int(math.floor(self.size))

    def contains_offsets(self, offsets: np.ndarray) -> np.ndarray:
        """Membership for an (m, d) array of minimal-image offsets."""
        offsets = np.abs(np.asarray(offsets, dtype=np.int64))
        if self.kind == "box":
            return (np.max(offsets, axis=1) * 2) <= self.size
        return np.sum(offsets * offsets, axis=1) <= self.size * self.size

    def contains(self, g: TorusGeometry, site: Sequence[int]) -> bool:
        delta = g.min_image(site, self.center)
        return bool(self.contains_offsets(delta[None, :])[0])

    def _offset_grid(self, g: TorusGeometry) -> np.ndarray:
        reach = self.linf_reach
        if reach > g.n // 2:
            raise GeometryError(
                f"shape too large: reach {reach} exceeds n/2 = {g.n // 2}"
            )
        rng = np.arange(-reach, reach + 1, dtype=np.int64)
        grids = np.meshgrid(*([rng] * g.d), indexing="ij")
        return np.stack([x.ravel() for x in grids], axis=1)

    def sites(self, g: TorusGeometry) -> list[Site]:
        """All member sites, in deterministic lexicographic offset order."""
        offs = self._offset_grid(g)
        offs = offs[self.contains_offsets(offs)]
        center = np.asarray(self.center, dtype=np.int64)
        coords = (offs + center) % g.n
        return [tuple(int(c) for c in row) for row in coords]


def shape_boundary(g: TorusGeometry, shape: ShapeSpec) -> list[Site]:
    """Inner vertex boundary: member sites with at least one neighbor outside.

    Deterministic, lexicographically ordered by offset from the center.
    """
    reach = shape.linf_reach
    if reach > g.n // 2:
        raise GeometryError(
            f"shape too large: reach {reach} exceeds n/2 = {g.n // 2}"
        )
    # Work on a (2*reach+3)^d offset cube so every neighbor is in the grid.
    side = 2 * reach + 3
    rng = np.arange(-reach - 1, reach + 2, dtype=np.int64)
    grids = np.meshgrid(*([rng] * g.d), indexing="ij")
    offs = np.stack([x.ravel() for x in grids], axis=1)
    member = shape.contains_offsets(offs).reshape((side,) * g.d)
    has_outside = np.zeros_like(member)
    for axis in range(g.d):
        for shift in (1, -1):
            neigh = np.roll(member, shift, axis=axis)
            has_outside |= ~neigh
    # roll wraps the cube edge, but edge cells are never members (reach+1).
    boundary = member & has_outside
    mask = boundary.ravel()
    center = np.asarray(shape.center, dtype=np.int64)
    coords = (offs[mask] + center) % g.n
    return [tuple(int(c) for c in row) for row in coords]


@dataclass(frozen=True)
class AnnulusSpec:
    """Concentric inner/outer shells defining excursions.

    The inner shape thickened by one lattice step must still fit inside the
    outer shape, so an excursion's entry time is always strictly before its
    exit time.  Outer reach is capped at n/2 so the min-image membership test
    is meaningful.
    """

    inner: ShapeSpec
    outer: ShapeSpec

    def __post_init__(self):
        if self.inner.center != self.outer.center:
            raise GeometryError("annulus shells must share a center")
        r_in, r_out = self.inner.linf_reach, self.outer.linf_reach
        if r_in + 1 > r_out:
            raise GeometryError(
                "inner shape (thickened by one step) must fit inside the outer shape"
            )
        if self.inner.kind == "box" and self.outer.kind == "ball":
            # worst case: thickened box corner must stay inside the ball
            corner = (r_in + 1) ** 2 * self._dim_guess()
            if corner > self.outer.size**2:
                raise GeometryError("inner box corner leaves the outer ball")

    def _dim_guess(self) -> int:
        return len(self.inner.center)

    @property
    def center(self) -> Site:
        return self.inner.center

    def validate(self, g: TorusGeometry) -> None:
        if len(self.center) != g.d:
            raise GeometryError("annulus center does not match the geometry")
        if self.outer.linf_reach > g.n // 2:
            raise GeometryError(
                f"outer shell reach {self.outer.linf_reach} exceeds n/2 = {g.n // 2}; "
                "the annulus would wrap onto itself"
            )


FLAVORS = ("box_in_ball", "box_in_box", "ball_in_ball")


def annulus_for_flavor(
    g: TorusGeometry, center: Sequence[int], r: float, R: float, flavor: str
) -> AnnulusSpec:
    """Annulus with inner size r and outer size R in one of the three flavors."""
    if flavor not in FLAVORS:
        raise GeometryError(f"unknown annulus flavor {flavor!r}")
    c = g.site(center)
    inner_kind = "box" if flavor.startswith("box") else "ball"
    outer_kind = "box" if flavor.endswith("box") else "ball"
    ann = AnnulusSpec(ShapeSpec(inner_kind, c, r), ShapeSpec(outer_kind, c, R))
    ann.validate(g)
    return ann


@dataclass(frozen=True)
class Decomposition:
    """Tiling of the torus by boxes of side s_bar = s + g with concentric
    sub-boxes of sides s and s - g (g = rounded n^phi, s = rounded n^beta).

    Tiles are the half-open cubes [k*s_bar, (k+1)*s_bar)^d.  The concentric
    boxes sit at integer margins inside each tile; when s_bar - s is odd the
    extra site of margin goes to the high side.
    """

    geometry: TorusGeometry
    beta: float
    phi: float
    outer_side: int
    box_side: int
    core_side: int

    @property
    def tiles_per_axis(self) -> int:
        return self.geometry.n // self.outer_side

    @property
    def num_tiles(self) -> int:
        return self.tiles_per_axis**self.geometry.d

    @property
    def box_lo(self) -> int:
        return (self.outer_side - self.box_side) // 2

    @property
    def core_lo(self) -> int:
        return (self.outer_side - self.core_side) // 2

    @property
    def annular_size(self) -> int:
        """Number of sites in A = torus minus all core boxes."""
        return self.geometry.num_sites - self.num_tiles * self.core_side**self.geometry.d

    def tile_of(self, site: Sequence[int]) -> tuple[int, ...]:
        s = self.geometry.site(site)
        return tuple(c // self.outer_side for c in s)

    def tile_flat(self, site: Sequence[int]) -> int:
        t = self.tile_of(site)
        m = self.tiles_per_axis
        idx = 0
        for c in t:
            idx = idx * m + c
        return idx

    def _in_sub_box(self, site: Sequence[int], lo: int, side: int) -> bool:
        s = self.geometry.site(site)
        for c in s:
            o = c % self.outer_side
            if o < lo or o >= lo + side:
                return False
        return True

    def in_box(self, site: Sequence[int]) -> bool:
        return self._in_sub_box(site, self.box_lo, self.box_side)

    def in_core(self, site: Sequence[int]) -> bool:
        return self._in_sub_box(site, self.core_lo, self.core_side)

    def in_annular_region(self, site: Sequence[int]) -> bool:
        return not self.in_core(site)

    def core_mask(self) -> np.ndarray:
        """Boolean mask over flat site indices: True iff the site is in some core box."""
        g = self.geometry
        offs = np.arange(g.n, dtype=np.int64) % self.outer_side
        axis_ok = (offs >= self.core_lo) & (offs < self.core_lo + self.core_side)
        mask = axis_ok
        for _ in range(g.d - 1):
            mask = np.logical_and.outer(mask, axis_ok)
        return mask.ravel()

    def box_origin(self, tile: Sequence[int]) -> Site:
        """Lowest corner of the side-s concentric box of a tile."""
        return tuple(int(t) * self.outer_side + self.box_lo for t in tile)

    def tile_center_site(self, tile: Sequence[int]) -> Site:
        """A site at (or adjacent to) the geometric center of a tile."""
        half = self.outer_side // 2
        return tuple(int(t) * self.outer_side + half for t in tile)

    def box_center_site(self, tile: Sequence[int]) -> Site:
        """The central site of a tile's concentric side-s box (exact when the
        side is odd, shifted low otherwise)."""
        off = self.box_lo + (self.box_side - 1) // 2
        return tuple(int(t) * self.outer_side + off for t in tile)


def admissible_sides(n: int) -> list[int]:
    return [s for s in range(2, n + 1) if n % s == 0]


def decompose(g: TorusGeometry, beta: float, phi: float) -> Decomposition:
    """Partition the torus per the exponents (beta, phi).

    Requires the rounded outer side s_bar = round(n^beta) + round(n^phi) to
    divide n exactly, and the core side to stay positive.
    """
    if not (0 < phi < beta < 1):
        raise GeometryError(f"need 0 < phi < beta < 1, got beta={beta}, phi={phi}")
    s = round_half_up(g.n**beta)
    gap = round_half_up(g.n**phi)
    s_bar = s + gap
    s_core = s - gap
    if s_core < 1:
        raise GeometryError(
            f"core side {s} - {gap} = {s_core} must be >= 1"
        )
    if g.n % s_bar != 0:
        ok = admissible_sides(g.n)
        near = sorted(ok, key=lambda v: abs(v - s_bar))[:4]
        raise GeometryError(
            f"outer side {s_bar} does not divide n = {g.n}; "
            f"admissible outer sides near the request: {near} "
            f"(or pick n divisible by {s_bar}, e.g. n = {s_bar * max(1, round(g.n / s_bar))})"
        )
    return Decomposition(
        geometry=g,
        beta=beta,
        phi=phi,
        outer_side=s_bar,
        box_side=s,
        core_side=s_core,
    )
