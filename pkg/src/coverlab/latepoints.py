"""Uncovered-set statistics: late-point fields, reference fields, separation
counts, neighbor-pair statistics, the threshold distinguisher, and the
uniform-hitting experiment.

A FieldSample is a set of sites with provenance; it serializes to a compact
bitmap (header then packed bits) and to sparse JSON (coordinate list).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels as K
from .excursion import ebar_excursions, estimate_thin_T
from .lattice import Decomposition, Site, TorusGeometry, round_steps
from .potential import constants
from .walk import WalkConfig, WalkState, run

FIELD_KINDS = ("walk_uncovered", "walk_uncovered_excursion_stopped",
               "bernoulli", "uniform_subset")
_BITMAP_MAGIC = b"CLF1"


class LatePointError(ValueError):
    pass


@dataclass
class FieldSample:
    kind: str
    geometry: TorusGeometry
    site_flats: np.ndarray  # sorted int64 flat indices
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise LatePointError(f"unknown field kind {self.kind!r}")
        self.site_flats = np.unique(np.asarray(self.site_flats, dtype=np.int64))
        if self.site_flats.size and (
                self.site_flats[0] < 0
                or self.site_flats[-1] >= self.geometry.num_sites):
            raise LatePointError("site index out of range")

    @property
    def size(self) -> int:
        return int(self.site_flats.size)

    def sites(self) -> list[Site]:
        return [self.geometry.site_of(int(f)) for f in self.site_flats]

    def coords(self) -> np.ndarray:
        return self.geometry.coords_array(self.site_flats)

    # -- serialization ------------------------------------------------------

    def to_bitmap_bytes(self) -> bytes:
        g = self.geometry
        mask = np.zeros(g.num_sites, dtype=np.uint8)
        mask[self.site_flats] = 1
        payload = np.packbits(mask, bitorder="little").tobytes()
        kind_code = FIELD_KINDS.index(self.kind)
        seed = int(self.meta.get("seed", 0)) & (2**64 - 1)
        header = struct.pack("<4sIIBQ", _BITMAP_MAGIC, g.n, g.d, kind_code, seed)
        return header + payload

    @classmethod
    def from_bitmap_bytes(cls, blob: bytes) -> "FieldSample":
        magic, n, d, kind_code, seed = struct.unpack_from("<4sIIBQ", blob, 0)
        if magic != _BITMAP_MAGIC:
            raise LatePointError("not a coverlab field bitmap")
        g = TorusGeometry(n, d)
        off = struct.calcsize("<4sIIBQ")
        bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=off),
                             bitorder="little")[: g.num_sites]
        return cls(kind=FIELD_KINDS[kind_code], geometry=g,
                   site_flats=np.nonzero(bits)[0].astype(np.int64),
                   meta={"seed": seed})

    def to_sparse_json(self) -> str:
        return json.dumps({
            "schema": "coverlab-field/1",
            "n": self.geometry.n,
            "d": self.geometry.d,
            "kind": self.kind,
            "meta": self.meta,
            "sites": [list(map(int, s)) for s in self.sites()],
        })

    @classmethod
    def from_sparse_json(cls, text: str) -> "FieldSample":
        doc = json.loads(text)
        g = TorusGeometry(doc["n"], doc["d"])
        flats = np.array([g.flat_index(s) for s in doc["sites"]], dtype=np.int64)
        return cls(kind=doc["kind"], geometry=g, site_flats=flats,
                   meta=doc.get("meta", {}))


# ---------------------------------------------------------------------------
# samplers


def sample_uncovered_at(cfg: WalkConfig, alpha: float, t_star_value: float,
                        stream: int = 0) -> FieldSample:
    """The unvisited set after round(alpha * t_star) steps of a fresh walk."""
    if alpha < 0:
        raise LatePointError("alpha must be >= 0")
    t = round_steps(alpha * t_star_value)
    _, tracker = run(cfg, t, track_first_hits=False, stream=stream)
    return FieldSample(kind="walk_uncovered", geometry=cfg.geometry,
                       site_flats=tracker.uncovered_indices(),
                       meta={"alpha": alpha, "t_used": t, "seed": cfg.seed,
                             "stream": stream})


@dataclass
class CoupledFields:
    excursion_stopped: FieldSample   # per-box clocks
    time_stopped: FieldSample        # horizon round(alpha * t_star), A zeroed
    tile_stop_times: np.ndarray
    ebar: int
    t_used: int


def sample_coupled_fields(
    cfg: WalkConfig,
    alpha: float,
    t_star_value: float,
    dec: Decomposition,
    delta: float,
    thin_T_hat: Optional[float] = None,
    stream: int = 0,
) -> CoupledFields:
    """One trajectory, two uncovered fields: the per-box excursion-stopped
    field (each box's clock stops at its Ebar-th thin-annulus excursion) and
    the plain time-stopped field with the annular region zeroed."""
    g = cfg.geometry
    if dec.geometry != g:
        raise LatePointError("decomposition geometry mismatch")
    t_q = round_steps(alpha * t_star_value)
    if thin_T_hat is None:
        thin_T_hat = estimate_thin_T(cfg, dec, (0,) * g.d,
                                     stream=stream + 500_000)
    ebar = ebar_excursions(alpha * t_star_value, delta, thin_T_hat=thin_T_hat)
    st = WalkState.initial(cfg, stream)
    first_hit = np.full(g.num_sites, -1, dtype=np.int64)
    nt = dec.num_tiles
    tile_stop = np.full(nt, -1, dtype=np.int64)
    tile_count = np.zeros(nt, dtype=np.int64)
    tile_state = np.zeros(nt, dtype=np.int64)
    cap = np.int64(max(200 * t_q, 10**7))
    t_end = K.y_process(
        st.rng_state, g.n, g.d, K.laziness_threshold(cfg.laziness),
        st.position, np.int64(dec.outer_side), np.int64(dec.box_lo),
        np.int64(dec.box_side), np.int64(ebar), np.int64(t_q), cap,
        first_hit, tile_stop, tile_count, tile_state)
    if t_end < 0:
        raise LatePointError("excursion-stopped sampler exhausted its step cap")
    core = dec.core_mask()
    never = first_hit < 0
    # tile index per site, aligned with the kernel's tile numbering
    flats = np.arange(g.num_sites, dtype=np.int64)
    coords = g.coords_array(flats)
    m = dec.tiles_per_axis
    tile_idx = np.zeros(g.num_sites, dtype=np.int64)
    for i in range(g.d):
        tile_idx = tile_idx * m + coords[:, i] // dec.outer_side
    stops = tile_stop[tile_idx]
    y_mask = core & (never | (first_hit > stops))
    q_mask = core & (never | (first_hit > t_q))
    meta = {"alpha": alpha, "seed": cfg.seed, "stream": stream,
            "ebar": ebar, "delta": delta}
    return CoupledFields(
        excursion_stopped=FieldSample(
            kind="walk_uncovered_excursion_stopped", geometry=g,
            site_flats=np.nonzero(y_mask)[0], meta=dict(meta)),
        time_stopped=FieldSample(
            kind="walk_uncovered", geometry=g,
            site_flats=np.nonzero(q_mask)[0],
            meta=dict(meta, t_used=t_q, annular_zeroed=True)),
        tile_stop_times=tile_stop, ebar=ebar, t_used=t_q)


def sample_uncovered_excursion_stopped(
    cfg: WalkConfig, alpha: float, t_star_value: float, dec: Decomposition,
    delta: float, thin_T_hat: Optional[float] = None, stream: int = 0,
) -> FieldSample:
    return sample_coupled_fields(cfg, alpha, t_star_value, dec, delta,
                                 thin_T_hat, stream).excursion_stopped


def sample_bernoulli_field(g: TorusGeometry, p: float, seed: int) -> FieldSample:
    """Exact product law: each site included independently with probability p."""
    if not (0.0 <= p <= 1.0):
        raise LatePointError(f"p must lie in [0,1], got {p}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    mask = rng.random(g.num_sites) < p
    return FieldSample(kind="bernoulli", geometry=g,
                       site_flats=np.nonzero(mask)[0],
                       meta={"p": p, "seed": seed})


def sample_uniform_subset(g: TorusGeometry, m: int, seed: int) -> FieldSample:
    """Exact uniform m-subset of the torus."""
    if not (0 <= m <= g.num_sites):
        raise LatePointError(f"m must lie in [0, {g.num_sites}]")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    flats = rng.choice(g.num_sites, size=m, replace=False)
    return FieldSample(kind="uniform_subset", geometry=g,
                       site_flats=flats.astype(np.int64),
                       meta={"m": m, "seed": seed})


# ---------------------------------------------------------------------------
# pair statistics


@dataclass
class SeparationReport:
    gamma: float
    threshold: float
    z_gamma: int              # ordered pairs at distance <= n^gamma
    min_pair_distance: float  # inf if fewer than two sites
    violating_pairs: list


def _pairwise_min_image(g: TorusGeometry, coords: np.ndarray) -> np.ndarray:
    delta = np.abs(coords[:, None, :] - coords[None, :, :])
    delta = np.minimum(delta, g.n - delta)
    return np.sqrt(np.sum(delta.astype(np.float64) ** 2, axis=2))


def separation_statistic(sample: FieldSample, gamma: float,
                         max_reported: int = 20) -> SeparationReport:
    """Ordered pairs of distinct sample sites within torus distance n^gamma.

    Near-linear in the sample size via spatial bucketing; small samples use
    the direct pairwise matrix.
    """
    g = sample.geometry
    thr = float(g.n**gamma)
    coords = sample.coords()
    m = coords.shape[0]
    if m < 2:
        return SeparationReport(gamma, thr, 0, math.inf, [])
    if m <= 2048:
        dist = _pairwise_min_image(g, coords)
        iu = np.triu_indices(m, k=1)
        dvals = dist[iu]
        close = dvals <= thr
        z = int(2 * np.count_nonzero(close))
        mind = float(dvals.min())
        viol = []
        order = np.argsort(dvals)
        for idx in order[: max_reported]:
            if not close[idx]:
                break
            a, b = iu[0][idx], iu[1][idx]
            viol.append((tuple(map(int, coords[a])), tuple(map(int, coords[b])),
                         float(dvals[idx])))
        return SeparationReport(gamma, thr, z, mind, viol)
    # bucket by cells of side ~ threshold
    cell = max(1, int(thr))
    ncell = -(-g.n // cell)
    buckets: dict = {}
    for i in range(m):
        key = tuple(int(c) // cell for c in coords[i])
        buckets.setdefault(key, []).append(i)
    z = 0
    mind = math.inf
    viol = []
    seen = set()
    offsets = np.stack(np.meshgrid(*([np.arange(-1, 2)] * g.d),
                                   indexing="ij"), axis=-1).reshape(-1, g.d)
    for key, members in buckets.items():
        # distinct neighbor cells only: wraparound may alias several offsets
        # onto the same cell when the grid is small
        nkeys = {tuple((key[i] + int(off[i])) % ncell for i in range(g.d))
                 for off in offsets}
        for nkey in sorted(nkeys):
            pair_id = (min(key, nkey), max(key, nkey))
            if nkey not in buckets or pair_id in seen:
                continue
            seen.add(pair_id)
            a = coords[members]
            b = coords[buckets[nkey]]
            delta = np.abs(a[:, None, :] - b[None, :, :])
            delta = np.minimum(delta, g.n - delta)
            dist = np.sqrt(np.sum(delta.astype(np.float64) ** 2, axis=2))
            if nkey == key:
                iu = np.triu_indices(len(members), k=1)
                dvals = dist[iu]
                z += int(2 * np.count_nonzero(dvals <= thr))
                if dvals.size:
                    mind = min(mind, float(dvals.min()))
                for ii, jj in zip(*iu):
                    if dist[ii, jj] <= thr and len(viol) < max_reported:
                        viol.append((tuple(map(int, a[ii])),
                                     tuple(map(int, b[jj])),
                                     float(dist[ii, jj])))
            else:
                z += int(2 * np.count_nonzero(dist <= thr))
                if dist.size:
                    mind = min(mind, float(dist.min()))
                hits = np.argwhere(dist <= thr)
                for ii, jj in hits[: max(0, max_reported - len(viol))]:
                    viol.append((tuple(map(int, a[ii])),
                                 tuple(map(int, b[jj])),
                                 float(dist[ii, jj])))
    return SeparationReport(gamma, thr, z, mind, viol)


def neighbor_pair_statistic(sample: FieldSample) -> int:
    """Ordered pairs of sample sites at torus distance exactly 1."""
    g = sample.geometry
    present = set(int(f) for f in sample.site_flats)
    count = 0
    for f in sample.site_flats:
        site = g.site_of(int(f))
        for nb in g.neighbors(site):
            if g.flat_index(nb) in present:
                count += 1
    return count


# ---------------------------------------------------------------------------
# the threshold distinguisher


@dataclass
class DistinguisherResult:
    threshold: float
    walk_exceed_frequency: float
    ref_exceed_frequency: float
    gap: float
    distinguishable: bool
    epsilon: float
    margin: float


def distinguisher_test(
    walk_samples: Sequence[FieldSample],
    ref_samples: Sequence[FieldSample],
    alpha: float,
    epsilon: float,
    margin: float = 0.4,
) -> DistinguisherResult:
    """Neighbor-pair threshold test between walk fields and reference fields.

    The statistic is the ordered neighbor-pair count; the threshold is
    n^(d - 2 alpha d/(1+p_d) - eps d).  The admissible eps range keeps the
    reference mean below the threshold asymptotically.
    """
    if not walk_samples or not ref_samples:
        raise LatePointError("need at least one sample on each side")
    g = walk_samples[0].geometry
    c = constants(g.d)
    eps_max = 2.0 * alpha * c.p_d / (1.0 + c.p_d)
    if not (0.0 < epsilon < eps_max):
        raise LatePointError(
            f"epsilon must lie in (0, {eps_max:.4f}) for alpha={alpha}, "
            f"got {epsilon}")
    exponent = g.d - 2.0 * alpha * g.d / (1.0 + c.p_d) - epsilon * g.d
    threshold = float(g.n**exponent)
    walk_w = np.array([neighbor_pair_statistic(s) for s in walk_samples])
    ref_w = np.array([neighbor_pair_statistic(s) for s in ref_samples])
    wf = float(np.mean(walk_w >= threshold))
    rf = float(np.mean(ref_w >= threshold))
    gap = wf - rf
    return DistinguisherResult(
        threshold=threshold, walk_exceed_frequency=wf, ref_exceed_frequency=rf,
        gap=gap, distinguishable=gap >= margin, epsilon=epsilon, margin=margin)


# ---------------------------------------------------------------------------
# uniform hitting on separated sets


@dataclass
class UniformityReport:
    tv: float
    chi2_pvalue: float
    counts: np.ndarray
    trials: int
    per_site_frequency: dict


def _min_distance_to_targets(g: TorusGeometry, targets: Sequence[Site]) -> np.ndarray:
    flats = np.arange(g.num_sites, dtype=np.int64)
    coords = g.coords_array(flats)
    best = np.full(g.num_sites, np.inf)
    for tgt in targets:
        delta = np.abs(coords - np.asarray(g.site(tgt), dtype=np.int64))
        delta = np.minimum(delta, g.n - delta)
        best = np.minimum(best, np.sqrt(np.sum(delta.astype(np.float64) ** 2,
                                               axis=1)))
    return best


def hitting_uniformity_test(
    cfg: WalkConfig,
    targets: Sequence[Site],
    trials: int,
    gamma: float,
    stream: int = 0,
) -> UniformityReport:
    """Empirical first-hit distribution over a separated target set versus
    uniform.

    Requires the targets to be pairwise at least n^gamma apart, and starts
    each trial from a uniform site at distance >= n^gamma from the set.
    """
    g = cfg.geometry
    targets = [g.site(t) for t in targets]
    if len(targets) < 2:
        raise LatePointError("need at least two targets")
    thr = g.n**gamma
    for i in range(len(targets)):
        for j in range(i + 1, len(targets)):
            delta = g.min_image(targets[i], targets[j])
            dist = math.sqrt(float(np.sum(delta * delta)))
            if dist < thr:
                raise LatePointError(
                    f"targets {targets[i]} and {targets[j]} are {dist:.2f} "
                    f"apart, closer than n^gamma = {thr:.2f}")
    dmin = _min_distance_to_targets(g, targets)
    admissible = np.nonzero(dmin >= thr)[0]
    if admissible.size == 0:
        raise LatePointError("no start sites at distance >= n^gamma from the set")
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=cfg.seed & (2**64 - 1), spawn_key=(stream, 2)))
    starts = rng.choice(admissible, size=trials, replace=True).astype(np.int64)
    labels = np.full(g.num_sites, -1, dtype=np.int32)
    for j, tgt in enumerate(targets):
        labels[g.flat_index(tgt)] = j
    counts = np.zeros(len(targets), dtype=np.int64)
    rs = K.make_state(cfg.seed, stream)
    failures = K.absorb_first_hit(rs, g.n, g.d,
                                  K.laziness_threshold(cfg.laziness),
                                  starts, labels, counts, np.int64(2**62))
    if failures:
        raise LatePointError(f"{failures} trials failed to absorb")
    freq = counts / trials
    k = len(targets)
    tv = 0.5 * float(np.abs(freq - 1.0 / k).sum())
    chi2 = stats.chisquare(counts)
    return UniformityReport(
        tv=tv, chi2_pvalue=float(chi2.pvalue), counts=counts, trials=trials,
        per_site_frequency={targets[j]: float(freq[j]) for j in range(k)})
