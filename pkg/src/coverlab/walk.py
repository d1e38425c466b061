"""Simple random walk on Z_n^d: visit tracking, hitting, covering.

Replica determinism: every operation is a pure function of (config, stream
index).  Stream k of a config draws its kernel randomness from
SeedSequence(seed, spawn_key=(k,)) and any auxiliary python-side draws from
SeedSequence(seed, spawn_key=(k, 1)), so results never depend on scheduling
or on how many replicas run in parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .lattice import GeometryError, Site, TorusGeometry


@dataclass(frozen=True)
class WalkConfig:
    geometry: TorusGeometry
    laziness: float = 0.0
    seed: int = 0
    start: Optional[Site] = None  # None draws the start from stationarity

    def __post_init__(self):
        if not (0.0 <= self.laziness <= 0.5):
            raise GeometryError(f"laziness must lie in [0, 1/2], got {self.laziness}")
        if self.start is not None:
            object.__setattr__(self, "start", self.geometry.site(self.start))


def _aux_rng(cfg: WalkConfig, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=cfg.seed & (2**64 - 1), spawn_key=(stream, 1))
    return np.random.default_rng(ss)


def sample_stationary_start(cfg: WalkConfig, stream: int = 0) -> Site:
    """Uniform site (the stationary law of SRW on a vertex-transitive graph).

    A fixed-start config always returns its fixed point.
    """
    if cfg.start is not None:
        return cfg.start
    rng = _aux_rng(cfg, stream)
    return tuple(int(c) for c in rng.integers(0, cfg.geometry.n, size=cfg.geometry.d))


@dataclass
class VisitTracker:
    """Bit-packed visited mask with a live unvisited count.

    first_hit[x] is the time of the first visit to x (-1 while unvisited)
    and is only populated when the walk was run with tracking enabled.
    """

    geometry: TorusGeometry
    words: np.ndarray
    unvisited_count: int
    first_hit: Optional[np.ndarray] = None
    horizon: int = 0

    @classmethod
    def fresh(cls, g: TorusGeometry, track_first_hits: bool = False) -> "VisitTracker":
        nw = (g.num_sites + 63) // 64
        fh = np.full(g.num_sites, -1, dtype=np.int64) if track_first_hits else None
        return cls(geometry=g, words=np.zeros(nw, dtype=np.uint64),
                   unvisited_count=g.num_sites, first_hit=fh)

    def visited(self, site: Sequence[int]) -> bool:
        f = self.geometry.flat_index(site)
        return bool((int(self.words[f >> 6]) >> (f & 63)) & 1)

    def visited_mask(self) -> np.ndarray:
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        return bits[: self.geometry.num_sites].astype(bool)

    def uncovered_indices(self) -> np.ndarray:
        return np.nonzero(~self.visited_mask())[0]


@dataclass
class WalkState:
    config: WalkConfig
    position: np.ndarray
    time: int
    rng_state: np.ndarray
    stream: int = 0

    @classmethod
    def initial(cls, cfg: WalkConfig, stream: int = 0) -> "WalkState":
        start = sample_stationary_start(cfg, stream)
        return cls(config=cfg,
                   position=np.array(start, dtype=np.int64),
                   time=0,
                   rng_state=K.make_state(cfg.seed, stream),
                   stream=stream)

    @property
    def site(self) -> Site:
        return tuple(int(c) for c in self.position)


def step(state: WalkState) -> WalkState:
    """Advance one step in place (hold with probability `laziness`)."""
    g = state.config.geometry
    K.walk_steps(state.rng_state, g.n, g.d, state.position, 1,
                 K.laziness_threshold(state.config.laziness))
    state.time += 1
    return state


def trajectory(cfg: WalkConfig, steps: int, stream: int = 0) -> np.ndarray:
    """The full position history, shape (steps+1, d)."""
    state = WalkState.initial(cfg, stream)
    g = cfg.geometry
    out = np.empty((steps + 1, g.d), dtype=np.int64)
    K.walk_positions(state.rng_state, g.n, g.d, state.position, steps,
                     K.laziness_threshold(cfg.laziness), out)
    return out


def run(cfg: WalkConfig, steps: int, track_first_hits: bool = False,
        stream: int = 0) -> tuple[WalkState, VisitTracker]:
    """Run for a fixed number of steps with visit tracking."""
    state = WalkState.initial(cfg, stream)
    g = cfg.geometry
    tracker = VisitTracker.fresh(g, track_first_hits)
    fh = tracker.first_hit if track_first_hits else np.empty(1, dtype=np.int64)
    t_end, unvis = K.walk_tracked(
        state.rng_state, g.n, g.d, state.position, steps, -1,
        K.laziness_threshold(cfg.laziness), tracker.words, fh,
        track_first_hits, 0, g.num_sites)
    state.time = int(t_end)
    tracker.unvisited_count = int(unvis)
    tracker.horizon = int(t_end)
    return state, tracker


def uncovered_set(tracker: VisitTracker, t: int) -> set[Site]:
    """Sites with first visit strictly after t (requires first-hit tracking)."""
    if tracker.first_hit is None:
        raise GeometryError("uncovered_set needs a tracker with first-hit times")
    if t > tracker.horizon:
        raise GeometryError(
            f"t = {t} is beyond the simulated horizon {tracker.horizon}")
    g = tracker.geometry
    fh = tracker.first_hit
    flats = np.nonzero((fh < 0) | (fh > t))[0]
    return {g.site_of(int(f)) for f in flats}


def run_until_uncovered_count(cfg: WalkConfig, m: int,
                              stream: int = 0) -> tuple[WalkState, set[Site]]:
    """Stop at the first time exactly m sites remain unvisited.

    The unvisited count starts at n^d - 1 and decreases by at most one per
    step, so every 1 <= m <= n^d - 1 is achieved.
    """
    g = cfg.geometry
    if not (1 <= m <= g.num_sites - 1):
        raise GeometryError(f"m must be in [1, {g.num_sites - 1}], got {m}")
    state = WalkState.initial(cfg, stream)
    tracker = VisitTracker.fresh(g)
    t_end, unvis = K.walk_tracked(
        state.rng_state, g.n, g.d, state.position, np.int64(2**62), m,
        K.laziness_threshold(cfg.laziness), tracker.words,
        np.empty(1, dtype=np.int64), False, 0, g.num_sites)
    state.time = int(t_end)
    tracker.unvisited_count = int(unvis)
    tracker.horizon = int(t_end)
    sites = {g.site_of(int(f)) for f in tracker.uncovered_indices()}
    return state, sites


def cover_time(cfg: WalkConfig, stream: int = 0) -> int:
    """First time every site has been visited."""
    g = cfg.geometry
    state = WalkState.initial(cfg, stream)
    tracker = VisitTracker.fresh(g)
    t_end, _ = K.walk_tracked(
        state.rng_state, g.n, g.d, state.position, np.int64(2**62), 0,
        K.laziness_threshold(cfg.laziness), tracker.words,
        np.empty(1, dtype=np.int64), False, 0, g.num_sites)
    return int(t_end)


def cover_times(cfg: WalkConfig, replicas: int) -> np.ndarray:
    return np.array([cover_time(cfg, stream=i) for i in range(replicas)],
                    dtype=np.int64)


def cover_times_bulk(cfg: WalkConfig, replicas: int,
                     stream: int = 0) -> np.ndarray:
    """Many cover-time replicas in one kernel call.

    Replica states come from one SeedSequence((seed, (stream, 3))) block, a
    documented bulk scheme distinct from the per-replica streams above; use
    it for large ensembles where per-call overhead would dominate.
    """
    g = cfg.geometry
    ss = np.random.SeedSequence(entropy=cfg.seed & (2**64 - 1),
                                spawn_key=(stream, 3))
    states = ss.generate_state(4 * replicas, np.uint64).reshape(replicas, 4)
    rng = _aux_rng(cfg, stream)
    if cfg.start is not None:
        starts = np.full(replicas, g.flat_index(cfg.start), dtype=np.int64)
    else:
        starts = rng.integers(0, g.num_sites, size=replicas).astype(np.int64)
    out = np.empty(replicas, dtype=np.int64)
    K.cover_times_batch(states, g.n, g.d, starts,
                        K.laziness_threshold(cfg.laziness), out)
    return out


@dataclass
class Estimate:
    value: float
    ci_halfwidth: float
    n: int
    per_class: dict = field(default_factory=dict)


def _mean_ci(xs: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(xs))
    if len(xs) < 2:
        return m, math.inf
    half = 1.96 * float(np.std(xs, ddof=1)) / math.sqrt(len(xs))
    return m, half


def hitting_times(cfg: WalkConfig, target: Site, replicas: int,
                  stream_base: int = 0) -> np.ndarray:
    """Independent first-hitting times of `target` from the config's start."""
    g = cfg.geometry
    tflat = g.flat_index(target)
    cap = np.int64(2**62)
    out = np.empty(replicas, dtype=np.int64)
    for i in range(replicas):
        st = WalkState.initial(cfg, stream=stream_base + i)
        out[i] = K.walk_until_hit(st.rng_state, g.n, g.d, st.position, tflat,
                                  K.laziness_threshold(cfg.laziness), cap)
    return out


def estimate_t_hit(cfg: WalkConfig, replicas: int) -> Estimate:
    """Monte Carlo maximal-hitting-time estimate.

    By vertex transitivity the target is fixed at the origin and the start is
    maximized over representative classes: the antipodal point (the worst
    case on the torus) and a stationary start.
    """
    if replicas < 1:
        raise GeometryError("need at least one replica")
    g = cfg.geometry
    target = (0,) * g.d
    anti = (g.n // 2,) * g.d
    classes = {}
    for name, start in (("antipodal", anti), ("stationary", None)):
        sub = WalkConfig(geometry=g, laziness=cfg.laziness, seed=cfg.seed,
                         start=start)
        times = hitting_times(sub, target, replicas,
                              stream_base=0 if name == "antipodal" else replicas)
        classes[name] = _mean_ci(times)
    best = max(classes, key=lambda k: classes[k][0])
    value, half = classes[best]
    return Estimate(value=value, ci_halfwidth=half, n=replicas, per_class=classes)
