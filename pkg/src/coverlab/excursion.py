"""Excursion decomposition across annuli: stopping times, counters, the exit
chain, excursion lengths, nested counters, and concentration reports.

An excursion starts when the walk touches the inner shell's vertex boundary
and ends on the first subsequent exit from the outer shell.  The counter
N(r, R, t) follows the cumulative-duration rule
N = min{k >= 0 : sum_{i<=k}(sigma_i - sigma_{i-1}) + (sigma_0 - tau_0) >= t},
which telescopes to min{k : sigma_k - tau_0 >= t}, so it is simulated
exactly, not by truncating at wall-clock t.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .lattice import (AnnulusSpec, Decomposition, ShapeSpec, Site,
                      TorusGeometry, annulus_for_flavor, round_half_up)
from .walk import WalkConfig, WalkState


class ExcursionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# records and explicit-trajectory decomposition


@dataclass(frozen=True)
class ExcursionRecord:
    index: int
    tau: int
    sigma: Optional[int]
    entry: Site
    exit: Optional[Site]
    duration: Optional[int]  # sigma_k - sigma_{k-1}; sigma_0 - tau_0 for k=0
    hit_targets: frozenset
    complete: bool


def _shape_params(shape: ShapeSpec):
    kind = K.BOX if shape.kind == "box" else K.BALL
    return kind, float(shape.size), np.int64(shape.linf_reach)


def decompose_excursions(
    g: TorusGeometry,
    positions: np.ndarray,
    annulus: AnnulusSpec,
    horizon: Optional[int] = None,
    marked: Sequence[Site] = (),
) -> list[ExcursionRecord]:
    """Exact excursion records for an explicit trajectory.

    positions has shape (T+1, d); a partial excursion cut by the horizon is
    returned flagged complete=False and is not counted by callers.
    """
    annulus.validate(g)
    positions = np.asarray(positions, dtype=np.int64)
    if horizon is None:
        horizon = positions.shape[0] - 1
    if horizon > positions.shape[0] - 1:
        raise ExcursionError(
            f"horizon {horizon} exceeds trajectory length {positions.shape[0] - 1}")
    pos = positions[: horizon + 1]
    center = np.asarray(annulus.center, dtype=np.int64)
    delta = (pos - center) % g.n
    delta = np.minimum(delta, g.n - delta)
    inner, outer = annulus.inner, annulus.outer
    if inner.kind == "box":
        m = delta.max(axis=1)
        on_inner = m == inner.linf_reach
    else:
        d2 = np.sum(delta * delta, axis=1)
        r2 = inner.size**2
        on_inner = (d2 <= r2) & (d2 + 2 * delta.max(axis=1) + 1 > r2)
    if outer.kind == "box":
        in_outer = 2 * delta.max(axis=1) <= outer.size
    else:
        in_outer = np.sum(delta * delta, axis=1) <= outer.size**2

    marked_set = {g.site(s) for s in marked}
    records: list[ExcursionRecord] = []
    state = 0
    tau = -1
    prev_sigma = None
    hits: set = set()
    for t in range(horizon + 1):
        here = tuple(int(c) for c in pos[t])
        if state == 0:
            if on_inner[t]:
                state = 1
                tau = t
                hits = {here} & marked_set
        else:
            if here in marked_set:
                hits.add(here)
            if not in_outer[t]:
                k = len(records)
                duration = t - (prev_sigma if prev_sigma is not None else tau)
                records.append(ExcursionRecord(
                    index=k, tau=tau, sigma=t, entry=tuple(int(c) for c in pos[tau]),
                    exit=here, duration=duration, hit_targets=frozenset(hits),
                    complete=True))
                prev_sigma = t
                state = 0
    if state == 1:
        records.append(ExcursionRecord(
            index=len(records), tau=tau, sigma=None,
            entry=tuple(int(c) for c in pos[tau]), exit=None, duration=None,
            hit_targets=frozenset(hits), complete=False))
    return records


# ---------------------------------------------------------------------------
# counters


@dataclass(frozen=True)
class ExcursionCounts:
    center: Site
    r: float
    R: float
    flavor: str
    horizon: int
    count: int


def _check_radii(r: float, R: float, enforce_double: bool = False) -> None:
    if enforce_double and R < 2 * r:
        raise ExcursionError(f"need R >= 2r, got r={r}, R={R}")
    if R < 10 * r:
        warnings.warn(
            f"R = {R} < 10 r = {10 * r}: exit-chain concentration constants "
            "degrade below the tenfold separation", stacklevel=3)


def count_excursions(
    cfg: WalkConfig,
    center: Sequence[int],
    r: float,
    R: float,
    t: int,
    flavor: str = "box_in_ball",
    stream: int = 0,
) -> ExcursionCounts:
    """The formal excursion counter N(r, R, t) for one walk replica."""
    g = cfg.geometry
    _check_radii(r, R, enforce_double=True)
    ann = annulus_for_flavor(g, center, r, R, flavor)
    c = g.site(center)
    if t <= 0:
        return ExcursionCounts(c, r, R, flavor, int(t), 0)
    ik, isz, ih = _shape_params(ann.inner)
    ok, osz, oh = _shape_params(ann.outer)
    st = WalkState.initial(cfg, stream)
    cap = np.int64(50 * t + 20 * g.num_sites * max(1, int(math.log(g.num_sites))) + 10**6)
    N, tau0, sigma, t_end = K.count_excursions_minrule(
        st.rng_state, g.n, g.d, K.laziness_threshold(cfg.laziness),
        st.position, np.asarray(c, dtype=np.int64),
        ik, isz, ih, ok, osz, oh, np.int64(t), cap)
    if N < 0:
        raise ExcursionError("step cap exhausted before the counter resolved")
    return ExcursionCounts(c, r, R, flavor, int(t), int(N))


# ---------------------------------------------------------------------------
# batched excursion records (durations, exits, hits)


@dataclass
class ExcursionBatch:
    taus: np.ndarray
    sigmas: np.ndarray
    entries: np.ndarray   # flat site indices
    exits: np.ndarray
    hitmasks: np.ndarray  # uint64 bitmask over the target list


def run_excursion_batch(
    cfg: WalkConfig,
    center: Sequence[int],
    r: float,
    R: float,
    flavor: str,
    num_excursions: int,
    targets: Sequence[Site] = (),
    stream: int = 0,
) -> ExcursionBatch:
    g = cfg.geometry
    ann = annulus_for_flavor(g, center, r, R, flavor)
    ik, isz, ih = _shape_params(ann.inner)
    ok, osz, oh = _shape_params(ann.outer)
    if len(targets) > 64:
        raise ExcursionError("at most 64 marked targets per batch")
    t_flats = np.array([g.flat_index(s) for s in targets], dtype=np.int64)
    st = WalkState.initial(cfg, stream)
    taus = np.empty(num_excursions, dtype=np.int64)
    sigmas = np.empty(num_excursions, dtype=np.int64)
    entries = np.empty(num_excursions, dtype=np.int64)
    exits = np.empty(num_excursions, dtype=np.int64)
    hitmasks = np.empty(num_excursions, dtype=np.uint64)
    cap = np.int64(2**62)
    done, _ = K.excursion_batch(
        st.rng_state, g.n, g.d, K.laziness_threshold(cfg.laziness),
        st.position, np.asarray(g.site(center), dtype=np.int64),
        ik, isz, ih, ok, osz, oh, t_flats, np.int64(num_excursions),
        taus, sigmas, entries, exits, hitmasks, cap)
    if done < num_excursions:
        raise ExcursionError("excursion batch ended early (step cap)")
    return ExcursionBatch(taus, sigmas, entries, exits, hitmasks)


@dataclass
class ExcursionLengthStats:
    t_hat: float
    ci_halfwidth: float
    n: int
    burn_in: int
    per_class_means: dict = field(default_factory=dict)
    per_class_counts: dict = field(default_factory=dict)


def _sym_class(g: TorusGeometry, flat: int, center: Site) -> tuple:
    """Octahedral symmetry class of a site relative to the center."""
    delta = g.min_image(g.site_of(int(flat)), center)
    return tuple(sorted(int(abs(x)) for x in delta))


def estimate_T_rR(
    cfg: WalkConfig,
    center: Sequence[int],
    r: float,
    R: float,
    flavor: str = "box_in_ball",
    num_excursions: int = 2000,
    burn_in: int = 10,
    stream: int = 0,
) -> ExcursionLengthStats:
    """Stationary mean excursion length: mean of sigma_i - sigma_{i-1} past a
    burn-in, with per-start means stratified by the symmetry class of the
    starting exit point (within-class equality is exact by symmetry, and
    classes keep enough samples per stratum to be meaningful)."""
    if burn_in < 1:
        raise ExcursionError("burn_in must be >= 1")
    if num_excursions <= burn_in + 1:
        raise ExcursionError("too few excursions for the requested burn-in")
    _check_radii(r, R)
    g = cfg.geometry
    batch = run_excursion_batch(cfg, center, r, R, flavor, num_excursions,
                                stream=stream)
    c = g.site(center)
    durations = np.diff(batch.sigmas)  # durations[j] runs from exit j
    use = durations[burn_in:]
    t_hat = float(np.mean(use))
    ci = 1.96 * float(np.std(use, ddof=1)) / math.sqrt(len(use))
    classes: dict = {}
    counts: dict = {}
    for flat, dur in zip(batch.exits[burn_in:-1], use):
        key = _sym_class(g, flat, c)
        classes[key] = classes.get(key, 0.0) + float(dur)
        counts[key] = counts.get(key, 0) + 1
    per_class = {k: classes[k] / counts[k] for k in classes}
    return ExcursionLengthStats(
        t_hat=t_hat, ci_halfwidth=ci, n=len(use), burn_in=burn_in,
        per_class_means=per_class, per_class_counts=counts)


@dataclass
class HitFrequency:
    frequency: float
    stderr: float
    n: int
    per_excursion_hits: np.ndarray


def excursion_hit_frequency(
    cfg: WalkConfig,
    center: Sequence[int],
    r: float,
    R: float,
    flavor: str,
    num_excursions: int,
    targets: Sequence[Site],
    burn_in: int = 1,
    stream: int = 0,
) -> HitFrequency:
    """Fraction of excursions that visit any target, skipping the first
    excursion(s), whose start may lie inside the inner shell.  The standard
    error uses batch means to absorb the weak chain correlation."""
    batch = run_excursion_batch(cfg, center, r, R, flavor, num_excursions,
                                targets=targets, stream=stream)
    hits = (batch.hitmasks[burn_in:] != 0).astype(np.float64)
    freq = float(np.mean(hits))
    nblocks = min(100, len(hits) // 50) or 1
    blocks = np.array_split(hits, nblocks)
    bm = np.array([b.mean() for b in blocks])
    stderr = float(np.std(bm, ddof=1) / math.sqrt(len(bm))) if len(bm) > 1 else math.inf
    return HitFrequency(frequency=freq, stderr=stderr, n=len(hits),
                        per_excursion_hits=hits)


# ---------------------------------------------------------------------------
# exit chain statistics


@dataclass
class ExitChainStats:
    exit_flats: np.ndarray
    pi_hat: dict
    k0_hat: int
    n_samples: int
    burn_in: int
    symmetrized_tv: float


def _autocorr_first_crossing(series: np.ndarray, threshold: float = math.e**-1) -> int:
    x = series - series.mean()
    var = float(np.dot(x, x))
    if var <= 0:
        return 1
    for lag in range(1, min(len(x) - 1, 200)):
        rho = float(np.dot(x[:-lag], x[lag:])) / var
        if abs(rho) < threshold:
            return lag
    return 200


def exit_chain_stats(
    cfg: WalkConfig,
    center: Sequence[int],
    r: float,
    R: float,
    num_excursions: int,
    flavor: str = "ball_in_ball",
    burn_in: int = 50,
    stream: int = 0,
) -> ExitChainStats:
    """Empirical stationary law of excursion exit points and a rough mixing
    lag from coordinate autocorrelations."""
    if num_excursions <= burn_in + 10:
        raise ExcursionError("too few excursions for the requested burn-in")
    g = cfg.geometry
    batch = run_excursion_batch(cfg, center, r, R, flavor, num_excursions,
                                stream=stream)
    exits = batch.exits[burn_in:]
    c = g.site(center)
    coords = g.coords_array(exits)
    delta = (coords - np.asarray(c, dtype=np.int64)) % g.n
    delta = np.where(delta * 2 > g.n, delta - g.n, delta)
    k0 = 1
    for axis in range(g.d):
        k0 = max(k0, _autocorr_first_crossing(delta[:, axis].astype(np.float64)))
    radial = np.sqrt(np.sum(delta.astype(np.float64) ** 2, axis=1))
    k0 = max(k0, _autocorr_first_crossing(radial))
    flats, counts = np.unique(exits, return_counts=True)
    pi_hat = {int(f): c_ / len(exits) for f, c_ in zip(flats, counts)}
    # octahedral symmetrization: average probability over each symmetry class
    classes: dict = {}
    for f, p in pi_hat.items():
        key = _sym_class(g, f, c)
        classes.setdefault(key, []).append(p)
    sym_tv = 0.0
    for key, ps in classes.items():
        mean_p = float(np.mean(ps))
        # class members with zero observed mass still count toward the class mean
        sym_tv += 0.5 * sum(abs(p - mean_p) for p in ps)
    return ExitChainStats(exit_flats=exits, pi_hat=pi_hat, k0_hat=int(k0),
                          n_samples=len(exits), burn_in=burn_in,
                          symmetrized_tv=float(sym_tv))


# ---------------------------------------------------------------------------
# nested-annulus machinery


@dataclass
class WStats:
    samples: np.ndarray
    mean: float
    moments: dict
    beta: float
    phi: float
    n_scale: int


def sample_W(
    n: int,
    d: int,
    beta: float,
    phi: float,
    num_samples: int,
    seed: int = 0,
    burn_in: int = 20,
    stream: int = 0,
) -> WStats:
    """Thin-annulus crossings per big-annulus excursion.

    The big annulus B(0, 10 n^beta) \\ S(0, n^beta) outgrows any torus that is
    feasible to simulate whenever 10 n^beta >= n/2, but one excursion never
    leaves the big ball, so its law is that of the infinite lattice; the
    sampler therefore runs on Z^d.  Entry points are drawn by walking in from
    a shell at fixed ratio to the box (restarting when the walk drifts out of
    the big ball first); successive samples reuse the previous exit direction,
    which carries the exit-chain correlation.
    """
    s = round_half_up(n**beta)
    gap = round_half_up(n**phi)
    if not (s > gap >= 1):
        raise ExcursionError(
            f"need round(n^beta) > round(n^phi) >= 1, got {s}, {gap}")
    s_in = float(n**beta)
    s_thin = float(n**beta + n**phi)
    rho_big = 10.0 * n**beta
    rho_entry = 2.5 * n**beta
    if rho_entry <= math.sqrt(d) * s_thin / 2 + 1:
        rho_entry = math.sqrt(d) * s_thin / 2 + 2
    rs = K.make_state(seed, stream)
    out = np.empty(num_samples, dtype=np.int64)
    cap = np.int64(max(10**8, num_samples * 4000 * int(s_in * s_in + 1)))
    got = K.sample_w_zd(rs, d, s_in, np.int64(int(s_in / 2)), s_thin,
                        rho_big, rho_entry, np.int64(num_samples),
                        np.int64(burn_in), out, cap)
    if got < num_samples:
        raise ExcursionError("W sampler exhausted its step cap")
    mean = float(np.mean(out))
    moments = {j: float(np.mean(out.astype(np.float64) ** j)) for j in range(1, 7)}
    return WStats(samples=out, mean=mean, moments=moments, beta=beta, phi=phi,
                  n_scale=n)


def estimate_thin_T(
    cfg: WalkConfig,
    dec: Decomposition,
    tile: Sequence[int],
    num_excursions: int = 4000,
    burn_in: int = 20,
    stream: int = 0,
) -> float:
    """Stationary mean duration of excursions across one tile's box annulus.

    By the renewal identity E[W] / T_big = 1 / T_thin this is the bridge
    between the thin-annulus clock and the (unsimulatable at desk scale)
    big-annulus normalization.
    """
    g = cfg.geometry
    st = WalkState.initial(cfg, stream)
    sig = np.empty(num_excursions, dtype=np.int64)
    m = dec.tiles_per_axis
    home = 0
    for t in tile:
        home = home * m + int(t)
    got = K.tile_thin_durations(
        st.rng_state, g.n, g.d, K.laziness_threshold(cfg.laziness),
        st.position, np.int64(home), np.int64(dec.outer_side),
        np.int64(dec.box_lo), np.int64(dec.box_side),
        np.int64(num_excursions), sig, np.int64(2**62))
    if got < num_excursions:
        raise ExcursionError("thin-annulus batch ended early")
    durations = np.diff(sig)[burn_in:]
    return float(np.mean(durations))


def ebar_excursions(t: float, delta: float, thin_T_hat: float = None,
                    w_mean: float = None, big_T_hat: float = None) -> int:
    """The per-box excursion budget floor(t E[W] / ((1+delta/4) T_big)).

    Accepts either the (E[W], T_big) pair or, equivalently by the renewal
    identity E[W]/T_big = 1/T_thin, the thin-annulus mean duration.
    """
    if thin_T_hat is not None:
        rate = 1.0 / thin_T_hat
    elif w_mean is not None and big_T_hat is not None:
        rate = w_mean / big_T_hat
    else:
        raise ExcursionError("pass thin_T_hat or the (w_mean, big_T_hat) pair")
    return max(1, int(math.floor(t * rate / (1.0 + delta / 4.0))))


def count_nested_excursions(
    cfg: WalkConfig,
    z: Sequence[int],
    r: float,
    R: float,
    t: int,
    dec: Decomposition,
    delta: float,
    thin_T_hat: Optional[float] = None,
    stream: int = 0,
) -> int:
    """Ball-annulus excursions around z completed during the first
    Ebar(t, delta/4) thin-annulus excursions of z's surrounding box."""
    g = cfg.geometry
    zz = g.site(z)
    if dec.in_annular_region(zz):
        raise ExcursionError(
            "z lies in the annular region A of the decomposition")
    if t <= 0:
        return 0
    # the nested ball must fit inside z's concentric box
    lo = dec.box_lo
    hi = lo + dec.box_side - 1
    for c in zz:
        o = c % dec.outer_side
        if min(o - lo, hi - o) < int(R):
            raise ExcursionError(
                f"ball of radius {R} around z does not fit inside z's box")
    if R < 2 * r:
        raise ExcursionError(f"need R >= 2r, got r={r}, R={R}")
    if thin_T_hat is None:
        thin_T_hat = estimate_thin_T(cfg, dec, dec.tile_of(zz),
                                     stream=stream + 10_000)
    ebar = ebar_excursions(t, delta, thin_T_hat=thin_T_hat)
    st = WalkState.initial(cfg, stream)
    count, _, _ = K.nested_counter(
        st.rng_state, g.n, g.d, K.laziness_threshold(cfg.laziness),
        st.position, np.asarray(zz, dtype=np.int64),
        np.int64(dec.outer_side), np.int64(dec.box_lo), np.int64(dec.box_side),
        float(r), np.int64(int(r)), float(R), np.int64(int(R)),
        np.int64(ebar), np.int64(200 * t + 10**7))
    if count < 0:
        raise ExcursionError("nested counter exhausted its step cap")
    return int(count)


# ---------------------------------------------------------------------------
# concentration hypotheses and reports


def default_delta(r: float, d: int, n: int, psi: float = 0.05) -> float:
    """The standard concentration width r^{(2-d)/2} n^psi."""
    return r ** ((2.0 - d) / 2.0) * n**psi


def validate_delta(n: int, d: int, r: float, delta: float, psi: float,
                   nested: bool = False) -> None:
    """Admissibility of (delta, psi) for the excursion-count concentration
    bounds; raises with the violated condition spelled out."""
    if not (0 < delta < 1):
        raise ExcursionError(f"delta must lie in (0,1), got {delta}")
    if not (0 < psi < 0.5):
        raise ExcursionError(f"psi must lie in (0, 1/2), got {psi}")
    if delta * n**psi > 1.0 + 1e-12:
        raise ExcursionError(
            f"delta * n^psi = {delta * n**psi:.3f} > 1 violates the "
            "concentration hypothesis")
    if delta * r ** (d - 2) * n ** (-psi - 0.5) > 1.0 + 1e-12:
        raise ExcursionError(
            f"delta * r^(d-2) * n^(-psi-1/2) = "
            f"{delta * r ** (d - 2) * n ** (-psi - 0.5):.3f} > 1 violates the "
            "concentration hypothesis")
    if nested and delta >= 1 / 3:
        raise ExcursionError(
            f"the nested-counter bracket needs delta < 1/3, got {delta}")


@dataclass
class ConcentrationReport:
    lower: float
    upper: float
    outside_fraction: float
    ci_halfwidth: float
    replicas: int
    counts: np.ndarray
    t_hat: float


def concentration_report(
    cfg: WalkConfig,
    center: Sequence[int],
    r: float,
    R: float,
    t: int,
    delta: float,
    replicas: int,
    flavor: str = "box_in_ball",
    psi: float = 0.05,
    calibration_excursions: int = 3000,
) -> ConcentrationReport:
    """Empirical tail frequency of the counter against [t/((1+d)T), t/((1-d)T)].

    T is calibrated from an independent stream; replica i uses stream i+1.
    """
    validate_delta(cfg.geometry.n, cfg.geometry.d, r, delta, psi)
    stats = estimate_T_rR(cfg, center, r, R, flavor,
                          num_excursions=calibration_excursions,
                          burn_in=20, stream=10**6)
    t_hat = stats.t_hat
    lower = t / ((1.0 + delta) * t_hat)
    upper = t / ((1.0 - delta) * t_hat)
    counts = np.array([
        count_excursions(cfg, center, r, R, t, flavor, stream=i + 1).count
        for i in range(replicas)
    ], dtype=np.int64)
    outside = float(np.mean((counts < lower) | (counts > upper)))
    ci = 1.96 * math.sqrt(max(outside * (1 - outside), 1e-12) / replicas)
    return ConcentrationReport(lower=lower, upper=upper,
                               outside_fraction=outside, ci_halfwidth=ci,
                               replicas=replicas, counts=counts, t_hat=t_hat)


def nested_concentration_report(
    cfg: WalkConfig,
    z: Sequence[int],
    r: float,
    R: float,
    t: int,
    dec: Decomposition,
    delta: float,
    replicas: int,
    psi: float = 0.05,
    calibration_excursions: int = 6000,
) -> ConcentrationReport:
    """Tail frequency of the nested counter against [t/((1+d)T), t/((1-d)T)]
    with T the ball-annulus stationary excursion length."""
    validate_delta(cfg.geometry.n, cfg.geometry.d, r, delta, psi, nested=True)
    g = cfg.geometry
    stats = estimate_T_rR(cfg, z, r, R, "ball_in_ball",
                          num_excursions=calibration_excursions,
                          burn_in=20, stream=10**6)
    t_hat = stats.t_hat
    thin_T = estimate_thin_T(cfg, dec, dec.tile_of(g.site(z)),
                             num_excursions=3 * calibration_excursions,
                             stream=10**6 + 1)
    lower = t / ((1.0 + delta) * t_hat)
    upper = t / ((1.0 - delta) * t_hat)
    counts = np.array([
        count_nested_excursions(cfg, z, r, R, t, dec, delta,
                                thin_T_hat=thin_T, stream=i + 1)
        for i in range(replicas)
    ], dtype=np.int64)
    outside = float(np.mean((counts < lower) | (counts > upper)))
    ci = 1.96 * math.sqrt(max(outside * (1 - outside), 1e-12) / replicas)
    return ConcentrationReport(lower=lower, upper=upper,
                               outside_fraction=outside, ci_halfwidth=ci,
                               replicas=replicas, counts=counts, t_hat=t_hat)
