"""Numba kernels: the hot loops behind walks, excursions, and samplers.

All kernels consume an explicit xoshiro256++ state (uint64[4]) so replicas
are deterministic functions of their seed material.  Axis/sign choices use a
64-bit draw reduced mod 2d; the modulo bias is ~2^-61 and irrelevant at any
feasible sample size.  Laziness holds consume a dedicated draw so they do not
bias the direction choice.

Shape membership uses minimal-image displacements: boxes test
2*max|delta| <= side, balls test sum(delta^2) <= radius^2 (sizes may be
non-integral).  A site is on the inner vertex boundary of a box iff its
max-offset equals floor(side/2), and of a ball iff stepping outward along a
maximal axis leaves it.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64
_SPLIT_GAMMA = U64(0x9E3779B97F4A7C15)


def make_state(base_seed: int, stream: int = 0) -> np.ndarray:
    """xoshiro256++ state for a documented (seed, stream) pair.

    Streams are derived with numpy's SeedSequence, which hashes the pair, so
    distinct replicas get statistically independent generators.
    """
    ss = np.random.SeedSequence(entropy=int(base_seed) & (2**64 - 1), spawn_key=(int(stream),))
    state = ss.generate_state(4, np.uint64)
    if not state.any():  # xoshiro must not start at all-zero
        state[0] = _SPLIT_GAMMA
    return state


@njit(inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (U64(64) - k))


@njit(inline="always")
def _next(rs):
    result = _rotl(rs[0] + rs[3], U64(23)) + rs[0]
    t = rs[1] << U64(17)
    rs[2] ^= rs[0]
    rs[3] ^= rs[1]
    rs[1] ^= rs[2]
    rs[0] ^= rs[3]
    rs[2] ^= t
    rs[3] = _rotl(rs[3], U64(45))
    return result


@njit(inline="always")
def _rand_below(rs, bound):
    return _next(rs) % bound


@njit(inline="always")
def _rand_unit(rs):
    return float(_next(rs) >> U64(11)) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def _move(rs, pos, n, d, lz_thr):
    """One SRW step in place; returns the axis moved (or -1 on a lazy hold)."""
    if lz_thr > U64(0):
        if _next(rs) < lz_thr:
            return -1
    r = _rand_below(rs, U64(2 * d))
    ax = np.int64(r >> U64(1))
    if r & U64(1):
        c = pos[ax] + 1
        if c == n:
            c = 0
    else:
        c = pos[ax] - 1
        if c < 0:
            c = n - 1
    pos[ax] = c
    return ax


@njit(inline="always")
def _move_free(rs, pos, d):
    """One SRW step on the infinite lattice Z^d (no wraparound)."""
    r = _rand_below(rs, U64(2 * d))
    ax = np.int64(r >> U64(1))
    if r & U64(1):
        pos[ax] += 1
    else:
        pos[ax] -= 1


@njit(inline="always")
def _flat_of(pos, n, d):
    f = np.int64(0)
    for i in range(d):
        f = f * n + pos[i]
    return f


def laziness_threshold(laziness: float) -> np.uint64:
    if laziness <= 0.0:
        return U64(0)
    return U64(min(int(laziness * 2.0**64), 2**64 - 1))


# ---------------------------------------------------------------------------
# visit-tracked walks


@njit(cache=True)
def walk_tracked(rs, n, d, pos, max_steps, stop_unvisited, lz_thr,
                 words, first_hit, track_first, t_start, unvisited):
    """Run up to max_steps, recording visits into the bitmask `words`.

    Stops early once the unvisited count equals stop_unvisited (pass -1 to
    disable).  Returns (t_end, unvisited_count).  `first_hit` is written only
    when track_first is true; pass a length-1 dummy otherwise.
    """
    t = t_start
    flat = _flat_of(pos, n, d)
    w = flat >> 6
    b = U64(1) << U64(flat & 63)
    if words[w] & b == U64(0):
        words[w] |= b
        unvisited -= 1
        if track_first:
            first_hit[flat] = t
    if unvisited == stop_unvisited:
        return t, unvisited
    while t - t_start < max_steps:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        flat = _flat_of(pos, n, d)
        w = flat >> 6
        b = U64(1) << U64(flat & 63)
        if words[w] & b == U64(0):
            words[w] |= b
            unvisited -= 1
            if track_first:
                first_hit[flat] = t
            if unvisited == stop_unvisited:
                break
    return t, unvisited


@njit(cache=True)
def cover_times_batch(states, n, d, starts, lz_thr, out):
    """Cover times for many independent replicas in one call.

    states: (m, 4) uint64 xoshiro states, one row per replica;
    starts: (m,) flat start sites; out: (m,) int64 cover times.
    """
    ns = np.int64(n**d)
    nw = (ns + 63) >> 6
    words = np.empty(nw, dtype=np.uint64)
    pos = np.empty(d, dtype=np.int64)
    for rep in range(states.shape[0]):
        rs = states[rep]
        for w in range(nw):
            words[w] = U64(0)
        f = starts[rep]
        for i in range(d - 1, -1, -1):
            pos[i] = f % n
            f //= n
        unvisited = ns
        flat = _flat_of(pos, n, d)
        words[flat >> 6] |= U64(1) << U64(flat & 63)
        unvisited -= 1
        t = np.int64(0)
        while unvisited > 0:
            _move(rs, pos, n, d, lz_thr)
            t += 1
            flat = _flat_of(pos, n, d)
            w = flat >> 6
            b = U64(1) << U64(flat & 63)
            if words[w] & b == U64(0):
                words[w] |= b
                unvisited -= 1
        out[rep] = t


@njit(cache=True)
def walk_until_hit(rs, n, d, pos, target_flat, lz_thr, cap):
    """Steps until the walk sits on target_flat; -1 if cap is exhausted."""
    t = np.int64(0)
    if _flat_of(pos, n, d) == target_flat:
        return t
    while t < cap:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        if _flat_of(pos, n, d) == target_flat:
            return t
    return np.int64(-1)


@njit(cache=True)
def walk_steps(rs, n, d, pos, steps, lz_thr):
    for _ in range(steps):
        _move(rs, pos, n, d, lz_thr)


@njit(cache=True)
def walk_positions(rs, n, d, pos, steps, lz_thr, out):
    """Record the full trajectory (steps+1, d) into out."""
    for i in range(d):
        out[0, i] = pos[i]
    for t in range(steps):
        _move(rs, pos, n, d, lz_thr)
        for i in range(d):
            out[t + 1, i] = pos[i]


# ---------------------------------------------------------------------------
# annulus membership helpers

BOX = 0
BALL = 1


@njit(inline="always")
def _offsets(pos, center, n, d, out):
    for i in range(d):
        dd = pos[i] - center[i]
        dd %= n
        if dd * 2 > n:
            dd -= n
        out[i] = dd


@njit(inline="always")
def _member(kind, size, h_int, off, d):
    if kind == BOX:
        m = np.int64(0)
        for i in range(d):
            a = off[i] if off[i] >= 0 else -off[i]
            if a > m:
                m = a
        return 2.0 * m <= size
    d2 = np.int64(0)
    for i in range(d):
        d2 += off[i] * off[i]
    return float(d2) <= size * size


@njit(inline="always")
def _on_inner_boundary(kind, size, h_int, off, d):
    if kind == BOX:
        m = np.int64(0)
        for i in range(d):
            a = off[i] if off[i] >= 0 else -off[i]
            if a > m:
                m = a
        return m == h_int
    d2 = np.int64(0)
    m = np.int64(0)
    for i in range(d):
        d2 += off[i] * off[i]
        a = off[i] if off[i] >= 0 else -off[i]
        if a > m:
            m = a
    r2 = size * size
    return float(d2) <= r2 and float(d2 + 2 * m + 1) > r2


# ---------------------------------------------------------------------------
# excursions across an annulus


@njit(cache=True)
def excursion_batch(rs, n, d, lz_thr, pos, center,
                    in_kind, in_size, in_h, out_kind, out_size, out_h,
                    targets, num_exc,
                    taus, sigmas, entries, exits, hitmasks, cap):
    """Record num_exc completed excursions (entry to inner shell boundary,
    then first exit from the outer shell).

    hitmasks bit j is set when targets[j] is visited during [tau_k, sigma_k].
    Returns (completed, t_end); the walk object continues from where it
    stopped, so batches can be chained.
    """
    off = np.empty(d, dtype=np.int64)
    t = np.int64(0)
    k = np.int64(0)
    state = 0  # 0: waiting for entry, 1: inside excursion
    mask = U64(0)
    nt = targets.shape[0]
    if num_exc <= 0:
        return k, t
    _offsets(pos, center, n, d, off)
    if _on_inner_boundary(in_kind, in_size, in_h, off, d):
        state = 1
        taus[0] = 0
        entries[0] = _flat_of(pos, n, d)
        mask = U64(0)
        if nt > 0:
            f = _flat_of(pos, n, d)
            for j in range(nt):
                if f == targets[j]:
                    mask |= U64(1) << U64(j)
    while k < num_exc and t < cap:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        _offsets(pos, center, n, d, off)
        if state == 0:
            if _on_inner_boundary(in_kind, in_size, in_h, off, d):
                state = 1
                taus[k] = t
                entries[k] = _flat_of(pos, n, d)
                mask = U64(0)
                if nt > 0:
                    f = _flat_of(pos, n, d)
                    for j in range(nt):
                        if f == targets[j]:
                            mask |= U64(1) << U64(j)
        else:
            if nt > 0:
                f = _flat_of(pos, n, d)
                for j in range(nt):
                    if f == targets[j]:
                        mask |= U64(1) << U64(j)
            if not _member(out_kind, out_size, out_h, off, d):
                sigmas[k] = t
                exits[k] = _flat_of(pos, n, d)
                hitmasks[k] = mask
                state = 0
                k += 1
    return k, t


@njit(cache=True)
def count_excursions_minrule(rs, n, d, lz_thr, pos, center,
                             in_kind, in_size, in_h, out_kind, out_size, out_h,
                             t_horizon, cap):
    """The formal excursion counter: N = min{k >= 0 : sigma_k - tau_0 >= t}.

    Returns (N, tau0, sigma_N, t_end); N = -1 if the step cap was exhausted
    before the condition triggered.
    """
    off = np.empty(d, dtype=np.int64)
    t = np.int64(0)
    state = 0
    tau0 = np.int64(-1)
    k = np.int64(0)
    _offsets(pos, center, n, d, off)
    if _on_inner_boundary(in_kind, in_size, in_h, off, d):
        state = 1
        tau0 = 0
    while t < cap:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        _offsets(pos, center, n, d, off)
        if state == 0:
            if _on_inner_boundary(in_kind, in_size, in_h, off, d):
                state = 1
                if tau0 < 0:
                    tau0 = t
        else:
            if not _member(out_kind, out_size, out_h, off, d):
                state = 0
                if t - tau0 >= t_horizon:
                    return k, tau0, t, t
                k += 1
    return np.int64(-1), tau0, np.int64(-1), t


# ---------------------------------------------------------------------------
# nested counting and the excursion-stopped uncovered field


@njit(inline="always")
def _on_tile_box_boundary(pos, s_bar, lo, side, d):
    edge = False
    for i in range(d):
        o = pos[i] % s_bar
        if o < lo or o >= lo + side:
            return False
        if o == lo or o == lo + side - 1:
            edge = True
    return edge


@njit(inline="always")
def _tile_flat(pos, s_bar, m, d):
    f = np.int64(0)
    for i in range(d):
        f = f * m + pos[i] // s_bar
    return f


@njit(cache=True)
def nested_counter(rs, n, d, lz_thr, pos, z,
                   s_bar, box_lo, box_side,
                   r_in, h_in, r_out, h_out,
                   ebar, cap):
    """Ball-annulus excursions around z completed during the first `ebar`
    thin-annulus excursions of z's own tile box.

    Returns (count, thin_stop_time, t_end); count = -1 on cap exhaustion.
    """
    off = np.empty(d, dtype=np.int64)
    home = _tile_flat(z, s_bar, n // s_bar, d)
    t = np.int64(0)
    thin_state = 0
    thin_count = np.int64(0)
    ball_state = 0
    ball_count = np.int64(0)
    if _on_tile_box_boundary(pos, s_bar, box_lo, box_side, d) and \
            _tile_flat(pos, s_bar, n // s_bar, d) == home:
        thin_state = 1
    _offsets(pos, z, n, d, off)
    if _on_inner_boundary(BALL, r_in, h_in, off, d):
        ball_state = 1
    while t < cap:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        # ball machine first: a completion at the stopping step still counts
        _offsets(pos, z, n, d, off)
        if ball_state == 0:
            if _on_inner_boundary(BALL, r_in, h_in, off, d):
                ball_state = 1
        else:
            if not _member(BALL, r_out, h_out, off, d):
                ball_state = 0
                ball_count += 1
        # thin machine: excursion ends on leaving the home tile altogether
        in_home = _tile_flat(pos, s_bar, n // s_bar, d) == home
        if thin_state == 1 and not in_home:
            thin_state = 0
            thin_count += 1
            if thin_count == ebar:
                return ball_count, t, t
        if thin_state == 0 and in_home and \
                _on_tile_box_boundary(pos, s_bar, box_lo, box_side, d):
            thin_state = 1
    return np.int64(-1), np.int64(-1), t


@njit(cache=True)
def tile_thin_durations(rs, n, d, lz_thr, pos, home, s_bar, box_lo, box_side,
                        num_exc, out_sigma, cap):
    """Completion times of excursions across one tile's box annulus.

    An excursion runs from touching the boundary of the tile's concentric box
    until leaving the tile; out_sigma receives the completion times.
    Returns the number completed.
    """
    m = n // s_bar
    t = np.int64(0)
    k = np.int64(0)
    state = 0
    if _tile_flat(pos, s_bar, m, d) == home and \
            _on_tile_box_boundary(pos, s_bar, box_lo, box_side, d):
        state = 1
    while k < num_exc and t < cap:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        in_home = _tile_flat(pos, s_bar, m, d) == home
        if state == 1 and not in_home:
            state = 0
            out_sigma[k] = t
            k += 1
        elif state == 0 and in_home and \
                _on_tile_box_boundary(pos, s_bar, box_lo, box_side, d):
            state = 1
    return k


@njit(cache=True)
def y_process(rs, n, d, lz_thr, pos,
              s_bar, box_lo, box_side, ebar, min_steps, cap,
              first_hit, tile_stop, tile_count, tile_state):
    """Visit-time pass plus per-tile thin-annulus clocks.

    Stops each tile's clock at its ebar-th completed excursion across the
    tile's box annulus; runs until every tile has stopped and at least
    min_steps steps were taken.  Returns t_end, or -1 if the cap ran out.
    """
    m = n // s_bar
    num_tiles = tile_stop.shape[0]
    done = np.int64(0)
    t = np.int64(0)
    flat = _flat_of(pos, n, d)
    if first_hit[flat] < 0:
        first_hit[flat] = 0
    cur = _tile_flat(pos, s_bar, m, d)
    if _on_tile_box_boundary(pos, s_bar, box_lo, box_side, d):
        tile_state[cur] = 1
    while t < cap:
        _move(rs, pos, n, d, lz_thr)
        t += 1
        flat = _flat_of(pos, n, d)
        if first_hit[flat] < 0:
            first_hit[flat] = t
        new = _tile_flat(pos, s_bar, m, d)
        if new != cur:
            if tile_state[cur] == 1:
                tile_state[cur] = 0
                tile_count[cur] += 1
                if tile_count[cur] == ebar:
                    tile_stop[cur] = t
                    done += 1
                    if done == num_tiles and t >= min_steps:
                        return t
            cur = new
        if tile_state[cur] == 0 and \
                _on_tile_box_boundary(pos, s_bar, box_lo, box_side, d):
            tile_state[cur] = 1
        if done == num_tiles and t >= min_steps:
            return t
    return np.int64(-1)


# ---------------------------------------------------------------------------
# first hit on a labelled target set (uniform-hitting experiments)


@njit(cache=True)
def absorb_first_hit(rs, n, d, lz_thr, starts, labels, counts, cap):
    """For each start site, walk until a labelled site is reached.

    labels: int32 per flat site, -1 for free sites, else the target id.
    counts accumulates hits per target id; returns the number of trials that
    exhausted the cap (should be zero in practice).
    """
    pos = np.empty(d, dtype=np.int64)
    failures = np.int64(0)
    for trial in range(starts.shape[0]):
        f = starts[trial]
        for i in range(d - 1, -1, -1):
            pos[i] = f % n
            f //= n
        hit = np.int64(-1)
        lab = labels[starts[trial]]
        if lab >= 0:
            hit = lab
        else:
            for _ in range(cap):
                _move(rs, pos, n, d, lz_thr)
                lab = labels[_flat_of(pos, n, d)]
                if lab >= 0:
                    hit = lab
                    break
        if hit >= 0:
            counts[hit] += 1
        else:
            failures += 1
    return failures


# ---------------------------------------------------------------------------
# local Z^d samplers (no torus)


@njit(cache=True)
def green_mc(rs, d, rho, num_walks):
    """Visits to the origin before exiting B(0, rho) on Z^d, plus the mean
    of |X_exit|^(2-d) for the escape correction.

    Returns (total_visits, total_inv_pow).
    """
    pos = np.zeros(d, dtype=np.int64)
    total = np.int64(0)
    inv = 0.0
    rho2 = rho * rho
    for _ in range(num_walks):
        for i in range(d):
            pos[i] = 0
        visits = np.int64(1)
        while True:
            _move_free(rs, pos, d)
            d2 = np.int64(0)
            at0 = True
            for i in range(d):
                d2 += pos[i] * pos[i]
                if pos[i] != 0:
                    at0 = False
            if at0:
                visits += 1
            if float(d2) > rho2:
                inv += float(d2) ** (-(d - 2) / 2.0)
                break
        total += visits
    return total, inv


@njit(cache=True)
def sample_w_zd(rs, d, s_in, h_in, s_thin, rho_big, rho_entry,
                num_samples, burn_in, out, cap):
    """Thin-annulus crossings per big-annulus excursion, simulated on Z^d.

    One sample: start near the big shell, walk until the inner box of side
    s_in is entered (restarting from a fresh shell point if the walk leaves
    B(0, rho_big) first), then count crossings from the inner-box boundary
    out of the side-s_thin box until the walk exits B(0, rho_big).  The
    starting direction of the next sample is the exit direction of the
    previous one, which carries the exit-chain correlation.

    Returns the number of samples written; -1 signals cap exhaustion.
    """
    pos = np.empty(d, dtype=np.int64)
    dir_hint = np.zeros(d, dtype=np.float64)
    have_hint = False
    rho_big2 = rho_big * rho_big
    written = np.int64(0)
    total = np.int64(0)
    steps = np.int64(0)
    while written < num_samples:
        # place the walker on the entry shell
        if have_hint:
            norm = 0.0
            for i in range(d):
                norm += dir_hint[i] * dir_hint[i]
            norm = norm**0.5
            for i in range(d):
                pos[i] = np.int64(round(dir_hint[i] / norm * rho_entry))
            have_hint = False
        else:
            norm = 0.0
            while norm < 1e-12:
                norm = 0.0
                for i in range(d):
                    u1 = _rand_unit(rs)
                    u2 = _rand_unit(rs)
                    while u1 <= 1e-300:
                        u1 = _rand_unit(rs)
                    g = (-2.0 * np.log(u1))**0.5 * np.cos(6.283185307179586 * u2)
                    dir_hint[i] = g
                    norm += g * g
            norm = norm**0.5
            for i in range(d):
                pos[i] = np.int64(round(dir_hint[i] / norm * rho_entry))
        # approach phase: reach the inner box before leaving the big ball
        entered = False
        while True:
            _move_free(rs, pos, d)
            steps += 1
            if steps > cap:
                return np.int64(-1)
            m = np.int64(0)
            d2 = np.int64(0)
            for i in range(d):
                a = pos[i] if pos[i] >= 0 else -pos[i]
                if a > m:
                    m = a
                d2 += pos[i] * pos[i]
            if 2.0 * m <= s_in:
                entered = True
                break
            if float(d2) > rho_big2:
                break  # failed approach; retry from a fresh direction
        if not entered:
            continue
        # excursion phase
        w = np.int64(0)
        thin_state = 1  # entry lands on the inner-box boundary
        d2 = np.int64(0)
        while True:
            _move_free(rs, pos, d)
            steps += 1
            if steps > cap:
                return np.int64(-1)
            m = np.int64(0)
            d2 = np.int64(0)
            for i in range(d):
                a = pos[i] if pos[i] >= 0 else -pos[i]
                if a > m:
                    m = a
                d2 += pos[i] * pos[i]
            if thin_state == 1:
                if 2.0 * m > s_thin:
                    thin_state = 0
                    w += 1
            else:
                if m == h_in:
                    thin_state = 1
            if float(d2) > rho_big2:
                break
        norm = float(d2)**0.5
        for i in range(d):
            dir_hint[i] = pos[i] / norm
        have_hint = True
        if total >= burn_in:
            out[written] = w
            written += 1
        total += 1
    return written
