import math

import numpy as np
import pytest

from coverlab.lattice import GeometryError, TorusGeometry
from coverlab import oracle
from coverlab.walk import (WalkConfig, WalkState, cover_time, cover_times_bulk,
                           estimate_t_hit, hitting_times, run,
                           run_until_uncovered_count, sample_stationary_start,
                           step, trajectory, uncovered_set)


def cfg_for(n, d=3, seed=0, **kw):
    return WalkConfig(geometry=TorusGeometry(n, d), seed=seed, **kw)


class TestKernel:
    def test_neighbor_frequencies(self):
        # each of the 2d moves appears with frequency 1/(2d) +/- 3 sigma
        cfg = cfg_for(50, seed=1)
        pos = trajectory(cfg, 10**6)
        steps = np.diff(pos, axis=0)
        # classify moves: axis and sign (wrap-aware)
        counts = {}
        for axis in range(3):
            delta = steps[:, axis] % 50
            counts[(axis, +1)] = int(np.sum(delta == 1))
            counts[(axis, -1)] = int(np.sum(delta == 49))
        total = sum(counts.values())
        assert total == 10**6
        p = 1 / 6
        sigma = math.sqrt(p * (1 - p) * total)
        for v in counts.values():
            assert abs(v - total * p) < 3.5 * sigma

    def test_replay_determinism(self):
        cfg = cfg_for(8, seed=42)
        assert np.array_equal(trajectory(cfg, 5000), trajectory(cfg, 5000))

    def test_lazy_walk_holds_and_symmetry(self):
        cfg = cfg_for(101, seed=3, laziness=0.5, start=(50, 50, 50))
        pos = trajectory(cfg, 400_000)
        steps = np.diff(pos, axis=0)
        holds = np.mean(np.all(steps == 0, axis=1))
        assert abs(holds - 0.5) < 3.5 * math.sqrt(0.25 / 400_000)
        # net displacement per axis has mean zero
        moved = steps[np.any(steps != 0, axis=1)]
        signed = np.where(moved % 101 == 1, 1, 0) - np.where(moved % 101 == 100, 1, 0)
        for axis in range(3):
            m = signed[:, axis]
            n_moves = np.sum(m != 0)
            assert abs(m.sum()) < 3.5 * math.sqrt(n_moves)

    def test_step_matches_trajectory(self):
        cfg = cfg_for(6, seed=9)
        pos = trajectory(cfg, 50)
        st = WalkState.initial(cfg)
        seen = [st.site]
        for _ in range(50):
            step(st)
            seen.append(st.site)
        assert np.array_equal(np.array(seen), pos)

    def test_bipartite_parity_when_not_lazy(self):
        # on an even-side torus the walk is bipartite: the parity of the
        # coordinate sum flips every step (this is why laziness is an option)
        cfg = cfg_for(8, seed=5, start=(0, 0, 0))
        pos = trajectory(cfg, 101)
        parity = pos.sum(axis=1) % 2
        assert np.array_equal(parity, np.arange(102) % 2)


class TestStationaryStart:
    def test_uniform_n2(self):
        cfg = cfg_for(2, seed=11)
        counts = {}
        for i in range(100_000):
            s = sample_stationary_start(cfg, stream=i)
            counts[s] = counts.get(s, 0) + 1
        p = 1 / 8
        sigma = math.sqrt(p * (1 - p) * 100_000)
        assert len(counts) == 8
        for v in counts.values():
            assert abs(v - 100_000 * p) < 3.5 * sigma

    def test_fixed_start(self):
        cfg = cfg_for(4, seed=1, start=(1, 2, 3))
        assert all(sample_stationary_start(cfg, stream=i) == (1, 2, 3)
                   for i in range(5))

    def test_chi2_uniformity(self):
        from scipy import stats
        g = TorusGeometry(4, 3)
        rng = np.random.default_rng(np.random.SeedSequence(7))
        draws = rng.integers(0, g.num_sites, size=10**6)
        counts = np.bincount(draws, minlength=g.num_sites)
        p = stats.chisquare(counts).pvalue
        assert p > 1e-3


class TestUncovered:
    def test_t0_everything_but_start(self):
        cfg = cfg_for(4, seed=2, start=(1, 1, 1))
        _, tracker = run(cfg, 0, track_first_hits=True)
        u = uncovered_set(tracker, 0)
        assert len(u) == 63 and (1, 1, 1) not in u

    def test_beyond_cover_empty(self):
        cfg = cfg_for(2, seed=3)
        ct = cover_time(cfg)
        _, tracker = run(cfg, ct + 10, track_first_hits=True)
        assert uncovered_set(tracker, ct + 10) == set()

    def test_replay_oracle(self):
        # recompute U(t) independently from the stored trajectory
        cfg = cfg_for(4, seed=4)
        steps, t = 400, 100
        _, tracker = run(cfg, steps, track_first_hits=True)
        pos = trajectory(cfg, steps)
        seen = {tuple(map(int, p)) for p in pos[: t + 1]}
        expected = {s for s in
                    (tuple(map(int, c)) for c in
                     np.stack(np.unravel_index(np.arange(64), (4, 4, 4)), 1))
                    if s not in seen}
        assert uncovered_set(tracker, t) == expected

    def test_horizon_guard(self):
        cfg = cfg_for(4, seed=4)
        _, tracker = run(cfg, 10, track_first_hits=True)
        with pytest.raises(GeometryError):
            uncovered_set(tracker, 11)

    def test_first_hit_consistency(self):
        cfg = cfg_for(4, seed=6)
        steps = 300
        _, tracker = run(cfg, steps, track_first_hits=True)
        pos = trajectory(cfg, steps)
        fh = tracker.first_hit
        g = cfg.geometry
        for flat in np.nonzero(fh >= 0)[0]:
            tau = int(fh[flat])
            assert g.flat_index(pos[tau]) == flat
            before = {g.flat_index(p) for p in pos[:tau]}
            assert flat not in before

    def test_unvisited_count_monotone(self):
        cfg = cfg_for(4, seed=7)
        _, tracker = run(cfg, 500, track_first_hits=True)
        fh = tracker.first_hit
        newly = np.bincount(fh[fh >= 0], minlength=501)
        assert newly[0] == 1  # only the start at t=0
        assert newly.max() <= 1  # decreases by at most one per step


class TestStoppingRules:
    def test_m_max_stops_at_zero(self):
        g = TorusGeometry(4, 3)
        cfg = WalkConfig(geometry=g, seed=8)
        state, sites = run_until_uncovered_count(cfg, g.num_sites - 1)
        assert state.time == 0 and len(sites) == g.num_sites - 1

    def test_m1_deterministic_singleton(self):
        cfg = cfg_for(3, seed=9)
        _, s1 = run_until_uncovered_count(cfg, 1)
        _, s2 = run_until_uncovered_count(cfg, 1)
        assert len(s1) == 1 and s1 == s2

    def test_exact_count(self):
        cfg = cfg_for(4, seed=10)
        _, sites = run_until_uncovered_count(cfg, 10)
        assert len(sites) == 10

    def test_m_bounds(self):
        cfg = cfg_for(3, seed=1)
        with pytest.raises(GeometryError):
            run_until_uncovered_count(cfg, 0)
        with pytest.raises(GeometryError):
            run_until_uncovered_count(cfg, 27)


class TestCoverTime:
    def test_lower_bound(self):
        for seed in range(5):
            cfg = cfg_for(3, seed=seed)
            assert cover_time(cfg) >= 26

    def test_mean_against_bulk_oracle(self):
        # brute-force mean over a large bank is the oracle for the small bank
        cfg = cfg_for(2, seed=12)
        small = cover_times_bulk(cfg, 10_000)
        big = cover_times_bulk(cfg, 1_000_000, stream=1)
        se = small.std(ddof=1) / math.sqrt(small.size)
        assert abs(small.mean() - big.mean()) < 3.5 * se


class TestHitting:
    def test_matches_oracle_n4(self):
        g = TorusGeometry(4, 3)
        exact = oracle.exact_expected_hitting_time(g, (2, 2, 2), [(0, 0, 0)])
        est = estimate_t_hit(WalkConfig(geometry=g, seed=13), replicas=400)
        lo, hi = est.per_class["antipodal"]
        assert abs(lo - exact) < 3.5 / 1.96 * hi

    def test_seed_banks_consistent(self):
        g = TorusGeometry(4, 3)
        e1 = estimate_t_hit(WalkConfig(geometry=g, seed=14), replicas=300)
        e2 = estimate_t_hit(WalkConfig(geometry=g, seed=77), replicas=300)
        assert abs(e1.value - e2.value) <= e1.ci_halfwidth + e2.ci_halfwidth

    def test_start_in_target(self):
        g = TorusGeometry(4, 3)
        cfg = WalkConfig(geometry=g, seed=1, start=(0, 0, 0))
        assert hitting_times(cfg, (0, 0, 0), 3).tolist() == [0, 0, 0]
