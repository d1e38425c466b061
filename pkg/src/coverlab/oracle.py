"""Exact finite-chain computations on small tori by sparse linear algebra.

Ground truth for the Monte Carlo estimators: discrete Dirichlet problems,
expected hitting times, harmonic measure, truncated Green kernels, mixing
curves, and the exact excursion exit chain.  Every solve is checked against
a residual bound of 1e-10 * ||rhs||.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import (AnnulusSpec, Site, TorusGeometry, annulus_for_flavor,
                      shape_boundary)

# module-level knob: reassign to raise the exact-solve size limit
STATE_CAP = 200_000
RESIDUAL_REL = 1e-10


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainProblem:
    """A validated absorbing-chain problem on the torus."""

    geometry: TorusGeometry
    absorbing: tuple[int, ...]
    laziness: float = 0.0

    def __post_init__(self):
        if self.geometry.num_sites > STATE_CAP:
            raise OracleError(
                f"{self.geometry.num_sites} states exceed the oracle cap {STATE_CAP}")
        if not (0.0 <= self.laziness <= 0.5):
            raise OracleError("laziness must lie in [0, 1/2]")
        if len(set(self.absorbing)) != len(self.absorbing):
            raise OracleError("absorbing sites must be distinct")


def transition_matrix(g: TorusGeometry, laziness: float = 0.0) -> sp.csr_matrix:
    """SRW kernel on Z_n^d, optionally lazy, as a sparse stochastic matrix."""
    if g.num_sites > STATE_CAP:
        raise OracleError(
            f"{g.num_sites} states exceed the oracle cap {STATE_CAP}")
    ns = g.num_sites
    idx = np.arange(ns, dtype=np.int64)
    coords = g.coords_array(idx)
    rows, cols = [], []
    for axis in range(g.d):
        for sign in (1, -1):
            c = coords.copy()
            c[:, axis] = (c[:, axis] + sign) % g.n
            rows.append(idx)
            cols.append(g.flat_array(c))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    p = (1.0 - laziness) / (2 * g.d)
    mat = sp.coo_matrix((np.full(rows.shape, p), (rows, cols)), shape=(ns, ns))
    if laziness > 0:
        mat = mat + sp.eye(ns) * laziness
    return mat.tocsr()


def _solve(A: sp.csc_matrix, rhs: np.ndarray) -> np.ndarray:
    lu = spla.splu(A.tocsc())
    x = lu.solve(rhs)
    res = np.linalg.norm(A @ x - rhs)
    if res > RESIDUAL_REL * max(np.linalg.norm(rhs), 1.0):
        raise OracleError(f"solver residual {res:.3e} above tolerance")
    return x


def _flats(g: TorusGeometry, sites: Iterable[Sequence[int]]) -> list[int]:
    return [g.flat_index(s) for s in sites]


def exact_hitting_probability(
    g: TorusGeometry,
    start: Sequence[int],
    targets: Sequence[Sequence[int]],
    stop: Sequence[Sequence[int]] = (),
    laziness: float = 0.0,
) -> Dict[Site, float]:
    """P_start(hit each target before the stop set), by a Dirichlet solve.

    Targets and stop sites are all absorbing; the returned dict gives the
    probability of absorbing at each individual target.
    """
    t_flats = _flats(g, targets)
    s_flats = [f for f in _flats(g, stop) if f not in set(t_flats)]
    ChainProblem(g, tuple(t_flats + s_flats), laziness)
    start_flat = g.flat_index(start)
    target_sites = [g.site_of(f) for f in t_flats]
    if start_flat in t_flats:
        return {s: 1.0 if g.flat_index(s) == start_flat else 0.0
                for s in target_sites}
    if start_flat in s_flats:
        return {s: 0.0 for s in target_sites}
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    absorbing = np.zeros(ns, dtype=bool)
    absorbing[t_flats] = True
    absorbing[s_flats] = True
    open_idx = np.nonzero(~absorbing)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    Poo = P[open_idx][:, open_idx]
    A = sp.eye(open_idx.size) - Poo
    rhs = np.asarray(P[open_idx][:, t_flats].todense())
    h = _solve(A, rhs)
    row = h[pos[start_flat]]
    return {s: float(row[j]) for j, s in enumerate(target_sites)}


def exact_expected_hitting_time(
    g: TorusGeometry,
    start,
    targets: Sequence[Sequence[int]],
    laziness: float = 0.0,
) -> float:
    """E_start[first hitting time of the target set]; start may be a site or
    the string "stationary" for the uniform average."""
    t_flats = _flats(g, targets)
    ChainProblem(g, tuple(t_flats), laziness)
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    absorbing = np.zeros(ns, dtype=bool)
    absorbing[t_flats] = True
    open_idx = np.nonzero(~absorbing)[0]
    Poo = P[open_idx][:, open_idx]
    A = sp.eye(open_idx.size) - Poo
    m = _solve(A, np.ones(open_idx.size))
    full = np.zeros(ns)
    full[open_idx] = m
    if isinstance(start, str):
        if start != "stationary":
            raise OracleError(f"unknown start designator {start!r}")
        return float(np.mean(full))
    return float(full[g.flat_index(start)])


def exact_exit_distribution(
    g: TorusGeometry,
    start: Sequence[int],
    region: Sequence[Sequence[int]],
    laziness: float = 0.0,
) -> Dict[Site, float]:
    """Harmonic measure: the law of the first site outside `region`."""
    r_flats = set(_flats(g, region))
    start_flat = g.flat_index(start)
    if start_flat not in r_flats:
        return {g.site_of(start_flat): 1.0}
    ChainProblem(g, (next(iter(r_flats)),), laziness)  # cap/laziness checks
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    open_mask = np.zeros(ns, dtype=bool)
    open_mask[list(r_flats)] = True
    open_idx = np.nonzero(open_mask)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    # exit sites: reachable one step outside the region
    Pout = P[open_idx][:, np.nonzero(~open_mask)[0]]
    out_idx = np.nonzero(~open_mask)[0]
    reachable = np.nonzero(np.asarray(Pout.sum(axis=0)).ravel() > 0)[0]
    exit_flats = out_idx[reachable]
    Poo = P[open_idx][:, open_idx]
    A = sp.eye(open_idx.size) - Poo
    rhs = np.asarray(P[open_idx][:, exit_flats].todense())
    h = _solve(A, rhs)
    row = h[pos[start_flat]]
    total = row.sum()
    if abs(total - 1.0) > 1e-8:
        raise OracleError(f"exit distribution mass {total} != 1")
    return {g.site_of(int(f)): float(row[j]) for j, f in enumerate(exit_flats)}


def exact_truncated_green(
    g: TorusGeometry,
    x: Sequence[int],
    y: Sequence[int],
    horizon: int,
    laziness: float = 0.0,
) -> float:
    """Expected visits sum_{t<=horizon} p^t(x, y), by repeated sparse products."""
    if horizon < 0:
        raise OracleError("horizon must be >= 0")
    row = truncated_green_row(g, x, horizon, laziness)
    return float(row[g.flat_index(y)])


def truncated_green_row(
    g: TorusGeometry, x: Sequence[int], horizon: int, laziness: float = 0.0
) -> np.ndarray:
    P = transition_matrix(g, laziness).T.tocsr()  # evolve distributions
    v = np.zeros(g.num_sites)
    v[g.flat_index(x)] = 1.0
    acc = v.copy()
    for _ in range(horizon):
        v = P @ v
        acc += v
    return acc


def mixing_decay_check(
    g: TorusGeometry, laziness: float, t_grid: Sequence[int]
) -> dict:
    """Exact worst-start total-variation curve with the two decay inequalities.

    Requires a lazy (aperiodic) chain.  By vertex transitivity the TV to
    stationarity does not depend on the start, so a single row suffices.
    """
    if laziness <= 0.0:
        raise OracleError(
            "the pure walk is periodic; pass laziness > 0 for mixing checks")
    t_grid = sorted(set(int(t) for t in t_grid))
    if any(t < 0 for t in t_grid):
        raise OracleError("time grid must be non-negative")
    P = transition_matrix(g, laziness).T.tocsr()
    ns = g.num_sites
    pi = 1.0 / ns
    need = set(t_grid) | {a + b for a in t_grid for b in t_grid}
    horizon = max(need)
    rows: dict[int, np.ndarray] = {}
    v = np.zeros(ns)
    v[0] = 1.0
    for t in range(horizon + 1):
        if t in need:
            rows[t] = v.copy()
        if t < horizon:
            v = P @ v
    tv = {t: 0.5 * float(np.abs(rows[t] - pi).sum()) for t in need}
    submult_ok = all(
        tv[a + b] <= 4.0 * tv[a] * tv[b] + 1e-12
        for a in t_grid for b in t_grid
    )
    # uniform bound: max |p^{t+s}/pi - 1| <= max(p^s/pi) * TV(t)
    unif_ok = True
    unif_records = []
    for a in t_grid:
        for b in t_grid:
            lhs = float(np.max(np.abs(rows[a + b] * ns - 1.0)))
            rhs = float(np.max(rows[b] * ns)) * tv[a]
            unif_records.append((a, b, lhs, rhs))
            if lhs > rhs + 1e-12:
                unif_ok = False
    return {
        "tv": {t: tv[t] for t in t_grid},
        "submultiplicative_ok": submult_ok,
        "uniform_decay_ok": unif_ok,
        "uniform_records": unif_records,
    }


# ---------------------------------------------------------------------------
# the exact excursion exit chain


@dataclass
class ExactExitChain:
    geometry: TorusGeometry
    annulus: AnnulusSpec
    exit_sites: list[Site]
    entry_sites: list[Site]
    kernel: np.ndarray        # exit -> exit transition matrix
    entry_kernel: np.ndarray  # exit -> entry distribution
    exit_from_entry: np.ndarray  # entry -> exit distribution
    pi: np.ndarray            # stationary law of exit points
    entry_pi: np.ndarray      # stationary law of entry points
    mean_excursion_length: float


def exit_chain(
    g: TorusGeometry,
    center: Sequence[int],
    r: float,
    R: float,
    flavor: str = "ball_in_ball",
    laziness: float = 0.0,
) -> ExactExitChain:
    """The exact chain of successive excursion exit points.

    Composes the exit->entry harmonic kernel with the entry->exit kernel,
    extracts the stationary law by power iteration, and evaluates the
    stationary mean excursion length (exit-to-exit duration).
    """
    ann = annulus_for_flavor(g, center, r, R, flavor)
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    entry_sites = shape_boundary(g, ann.inner)
    entry_flats = np.array(_flats(g, entry_sites), dtype=np.int64)

    outer_flats = set(_flats(g, ann.outer.sites(g)))
    outer_idx = np.array(sorted(outer_flats), dtype=np.int64)
    out_mask = np.zeros(ns, dtype=bool)
    out_mask[outer_idx] = True
    comp_idx = np.nonzero(~out_mask)[0]
    Pq = P[outer_idx][:, comp_idx]
    reachable = np.nonzero(np.asarray(Pq.sum(axis=0)).ravel() > 0)[0]
    exit_flats = comp_idx[reachable]
    exit_sites = [g.site_of(int(f)) for f in exit_flats]

    # entry kernel: from an exit site, absorb on the inner vertex boundary
    entry_mask = np.zeros(ns, dtype=bool)
    entry_mask[entry_flats] = True
    open_idx = np.nonzero(~entry_mask)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    A = sp.eye(open_idx.size) - P[open_idx][:, open_idx]
    lu = spla.splu(A.tocsc())
    rhs = np.asarray(P[open_idx][:, entry_flats].todense())
    H = lu.solve(rhs)
    _check_residual(A, H, rhs)
    K1 = H[pos[exit_flats]]
    m_entry_open = lu.solve(np.ones(open_idx.size))
    m_entry = m_entry_open[pos[exit_flats]]

    # exit kernel: from an entry site, absorb outside the outer shell
    open2 = outer_idx
    pos2 = -np.ones(ns, dtype=np.int64)
    pos2[open2] = np.arange(open2.size)
    A2 = sp.eye(open2.size) - P[open2][:, open2]
    lu2 = spla.splu(A2.tocsc())
    rhs2 = np.asarray(P[open2][:, exit_flats].todense())
    H2 = lu2.solve(rhs2)
    _check_residual(A2, H2, rhs2)
    K2 = H2[pos2[entry_flats]]
    m_exit_open = lu2.solve(np.ones(open2.size))
    m_exit = m_exit_open[pos2[entry_flats]]

    M = K1 @ K2
    pi = _stationary(M)
    entry_pi = pi @ K1
    T = float(pi @ (m_entry + K1 @ m_exit))
    return ExactExitChain(
        geometry=g, annulus=ann, exit_sites=exit_sites,
        entry_sites=entry_sites, kernel=M, entry_kernel=K1,
        exit_from_entry=K2, pi=pi, entry_pi=entry_pi,
        mean_excursion_length=T,
    )


def _check_residual(A, X, B):
    res = np.linalg.norm(A @ X - B)
    if res > RESIDUAL_REL * max(np.linalg.norm(B), 1.0):
        raise OracleError(f"solver residual {res:.3e} above tolerance")


def _stationary(M: np.ndarray) -> np.ndarray:
    rowsums = M.sum(axis=1)
    if np.max(np.abs(rowsums - 1.0)) > 1e-8:
        raise OracleError("exit-chain kernel rows do not sum to 1")
    pi = np.full(M.shape[0], 1.0 / M.shape[0])
    for _ in range(10_000):
        nxt = pi @ M
        if np.abs(nxt - pi).sum() < 1e-14:
            pi = nxt
            break
        pi = nxt
    return pi / pi.sum()


@dataclass
class ExcursionSummary:
    """Stationary excursion quantities from one equilibrium-measure solve.

    By reversibility the stationary law of excursion entry points is the
    equilibrium measure pi(a) P_a(exit F before returning to E), the exit law
    weights each outside site by its one-step harmonic pull into E, and the
    stationary mean exit-to-exit duration is n^d divided by the total
    equilibrium mass (renewal rate).  Much cheaper than composing the full
    exit->entry->exit kernels, and exact.
    """

    geometry: TorusGeometry
    annulus: AnnulusSpec
    entry_sites: list[Site]
    entry_pi: np.ndarray
    exit_sites: list[Site]
    exit_pi: np.ndarray
    mean_excursion_length: float


def excursion_summary(
    g: TorusGeometry,
    center: Sequence[int],
    r: float,
    R: float,
    flavor: str = "ball_in_ball",
    laziness: float = 0.0,
) -> ExcursionSummary:
    ann = annulus_for_flavor(g, center, r, R, flavor)
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    entry_sites = shape_boundary(g, ann.inner)
    entry_flats = np.array(_flats(g, entry_sites), dtype=np.int64)
    inner_flats = np.array(sorted(_flats(g, ann.inner.sites(g))), dtype=np.int64)
    outer_flats = np.array(sorted(_flats(g, ann.outer.sites(g))), dtype=np.int64)
    in_outer = np.zeros(ns, dtype=bool)
    in_outer[outer_flats] = True
    in_inner = np.zeros(ns, dtype=bool)
    in_inner[inner_flats] = True
    open_mask = in_outer & ~in_inner
    open_idx = np.nonzero(open_mask)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    A = sp.eye(open_idx.size) - P[open_idx][:, open_idx]
    rhs_q = np.asarray(
        P[open_idx][:, inner_flats].todense()).sum(axis=1)
    q = _solve(A, rhs_q)  # P_y(hit E before leaving F), y in F \ E
    q_full = np.zeros(ns)
    q_full[open_idx] = q
    q_full[inner_flats] = 1.0
    # entry law: equilibrium measure of E relative to F
    esc = np.zeros(entry_flats.size)
    Prow = P[entry_flats]
    for j in range(entry_flats.size):
        row = Prow[j]
        _, cols = row.nonzero()
        vals = row.data
        esc[j] = sum(v * (0.0 if in_inner[c2]
                          else (1.0 - q_full[c2] if open_mask[c2] else 1.0))
                     for c2, v in zip(cols, vals))
    total_rate = esc.sum() / ns
    entry_pi = esc / esc.sum()
    # exit law: first site outside F, weighted by its pull back into E
    comp_idx = np.nonzero(~in_outer)[0]
    reach = np.nonzero(np.asarray(
        P[outer_flats][:, comp_idx].sum(axis=0)).ravel() > 0)[0]
    exit_flats = comp_idx[reach]
    w = np.zeros(exit_flats.size)
    Prow = P[exit_flats]
    for j in range(exit_flats.size):
        row = Prow[j]
        _, cols = row.nonzero()
        w[j] = sum(v * q_full[c] for c, v in zip(cols, row.data)
                   if in_outer[c])
    exit_pi = w / w.sum()
    return ExcursionSummary(
        geometry=g, annulus=ann,
        entry_sites=entry_sites, entry_pi=entry_pi,
        exit_sites=[g.site_of(int(f)) for f in exit_flats], exit_pi=exit_pi,
        mean_excursion_length=float(1.0 / total_rate))


def summary_hit_probability(
    summary: ExcursionSummary, targets: Sequence[Sequence[int]],
    laziness: float = 0.0,
) -> float:
    """P(the target set is hit during one stationary excursion), averaging the
    Dirichlet hit probability over the equilibrium entry law."""
    g = summary.geometry
    ann = summary.annulus
    t_flats = _flats(g, targets)
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    outer_flats = np.array(sorted(_flats(g, ann.outer.sites(g))), dtype=np.int64)
    open_mask = np.zeros(ns, dtype=bool)
    open_mask[outer_flats] = True
    open_mask[t_flats] = False
    open_idx = np.nonzero(open_mask)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    A = sp.eye(open_idx.size) - P[open_idx][:, open_idx]
    rhs = np.asarray(
        P[open_idx][:, np.array(t_flats, dtype=np.int64)].todense()).sum(axis=1)
    h = _solve(A, rhs)
    q = np.empty(len(summary.entry_sites))
    tset = set(t_flats)
    for j, s in enumerate(summary.entry_sites):
        f = g.flat_index(s)
        q[j] = 1.0 if f in tset else h[pos[f]]
    return float(summary.entry_pi @ q)


def excursion_hit_probability(
    chain: ExactExitChain, targets: Sequence[Sequence[int]],
    laziness: float = 0.0,
) -> float:
    """P(the target set is hit during one stationary excursion).

    Averages the Dirichlet hit probability from the entry point over the
    stationary entry law of the chain.
    """
    g = chain.geometry
    ann = chain.annulus
    t_flats = _flats(g, targets)
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    outer_flats = np.array(sorted(_flats(g, ann.outer.sites(g))), dtype=np.int64)
    open_mask = np.zeros(ns, dtype=bool)
    open_mask[outer_flats] = True
    open_mask[t_flats] = False
    open_idx = np.nonzero(open_mask)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    A = sp.eye(open_idx.size) - P[open_idx][:, open_idx]
    rhs = np.asarray(P[open_idx][:, np.array(t_flats, dtype=np.int64)].todense()).sum(axis=1)
    h = _solve(A, rhs)
    q = np.empty(len(chain.entry_sites))
    for j, s in enumerate(chain.entry_sites):
        f = g.flat_index(s)
        q[j] = 1.0 if f in set(t_flats) else h[pos[f]]
    return float(chain.entry_pi @ q)


def conditional_hit_by_exit(
    chain: ExactExitChain, target: Sequence[int], laziness: float = 0.0
) -> np.ndarray:
    """P(target hit during excursion | entry point, exit point b) for every
    exit site b, averaged over the stationary entry law.

    Uses the one-site decomposition: an excursion from entry a exits at b
    either after passing through the target z (probability q(a) * E_z(b)) or
    avoiding it (D_a(b)).
    """
    g = chain.geometry
    ann = chain.annulus
    z = g.site(target)
    zf = g.flat_index(z)
    P = transition_matrix(g, laziness)
    ns = g.num_sites
    outer_flats = np.array(sorted(_flats(g, ann.outer.sites(g))), dtype=np.int64)
    exit_flats = np.array(_flats(g, chain.exit_sites), dtype=np.int64)

    # killed-at-z exit kernel D and hit probability q from each entry site
    open_mask = np.zeros(ns, dtype=bool)
    open_mask[outer_flats] = True
    open_mask[zf] = False
    open_idx = np.nonzero(open_mask)[0]
    pos = -np.ones(ns, dtype=np.int64)
    pos[open_idx] = np.arange(open_idx.size)
    A = sp.eye(open_idx.size) - P[open_idx][:, open_idx]
    lu = spla.splu(A.tocsc())
    rhs_q = np.asarray(P[open_idx][:, [zf]].todense()).ravel()
    qvec = lu.solve(rhs_q)
    rhs_D = np.asarray(P[open_idx][:, exit_flats].todense())
    Dmat = lu.solve(rhs_D)
    _check_residual(A, Dmat, rhs_D)

    # exit law from z itself (unconditioned on avoiding z)
    pos2 = -np.ones(ns, dtype=np.int64)
    open2_mask = np.zeros(ns, dtype=bool)
    open2_mask[outer_flats] = True
    open2 = np.nonzero(open2_mask)[0]
    pos2[open2] = np.arange(open2.size)
    A2 = sp.eye(open2.size) - P[open2][:, open2]
    rhs2 = np.asarray(P[open2][:, exit_flats].todense())
    H2 = spla.splu(A2.tocsc()).solve(rhs2)
    Ez = H2[pos2[zf]]

    num = np.zeros(exit_flats.size)
    den = np.zeros(exit_flats.size)
    for j, s in enumerate(chain.entry_sites):
        f = g.flat_index(s)
        w = chain.entry_pi[j]
        if f == zf:
            num += w * Ez
            den += w * Ez
            continue
        qa = qvec[pos[f]]
        Da = Dmat[pos[f]]
        num += w * qa * Ez
        den += w * (qa * Ez + Da)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(den > 0, num / den, 0.0)
    return cond
