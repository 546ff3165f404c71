"""Kingman-type limit objects.

Covers the pure-death block count (finite start and entrance law), the
coalescent with rebirth on a time window, its discrete-rebirth variant and
the family of merging coalescents. Exact small-n marginals come from the
matrix exponential of the death chain; the entrance-law marginal comes from
the alternating series for the number of ancestral lineages.

Literal simulators keep per-block labels. Each also has a lumped sampler
that tracks only the class counts needed by the counting functionals; the
two are cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import mpmath
import numpy as np
from numba import njit
from scipy.linalg import expm
from scipy.stats import poisson

from .domain_core import Individual

ORACLE_MAX_N = 60


class OracleScaleError(ValueError):
    pass


class TruncationGridExhausted(RuntimeError):
    pass


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(2**32))


# ---------------------------------------------------------------------------
# pure-death chain


@dataclass(frozen=True)
class BlockCountPath:
    times: np.ndarray  # jump times, starting with 0
    counts: np.ndarray  # count on [times[k], times[k+1])

    def at(self, s: float) -> int:
        return int(self.counts[np.searchsorted(self.times, s, side="right") - 1])


def simulate_block_count(n0: int, duration: float, pair_rate: float, rng: np.random.Generator) -> BlockCountPath:
    if n0 < 1 or duration < 0:
        raise ValueError("need n0 >= 1 and duration >= 0")
    times, counts = [0.0], [n0]
    s, k = 0.0, n0
    while k > 1:
        s += rng.exponential(1.0 / (pair_rate * k * (k - 1) / 2.0))
        if s > duration:
            break
        k -= 1
        times.append(s)
        counts.append(k)
    return BlockCountPath(np.array(times), np.array(counts, dtype=np.int64))


@njit(cache=True)
def _death_chain_end(n0, duration, pair_rate):
    s = 0.0
    k = n0
    while k > 1:
        s += np.random.exponential(1.0) / (pair_rate * k * (k - 1) * 0.5)
        if s > duration:
            break
        k -= 1
    return k


@njit(cache=True)
def _death_chain_batch(n0, duration, pair_rate, n, seed):
    np.random.seed(seed)
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        out[r] = _death_chain_end(n0, duration, pair_rate)
    return out


def block_counts(n0: int, duration: float, pair_rate: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent end counts of the death chain started at ``n0``."""
    return _death_chain_batch(int(n0), float(duration), float(pair_rate), int(n), _seed(rng))


def death_generator(n0: int, pair_rate: float = 1.0) -> np.ndarray:
    """Generator on states 1..n0 (row/column k-1 is state k)."""
    q = np.zeros((n0, n0))
    for k in range(2, n0 + 1):
        r = pair_rate * k * (k - 1) / 2.0
        q[k - 1, k - 1] = -r
        q[k - 1, k - 2] = r
    return q


def marginal_distribution(n0: int, s: float, pair_rate: float = 1.0) -> np.ndarray:
    """Exact law of the block count at time ``s``; entry k-1 is P(count = k)."""
    if n0 < 1:
        raise ValueError("n0 must be positive")
    if n0 > ORACLE_MAX_N:
        raise OracleScaleError(f"n0={n0} exceeds the oracle scale limit {ORACLE_MAX_N}")
    if s < 0:
        raise ValueError("s must be non-negative")
    p = expm(death_generator(n0, pair_rate) * s)[n0 - 1]
    p = np.clip(p, 0.0, None)
    return p / p.sum()


# ---------------------------------------------------------------------------
# entrance law


def entrance_tail_bound(n: int, duration: float, pair_rate: float = 1.0) -> float:
    """Chernoff bound on P(#K_duration > n) with tilt ``theta = n log^2 n``.

    Bound is ``exp(-d theta + sum_{k>=n} theta / (k(k+1)/2 - theta))`` in the
    unit-rate clock ``d = pair_rate * duration``.
    """
    if n < 2:
        return 1.0
    d = pair_rate * duration
    theta = n * math.log(n) ** 2
    if theta >= n * (n + 1) / 2.0:
        return 1.0
    kmax = max(100_000, 50 * n)
    k = np.arange(n, kmax, dtype=float)
    terms = theta / (k * (k + 1) / 2.0 - theta)
    tail = 2.0 * theta / kmax  # integral of the remaining terms
    return float(min(1.0, math.exp(-d * theta + terms.sum() + tail)))


def entrance_truncation(duration: float, pair_rate: float, tail_epsilon: float) -> int:
    if duration <= 0:
        raise ValueError("entrance law is undefined at duration 0")
    if not 0 < tail_epsilon < 1:
        raise ValueError("tail_epsilon must lie in (0, 1)")
    lo, hi = 2, 2
    while entrance_tail_bound(hi, duration, pair_rate) >= tail_epsilon:
        lo, hi = hi, hi * 2
        if hi > 10**8:
            raise TruncationGridExhausted("no truncation level satisfies the tail bound")
    while lo < hi:
        mid = (lo + hi) // 2
        if entrance_tail_bound(mid, duration, pair_rate) < tail_epsilon:
            hi = mid
        else:
            lo = mid + 1
    return hi


def _tail_gamma(level: int, pair_rate: float) -> tuple[float, float]:
    # Moment-matched gamma (shape, scale) for the time the chain from infinity
    # spends above level + 400 blocks.
    top = level + 400
    k = np.arange(top, top + 200_000, dtype=float)
    lam = pair_rate * k * (k + 1) / 2.0
    mean = 2.0 / (pair_rate * top)
    var = float(np.sum(1.0 / lam**2)) + 4.0 / (3.0 * pair_rate**2 * (top + 200_000.0) ** 3)
    return mean * mean / var, var / mean


@njit(cache=True)
def _tail_time(level, pair_rate, gshape, gscale):
    # Time for the chain from infinity to come down to ``level`` blocks: exact
    # exponentials for the 400 levels above ``level``, a gamma for the rest.
    s = np.random.gamma(gshape, gscale)
    for k in range(level, level + 400):
        s += np.random.exponential(1.0) / (pair_rate * k * (k + 1) * 0.5)
    return s


@njit(cache=True)
def _entrance_path(level, durations, pair_rate, gshape, gscale, out):
    # Start from ``level`` blocks at the time the entrance law reaches it,
    # then run the death chain through the requested increasing durations.
    s = _tail_time(level, pair_rate, gshape, gscale)
    k = level
    j = 0
    while j < len(durations) and s > durations[j]:
        out[j] = level  # truncated; the tail bound makes this rare
        j += 1
    while j < len(durations):
        if k > 1:
            nxt = s + np.random.exponential(1.0) / (pair_rate * k * (k - 1) * 0.5)
        else:
            nxt = np.inf
        while j < len(durations) and durations[j] < nxt:
            out[j] = k
            j += 1
        s = nxt
        k -= 1


@njit(cache=True)
def _entrance_batch(level, durations, pair_rate, gshape, gscale, n, seed):
    np.random.seed(seed)
    out = np.empty((n, len(durations)), dtype=np.int64)
    for r in range(n):
        _entrance_path(level, durations, pair_rate, gshape, gscale, out[r])
    return out


def entrance_path(durations: Sequence[float], pair_rate: float = 1.0, tail_epsilon: float = 1e-3,
                  rng: np.random.Generator | None = None, size: int = 1, truncation: int | None = None) -> np.ndarray:
    """Joint block counts of the entrance-law coalescent at increasing durations.

    Returns an int array of shape ``(size, len(durations))``. The truncation
    level comes from the tail bound at the smallest duration unless given.
    """
    d = np.asarray(durations, dtype=float)
    if d.ndim != 1 or len(d) == 0 or np.any(d <= 0) or np.any(np.diff(d) < 0):
        raise ValueError("durations must be positive and non-decreasing")
    if truncation is None:
        truncation = entrance_truncation(float(d[0]), pair_rate, tail_epsilon)
    rng = rng if rng is not None else np.random.default_rng()
    shape, scale = _tail_gamma(int(truncation), float(pair_rate))
    return _entrance_batch(int(truncation), d, float(pair_rate), shape, scale, int(size), _seed(rng))


def entrance_count(duration: float, pair_rate: float = 1.0, tail_epsilon: float = 1e-3,
                   rng: np.random.Generator | None = None, size: int | None = None,
                   truncation: int | None = None):
    """Sample(s) of the entrance-law block count at ``duration``.

    The chain enters the truncation level N (from the tail bound) at the
    random time the entrance law needs to come down to N blocks; it is then
    run exactly. Counts above N are reported as N, an event of probability
    below ``tail_epsilon``.
    """
    if duration <= 0:
        raise ValueError("entrance law is undefined at duration <= 0")
    out = entrance_path([duration], pair_rate, tail_epsilon, rng, 1 if size is None else size, truncation)[:, 0]
    return int(out[0]) if size is None else out


def _rising(k: int, n: int):
    return mpmath.rf(k, n)


@lru_cache(maxsize=256)
def _entrance_pmf_cached(d: float, kmax: int) -> tuple:
    mpmath.mp.dps = 60
    dd = mpmath.mpf(d)
    out = []
    for k in range(1, kmax + 1):
        total = mpmath.mpf(0)
        i = k
        while True:
            term = mpmath.exp(-i * (i - 1) * dd / 2) * (2 * i - 1) * _rising(k, i - 1) / (mpmath.factorial(k) * mpmath.factorial(i - k))
            total += term if (i - k) % 2 == 0 else -term
            if i > k + 5 and abs(term) < mpmath.mpf(10) ** (-40):
                break
            i += 1
        out.append(float(total))
    return tuple(out)


def entrance_pmf(duration: float, pair_rate: float = 1.0, kmax: int = 60) -> np.ndarray:
    """Exact law of the entrance-law block count; entry k-1 is P(count = k).

    Uses the alternating series for the number of ancestral lineages, summed
    in high precision. The vector covers 1..kmax and sums to one up to the
    mass above kmax.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    return np.array(_entrance_pmf_cached(float(duration * pair_rate), int(kmax)))


def entrance_ccdf(duration: float, pair_rate: float = 1.0, nmax: int = 30) -> np.ndarray:
    """P(count >= n) for n = 1..nmax."""
    pmf = entrance_pmf(duration, pair_rate, kmax=max(nmax + 40, 80))
    tail = np.cumsum(pmf[::-1])[::-1]
    return np.clip(tail[:nmax], 0.0, 1.0)


def poisson_domination_rate(duration: float, n_max: int = 30, pair_rate: float = 1.0,
                            grid_start: float = 1e-3, grid_ratio: float = 1.01, grid_stop: float = 1e4) -> float:
    """Smallest grid intensity whose shifted Poisson tail dominates the entrance tail.

    Grid points are ``grid_start * grid_ratio**j`` up to ``grid_stop``; tails
    are compared for n = 1..n_max.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    target = entrance_ccdf(duration, pair_rate, n_max)
    n = np.arange(1, n_max + 1)
    rho = grid_start
    while rho <= grid_stop:
        # P(1 + Poisson(rho) >= n) = P(Poisson(rho) >= n - 1)
        dom = poisson.sf(n - 2, rho)
        if np.all(target <= dom + 1e-15):
            return float(rho)
        rho *= grid_ratio
    raise TruncationGridExhausted(f"no intensity up to {grid_stop} dominates the tail at duration {duration}")


# ---------------------------------------------------------------------------
# coalescent with rebirth


@dataclass(frozen=True)
class KingmanBlock:
    label: Individual
    earliest_birth: float
    members: frozenset | None = None


@dataclass(frozen=True)
class KingmanState:
    blocks: tuple[KingmanBlock, ...]
    clock: float
    pair_rate: float = 1.0

    def __post_init__(self):
        labels = [b.label for b in self.blocks]
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")

    def __len__(self):
        return len(self.blocks)

    def partition(self) -> frozenset:
        return frozenset(b.members for b in self.blocks)


def initial_rebirth_state(indices: Sequence[int], birth: float, pair_rate: float = 1.0, track_members: bool = False) -> KingmanState:
    blocks = []
    for i in indices:
        ind = Individual(int(i), birth)
        blocks.append(KingmanBlock(ind, birth, frozenset([ind]) if track_members else None))
    return KingmanState(tuple(blocks), birth, pair_rate)


def rebirth_merge(state: KingmanState, a: Individual, b: Individual, time: float, rebirth: bool = True) -> KingmanState:
    """Merge the blocks labelled ``a`` and ``b`` at ``time``.

    With ``rebirth`` the larger label's index returns as a fresh singleton
    born at ``time``.
    """
    if time < state.clock:
        raise ValueError("merge time precedes the state clock")
    by_label = {blk.label: blk for blk in state.blocks}
    ba, bb = by_label[a], by_label[b]
    win, lose = (ba, bb) if ba.label < bb.label else (bb, ba)
    members = None if win.members is None else win.members | lose.members
    merged = KingmanBlock(win.label, min(win.earliest_birth, lose.earliest_birth), members)
    rest = [blk for blk in state.blocks if blk.label not in (a, b)]
    rest.append(merged)
    if rebirth:
        born = Individual(lose.label.index, time)
        rest.append(KingmanBlock(born, time, None if members is None else frozenset([born])))
    rest.sort(key=lambda blk: blk.label)
    return KingmanState(tuple(rest), time, state.pair_rate)


@njit(cache=True)
def _rebirth_literal(n, window_start, window_end, eval_time, pair_rate, seed):
    np.random.seed(seed)
    idx = np.arange(n).astype(np.int64)
    birth = np.full(n, window_start)
    eb = np.full(n, window_start)
    s = window_start
    k = n
    if k >= 2:
        rate = pair_rate * k * (k - 1) * 0.5
        while True:
            s += np.random.exponential(1.0) / rate
            if s > window_end:
                break
            i = np.random.randint(0, k)
            j = np.random.randint(0, k - 1)
            if j >= i:
                j += 1
            # i survives if its label is smaller
            if idx[j] < idx[i] or (idx[j] == idx[i] and birth[j] < birth[i]):
                i, j = j, i
            eb[i] = min(eb[i], eb[j])
            birth[j] = s
            eb[j] = s
        s = window_end
    while k >= 2:
        s += np.random.exponential(1.0) / (pair_rate * k * (k - 1) * 0.5)
        if s > eval_time:
            break
        i = np.random.randint(0, k)
        j = np.random.randint(0, k - 1)
        if j >= i:
            j += 1
        if idx[j] < idx[i] or (idx[j] == idx[i] and birth[j] < birth[i]):
            i, j = j, i
        eb[i] = min(eb[i], eb[j])
        last = k - 1
        idx[j] = idx[last]
        birth[j] = birth[last]
        eb[j] = eb[last]
        k -= 1
    return idx[:k].copy(), birth[:k].copy(), eb[:k].copy()


def simulate_rebirth(window_start: float, window_end: float, eval_time: float, truncation: int,
                     pair_rate: float, rng: np.random.Generator) -> KingmanState:
    """Kingman coalescent with rebirth on ``[window_start, window_end]``.

    Starts from ``truncation`` singletons born at ``window_start``; inside
    the window every merge gives the larger label's index back as a new
    singleton; afterwards merges are plain.
    """
    if not window_start <= window_end <= eval_time:
        raise ValueError("need window_start <= window_end <= eval_time")
    if truncation < 1:
        raise ValueError("truncation must be positive")
    idx, birth, eb = _rebirth_literal(int(truncation), float(window_start), float(window_end),
                                      float(eval_time), float(pair_rate), _seed(rng))
    blocks = tuple(sorted((KingmanBlock(Individual(int(i), float(b)), float(e)) for i, b, e in zip(idx, birth, eb)),
                          key=lambda blk: blk.label))
    return KingmanState(blocks, float(eval_time), pair_rate)


def n_alpha(state: KingmanState, log_alpha: float) -> int:
    return sum(1 for b in state.blocks if b.earliest_birth <= log_alpha)


def discretize_birth(t: float, log_grid: np.ndarray) -> float:
    """Map a birth time to the first grid point at or above it.

    Times above the last grid point are returned unchanged.
    """
    k = int(np.searchsorted(log_grid, t, side="left"))
    return float(log_grid[k]) if k < len(log_grid) else float(t)


def discrete_rebirth_counts(state: KingmanState, alpha_grid: Sequence[float]) -> np.ndarray:
    """Counts of blocks whose discretised earliest birth is at most each grid point."""
    log_grid = np.log(np.asarray(alpha_grid, dtype=float))
    mapped = np.array([discretize_birth(b.earliest_birth, log_grid) for b in state.blocks])
    return np.array([int(np.sum(mapped <= g)) for g in log_grid], dtype=np.int64)


def simulate_rebirth_discrete(alpha_grid: Sequence[float], truncation: int, pair_rate: float,
                              rng: np.random.Generator, window: tuple[float, float] | None = None,
                              return_state: bool = False):
    """Discrete-rebirth counts obtained by post-processing one rebirth realisation.

    The window defaults to ``[log alpha_grid[0], log alpha_grid[-1]]``.
    """
    grid = np.asarray(alpha_grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid > 1) or np.any(np.diff(grid) <= 0):
        raise ValueError("alpha_grid must be strictly increasing in (0, 1]")
    lo, hi = window if window is not None else (math.log(grid[0]), math.log(grid[-1]))
    state = simulate_rebirth(lo, hi, 0.0, truncation, pair_rate, rng)
    counts = discrete_rebirth_counts(state, grid)
    return (counts, state) if return_state else counts


@njit(cache=True)
def _pick_class(counts, total, exclude):
    # uniform block among ``total`` blocks, one block of class ``exclude`` removed
    u = np.random.random() * total
    acc = 0.0
    for c in range(len(counts)):
        w = counts[c] - (1 if c == exclude else 0)
        acc += w
        if u < acc:
            return c
    for c in range(len(counts) - 1, -1, -1):
        if counts[c] - (1 if c == exclude else 0) > 0:
            return c
    return -1


@njit(cache=True)
def _rebirth_lumped(thresholds, window_start, window_end, n, pair_rate, nsamp, seed):
    # Class c (0-based) holds blocks whose earliest birth lies in
    # (thresholds[c-1], thresholds[c]]; class m holds later births.
    np.random.seed(seed)
    m = len(thresholds)
    out = np.zeros((nsamp, m), dtype=np.int64)
    counts = np.zeros(m + 1, dtype=np.int64)
    for r in range(nsamp):
        counts[:] = 0
        c0 = 0
        while c0 < m and window_start > thresholds[c0]:
            c0 += 1
        counts[c0] = n
        s = window_start
        # inside the window only pairs of blocks older than the current
        # newborn class change the class counts
        while True:
            cur = 0
            while cur < m and s > thresholds[cur]:
                cur += 1
            seg_end = window_end
            if cur < m and thresholds[cur] < window_end:
                seg_end = thresholds[cur]
            old = 0
            for c in range(cur):
                old += counts[c]
            while old >= 2:
                s_next = s + np.random.exponential(1.0) / (pair_rate * old * (old - 1) * 0.5)
                if s_next > seg_end:
                    break
                s = s_next
                a = _pick_class(counts[:cur], old, -1)
                b = _pick_class(counts[:cur], old - 1, a)
                counts[max(a, b)] -= 1
                counts[cur] += 1
                old -= 1
            s = seg_end
            if seg_end >= window_end:
                break
            # step just past the threshold so that ``cur`` advances
            s = np.nextafter(seg_end, np.inf)
        total = 0
        for c in range(m + 1):
            total += counts[c]
        s = window_end
        while total >= 2:
            s += np.random.exponential(1.0) / (pair_rate * total * (total - 1) * 0.5)
            if s > 0.0:
                break
            a = _pick_class(counts, total, -1)
            b = _pick_class(counts, total - 1, a)
            counts[max(a, b)] -= 1
            total -= 1
        acc = 0
        for c in range(m):
            acc += counts[c]
            out[r, c] = acc
    return out


def sample_rebirth_counts(alpha_grid: Sequence[float], truncation: int, pair_rate: float, rng: np.random.Generator,
                          size: int, window: tuple[float, float] | None = None) -> np.ndarray:
    """Samples of ``(n_alpha(log a) for a in alpha_grid)`` without tracking labels.

    Uses the class-count chain: a rebirth merge changes the class counts only
    when both blocks are older than the current newborn class, so only those
    pairs are simulated. Equal in law to evaluating ``n_alpha`` on
    ``simulate_rebirth`` with the same window and truncation.
    """
    grid = np.asarray(alpha_grid, dtype=float)
    lo, hi = window if window is not None else (math.log(grid[0]), math.log(grid[-1]))
    if not lo <= hi <= 0:
        raise ValueError("window must satisfy start <= end <= 0")
    return _rebirth_lumped(np.log(grid), float(lo), float(hi), int(truncation), float(pair_rate), int(size), _seed(rng))


# ---------------------------------------------------------------------------
# merging coalescents


@dataclass(frozen=True)
class MergingState:
    copies: np.ndarray  # label copy index n per block
    ranks: np.ndarray  # label rank k per block
    clock: float
    merge_times: tuple[float, ...]

    def __len__(self):
        return len(self.copies)

    def labels(self) -> np.ndarray:
        m = len(self.merge_times)
        return self.ranks * m + self.copies


def simulate_merging(merge_log_times: Sequence[float], eval_log_time: float, truncation_per_copy: int,
                     rng: np.random.Generator, start_log_time: float | None = None, pair_rate: float = 1.0) -> MergingState:
    """Literal family of merging coalescents with per-block labels.

    Every copy starts with ``truncation_per_copy`` singletons at
    ``start_log_time`` (default: the first merge time). Blocks with the same
    label copy always coalesce; blocks of different label copies coalesce
    once both copies' merge times have passed. The survivor keeps the label
    that is smaller in (copy, rank) order.
    """
    tau = np.asarray(merge_log_times, dtype=float)
    if len(tau) < 1 or np.any(np.diff(tau) < 0):
        raise ValueError("merge_log_times must be non-decreasing")
    start = float(tau[0]) if start_log_time is None else float(start_log_time)
    if start > tau[0] or tau[0] > eval_log_time:
        raise ValueError("need start <= merge_log_times[0] <= eval_log_time")
    m, T = len(tau), int(truncation_per_copy)
    copies = np.repeat(np.arange(m), T)
    ranks = np.tile(np.arange(T), m)
    s = start
    while len(copies) > 1:
        enabled = tau <= s
        nxt_switch = tau[tau > s].min() if np.any(~enabled) else np.inf
        per = np.bincount(copies, minlength=m)
        n_en = int(per[enabled].sum())
        w_intra = per * (per - 1) / 2.0
        w_intra[enabled] = 0.0
        rate = pair_rate * (n_en * (n_en - 1) / 2.0 + w_intra.sum())
        dt = rng.exponential(1.0 / rate) if rate > 0 else np.inf
        if s + dt > min(nxt_switch, eval_log_time):
            if nxt_switch <= eval_log_time:
                s = nxt_switch
                continue
            break
        s += dt
        u = rng.random() * rate / pair_rate
        if u < n_en * (n_en - 1) / 2.0:
            pool = np.flatnonzero(enabled[copies])
        else:
            u -= n_en * (n_en - 1) / 2.0
            c = int(np.searchsorted(np.cumsum(w_intra), u, side="right"))
            c = min(c, m - 1)
            pool = np.flatnonzero(copies == c)
        i, j = rng.choice(pool, size=2, replace=False)
        if (copies[j], ranks[j]) < (copies[i], ranks[i]):
            i, j = j, i
        copies = np.delete(copies, j)
        ranks = np.delete(ranks, j)
    return MergingState(copies, ranks, float(eval_log_time), tuple(float(x) for x in tau))


def n_mer(state: MergingState, i: int) -> int:
    m = len(state.merge_times)
    if not 1 <= i <= m:
        raise ValueError(f"i must lie in 1..{m}")
    return int(np.sum(state.copies <= i - 1))


@njit(cache=True)
def _pool_evolve(counts, s, until, pair_rate):
    total = 0
    for c in range(len(counts)):
        total += counts[c]
    while total >= 2:
        s += np.random.exponential(1.0) / (pair_rate * total * (total - 1) * 0.5)
        if s > until:
            break
        a = _pick_class(counts, total, -1)
        b = _pick_class(counts, total - 1, a)
        counts[max(a, b)] -= 1
        total -= 1


@njit(cache=True)
def _merging_lumped(tau, eval_time, start, truncation, level, gshape, gscale, pair_rate, nsamp, seed):
    # truncation <= 0 selects the entrance law (entered at ``level``) for each copy
    np.random.seed(seed)
    m = len(tau)
    out = np.zeros((nsamp, m), dtype=np.int64)
    counts = np.zeros(m, dtype=np.int64)
    durations = np.zeros(1)
    one = np.zeros(1, dtype=np.int64)
    for r in range(nsamp):
        counts[:] = 0
        for c in range(m):
            # copy c runs alone until it is merged into the pool; copy 0
            # is alone until the second merge time
            join = tau[1] if (c == 0 and m > 1) else tau[c]
            if c == 0 and m == 1:
                join = eval_time
            join = min(join, eval_time)
            d = join - start
            if truncation > 0:
                counts[c] = _death_chain_end(truncation, d, pair_rate)
            else:
                durations[0] = d
                _entrance_path(level, durations, pair_rate, gshape, gscale, one)
                counts[c] = one[0]
        # pool starts with copies 0 and 1 at tau[1]
        if m > 1:
            active = np.zeros(m, dtype=np.int64)
            active[0] = counts[0]
            for c in range(1, m):
                if tau[c] > eval_time:
                    # never merged: the copy keeps its own count
                    active[c] = counts[c]
                    continue
                active[c] = counts[c]
                until = tau[c + 1] if c + 1 < m else eval_time
                until = min(until, eval_time)
                _pool_evolve(active, tau[c], until, pair_rate)
            counts[:] = active
        acc = 0
        for c in range(m):
            acc += counts[c]
            out[r, c] = acc
    return out



def sample_merging_counts(merge_log_times: Sequence[float], eval_log_time: float, rng: np.random.Generator, size: int,
                          truncation_per_copy: int | None = None, start_log_time: float | None = None,
                          pair_rate: float = 1.0) -> np.ndarray:
    """Samples of ``(n_mer(state, i) for i = 1..m)`` from the class-count chain.

    Copies only interact after merging, so each copy's block count at its
    merge time is an independent death-chain count; afterwards the pool is a
    single coalescent in which a merge removes one block of the larger class.
    ``truncation_per_copy=None`` starts every copy from the entrance law.
    """
    tau = np.asarray(merge_log_times, dtype=float)
    start = float(tau[0]) if start_log_time is None else float(start_log_time)
    if start > tau[0] or tau[0] > eval_log_time or np.any(np.diff(tau) < 0):
        raise ValueError("need start <= merge times (non-decreasing) and merge_log_times[0] <= eval")
    if truncation_per_copy is None:
        first_join = tau[1] if len(tau) > 1 else eval_log_time
        if min(first_join, eval_log_time) - start <= 0 or np.any(np.minimum(tau[1:], eval_log_time) - start <= 0):
            raise ValueError("entrance-law copies need positive time before merging; pass truncation_per_copy")
    trunc = 0 if truncation_per_copy is None else int(truncation_per_copy)
    durations = np.minimum(np.append(tau[1:], eval_log_time), eval_log_time) - start
    level = entrance_truncation(float(max(durations.min(), 1e-9)), pair_rate, 1e-6) if trunc == 0 else 2
    shape, scale = _tail_gamma(level, float(pair_rate))
    return _merging_lumped(tau, float(eval_log_time), start, trunc, int(level), shape, scale, float(pair_rate),
                           int(size), _seed(rng))


def marginal_table(n0_values: Sequence[int], s_values: Sequence[float], pair_rate: float = 1.0) -> list[tuple[int, float, int, float]]:
    """Rows ``(n0, s, k, probability)`` of exact death-chain marginals."""
    rows = []
    for n0 in n0_values:
        for s in s_values:
            p = marginal_distribution(int(n0), float(s), pair_rate)
            rows.extend((int(n0), float(s), k + 1, float(p[k])) for k in range(int(n0)))
    return rows
