"""Replicated Monte Carlo scenarios and their comparison statistics.

Each scenario turns a ``ScenarioConfig`` into a list of ``ResultRecord``s.
Spatial statistics and matching limit-object samples are emitted side by
side (the limit statistic carries the suffix ``_limit``), so every
acceptance gate is a function of the record list alone. Quantities that are
not per-replicate samples (truncation gates, deterministic limit targets,
trend constants) are returned in ``ScenarioRun.meta``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy.stats import chi2

from .domain_core import Block, Individual, LatticeBox
from .kingman_limits import (
    entrance_count,
    entrance_path,
    entrance_truncation,
    marginal_distribution,
    poisson_domination_rate,
    sample_merging_counts,
    sample_rebirth_counts,
)
from .lattice_walk import SIMPLE_WALK, contained_in_annulus, meeting_times
from .lookdown_oracle import ancestral_partition, build_graph, rebirth_from_lookdown
from .rebirth_spatial import as_rebirth_state, checkpoint_counts, evolve_rebirth
from .spatial_coalescent import (
    Bernoulli,
    InfiniteThinned,
    InitialConfig,
    Poisson,
    SpatialState,
    evolve,
    init_configuration,
    simulation_region,
)

SCENARIOS = (
    "erdos_taylor",
    "theorem1",
    "theorem2",
    "theorem3",
    "theorem4",
    "theorem5",
    "moment_bound",
    "exchangeability",
    "sparse_recursion",
    "lookdown_check",
    "poisson_domination",
)

CSV_COLUMNS = ("scenario", "t", "alpha", "beta", "rho", "gamma", "delta", "u", "replicate", "statistic", "value", "seed")

_MASK64 = (1 << 64) - 1


def mix64(master_seed: int, k: int) -> int:
    """SplitMix64 finaliser applied to the k-th step of a Weyl sequence from ``master_seed``."""
    z = (int(master_seed) + (int(k) + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class ConfigError(ValueError):
    """Invalid or infeasible scenario parameters; the message names the violated constraint."""


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    t: float = 1e4
    alpha: float | None = None
    alpha_grid: tuple[float, ...] | None = None
    beta: float | None = None
    beta_grid: tuple[float, ...] | None = None
    rho: float | None = None
    p: float | None = None
    gamma: float = 1.0
    delta: float | None = None
    u_vector: tuple[float, ...] | None = None
    replicates: int = 100
    master_seed: int = 0
    buffer: float = 3.0
    init: str | None = None  # poisson | bernoulli | thinned
    truncation: int | None = None  # starting truncation for limit-side gates
    tail_epsilon: float = 1e-3
    gate_samples: int = 100_000
    gate_tolerance: float = 0.02
    n: int | None = None  # block count for sparse_recursion

    def __post_init__(self):
        for name in ("alpha_grid", "beta_grid", "u_vector"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "scenario" not in obj:
            raise ConfigError("missing required key: scenario")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class ResultRecord:
    scenario: str
    replicate: int
    statistic: str
    value: float
    seed: int
    t: float | None = None
    alpha: float | None = None
    beta: float | None = None
    rho: float | None = None
    gamma: float | None = None
    delta: float | None = None
    u: float | None = None

    @property
    def params(self) -> tuple:
        return (self.t, self.alpha, self.beta, self.rho, self.gamma, self.delta, self.u)

    def sort_key(self):
        return (tuple(-math.inf if v is None else v for v in self.params), self.replicate, self.statistic)

    def row(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
                return str(int(v))
            return repr(float(v))
        return [self.scenario, fmt(self.t), fmt(self.alpha), fmt(self.beta), fmt(self.rho), fmt(self.gamma),
                fmt(self.delta), fmt(self.u), str(self.replicate), self.statistic, fmt(self.value), str(self.seed)]


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    records: list[ResultRecord]
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# statistics


class Comparison(tuple):
    """``(total_variation, chi_square_p)`` with a flag for single-cell pooling."""

    def __new__(cls, tv: float, p: float, single_cell: bool = False):
        obj = super().__new__(cls, (tv, p))
        obj.single_cell = single_cell
        return obj

    @property
    def total_variation(self) -> float:
        return self[0]

    @property
    def chi_square_p(self) -> float:
        return self[1]


def _pool_cells(a: np.ndarray, b: np.ndarray, na: int, nb: int) -> list[tuple[int, int]]:
    # merge adjacent support points until every cell expects at least 5 in both samples
    cells, ca, cb = [], 0, 0
    for x, y in zip(a, b):
        ca += x
        cb += y
        tot = ca + cb
        if tot * na / (na + nb) >= 5 and tot * nb / (na + nb) >= 5:
            cells.append((ca, cb))
            ca = cb = 0
    if ca or cb:
        if cells:
            pa, pb = cells.pop()
            cells.append((pa + ca, pb + cb))
        else:
            cells.append((ca, cb))
    return cells


def compare_distributions(sample_a: Sequence[int], sample_b: Sequence[int]) -> Comparison:
    """Total variation of the empirical pmfs and a chi-square homogeneity p-value."""
    a = np.asarray(sample_a).ravel()
    b = np.asarray(sample_b).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    support, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    ca = np.bincount(inv[: len(a)], minlength=len(support))
    cb = np.bincount(inv[len(a):], minlength=len(support))
    tv = 0.5 * float(np.abs(ca / len(a) - cb / len(b)).sum())
    cells = _pool_cells(ca, cb, len(a), len(b))
    if len(cells) < 2:
        return Comparison(tv, 1.0, True)
    obs = np.array(cells, dtype=float).T
    tot = obs.sum(axis=0)
    n = np.array([len(a), len(b)], dtype=float)[:, None]
    exp = n * tot[None, :] / tot.sum()
    stat = float(((obs - exp) ** 2 / exp).sum())
    return Comparison(tv, float(chi2.sf(stat, len(cells) - 1)))


# ---------------------------------------------------------------------------
# exact recursion for sparse initial conditions


def _binom2(n: int) -> int:
    return n * (n - 1) // 2


def recursion_coefficients(n_max: int) -> dict[tuple[int, int], dict[int, Fraction]]:
    """p_{N,k}(r) = sum_lambda c_lambda r^lambda, solved exactly from the integral recursion.

    Starting from p_{1,1} = 1 and p_{N,N}(r) = r^{C(N,2)}, each step applies
    C * int_1^s y^{-C-1} (y/s)^lambda dy = C / (lambda - C) (r^C - r^lambda)
    with r = 1/s and C = C(N+1, 2).
    """
    table: dict[tuple[int, int], dict[int, Fraction]] = {(1, 1): {0: Fraction(1)}}
    for n in range(1, n_max):
        c = _binom2(n + 1)
        for k in range(1, n + 1):
            out: dict[int, Fraction] = {}
            for lam, coef in table[(n, k)].items():
                w = Fraction(c) * coef / (lam - c)
                out[c] = out.get(c, Fraction(0)) + w
                out[lam] = out.get(lam, Fraction(0)) - w
            table[(n + 1, k)] = {lam: v for lam, v in out.items() if v != 0}
        table[(n + 1, n + 1)] = {c: Fraction(1)}
    return table


def sparse_recursion_table(n: int, alpha_over_beta: float) -> np.ndarray:
    """Limit law of the block count from ``n`` sparse initial blocks; entry k-1 is P{k}."""
    if not 1 <= n <= 6:
        raise ValueError("sparse recursion is supported for 1 <= N <= 6")
    if not 0 < alpha_over_beta <= 1:
        raise ValueError("alpha/beta must lie in (0, 1]")
    coef = recursion_coefficients(n)
    r = float(alpha_over_beta)
    return np.array([sum(float(c) * r ** lam for lam, c in coef[(n, k)].items()) for k in range(1, n + 1)])


# ---------------------------------------------------------------------------
# configuration checks


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _increasing(v) -> bool:
    return all(b > a for a, b in zip(v, v[1:]))


def _init_kind(cfg: ScenarioConfig, default: str):
    kind = cfg.init or default
    if kind == "poisson":
        _require(cfg.rho is not None and 0 < cfg.rho < math.inf, "poisson start needs 0 < rho < inf")
        return Poisson(cfg.rho)
    if kind == "bernoulli":
        _require(cfg.p is not None and 0 < cfg.p <= 1, "bernoulli start needs 0 < p <= 1")
        return Bernoulli(cfg.p)
    if kind == "thinned":
        _require(cfg.delta is not None and cfg.delta > 0, "thinned start needs delta > 0")
        return InfiniteThinned(cfg.delta)
    raise ConfigError(f"init must be poisson, bernoulli or thinned, got {kind!r}")


_DEFAULT_INIT = {"theorem1": "poisson", "theorem2": "thinned", "theorem3": "poisson", "theorem4": "bernoulli",
                 "moment_bound": "poisson"}


def _horizon_ok(cfg: ScenarioConfig, horizon: float):
    _require(horizon <= cfg.t * (1 + 1e-12),
             f"horizon {horizon:g} exceeds t = {cfg.t:g}: the region pad buffer*sqrt(t)*log(t) "
             "only covers horizons up to t")
    r = cfg.t ** 0.5 + cfg.buffer * math.sqrt(cfg.t) * math.log(cfg.t)
    _require(r < 2**30, "simulation region exceeds the 2^30 coordinate limit")


def validate(cfg: ScenarioConfig) -> None:
    """Raise ConfigError naming the first violated constraint."""
    s = cfg.scenario
    _require(s in SCENARIOS, f"scenario must be one of {', '.join(SCENARIOS)}")
    _require(isinstance(cfg.replicates, int) and cfg.replicates >= 1, "replicates must be a positive integer")
    _require(cfg.t > 1, "t must exceed 1")
    _require(cfg.buffer > 0, "buffer must be positive")
    _require(cfg.gamma > 0, "gamma must be positive")
    _require(0 < cfg.tail_epsilon < 1, "tail_epsilon must lie in (0, 1)")
    _require(isinstance(cfg.master_seed, int) and cfg.master_seed >= 0, "master_seed must be a non-negative integer")
    if s == "sparse_recursion":
        _require(cfg.n is not None and 1 <= cfg.n <= 6, "sparse_recursion needs 1 <= n <= 6")
        _require(cfg.alpha is not None and cfg.beta is not None and 0 < cfg.alpha <= cfg.beta,
                 "sparse_recursion needs 0 < alpha <= beta")
        return
    if s == "poisson_domination":
        _require(cfg.delta is not None and cfg.delta > 0, "poisson_domination needs delta > 0")
        return
    if s == "lookdown_check":
        return
    if s != "theorem4":
        _require(cfg.alpha is not None and 0 < cfg.alpha <= 1, "alpha must lie in (0, 1]")
    if s == "erdos_taylor":
        _require(cfg.beta is not None and cfg.beta > 0, "erdos_taylor needs beta > 0")
        return
    if s in ("theorem1", "theorem2", "theorem3", "moment_bound"):
        _require(bool(cfg.beta_grid) and _increasing(cfg.beta_grid), "beta_grid must be non-empty and increasing")
        _require(cfg.beta_grid[0] > cfg.alpha,
                 "beta_grid must lie strictly above alpha (the entrance law is infinite at beta = alpha)")
        kind = _init_kind(cfg, _DEFAULT_INIT[s])
        if s == "theorem1":
            _require(not isinstance(kind, InfiniteThinned), "theorem1 needs a finite-intensity start")
        if s == "theorem2":
            _require(isinstance(kind, InfiniteThinned), "theorem2 needs the thinned infinite start")
        if isinstance(kind, InfiniteThinned):
            _require(cfg.t ** cfg.beta_grid[0] > kind.delta, "t^beta must exceed the thinning time delta")
        if s == "moment_bound":
            _require(cfg.beta_grid[-1] < 1.5 * cfg.alpha, "moment_bound needs beta < 3 alpha / 2")
        _horizon_ok(cfg, cfg.t ** cfg.beta_grid[-1])
        return
    if s == "theorem4":
        g = cfg.alpha_grid
        _require(bool(g) and len(g) >= 2 and _increasing(g), "theorem4 needs an increasing alpha_grid of length >= 2")
        _require(0 < g[0] and g[-1] < 1, "theorem4 needs 0 < alpha_l and alpha_u < 1")
        _init_kind(cfg, _DEFAULT_INIT[s])
        _horizon_ok(cfg, cfg.t)
        return
    if s == "theorem5":
        u = cfg.u_vector
        _require(bool(u) and _increasing(u), "u_vector must be non-empty and strictly increasing")
        _require(u[0] > cfg.alpha and u[-1] < 1, "theorem5 needs alpha < u_1 and u_m < 1")
        _require(len(u) <= 62, "at most 62 checkpoints are supported")
        _require(cfg.rho is not None and 0 < cfg.rho < math.inf,
                 "theorem5 needs a finite rho (the thinned infinite start is not implemented for rebirth)")
        _horizon_ok(cfg, cfg.t)
        return
    if s == "exchangeability":
        _require(math.log(cfg.t) >= 2, "exchangeability needs log t >= 2 so the default sites lie in I_alpha(1, t)")
        return


# ---------------------------------------------------------------------------
# truncation gates


def _joint_codes(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64).reshape(len(x), -1)
    _, codes = np.unique(x, axis=0, return_inverse=True)
    return codes.ravel()


def _gate_tv(a: np.ndarray, b: np.ndarray, joint: bool) -> float:
    if joint:
        both = _joint_codes(np.concatenate([a, b]))
        return compare_distributions(both[: len(a)], both[len(a):]).total_variation
    a = np.asarray(a).reshape(len(a), -1)
    b = np.asarray(b).reshape(len(b), -1)
    return max(compare_distributions(a[:, j], b[:, j]).total_variation for j in range(a.shape[1]))


def _doubling_gate(sampler: Callable[[int, np.random.Generator], np.ndarray], start: int, n: int, tol: float,
                   seed: int, max_level: int = 1 << 15, joint: bool = True) -> dict:
    """Double the truncation until the law moves by less than ``tol`` in TV.

    ``joint`` compares the joint law of the sampled vectors; otherwise the
    largest per-coordinate marginal TV is used.
    """
    level = int(start)
    history = []
    while True:
        rng = np.random.default_rng([seed, level])
        a = sampler(level, rng)
        b = sampler(2 * level, rng)
        tv = _gate_tv(a, b, joint)
        history.append((level, tv))
        if tv < tol:
            return {"truncation": 2 * level, "tv": tv, "passed": True, "history": history}
        if 2 * level >= max_level:
            return {"truncation": 2 * level, "tv": tv, "passed": False, "history": history}
        level *= 2


def entrance_gate(durations: Sequence[float], cfg: ScenarioConfig, seed: int) -> dict:
    d = np.asarray(durations, dtype=float)

    def sampler(level, rng):
        return entrance_path(d, 1.0, cfg.tail_epsilon, rng, cfg.gate_samples, level)
    start = cfg.truncation or entrance_truncation(float(d.min()), 1.0, cfg.tail_epsilon)
    # entrance_count is a one-time law, so each duration is gated on its own marginal
    return _doubling_gate(sampler, start, cfg.gate_samples, cfg.gate_tolerance, seed, joint=False)


def rebirth_gate(alpha_grid: Sequence[float], cfg: ScenarioConfig, seed: int) -> dict:
    def sampler(level, rng):
        return sample_rebirth_counts(alpha_grid, level, 1.0, rng, cfg.gate_samples)
    return _doubling_gate(sampler, cfg.truncation or 32, cfg.gate_samples, cfg.gate_tolerance, seed)


def merging_gate(tau: Sequence[float], eval_log_time: float, start: float, cfg: ScenarioConfig, seed: int) -> dict:
    def sampler(level, rng):
        return sample_merging_counts(tau, eval_log_time, rng, cfg.gate_samples, truncation_per_copy=level,
                                     start_log_time=start)
    return _doubling_gate(sampler, cfg.truncation or 16, cfg.gate_samples, cfg.gate_tolerance, seed)


# ---------------------------------------------------------------------------
# replicate workers


def _rec(cfg: ScenarioConfig, k: int, seed: int, stat: str, value, **params) -> ResultRecord:
    base = {"t": cfg.t, "alpha": cfg.alpha, "gamma": cfg.gamma, "rho": cfg.rho, "delta": cfg.delta}
    base.update(params)
    return ResultRecord(cfg.scenario, k, stat, value, seed, **base)


def _limit_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def _rep_erdos_taylor(cfg, k, seed, ctx):
    d = int(round(cfg.t ** (cfg.alpha / 2.0)))
    tm = meeting_times(SIMPLE_WALK, (0, 0), (d, 0), cfg.t ** cfg.beta, [seed & 0xFFFFFFFF])[0]
    return [_rec(cfg, k, seed, "no_meeting", int(np.isnan(tm)), beta=cfg.beta)]


def _rep_beta(cfg, k, seed, ctx):
    rng = np.random.default_rng(seed)
    kind = _init_kind(cfg, _DEFAULT_INIT[cfg.scenario])
    state = init_configuration(InitialConfig(kind), cfg.t, cfg.alpha, rng, gamma=cfg.gamma, region=ctx["region"],
                               tail_epsilon=1e-6)
    out = []
    for beta in cfg.beta_grid:
        state = evolve(state, cfg.t ** beta, rng)
        out.append(_rec(cfg, k, seed, "count", len(state), beta=beta))
    lim = entrance_path(ctx["durations"], 1.0, cfg.tail_epsilon, _limit_rng(seed), 1, ctx["gate"]["truncation"])[0]
    out.extend(_rec(cfg, k, seed, "count_limit", int(v), beta=b) for b, v in zip(cfg.beta_grid, lim))
    return out


def _rep_moment(cfg, k, seed, ctx):
    rng = np.random.default_rng(seed)
    kind = _init_kind(cfg, "poisson")
    state = init_configuration(InitialConfig(kind), cfg.t, cfg.alpha, rng, gamma=cfg.gamma, region=ctx["region"],
                               tail_epsilon=1e-6)
    out = []
    for beta in cfg.beta_grid:
        state = evolve(state, cfg.t ** beta, rng)
        pos = np.stack([state.x, state.y], axis=1)
        out.append(_rec(cfg, k, seed, "count", len(state), beta=beta))
        out.append(_rec(cfg, k, seed, "marks_in_annulus", int(contained_in_annulus(pos, beta, 1.0, cfg.t)), beta=beta))
    return out


def _rep_theorem4(cfg, k, seed, ctx):
    rng = np.random.default_rng(seed)
    grid = cfg.alpha_grid
    kind = _init_kind(cfg, "bernoulli")
    support = LatticeBox.for_scale(cfg.t, grid[-1])
    state = init_configuration(InitialConfig(kind, support), cfg.t, grid[-1], rng, gamma=cfg.gamma,
                               region=ctx["region"], tail_epsilon=1e-6)
    state = evolve(state, cfg.t, rng)
    out = []
    for a in grid:
        r = LatticeBox.for_scale(cfg.t, a).radius
        out.append(_rec(cfg, k, seed, "restricted_count", int(np.count_nonzero(state.mnorm <= r)), alpha=a, beta=1.0))
    lim = sample_rebirth_counts(grid, ctx["gate"]["truncation"], 1.0, _limit_rng(seed), 1)[0]
    out.extend(_rec(cfg, k, seed, "restricted_count_limit", int(v), alpha=a, beta=1.0) for a, v in zip(grid, lim))
    return out


def _rep_theorem5(cfg, k, seed, ctx):
    rng = np.random.default_rng(seed)
    counts = checkpoint_counts(cfg.t, cfg.alpha, cfg.u_vector, cfg.rho, rng, gamma=cfg.gamma, region=ctx["region"])
    out = [_rec(cfg, k, seed, "n_rebirth", int(v), u=u) for u, v in zip(cfg.u_vector, counts)]
    lrng = _limit_rng(seed)
    tau, ev = ctx["tau"], ctx["eval"]
    lim = sample_merging_counts(tau, ev, lrng, 1, start_log_time=0.0)[0]
    late = sample_merging_counts(tau, ev, lrng, 1)[0]
    out.extend(_rec(cfg, k, seed, "n_rebirth_limit", int(v), u=u) for u, v in zip(cfg.u_vector, lim))
    out.extend(_rec(cfg, k, seed, "n_rebirth_limit_late_start", int(v), u=u) for u, v in zip(cfg.u_vector, late))
    return out


_SET_PARTITIONS_3 = {(0, 0, 0): 0, (0, 0, 1): 1, (0, 1, 0): 2, (0, 1, 1): 3, (0, 1, 2): 4}


def _partition_from_log(n: int, log) -> frozenset:
    groups = {i: {i} for i in range(n)}
    for _, s, l in log:
        groups[s] |= groups.pop(l)
    return frozenset(frozenset(g) for g in groups.values())


def _rgs(n: int, part) -> tuple:
    # restricted growth string: block numbers in order of first appearance
    owner = {}
    for b in part:
        m = min(b)
        for i in b:
            owner[i] = m
    seen, out = {}, []
    for i in range(n):
        out.append(seen.setdefault(owner[i], len(seen)))
    return tuple(out)


def exchangeability_sites(t: float, alpha: float) -> list[tuple[int, int]]:
    s = int(math.ceil(t ** (alpha / 2.0)))
    return [(0, 0), (s, 0), (0, 2 * s)]


def _rep_exchange(cfg, k, seed, ctx):
    rng = np.random.default_rng(seed)
    sites = exchangeability_sites(cfg.t, cfg.alpha)
    obs = ctx["obs_time"]
    out = []
    for name, order in (("", (0, 1, 2)), ("_permuted", (1, 2, 0))):
        blocks = [Block(Individual(i), 1, 0, sites[order[i]], 0.0) for i in range(3)]
        st = evolve(SpatialState.from_blocks(blocks, gamma=cfg.gamma), obs, rng)
        code = _SET_PARTITIONS_3[_rgs(3, _partition_from_log(3, st.merge_log))]
        out.append(_rec(cfg, k, seed, "partition" + name, code))
        out.append(_rec(cfg, k, seed, "count" + name, len(st)))
    return out


_LOOKDOWN_SITES = {0: (0, 0), 1: (0, 0), 2: (1, 0), 3: (1, 0)}


def _partition_code(n: int, part) -> int:
    code = 0
    for d in _rgs(n, part):
        code = code * n + d
    return code


def _rebirth_code(blocks_by_label: list[list[int]], n: int) -> int:
    # per label index, counts of member indices (each capped at 15), packed in base 16
    code = 0
    for members in blocks_by_label:
        cnt = np.bincount(np.asarray(members, dtype=np.int64), minlength=n)
        for c in cnt:
            code = code * 16 + int(min(c, 15))
    return code


def _rep_lookdown(cfg, k, seed, ctx):
    rng = np.random.default_rng(seed)
    n, horizon = 4, 1.0
    g = build_graph(range(n), _LOOKDOWN_SITES, horizon, cfg.gamma, rng=rng)
    ld_part = _partition_code(n, ancestral_partition(g, horizon))
    ld_reb = _rebirth_code([[m.index for m in b.members] for b in rebirth_from_lookdown(g, horizon)], n)
    blocks = [Block(Individual(i), 1, 0, _LOOKDOWN_SITES[i], 0.0) for i in range(n)]
    st = SpatialState.from_blocks(blocks, gamma=cfg.gamma)
    sp_part = _partition_code(n, _partition_from_log(n, evolve(st, horizon, rng).merge_log))
    rs = evolve_rebirth(as_rebirth_state(st, track_members=True), [], horizon, rng)
    order = np.argsort(rs.lab)
    sp_reb = _rebirth_code([[m.index for m in rs.members[j]] for j in order], n)
    return [
        _rec(cfg, k, seed, "partition_lookdown", ld_part),
        _rec(cfg, k, seed, "partition_spatial", sp_part),
        _rec(cfg, k, seed, "rebirth_lookdown", ld_reb),
        _rec(cfg, k, seed, "rebirth_spatial", sp_reb),
    ]


def _rep_domination(cfg, k, seed, ctx):
    v = entrance_count(cfg.delta, 1.0, cfg.tail_epsilon, np.random.default_rng(seed), truncation=ctx["truncation"])
    return [_rec(cfg, k, seed, "entrance_count", int(v))]


_WORKERS = {
    "erdos_taylor": _rep_erdos_taylor,
    "theorem1": _rep_beta,
    "theorem2": _rep_beta,
    "theorem3": _rep_beta,
    "theorem4": _rep_theorem4,
    "theorem5": _rep_theorem5,
    "moment_bound": _rep_moment,
    "exchangeability": _rep_exchange,
    "lookdown_check": _rep_lookdown,
    "poisson_domination": _rep_domination,
}


def _context(cfg: ScenarioConfig) -> tuple[dict, dict]:
    """Shared per-run inputs (regions, gated truncations) and the meta entries they produce."""
    s = cfg.scenario
    gate_seed = mix64(cfg.master_seed, 2**40)
    ctx: dict = {}
    meta: dict = {}
    if s == "erdos_taylor":
        meta["limit_target"] = min(cfg.alpha / cfg.beta, 1.0)
    elif s in ("theorem1", "theorem2", "theorem3"):
        ctx["region"] = simulation_region(cfg.t, cfg.alpha, cfg.t ** cfg.beta_grid[-1], cfg.buffer)
        ctx["durations"] = [math.log(b / cfg.alpha) for b in cfg.beta_grid]
        ctx["gate"] = meta["entrance_gate"] = entrance_gate(ctx["durations"], cfg, gate_seed)
    elif s == "moment_bound":
        ctx["region"] = simulation_region(cfg.t, cfg.alpha, cfg.t ** cfg.beta_grid[-1], cfg.buffer)
    elif s == "theorem4":
        ctx["region"] = simulation_region(cfg.t, cfg.alpha_grid[-1], cfg.t, cfg.buffer)
        ctx["gate"] = meta["rebirth_gate"] = rebirth_gate(cfg.alpha_grid, cfg, gate_seed)
    elif s == "theorem5":
        ctx["region"] = simulation_region(cfg.t, cfg.alpha, cfg.t, cfg.buffer)
        ctx["tau"] = [math.log(u / cfg.alpha) for u in cfg.u_vector]
        ctx["eval"] = math.log(1.0 / cfg.alpha)
        meta["merge_log_times"] = ctx["tau"]
        # limit samples start each copy from the entrance law; the gate reports
        # how far a finite per-copy truncation is from stable
        meta["merging_gate"] = merging_gate(ctx["tau"], ctx["eval"], 0.0, cfg, gate_seed)
        meta["eval_log_time"] = ctx["eval"]
    elif s == "exchangeability":
        g = cfg.t ** cfg.alpha * math.log(cfg.t) ** 3
        ctx["obs_time"] = max(g, cfg.t ** cfg.beta) if cfg.beta is not None else g
        meta["observation_time"] = ctx["obs_time"]
        meta["sites"] = exchangeability_sites(cfg.t, cfg.alpha)
    elif s == "poisson_domination":
        ctx["gate"] = meta["entrance_gate"] = entrance_gate([cfg.delta], cfg, gate_seed)
        ctx["truncation"] = ctx["gate"]["truncation"]
        meta["rho"] = poisson_domination_rate(cfg.delta)
        meta["entrance_truncation"] = ctx["truncation"]
    return ctx, meta


def _run_chunk(args):
    cfg, ks, ctx = args
    worker = _WORKERS[cfg.scenario]
    out = []
    for k in ks:
        out.extend(worker(cfg, k, mix64(cfg.master_seed, k), ctx))
    return out


def run_full(config: ScenarioConfig, threads: int | None = None,
             progress: Callable[[int, int], None] | None = None) -> ScenarioRun:
    validate(config)
    cfg = config
    if cfg.scenario == "sparse_recursion":
        ratio = cfg.alpha / cfg.beta
        rec = sparse_recursion_table(cfg.n, ratio)
        mar = marginal_distribution(cfg.n, math.log(1.0 / ratio))
        records = []
        for k in range(cfg.n):
            records.append(ResultRecord(cfg.scenario, k + 1, "recursion_p", float(rec[k]), 0, t=None, alpha=cfg.alpha,
                                        beta=cfg.beta))
            records.append(ResultRecord(cfg.scenario, k + 1, "marginal_p", float(mar[k]), 0, t=None, alpha=cfg.alpha,
                                        beta=cfg.beta))
        return ScenarioRun(cfg, sorted(records, key=ResultRecord.sort_key),
                           {"max_abs_difference": float(np.max(np.abs(rec - mar)))})
    ctx, meta = _context(cfg)
    threads = threads or os.cpu_count() or 1
    ks = list(range(cfg.replicates))
    chunk = max(1, min(200, cfg.replicates // (4 * threads) or 1))
    tasks = [(cfg, ks[i:i + chunk], ctx) for i in range(0, len(ks), chunk)]
    records: list[ResultRecord] = []
    done = 0
    if threads == 1 or len(tasks) == 1:
        for task in tasks:
            records.extend(_run_chunk(task))
            done += len(task[1])
            if progress:
                progress(done, cfg.replicates)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for task, res in zip(tasks, pool.map(_run_chunk, tasks)):
                records.extend(res)
                done += len(task[1])
                if progress:
                    progress(done, cfg.replicates)
    records.sort(key=ResultRecord.sort_key)
    meta.update(_derived(cfg, records))
    return ScenarioRun(cfg, records, meta)


def run_scenario(config: ScenarioConfig, threads: int | None = None) -> list[ResultRecord]:
    return run_full(config, threads).records


# ---------------------------------------------------------------------------
# aggregation


def collect(records: Sequence[ResultRecord], statistic: str, **params) -> np.ndarray:
    """Values of ``statistic`` ordered by replicate, filtered on the given parameter values."""
    sel = [r for r in records if r.statistic == statistic and all(
        getattr(r, k) is not None and math.isclose(getattr(r, k), v) for k, v in params.items())]
    sel.sort(key=lambda r: r.replicate)
    return np.array([r.value for r in sel])


def _param_label(r: ResultRecord, cfg: ScenarioConfig) -> str:
    parts = []
    if cfg.scenario == "theorem4":
        parts.append(f"alpha={r.alpha:g}")
    if r.beta is not None and cfg.scenario != "theorem4" and cfg.scenario != "erdos_taylor":
        parts.append(f"beta={r.beta:g}")
    if r.u is not None:
        parts.append(f"u={r.u:g}")
    if cfg.scenario == "sparse_recursion":
        parts.append(f"k={r.replicate}")
    return r.statistic + (f"[{','.join(parts)}]" if parts else "")


def _derived(cfg: ScenarioConfig, records: Sequence[ResultRecord]) -> dict:
    out: dict = {}
    if cfg.scenario == "moment_bound":
        scaled = {}
        for beta in cfg.beta_grid:
            m = collect(records, "count", beta=beta).mean()
            scaled[beta] = float(m * 2 * (beta - cfg.alpha) / cfg.alpha)
        out["scaled_means"] = {f"{b:g}": v for b, v in scaled.items()}
        out["scaled_mean_bound"] = max(scaled.values())
        out["scaled_mean_ratio"] = max(scaled.values()) / min(scaled.values())
    if cfg.scenario in ("theorem1", "theorem2", "theorem3"):
        paths = np.stack([collect(records, "count", beta=b) for b in cfg.beta_grid], axis=1)
        out["monotone_fraction"] = float(np.mean(np.all(np.diff(paths, axis=1) <= 0, axis=1)))
    if cfg.scenario == "theorem4":
        lo, hi = cfg.alpha_grid[0], cfg.alpha_grid[-1]
        d_sp = collect(records, "restricted_count", alpha=hi) - collect(records, "restricted_count", alpha=lo)
        d_li = collect(records, "restricted_count_limit", alpha=hi) - collect(records, "restricted_count_limit", alpha=lo)
        cmp = compare_distributions(d_sp, d_li)
        out["difference_tv"] = cmp.total_variation
        out["difference_chi2_p"] = cmp.chi_square_p
    return out


def summarize(run: ScenarioRun) -> dict:
    """Per-statistic mean and standard error, with TV and chi-square against the matching limit statistic."""
    groups: dict[str, list[ResultRecord]] = {}
    for r in run.records:
        groups.setdefault(_param_label(r, run.config), []).append(r)
    out: dict = {}
    for key, recs in groups.items():
        vals = np.array([r.value for r in recs], dtype=float)
        entry = {"mean": float(vals.mean()),
                 "stderr": float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0,
                 "tv_vs_limit": None, "chi2_p": None}
        base, _, rest = key.partition("[")
        lim_key = base + "_limit" + (("[" + rest) if rest else "")
        if lim_key in groups:
            cmp = compare_distributions(vals, np.array([r.value for r in groups[lim_key]]))
            entry["tv_vs_limit"], entry["chi2_p"] = cmp.total_variation, cmp.chi_square_p
        out[key] = entry
    out["_meta"] = _jsonable(run.meta)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# ---------------------------------------------------------------------------
# oracle tables

GOLDEN_N0 = (2, 3, 4, 5, 6)
GOLDEN_S = (0.1, 0.5, 1.0, 2.0)
GOLDEN_GAMMA = (0.5, 1.0, 2.0)
GOLDEN_TIMES = (0.5, 1.0, 2.0)


def tiny_torus_generator(gamma: float) -> np.ndarray:
    """Two blocks on the 2x1 torus under simple walk; states (together, apart, merged).

    Horizontal steps (half of each block's rate-1 jumps) swap the two sites;
    vertical steps wrap onto the same site and change nothing.
    """
    return np.array([[-(1.0 + gamma), 1.0, gamma], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]])


def tiny_torus_merge_probability(gamma: float, time: float, together: bool) -> float:
    from scipy.linalg import expm
    return float(expm(tiny_torus_generator(gamma) * time)[0 if together else 1, 2])


def golden_tables() -> dict[str, tuple[tuple[str, ...], list[tuple]]]:
    from .kingman_limits import marginal_table
    kingman = [(n0, s, k, p) for n0, s, k, p in marginal_table(GOLDEN_N0, GOLDEN_S)]
    torus = [(g, tm, int(tog), tiny_torus_merge_probability(g, tm, tog))
             for g in GOLDEN_GAMMA for tm in GOLDEN_TIMES for tog in (True, False)]
    return {
        "kingman_marginals.csv": (("n0", "s", "k", "probability"), kingman),
        "tiny_torus.csv": (("gamma", "time", "together", "p_merged"), torus),
    }


def records_to_csv(records: Sequence[ResultRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def summary_to_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


__all__ = [
    "SCENARIOS",
    "CSV_COLUMNS",
    "ConfigError",
    "ScenarioConfig",
    "ResultRecord",
    "ScenarioRun",
    "Comparison",
    "mix64",
    "validate",
    "compare_distributions",
    "recursion_coefficients",
    "sparse_recursion_table",
    "entrance_gate",
    "rebirth_gate",
    "merging_gate",
    "run_full",
    "run_scenario",
    "collect",
    "summarize",
    "tiny_torus_generator",
    "tiny_torus_merge_probability",
    "golden_tables",
    "records_to_csv",
    "summary_to_json",
]
