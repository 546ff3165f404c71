"""Spatial delayed coalescent on Z^2.

Blocks perform independent rate-1 walks; each pair of co-located blocks
merges at rate ``gamma``. With ``gamma = INSTANT`` blocks merge the moment
they meet. States are immutable from the caller's point of view: ``evolve``
returns a fresh state and leaves its input untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _engine
from .domain_core import (
    NO_INITIAL_NORM,
    Block,
    Individual,
    LatticeBox,
    MarkedPartition,
    enumerate_sites,
    partial_order_leq,
)
from .kingman_limits import _seed, entrance_count
from .lattice_walk import SIMPLE_WALK, WalkKernel

INSTANT = "instant"

assert NO_INITIAL_NORM == _engine.NO_NORM


@dataclass(frozen=True)
class PeriodicRegion:
    """Rectangle ``[x_lo, x_lo + width) x [y_lo, y_lo + height)`` with wrap-around."""

    x_lo: int
    width: int
    y_lo: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("region must have positive width and height")

    @classmethod
    def from_box(cls, box: LatticeBox) -> "PeriodicRegion":
        r = box.radius
        if r < 0:
            raise ValueError("region box is empty")
        return cls(-r, 2 * r + 1, -r, 2 * r + 1)

    def as_array(self) -> np.ndarray:
        return np.array([self.x_lo, self.width, self.y_lo, self.height], dtype=np.int64)

    def contains(self, x, y) -> bool:
        return self.x_lo <= x < self.x_lo + self.width and self.y_lo <= y < self.y_lo + self.height


_UNBOUNDED = np.array([0, 0, 0, 0], dtype=np.int64)


def simulation_region(t: float, alpha: float, horizon: float, buffer: float = 3.0) -> PeriodicRegion:
    """Support box Λ^{α,t} padded by ``buffer * sqrt(horizon) * log(t)`` on every side."""
    pad = buffer * math.sqrt(max(horizon, 1.0)) * math.log(t)
    return PeriodicRegion.from_box(LatticeBox(t ** (alpha / 2.0) + pad))


@dataclass(frozen=True)
class Poisson:
    rho: float

    def __post_init__(self):
        if not (0 < self.rho < math.inf):
            raise ValueError(f"Poisson intensity must lie in (0, inf), got {self.rho}")


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not (0 < self.p <= 1):
            raise ValueError(f"Bernoulli probability must lie in (0, 1], got {self.p}")


@dataclass(frozen=True)
class InfiniteThinned:
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"thinning time must be positive, got {self.delta}")


@dataclass(frozen=True)
class InitialConfig:
    kind: Poisson | Bernoulli | InfiniteThinned
    support: LatticeBox | None = None  # defaults to the alpha-box of the run


_FIELDS = ("x", "y", "lab", "birth", "size", "mnorm", "eb", "mask", "active")
_DTYPES = (np.int64, np.int64, np.int64, float, np.int64, np.int64, float, np.int64, np.bool_)


@dataclass(frozen=True, eq=False)
class SpatialState:
    """Block arrays plus dynamics parameters.

    Each block k sits at (x[k], y[k]) with label (lab[k], birth[k]). ``mask``
    is a bit set merged by OR (used for level and checkpoint tags) and
    ``active`` marks blocks that take part in coalescence.
    """

    x: np.ndarray
    y: np.ndarray
    lab: np.ndarray
    birth: np.ndarray
    size: np.ndarray
    mnorm: np.ndarray
    eb: np.ndarray
    mask: np.ndarray
    active: np.ndarray
    gamma: float | str = 1.0
    kernel: WalkKernel = SIMPLE_WALK
    region: PeriodicRegion | None = None
    clock: float = 0.0
    migrate: bool = True  # test hook: False freezes all walks
    events: int = 0
    merge_log: tuple = field(default=(), repr=False)

    def __post_init__(self):
        n = len(self.x)
        for name, dt in zip(_FIELDS, _DTYPES):
            arr = np.ascontiguousarray(getattr(self, name), dtype=dt)
            if len(arr) != n:
                raise ValueError(f"field {name} has length {len(arr)}, expected {n}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.gamma != INSTANT and not (isinstance(self.gamma, (int, float)) and self.gamma >= 0):
            raise ValueError(f"gamma must be non-negative or INSTANT, got {self.gamma}")
        if self.region is not None and n:
            g = self.region
            inside = ((self.x >= g.x_lo) & (self.x < g.x_lo + g.width) & (self.y >= g.y_lo) & (self.y < g.y_lo + g.height))
            if not inside.all():
                raise ValueError("a block lies outside the periodic region")

    @classmethod
    def from_blocks(cls, blocks: Sequence[Block], **kw) -> "SpatialState":
        n = len(blocks)
        return cls(
            x=np.array([b.site[0] for b in blocks], dtype=np.int64).reshape(n),
            y=np.array([b.site[1] for b in blocks], dtype=np.int64).reshape(n),
            lab=np.array([b.label.index for b in blocks], dtype=np.int64).reshape(n),
            birth=np.array([b.label.birth_time for b in blocks], dtype=float).reshape(n),
            size=np.array([b.size for b in blocks], dtype=np.int64).reshape(n),
            mnorm=np.array([b.min_initial_norm for b in blocks], dtype=np.int64).reshape(n),
            eb=np.array([b.earliest_birth for b in blocks], dtype=float).reshape(n),
            mask=np.zeros(n, dtype=np.int64),
            active=np.ones(n, dtype=bool),
            **kw,
        )

    def __len__(self) -> int:
        return len(self.x)

    @property
    def partition(self) -> MarkedPartition:
        return MarkedPartition(tuple(self.block(k) for k in range(len(self))), self.clock)

    def block(self, k: int) -> Block:
        return Block(
            label=Individual(int(self.lab[k]), float(self.birth[k])),
            size=int(self.size[k]),
            min_initial_norm=int(self.mnorm[k]),
            site=(int(self.x[k]), int(self.y[k])),
            earliest_birth=float(self.eb[k]),
        )

    @property
    def site_index(self) -> dict[tuple[int, int], list[int]]:
        out: dict[tuple[int, int], list[int]] = {}
        for k in range(len(self)):
            out.setdefault((int(self.x[k]), int(self.y[k])), []).append(k)
        return out

    def pair_weight(self) -> int:
        """Twice the number of co-located pairs of active blocks, recomputed from scratch."""
        alive = np.ones(len(self), dtype=bool)
        return int(_engine.pair_weight(self.x, self.y, alive, self.active))

    def total_rate(self) -> float:
        mig = float(len(self)) if self.migrate else 0.0
        if self.gamma == INSTANT:
            return mig
        return mig + self.gamma * self.pair_weight() / 2.0

    def to_json(self) -> str:
        return json.dumps({
            "clock": self.clock,
            "blocks": [
                {"index": int(self.lab[k]), "birth": float(self.birth[k]), "x": int(self.x[k]), "y": int(self.y[k]),
                 "size": int(self.size[k]), "min_initial_norm": int(self.mnorm[k])}
                for k in range(len(self))
            ],
        })

    @classmethod
    def from_json(cls, text: str, **kw) -> "SpatialState":
        obj = json.loads(text)
        blocks = [
            Block(Individual(b["index"], b["birth"]), b["size"], b["min_initial_norm"], (b["x"], b["y"]), b["birth"])
            for b in obj["blocks"]
        ]
        return cls.from_blocks(blocks, clock=float(obj["clock"]), **kw)


def _site_arrays(box: LatticeBox) -> tuple[np.ndarray, np.ndarray]:
    sites = np.array(enumerate_sites(box.radius), dtype=np.int64).reshape(-1, 2)
    return sites[:, 0], sites[:, 1]


def init_configuration(config: InitialConfig, t: float, alpha: float, rng: np.random.Generator,
                       gamma: float | str = 1.0, kernel: WalkKernel = SIMPLE_WALK,
                       region: PeriodicRegion | None = None, tail_epsilon: float = 1e-6) -> SpatialState:
    """Initial blocks on the support box, indexed site-major.

    For ``InfiniteThinned`` the per-site counts follow the Kingman entrance law
    at time delta with pair rate ``gamma`` and the returned clock is delta.
    """
    if not t > 1:
        raise ValueError(f"need t > 1, got {t}")
    if not 0 < alpha <= 1:
        raise ValueError(f"need alpha in (0, 1], got {alpha}")
    box = config.support if config.support is not None else LatticeBox.for_scale(t, alpha)
    sx, sy = _site_arrays(box)
    kind = config.kind
    clock = 0.0
    if isinstance(kind, Poisson):
        counts = rng.poisson(kind.rho, len(sx))
    elif isinstance(kind, Bernoulli):
        counts = (rng.random(len(sx)) < kind.p).astype(np.int64)
    elif isinstance(kind, InfiniteThinned):
        if gamma == INSTANT:
            raise ValueError("thinned infinite start needs a finite coalescence rate")
        counts = np.asarray(entrance_count(kind.delta, gamma, tail_epsilon, rng, size=len(sx)), dtype=np.int64)
        clock = kind.delta
    else:
        raise ValueError(f"unknown initial configuration {kind!r}")
    x = np.repeat(sx, counts)
    y = np.repeat(sy, counts)
    n = len(x)
    if gamma == INSTANT and n:
        keep = np.ones(n, dtype=bool)
        keep[1:] = (x[1:] != x[:-1]) | (y[1:] != y[:-1])
        x, y, n = x[keep], y[keep], int(keep.sum())
    return SpatialState(
        x=x, y=y, lab=np.arange(n), birth=np.zeros(n), size=np.ones(n, dtype=np.int64),
        mnorm=np.maximum(np.abs(x), np.abs(y)), eb=np.zeros(n), mask=np.zeros(n, dtype=np.int64),
        active=np.ones(n, dtype=bool), gamma=gamma, kernel=kernel, region=region, clock=clock,
    )


@dataclass
class _RunResult:
    arrays: dict
    alive: np.ndarray
    clock: float
    events: int
    pair_weight: int
    log: tuple
    log_overflow: bool
    violations: int


def _run(state: SpatialState, until: float, seed: int, rebirth: bool, max_events: int,
         log_capacity: int | None, debug: bool, mask: np.ndarray | None = None) -> _RunResult:
    if until < state.clock:
        raise ValueError(f"cannot evolve backwards from {state.clock} to {until}")
    arrays = {name: np.array(getattr(state, name)) for name in _FIELDS}
    if mask is not None:
        arrays["mask"] = np.array(mask, dtype=np.int64)
    n = len(state)
    alive = np.ones(n, dtype=bool)
    cap = n if log_capacity is None else log_capacity
    lt, ls, ll = np.zeros(cap), np.zeros(cap, np.int64), np.zeros(cap, np.int64)
    instant = state.gamma == INSTANT
    gamma = 0.0 if instant else float(state.gamma)
    region = state.region.as_array() if state.region is not None else _UNBOUNDED
    k = state.kernel
    clock, events, pw, n_log, viol = _engine.evolve_kernel(
        arrays["x"], arrays["y"], arrays["lab"], arrays["birth"], arrays["size"], arrays["mnorm"],
        arrays["eb"], arrays["mask"], arrays["active"], alive, float(state.clock), float(until), gamma,
        instant, bool(state.migrate), bool(rebirth), region, k.dx, k.dy, k.cum, k.is_simple,
        np.uint32(seed), np.int64(max_events), lt, ls, ll, bool(debug))
    m = min(n_log, cap)
    log = tuple(zip(lt[:m].tolist(), ls[:m].tolist(), ll[:m].tolist()))
    return _RunResult(arrays, alive, clock, events, pw, log, n_log > cap, viol)


class EngineInvariantError(RuntimeError):
    pass


def evolve(state: SpatialState, until: float, rng: np.random.Generator, *, max_events: int = 2**62,
           debug: bool = False) -> SpatialState:
    """Exact event-driven evolution of ``state`` up to time ``until``.

    With ``debug`` the incrementally maintained pair weight is checked
    against a full recomputation at the end, and per-event invariants are
    enforced.
    """
    res = _run(state, until, _seed(rng), False, max_events, None, debug)
    if debug:
        full = _engine.pair_weight(res.arrays["x"], res.arrays["y"], res.alive, res.arrays["active"])
        if full != res.pair_weight or res.violations:
            raise EngineInvariantError(
                f"pair weight {res.pair_weight} vs rebuild {full}, {res.violations} event violations")
    a = res.alive
    return replace(state, **{name: arr[a] for name, arr in res.arrays.items()}, clock=res.clock,
                   events=state.events + res.events, merge_log=res.log)


def block_count(state: SpatialState) -> int:
    return len(state)


def restricted_block_count(state: SpatialState, alpha: float, t: float) -> int:
    """Blocks holding an individual whose initial site lies in Λ^{α,t}."""
    r = LatticeBox.for_scale(t, alpha).radius
    return int(np.count_nonzero(state.mnorm <= r))


def restricted_counts(state: SpatialState, alphas: Sequence[float], t: float) -> list[int]:
    return [restricted_block_count(state, a, t) for a in alphas]


def _match_into(small: SpatialState, big: SpatialState) -> np.ndarray:
    """Injective map from blocks of ``small`` to co-located blocks of ``big``.

    A block carrying the same label as a co-located block of ``big`` is
    matched to it, so restricting a state by index gives the identity
    identification; the remaining blocks take any free co-located slot.
    """
    by_label = {(int(big.x[k]), int(big.y[k]), int(big.lab[k]), float(big.birth[k])): k for k in range(len(big))}
    out = np.full(len(small), -1, dtype=np.int64)
    used = np.zeros(len(big), dtype=bool)
    for k in range(len(small)):
        j = by_label.get((int(small.x[k]), int(small.y[k]), int(small.lab[k]), float(small.birth[k])))
        if j is not None and not used[j]:
            out[k] = j
            used[j] = True
    slots: dict[tuple[int, int], list[int]] = {}
    for j in range(len(big) - 1, -1, -1):
        if not used[j]:
            slots.setdefault((int(big.x[j]), int(big.y[j])), []).append(j)
    for k in np.flatnonzero(out < 0):
        site = (int(small.x[k]), int(small.y[k]))
        free = slots.get(site)
        if not free:
            raise ValueError(f"states are not ordered: site {site} holds more blocks in the smaller state")
        out[k] = free.pop()
    return out


def evolve_coupled(states: Sequence[SpatialState], until: float, rng: np.random.Generator) -> list[SpatialState]:
    """Drive nested states with one event stream.

    Every block of ``states[i]`` is identified with a co-located block of
    ``states[i + 1]``. The largest state is simulated; state i is read off as
    the sub-coalescent of the blocks carrying its identification bit, with
    its own labels and statistics replayed along the merge log.
    """
    if not states:
        return []
    if len(states) > 62:
        raise ValueError("at most 62 coupled states are supported")
    top = states[-1]
    for a, b in zip(states, states[1:]):
        if not partial_order_leq(a.partition, b.partition):
            raise ValueError("coupled states violate the sitewise order")
        if a.gamma != b.gamma or a.kernel != b.kernel or a.region != b.region or a.clock != b.clock:
            raise ValueError("coupled states must share gamma, kernel, region and clock")
    # owner[i][k] = slot of the top state carrying block k of state i
    owner: list[np.ndarray] = [None] * len(states)
    owner[-1] = np.arange(len(top))
    for i in range(len(states) - 2, -1, -1):
        owner[i] = owner[i + 1][_match_into(states[i], states[i + 1])]
    mask = np.zeros(len(top), dtype=np.int64)
    for i, own in enumerate(owner):
        mask[own] |= np.int64(1) << i
    res = _run(top, until, _seed(rng), False, 2**62, None, False, mask=mask)

    out = []
    for i, st in enumerate(states):
        lab = np.full(len(top), -1, dtype=np.int64)
        birth = np.zeros(len(top))
        size = np.zeros(len(top), dtype=np.int64)
        mnorm = np.full(len(top), NO_INITIAL_NORM, dtype=np.int64)
        eb = np.full(len(top), np.inf)
        own = owner[i]
        lab[own], birth[own], size[own] = st.lab, st.birth, st.size
        mnorm[own], eb[own] = st.mnorm, st.eb
        for _, s, l in res.log:
            if lab[l] < 0:
                continue
            if lab[s] < 0 or (lab[l], birth[l]) < (lab[s], birth[s]):
                lab[s], birth[s] = lab[l], birth[l]
            size[s] += size[l]
            mnorm[s] = min(mnorm[s], mnorm[l])
            eb[s] = min(eb[s], eb[l])
            lab[l] = -1
        keep = res.alive & (lab >= 0)
        out.append(replace(
            st, x=res.arrays["x"][keep], y=res.arrays["y"][keep], lab=lab[keep], birth=birth[keep],
            size=size[keep], mnorm=mnorm[keep], eb=eb[keep], mask=np.zeros(int(keep.sum()), dtype=np.int64),
            active=np.ones(int(keep.sum()), dtype=bool), clock=res.clock, events=st.events + res.events,
            merge_log=()))
    return out


def thin(state: SpatialState, keep_prob: float, rng: np.random.Generator) -> SpatialState:
    """Independent thinning of the blocks; gives a state below ``state`` in the sitewise order."""
    keep = rng.random(len(state)) < keep_prob
    return replace(state, **{name: getattr(state, name)[keep] for name in _FIELDS}, merge_log=())


__all__ = [
    "INSTANT",
    "PeriodicRegion",
    "simulation_region",
    "Poisson",
    "Bernoulli",
    "InfiniteThinned",
    "InitialConfig",
    "SpatialState",
    "EngineInvariantError",
    "init_configuration",
    "evolve",
    "block_count",
    "restricted_block_count",
    "restricted_counts",
    "evolve_coupled",
    "thin",
]
