"""Graphical look-down construction on a finite index set.

Each index carries a walk; each ordered pair ``a < b`` carries a Poisson
process of arrow times. An arrow is effective when both walks sit on the
same site at that time. Tracing an individual backwards, its ancestral line
sits on an index and moves from ``b`` to ``a`` at every effective ``(a, b)``
arrow. Both the coalescent and the coalescent with rebirth are read off
these traces.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain_core import Block, Individual, MarkedPartition, sup_norm
from .lattice_walk import SIMPLE_WALK, WalkKernel, sample_displacements

Site = tuple[int, int]


@dataclass(frozen=True)
class Trajectory:
    start: Site
    times: np.ndarray  # jump times, increasing
    xs: np.ndarray  # position after each jump
    ys: np.ndarray

    def at(self, time: float) -> Site:
        k = int(np.searchsorted(self.times, time, side="right"))
        if k == 0:
            return self.start
        return int(self.xs[k - 1]), int(self.ys[k - 1])

    @classmethod
    def constant(cls, site: Site) -> "Trajectory":
        e = np.zeros(0)
        return cls(tuple(site), e, e.astype(np.int64), e.astype(np.int64))


@dataclass(frozen=True)
class ArrowGraph:
    indices: tuple[int, ...]
    walks: Mapping[int, Trajectory]
    arrows: Mapping[tuple[int, int], np.ndarray]  # (a, b) with a < b -> arrow times
    horizon: float

    def effective_arrows(self) -> list[tuple[float, int, int]]:
        """Arrows whose endpoints are co-located, sorted by time."""
        out = []
        for (a, b), times in self.arrows.items():
            for r in times:
                if self.walks[a].at(r) == self.walks[b].at(r):
                    out.append((float(r), a, b))
        out.sort()
        return out

    @classmethod
    def from_events(cls, sites: Mapping[int, Site], arrows: Iterable[tuple[float, int, int]],
                    horizon: float) -> "ArrowGraph":
        """Graph with frozen walks and a prescribed arrow list ``(time, a, b)``."""
        idx = tuple(sorted(sites))
        table: dict[tuple[int, int], list[float]] = {}
        for r, a, b in arrows:
            if not a < b:
                raise ValueError("arrows point from the smaller to the larger index")
            table.setdefault((a, b), []).append(float(r))
        return cls(idx, {i: Trajectory.constant(sites[i]) for i in idx},
                   {k: np.sort(np.array(v)) for k, v in table.items()}, float(horizon))


def build_graph(indices: Sequence[int], initial_sites: Mapping[int, Site], horizon: float, gamma: float,
                kernel: WalkKernel = SIMPLE_WALK, rng: np.random.Generator | None = None) -> ArrowGraph:
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    rng = rng if rng is not None else np.random.default_rng()
    idx = tuple(sorted(int(i) for i in indices))
    walks = {}
    for i in idx:
        n = rng.poisson(horizon)
        times = np.sort(rng.uniform(0.0, horizon, n))
        steps = sample_displacements(kernel, n, rng)
        sx, sy = initial_sites[i]
        walks[i] = Trajectory((int(sx), int(sy)), times, sx + np.cumsum(steps[:, 0]), sy + np.cumsum(steps[:, 1]))
    arrows = {}
    for p, a in enumerate(idx):
        for b in idx[p + 1:]:
            n = rng.poisson(gamma * horizon)
            arrows[(a, b)] = np.sort(rng.uniform(0.0, horizon, n))
    return ArrowGraph(idx, walks, arrows, float(horizon))


def _trace(i: int, s: float, t: float, eff: list[tuple[float, int, int]]) -> int:
    cur = i
    for r, a, b in eff:
        if r <= s:
            continue
        if r > t:
            break
        if b == cur:
            cur = a
    return cur


def ancestor(graph: ArrowGraph, i: int, s: float, t: float) -> int:
    """Index carrying the ancestral line of ``i`` (seen at ``s``) at time ``t``."""
    if not 0 <= s <= t <= graph.horizon:
        raise ValueError("need 0 <= s <= t <= horizon")
    return _trace(i, s, t, graph.effective_arrows())


def descendants(graph: ArrowGraph, j: int, s: float, t: float) -> frozenset[int]:
    eff = graph.effective_arrows()
    return frozenset(i for i in graph.indices if _trace(i, s, t, eff) == j)


def ancestral_partition(graph: ArrowGraph, t: float) -> frozenset[frozenset[int]]:
    """Indices grouped by their common ancestor at time ``t``."""
    eff = graph.effective_arrows()
    groups: dict[int, set[int]] = {}
    for i in graph.indices:
        groups.setdefault(_trace(i, 0.0, t, eff), set()).add(i)
    return frozenset(frozenset(g) for g in groups.values())


def coalescent_from_lookdown(graph: ArrowGraph, t: float) -> MarkedPartition:
    """Coalescent at time ``t``; each block is marked by its ancestor's position."""
    if not 0 <= t <= graph.horizon:
        raise ValueError("need 0 <= t <= horizon")
    eff = graph.effective_arrows()
    groups: dict[int, list[int]] = {}
    for i in graph.indices:
        groups.setdefault(_trace(i, 0.0, t, eff), []).append(i)
    blocks = []
    for anc, members in sorted(groups.items()):
        blocks.append(Block(
            label=Individual(min(members), 0.0),
            size=len(members),
            min_initial_norm=min(sup_norm(graph.walks[i].start) for i in members),
            site=graph.walks[anc].at(t),
            earliest_birth=0.0,
        ))
    return MarkedPartition(tuple(blocks), t)


@dataclass(frozen=True)
class RebirthBlock:
    label: Individual
    members: frozenset[Individual]
    site: Site


def rebirth_from_lookdown(graph: ArrowGraph, t: float) -> tuple[RebirthBlock, ...]:
    """Coalescent with rebirth at time ``t``, sorted by label.

    Individual ``(i, r)`` exists for ``r = 0`` and for every effective arrow
    into ``i`` at time ``r <= t``; it belongs to the block of the index its
    line reaches at ``t``. Block ``j`` is labelled by ``j`` with its latest
    rebirth time and located at the position of walk ``j``.
    """
    if not 0 <= t <= graph.horizon:
        raise ValueError("need 0 <= t <= horizon")
    eff = [e for e in graph.effective_arrows() if e[0] <= t]
    births: dict[int, list[float]] = {i: [0.0] for i in graph.indices}
    for r, _, b in eff:
        births[b].append(r)
    members: dict[int, set[Individual]] = {j: set() for j in graph.indices}
    for i, rs in births.items():
        for r in rs:
            members[_trace(i, r, t, eff)].add(Individual(i, r))
    out = []
    for j in graph.indices:
        out.append(RebirthBlock(Individual(j, max(births[j])), frozenset(members[j]), graph.walks[j].at(t)))
    return tuple(out)


__all__ = [
    "Trajectory",
    "ArrowGraph",
    "RebirthBlock",
    "build_graph",
    "ancestor",
    "descendants",
    "ancestral_partition",
    "coalescent_from_lookdown",
    "rebirth_from_lookdown",
]
