"""Shared value types for marked partitions, labels and restrictions.

Blocks carry only mergeable summary statistics (size, smallest initial
norm, earliest birth) rather than member lists. Labels are ordered
lexicographically by ``(index, birth_time)``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

Site = tuple[int, int]

# Sentinel norm for individuals that were not part of the initial configuration.
NO_INITIAL_NORM = np.iinfo(np.int64).max // 4


@dataclass(frozen=True, order=True)
class Individual:
    index: int
    birth_time: float = 0.0

    def __post_init__(self):
        if self.index < 0:
            raise ValueError(f"individual index must be non-negative, got {self.index}")


@dataclass(frozen=True)
class Block:
    label: Individual
    size: int
    min_initial_norm: int
    site: Site
    earliest_birth: float

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("block size must be positive")
        if self.min_initial_norm < 0:
            raise ValueError("min_initial_norm must be non-negative")


def merge_blocks(a: Block, b: Block) -> Block:
    """Merge two co-located blocks; the survivor carries the smaller label."""
    if a.site != b.site:
        raise ValueError(f"cannot merge blocks at different sites {a.site} and {b.site}")
    return Block(
        label=min(a.label, b.label),
        size=a.size + b.size,
        min_initial_norm=min(a.min_initial_norm, b.min_initial_norm),
        site=a.site,
        earliest_birth=min(a.earliest_birth, b.earliest_birth),
    )


@dataclass(frozen=True)
class MarkedPartition:
    blocks: tuple[Block, ...] = ()
    clock: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        labels = [b.label for b in self.blocks]
        if len(set(labels)) != len(labels):
            raise ValueError("two blocks share a label")

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[Block]:
        return iter(self.blocks)

    @property
    def total_size(self) -> int:
        return sum(b.size for b in self.blocks)

    def site_counts(self) -> Counter:
        return Counter(b.site for b in self.blocks)


def sup_norm(site: Site) -> int:
    return max(abs(int(site[0])), abs(int(site[1])))


@dataclass(frozen=True)
class LatticeBox:
    """The box ``[-r, r]^2`` intersected with the integer lattice."""

    half_side: float

    @property
    def radius(self) -> int:
        # Largest integer sup-norm inside the box; -1 for an empty box.
        # slack absorbs rounding in t ** (alpha / 2) when the exact value is an integer
        return int(np.floor(self.half_side + 1e-9)) if self.half_side >= 0 else -1

    def contains(self, site: Site) -> bool:
        return sup_norm(site) <= self.radius

    def contains_norm(self, norm: int) -> bool:
        return norm <= self.radius

    def __len__(self) -> int:
        r = self.radius
        return (2 * r + 1) ** 2 if r >= 0 else 0

    def sites(self) -> list[Site]:
        """Sites in site-major order: sup-norm shells, then lexicographic."""
        return enumerate_sites(self.radius)

    @classmethod
    def for_scale(cls, t: float, alpha: float) -> "LatticeBox":
        return cls(t ** (alpha / 2.0))


def enumerate_sites(radius: int) -> list[Site]:
    if radius < 0:
        return []
    r = np.arange(-radius, radius + 1)
    xs, ys = np.meshgrid(r, r, indexing="ij")
    xs, ys = xs.ravel(), ys.ravel()
    norms = np.maximum(np.abs(xs), np.abs(ys))
    order = np.lexsort((ys, xs, norms))
    return [(int(xs[k]), int(ys[k])) for k in order]


def restrict_by_region(partition: MarkedPartition, box: LatticeBox, alpha_threshold: float | None = None) -> MarkedPartition:
    """Keep blocks holding an individual whose initial site lies in ``box``.

    ``alpha_threshold`` is accepted for interface symmetry with callers that
    build the box from a scale parameter; the box alone decides membership.
    """
    kept = tuple(b for b in partition.blocks if box.contains_norm(b.min_initial_norm))
    return MarkedPartition(kept, partition.clock)


LabeledBlock = frozenset  # frozenset[Individual]


def restrict_by_index(blocks: Iterable[Iterable[Individual]], index_set: Iterable[int]) -> frozenset:
    """Intersect every block with individuals whose index is in ``index_set``."""
    keep = set(index_set)
    out = set()
    for blk in blocks:
        sub = frozenset(ind for ind in blk if ind.index in keep)
        if sub:
            out.add(sub)
    return frozenset(out)


def label_of(block: Iterable[Individual]) -> Individual:
    return min(block)


def partial_order_leq(p1: MarkedPartition, p2: MarkedPartition) -> bool:
    """Sitewise comparison of block counts."""
    c2 = p2.site_counts()
    return all(k <= c2.get(site, 0) for site, k in p1.site_counts().items())


def relabel_site_major(sites: Iterable[Site], counts: Iterable[int]) -> list[tuple[int, Site]]:
    """Assign consecutive indices to ``counts[k]`` individuals at ``sites[k]``.

    ``sites`` must already be in site-major order.
    """
    out = []
    nxt = 0
    for site, k in zip(sites, counts):
        for _ in range(int(k)):
            out.append((nxt, site))
            nxt += 1
    return out


__all__ = [
    "Individual",
    "Block",
    "MarkedPartition",
    "LatticeBox",
    "Site",
    "NO_INITIAL_NORM",
    "merge_blocks",
    "sup_norm",
    "enumerate_sites",
    "restrict_by_region",
    "restrict_by_index",
    "label_of",
    "partial_order_leq",
    "relabel_site_major",
]
