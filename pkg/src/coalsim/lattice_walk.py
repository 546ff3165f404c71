"""Continuous-time rate-1 random walks on Z^2 with finite-range kernels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import ive

_TOL = 1e-12


def _lattice_index(vectors: np.ndarray) -> int:
    # gcd of all 2x2 minors; equals 1 iff the vectors generate Z^2 as a group
    g = 0
    for a in range(len(vectors)):
        for b in range(a + 1, len(vectors)):
            det = int(vectors[a, 0] * vectors[b, 1] - vectors[a, 1] * vectors[b, 0])
            g = math.gcd(g, abs(det))
    return g


@dataclass(frozen=True)
class WalkKernel:
    """Jump distribution of a rate-1 walk: ``steps`` is a tuple of (dx, dy, p)."""

    steps: tuple[tuple[int, int, float], ...]
    dx: np.ndarray = field(init=False, repr=False, compare=False)
    dy: np.ndarray = field(init=False, repr=False, compare=False)
    probs: np.ndarray = field(init=False, repr=False, compare=False)
    cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        merged: dict[tuple[int, int], float] = {}
        for dx, dy, p in self.steps:
            if int(dx) != dx or int(dy) != dy:
                raise ValueError(f"kernel step ({dx}, {dy}) is not a lattice vector")
            if p < 0:
                raise ValueError(f"negative step probability {p}")
            if p > 0:
                key = (int(dx), int(dy))
                merged[key] = merged.get(key, 0.0) + float(p)
        if not merged:
            raise ValueError("kernel has no steps")
        steps = tuple(sorted((k[0], k[1], p) for k, p in merged.items()))
        probs = np.array([s[2] for s in steps])
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"step probabilities sum to {probs.sum()}, not 1")
        vec = np.array([[s[0], s[1]] for s in steps], dtype=np.int64)
        mean = probs @ vec
        if np.max(np.abs(mean)) > 1e-9:
            raise ValueError(f"kernel mean displacement {tuple(mean)} is not zero")
        if _lattice_index(vec) != 1:
            raise ValueError("kernel is not irreducible on Z^2")
        probs = probs / probs.sum()
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "dx", np.ascontiguousarray(vec[:, 0]))
        object.__setattr__(self, "dy", np.ascontiguousarray(vec[:, 1]))
        object.__setattr__(self, "probs", probs)
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        object.__setattr__(self, "cum", cum)

    @classmethod
    def simple(cls) -> "WalkKernel":
        return cls(((1, 0, 0.25), (-1, 0, 0.25), (0, 1, 0.25), (0, -1, 0.25)))

    @property
    def is_simple(self) -> bool:
        return self == SIMPLE_WALK

    @classmethod
    def from_json(cls, text_or_obj) -> "WalkKernel":
        obj = json.loads(text_or_obj) if isinstance(text_or_obj, (str, bytes)) else text_or_obj
        if not isinstance(obj, list):
            raise ValueError("kernel JSON must be a list of {dx, dy, p} objects")
        steps = []
        for entry in obj:
            if set(entry) != {"dx", "dy", "p"}:
                raise ValueError(f"kernel entry {entry} must have exactly the keys dx, dy, p")
            if not isinstance(entry["dx"], int) or not isinstance(entry["dy"], int):
                raise ValueError(f"kernel entry {entry} has non-integer displacement")
            steps.append((entry["dx"], entry["dy"], float(entry["p"])))
        return cls(tuple(steps))

    def to_json(self) -> str:
        return json.dumps([{"dx": dx, "dy": dy, "p": p} for dx, dy, p in self.steps])

    def reflected(self) -> "WalkKernel":
        return WalkKernel(tuple((-dx, -dy, p) for dx, dy, p in self.steps))

    def symmetrized(self) -> "WalkKernel":
        return WalkKernel(tuple((dx, dy, p / 2) for dx, dy, p in self.steps) + tuple((-dx, -dy, p / 2) for dx, dy, p in self.steps))


SIMPLE_WALK = WalkKernel.simple()


def sample_displacement(kernel: WalkKernel, rng: np.random.Generator) -> tuple[int, int]:
    k = int(np.searchsorted(kernel.cum, rng.random(), side="right"))
    k = min(k, len(kernel.steps) - 1)
    return int(kernel.dx[k]), int(kernel.dy[k])


def sample_displacements(kernel: WalkKernel, n: int, rng: np.random.Generator) -> np.ndarray:
    k = np.minimum(np.searchsorted(kernel.cum, rng.random(n), side="right"), len(kernel.steps) - 1)
    return np.stack([kernel.dx[k], kernel.dy[k]], axis=1)


def walk_position(kernel: WalkKernel, start, duration: float, rng: np.random.Generator) -> tuple[int, int]:
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    n = rng.poisson(duration)
    counts = rng.multinomial(n, kernel.probs)
    return int(start[0] + counts @ kernel.dx), int(start[1] + counts @ kernel.dy)


def walk_positions(kernel: WalkKernel, starts: np.ndarray, duration, rng: np.random.Generator) -> np.ndarray:
    """Vectorised ``walk_position``; ``duration`` may be a scalar or per-walk array."""
    starts = np.asarray(starts, dtype=np.int64).reshape(-1, 2)
    dur = np.broadcast_to(np.asarray(duration, dtype=float), (len(starts),))
    if np.any(dur < 0):
        raise ValueError("duration must be non-negative")
    if len(starts) == 0:
        return starts.copy()
    n = rng.poisson(dur)
    counts = rng.multinomial(n, kernel.probs).reshape(len(starts), -1)
    return starts + np.stack([counts @ kernel.dx, counts @ kernel.dy], axis=1)


def simple_walk_pmf(x: np.ndarray, y: np.ndarray, duration: float) -> np.ndarray:
    """Exact transition probabilities of the rate-1 simple walk.

    The two coordinates are independent rate-1/2 walks on Z, each with law
    ``exp(-d/2) I_k(d/2)``.
    """
    h = duration / 2.0
    return ive(np.abs(x), h) * ive(np.abs(y), h)


@njit(cache=True)
def _step(dx, dy, cum, simple):
    u = np.random.random()
    if simple:
        k = int(u * 4.0)
        if k == 0:
            return 1, 0
        if k == 1:
            return -1, 0
        if k == 2:
            return 0, 1
        return 0, -1
    k = np.searchsorted(cum, u, side="right")
    if k >= len(cum):
        k = len(cum) - 1
    return dx[k], dy[k]


@njit(cache=True)
def _hit_origin(zx, zy, horizon, rate, dx, dy, cum, simple):
    # Jump count on [0, horizon] is Poisson; given the count, jump times are
    # uniform order statistics, so the k-th jump time is horizon * Beta(k, n-k+1).
    n = np.random.poisson(rate * horizon)
    bits = 0
    nbits = 0
    for k in range(1, n + 1):
        if simple:
            # two random bits per nearest-neighbour step
            if nbits == 0:
                bits = np.int64(np.random.random() * 4503599627370496.0)
                nbits = 26
            c = bits & 3
            bits >>= 2
            nbits -= 1
            if c == 0:
                zx += 1
            elif c == 1:
                zx -= 1
            elif c == 2:
                zy += 1
            else:
                zy -= 1
        else:
            sx, sy = _step(dx, dy, cum, simple)
            zx += sx
            zy += sy
        if zx == 0 and zy == 0:
            return horizon * np.random.beta(k, n - k + 1)
    return -1.0


@njit(cache=True)
def _meeting_batch(zx, zy, horizon, rate, dx, dy, cum, simple, seeds):
    out = np.empty(len(seeds))
    for r in range(len(seeds)):
        np.random.seed(seeds[r])
        out[r] = _hit_origin(zx, zy, horizon, rate, dx, dy, cum, simple)
    return out


def _difference_arrays(kernel: WalkKernel):
    diff = kernel.symmetrized()
    return diff.dx, diff.dy, diff.cum, diff.is_simple


def first_meeting_time(kernel: WalkKernel, x, y, horizon: float, rng: np.random.Generator) -> float | None:
    """First time two independent walks from ``x`` and ``y`` share a site, or None."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if tuple(x) == tuple(y):
        return 0.0
    if horizon == 0:
        return None
    dx, dy, cum, simple = _difference_arrays(kernel)
    seed = np.array([rng.integers(2**32)], dtype=np.uint32)
    t = _meeting_batch(int(x[0] - y[0]), int(x[1] - y[1]), float(horizon), 2.0, dx, dy, cum, simple, seed)[0]
    return None if t < 0 else float(t)


def meeting_times(kernel: WalkKernel, x, y, horizon: float, seeds: Sequence[int]) -> np.ndarray:
    """One meeting time per 32-bit seed; NaN where the walks do not meet by ``horizon``."""
    seeds = np.asarray(seeds, dtype=np.uint32)
    if tuple(x) == tuple(y):
        return np.zeros(len(seeds))
    dx, dy, cum, simple = _difference_arrays(kernel)
    out = _meeting_batch(int(x[0] - y[0]), int(x[1] - y[1]), float(horizon), 2.0, dx, dy, cum, simple, seeds)
    out[out < 0] = np.nan
    return out


def contained_in_annulus(positions, alpha: float, c: float, t: float) -> bool:
    """All pairwise sup-norm distances lie in ``[s / (c log t), s c log t]`` with ``s = t^(alpha/2)``."""
    if t <= 1 or c <= 0:
        raise ValueError("need t > 1 and c > 0")
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(pos) < 2:
        return True
    scale = t ** (alpha / 2.0)
    lo = scale / (c * math.log(t))
    hi = scale * c * math.log(t)
    for a in range(len(pos)):
        d = np.max(np.abs(pos[a + 1:] - pos[a]), axis=1)
        if np.any(d < lo) or np.any(d > hi):
            return False
    return True
