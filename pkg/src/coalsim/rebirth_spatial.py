"""Spatial coalescent with rebirth and its checkpoint functionals.

Every merge of two co-located blocks hands the union to the smaller label
and returns the larger label's index as a fresh singleton born at the merge
time, so the number of blocks per site only changes by migration.

Two readings of the checkpoint functional are provided. The label reading
asks whether the label of a final block was inside the box at a checkpoint.
The containment reading asks whether any block that was inside the box at a
checkpoint has been absorbed into the final block; it is carried by a bit
per checkpoint, OR-ed on every merge. ``checkpoint_counts`` samples the
containment reading on the infinite lattice exactly, without simulating
lines that never visit the box.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _engine
from .domain_core import Individual, LatticeBox
from .kingman_limits import _seed
from .lattice_walk import SIMPLE_WALK, WalkKernel, walk_positions
from .spatial_coalescent import (
    INSTANT,
    EngineInvariantError,
    PeriodicRegion,
    SpatialState,
    _FIELDS,
    _run,
)


@dataclass(frozen=True)
class Snapshot:
    time: float
    index: np.ndarray
    birth: np.ndarray
    x: np.ndarray
    y: np.ndarray
    in_box: np.ndarray

    def to_json_obj(self, checkpoint: int) -> dict:
        return {
            "checkpoint": checkpoint,
            "entries": [
                {"index": int(i), "birth": float(b), "x": int(x), "y": int(y), "in_box": bool(f)}
                for i, b, x, y, f in zip(self.index, self.birth, self.x, self.y, self.in_box)
            ],
        }

    def lookup(self) -> dict[tuple[int, float], tuple[int, int]]:
        return {(int(i), float(b)): (int(x), int(y)) for i, b, x, y in zip(self.index, self.birth, self.x, self.y)}


@dataclass(frozen=True, eq=False)
class RebirthState(SpatialState):
    checkpoint_times: tuple = ()
    snapshots: tuple = ()
    box: LatticeBox | None = None
    members: tuple | None = None  # explicit member sets, only when tracked

    def snapshots_json(self) -> str:
        return json.dumps([s.to_json_obj(k) for k, s in enumerate(self.snapshots)])


def as_rebirth_state(state: SpatialState, box: LatticeBox | None = None, track_members: bool = False) -> RebirthState:
    if state.gamma == INSTANT:
        raise ValueError("rebirth needs a finite coalescence rate")
    kw = {name: getattr(state, name) for name in _FIELDS}
    members = None
    if track_members:
        members = tuple(frozenset({Individual(int(i), float(b))}) for i, b in zip(state.lab, state.birth))
    return RebirthState(**kw, gamma=state.gamma, kernel=state.kernel, region=state.region, clock=state.clock,
                        migrate=state.migrate, box=box, members=members)


def _replay_members(members: list, lab: np.ndarray, log) -> None:
    # slot labels: survivors keep theirs, losers keep their index with a new birth time
    for tm, s, l in log:
        members[s] = members[s] | members[l]
        members[l] = frozenset({Individual(int(lab[l]), float(tm))})


def evolve_rebirth(state: RebirthState, checkpoints: Sequence[float], until: float, rng: np.random.Generator,
                   *, debug: bool = False) -> RebirthState:
    """Evolve with rebirth, recording a label/location snapshot at each checkpoint.

    Blocks inside ``state.box`` at the k-th recorded checkpoint receive bit k
    of their mask.
    """
    cps = [float(c) for c in checkpoints]
    if any(b <= a for a, b in zip(cps, cps[1:])):
        raise ValueError("checkpoints must be strictly increasing")
    if cps and (cps[0] < state.clock or cps[-1] > until):
        raise ValueError("checkpoints must lie in [clock, until]")
    offset = len(state.snapshots)
    if offset + len(cps) > 62:
        raise ValueError("at most 62 checkpoints are supported")
    track = state.members is not None
    snaps = list(state.snapshots)
    cur = state
    members = list(state.members) if track else None
    for k, target in enumerate(cps + [float(until)]):
        n = len(cur)
        res = _run(cur, target, _seed(rng), True, 2**62, (1 << 20) if track or debug else 0, debug)
        if res.log_overflow and track:
            raise RuntimeError("merge log overflow while tracking members; use a smaller instance")
        if debug:
            full = _engine.pair_weight(res.arrays["x"], res.arrays["y"], res.alive, res.arrays["active"])
            if full != res.pair_weight or res.violations or not res.alive.all():
                raise EngineInvariantError("rebirth invariant violated")
            if len(np.unique(res.arrays["lab"])) != n:
                raise EngineInvariantError("a label index is carried by two live blocks")
        if track:
            _replay_members(members, cur.lab, res.log)
        arr = res.arrays
        if k < len(cps):
            in_box = np.zeros(n, dtype=bool)
            if state.box is not None:
                in_box = np.maximum(np.abs(arr["x"]), np.abs(arr["y"])) <= state.box.radius
            arr["mask"] = arr["mask"] | np.where(in_box, np.int64(1) << (offset + k), 0)
            snaps.append(Snapshot(target, arr["lab"].copy(), arr["birth"].copy(), arr["x"].copy(),
                                  arr["y"].copy(), in_box))
        cur = replace(cur, **arr, clock=res.clock, events=cur.events + res.events,
                      merge_log=res.log if debug else ())
    return replace(cur, checkpoint_times=tuple(state.checkpoint_times) + tuple(cps), snapshots=tuple(snaps),
                   members=tuple(members) if track else None)


def _check_u(u: float, u_vector: Sequence[float]) -> np.ndarray:
    uv = np.asarray(u_vector, dtype=float)
    if len(uv) == 0 or np.any(np.diff(uv) <= 0):
        raise ValueError("u_vector must be non-empty and strictly increasing")
    if u < uv[0] or u > 1:
        raise ValueError(f"u = {u} outside [{uv[0]}, 1]")
    return uv


def n_rebirth(state: RebirthState, alpha: float, t: float, u: float, u_vector: Sequence[float],
              reading: str = "label") -> int:
    """Final blocks that were in Λ^{α,t} at some checkpoint t^{u_i} with u_i <= u.

    ``reading="label"`` looks the block's label up in the snapshots;
    ``reading="containment"`` uses the checkpoint bits OR-ed along merges.
    """
    uv = _check_u(u, u_vector)
    if len(state.snapshots) != len(uv):
        raise ValueError("one snapshot per entry of u_vector is required")
    qualifying = [k for k in range(len(uv)) if uv[k] <= u]
    r = LatticeBox.for_scale(t, alpha).radius
    if reading == "containment":
        if state.box is None or state.box.radius != r:
            raise ValueError("containment reading needs the state's box to equal the requested alpha-box")
        bits = 0
        for k in qualifying:
            bits |= 1 << k
        return int(np.count_nonzero(state.mask & bits))
    if reading != "label":
        raise ValueError(f"unknown reading {reading!r}")
    hit = np.zeros(len(state), dtype=bool)
    for k in qualifying:
        snap = state.snapshots[k]
        where = {(int(i), float(b)): bool(max(abs(x), abs(y)) <= r)
                 for i, b, x, y in zip(snap.index, snap.birth, snap.x, snap.y)}
        for j in range(len(state)):
            if not hit[j] and state.birth[j] <= snap.time:
                hit[j] = where.get((int(state.lab[j]), float(state.birth[j])), False)
    return int(np.count_nonzero(hit))


def label_persistence_violations(state: RebirthState) -> int:
    """Count (snapshot, final block) pairs where the persistence property fails.

    For a final block whose label was born by the snapshot time, the snapshot
    must list that label, and the individual it names must be a member of the
    final block. Needs a state evolved with member tracking.
    """
    if state.members is None:
        raise ValueError("state does not track members")
    bad = 0
    for snap in state.snapshots:
        present = set(zip(snap.index.tolist(), snap.birth.tolist()))
        for j in range(len(state)):
            key = (int(state.lab[j]), float(state.birth[j]))
            if key[1] <= snap.time:
                if key not in present or Individual(*key) not in state.members[j]:
                    bad += 1
    return bad


# ---------------------------------------------------------------------------
# exact reduction for the containment reading


def _wrap(pos: np.ndarray, region: PeriodicRegion | None) -> np.ndarray:
    if region is None:
        return pos
    out = pos.copy()
    out[:, 0] = region.x_lo + (out[:, 0] - region.x_lo) % region.width
    out[:, 1] = region.y_lo + (out[:, 1] - region.y_lo) % region.height
    return out


def _in_box(pos: np.ndarray, r: int) -> np.ndarray:
    return np.max(np.abs(pos), axis=1) <= r if len(pos) else np.zeros(0, dtype=bool)


def checkpoint_counts(t: float, alpha: float, u_vector: Sequence[float], rho: float, rng: np.random.Generator,
                      gamma: float = 1.0, kernel: WalkKernel = SIMPLE_WALK,
                      region: PeriodicRegion | None = None) -> np.ndarray:
    """One sample of the containment-reading counts for every u in ``u_vector``.

    The stationary rebirth system is a Poisson field of independent walks on
    which the box-visiting content ("tokens") moves. A token merging with a
    token-free block changes no positions, so tokens are rate-1 walks that
    coalesce among themselves at rate ``gamma``; a token absorbed by another
    leaves a token-free line behind, which is tracked passively because it
    may re-enter the box. Lines first seen in the box at a checkpoint are the
    box's Poisson(rho) occupants whose reversed walks avoid the box at all
    earlier checkpoints.
    """
    uv = _check_u(float(u_vector[0]), u_vector)
    if uv[-1] > 1:
        raise ValueError("u_vector entries must be at most 1")
    cps = [float(t) ** u for u in uv]
    r = LatticeBox.for_scale(t, alpha).radius
    box_sites = np.array([(x, y) for x in range(-r, r + 1) for y in range(-r, r + 1)], dtype=np.int64).reshape(-1, 2)
    back = kernel.reflected()

    tok = np.zeros((0, 2), dtype=np.int64)
    tok_mask = np.zeros(0, dtype=np.int64)
    pas = np.zeros((0, 2), dtype=np.int64)
    pas_time = np.zeros(0)
    clock = cps[0]
    next_label = 0

    def advance_tokens(tok, tok_mask, until, clock, next_label):
        n = len(tok)
        st = SpatialState(x=tok[:, 0], y=tok[:, 1], lab=np.arange(next_label, next_label + n),
                          birth=np.zeros(n), size=np.ones(n, dtype=np.int64), mnorm=np.zeros(n, dtype=np.int64),
                          eb=np.zeros(n), mask=tok_mask, active=np.ones(n, dtype=bool), gamma=gamma,
                          kernel=kernel, region=region, clock=clock)
        res = _run(st, until, _seed(rng), False, 2**62, None, False)
        lost = ~res.alive
        dead_pos = np.stack([res.arrays["x"][lost], res.arrays["y"][lost]], axis=1)
        death = {l: tm for tm, _, l in res.log}
        dead_time = np.array([death[int(l)] for l in np.flatnonzero(lost)])
        a = res.alive
        return (np.stack([res.arrays["x"][a], res.arrays["y"][a]], axis=1), res.arrays["mask"][a],
                dead_pos.reshape(-1, 2), dead_time)

    for k, c in enumerate(cps):
        if k > 0:
            tok, tok_mask, dpos, dtime = advance_tokens(tok, tok_mask, c, clock, next_label)
            next_label += len(tok) + len(dpos)
            pas = np.concatenate([pas, dpos])
            pas_time = np.concatenate([pas_time, dtime])
            pas = _wrap(walk_positions(kernel, pas, c - pas_time, rng), region)
            pas_time = np.full(len(pas), c)
        bit = np.int64(1) << k
        tok_mask = tok_mask | np.where(_in_box(tok, r), bit, 0)
        back_in = _in_box(pas, r)
        counts = rng.poisson(rho, len(box_sites))
        fresh = np.repeat(box_sites, counts, axis=0)
        keep = np.ones(len(fresh), dtype=bool)
        pos = fresh
        for j in range(k - 1, -1, -1):
            pos = _wrap(walk_positions(back, pos, cps[j + 1] - cps[j], rng), region)
            keep &= ~_in_box(pos, r)
        fresh = fresh[keep]
        tok = np.concatenate([tok, pas[back_in], fresh])
        tok_mask = np.concatenate([tok_mask, np.full(int(back_in.sum()) + len(fresh), bit)])
        pas, pas_time = pas[~back_in], pas_time[~back_in]
        clock = c
    tok, tok_mask, _, _ = advance_tokens(tok, tok_mask, float(t), clock, next_label)
    out = np.empty(len(uv), dtype=np.int64)
    bits = 0
    for k in range(len(uv)):
        bits |= 1 << k
        out[k] = np.count_nonzero(tok_mask & bits)
    return out


__all__ = [
    "Snapshot",
    "RebirthState",
    "as_rebirth_state",
    "evolve_rebirth",
    "n_rebirth",
    "label_persistence_violations",
    "checkpoint_counts",
]
