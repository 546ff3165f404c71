import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import chi2_contingency, ks_2samp

from coalsim.lattice_walk import (
    SIMPLE_WALK,
    WalkKernel,
    contained_in_annulus,
    first_meeting_time,
    meeting_times,
    sample_displacement,
    sample_displacements,
    simple_walk_pmf,
    walk_position,
    walk_positions,
)
from coalsim.lookdown_oracle import build_graph

from .conftest import within_se


def _meet_by_oracle(start, horizon, radius=6):
    # difference walk (rate 2, each neighbour at rate 1/2) killed outside the
    # box and absorbed at the origin
    sites = [(x, y) for x in range(-radius, radius + 1) for y in range(-radius, radius + 1)]
    idx = {s: k for k, s in enumerate(sites)}
    q = np.zeros((len(sites), len(sites)))
    for s, k in idx.items():
        if s == (0, 0):
            continue
        q[k, k] = -2.0
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = (s[0] + d[0], s[1] + d[1])
            if nb in idx:
                q[k, idx[nb]] += 0.5
    return expm(q * horizon)[idx[start], idx[(0, 0)]]


def test_kernel_validation():
    with pytest.raises(ValueError):
        WalkKernel(((1, 0, 1.0),))  # non-zero mean
    with pytest.raises(ValueError):
        WalkKernel(((2, 0, 0.25), (-2, 0, 0.25), (0, 1, 0.25), (0, -1, 0.25)))  # not irreducible
    with pytest.raises(ValueError):
        WalkKernel(((1, 0, 0.5), (-1, 0, 0.4)))
    k = WalkKernel.from_json(SIMPLE_WALK.to_json())
    assert k == SIMPLE_WALK and k.is_simple


def test_simple_walk_step_frequencies(rng):
    steps = sample_displacements(SIMPLE_WALK, 100_000, rng)
    for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        hits = int(np.sum((steps[:, 0] == d[0]) & (steps[:, 1] == d[1])))
        assert within_se(hits, len(steps), 0.25)
    assert sample_displacement(SIMPLE_WALK, rng) in {(1, 0), (-1, 0), (0, 1), (0, -1)}


def test_mean_displacement_is_zero(rng):
    kernel = WalkKernel(((2, 1, 0.2), (-2, -1, 0.2), (1, 0, 0.3), (-1, 0, 0.3)))
    steps = sample_displacements(kernel, 1_000_000, rng)
    assert np.all(np.abs(steps.mean(axis=0)) < 0.01)


def test_walk_position_basics(rng):
    assert walk_position(SIMPLE_WALK, (3, -2), 0.0, rng) == (3, -2)
    with pytest.raises(ValueError):
        walk_position(SIMPLE_WALK, (0, 0), -1.0, rng)
    assert walk_positions(SIMPLE_WALK, np.zeros((0, 2)), 1.0, rng).shape == (0, 2)


def test_mean_squared_displacement_equals_time(rng):
    d = 7.5
    pos = walk_positions(SIMPLE_WALK, np.zeros((100_000, 2)), d, rng)
    sq = (pos ** 2).sum(axis=1)
    assert abs(sq.mean() - d) <= 3 * sq.std() / np.sqrt(len(sq))


def test_exact_pmf_matches_samples(rng):
    d = 3.0
    pos = walk_positions(SIMPLE_WALK, np.zeros((200_000, 2)), d, rng)
    for site in ((0, 0), (1, 0), (1, 1), (2, -1)):
        p = float(simple_walk_pmf(np.array(site[0]), np.array(site[1]), d))
        hits = int(np.sum((pos[:, 0] == site[0]) & (pos[:, 1] == site[1])))
        assert within_se(hits, len(pos), p)
    g = np.arange(-40, 41)
    assert abs(simple_walk_pmf(g[:, None], g[None, :], d).sum() - 1) < 1e-12


def test_displacement_tail_decays_exponentially(rng):
    t = 100.0
    pos = walk_positions(SIMPLE_WALK, np.zeros((1_000_000, 2)), t, rng)
    norm = np.max(np.abs(pos), axis=1) / np.sqrt(t)
    us = np.array([1.0, 1.5, 2.0, 2.5])
    tails = np.array([np.mean(norm > u) for u in us])
    assert np.all(np.diff(tails) < 0)
    # fitted c0 is positive and the envelope e^{-c0 u} (with the fitted
    # intercept) dominates every observed tail point
    slope, icpt = np.polyfit(us, np.log(tails), 1)
    c0 = -slope
    assert c0 > 0
    for u in (2.0, 4.0, 8.0):
        p = np.mean(norm > u)
        assert p <= np.exp(icpt - c0 * u) * 1.5 + 3 * np.sqrt(max(p, 1e-6) / len(norm))


def test_translation_invariance(rng):
    n = 50_000
    a = walk_positions(SIMPLE_WALK, np.zeros((n, 2)), 2.0, rng)
    b = walk_positions(SIMPLE_WALK, np.tile([[17, -40]], (n, 1)), 2.0, rng) - [17, -40]
    codes_a = np.clip(a, -4, 4) @ [9, 1]
    codes_b = np.clip(b, -4, 4) @ [9, 1]
    support = np.union1d(codes_a, codes_b)
    table = np.array([[np.sum(codes_a == c) for c in support], [np.sum(codes_b == c) for c in support]])
    table = table[:, table.min(axis=0) >= 5]
    assert chi2_contingency(table)[1] > 0.001


def test_first_meeting_trivial_cases(rng):
    assert first_meeting_time(SIMPLE_WALK, (2, 2), (2, 2), 5.0, rng) == 0.0
    assert first_meeting_time(SIMPLE_WALK, (0, 0), (1, 0), 0.0, rng) is None


def test_meeting_probability_matches_truncated_generator():
    p = _meet_by_oracle((1, 0), 1.0)
    seeds = np.arange(100_000, dtype=np.uint32)
    tm = meeting_times(SIMPLE_WALK, (0, 0), (1, 0), 1.0, seeds)
    assert within_se(int(np.sum(~np.isnan(tm))), len(tm), p)


def test_meeting_time_equals_two_literal_walks(rng):
    # two explicit walk trajectories, scanned for their first coincidence
    n, horizon = 3000, 4.0
    literal = []
    for _ in range(n):
        g = build_graph([0, 1], {0: (0, 0), 1: (1, 0)}, horizon, 0.0, rng=rng)
        times = np.union1d(g.walks[0].times, g.walks[1].times)
        hit = next((s for s in times if g.walks[0].at(s) == g.walks[1].at(s)), np.nan)
        literal.append(hit)
    literal = np.array(literal)
    diff = meeting_times(SIMPLE_WALK, (0, 0), (1, 0), horizon, rng.integers(2**32, size=n))
    assert within_se(int(np.sum(~np.isnan(literal))), n, np.mean(~np.isnan(diff)), k=4)
    assert ks_2samp(literal[~np.isnan(literal)], diff[~np.isnan(diff)]).pvalue > 0.001


def test_annulus_examples():
    assert contained_in_annulus([(0, 0)], 0.5, 1.0, 1e4)
    assert not contained_in_annulus([(3, 3), (3, 3)], 0.5, 1.0, 1e4)
    # t^(alpha/2) = 10 and log t = 9.21, so the admissible distances are [1.09, 92.1]
    assert contained_in_annulus([(0, 0), (10, 0)], 0.5, 1.0, 1e4)
    assert contained_in_annulus([(0, 0), (2, 0), (0, 90)], 0.5, 1.0, 1e4)
    assert not contained_in_annulus([(0, 0), (1, 0)], 0.5, 1.0, 1e4)
    assert not contained_in_annulus([(0, 0), (100, 0)], 0.5, 1.0, 1e4)
    with pytest.raises(ValueError):
        contained_in_annulus([(0, 0)], 0.5, 0.0, 1e4)
