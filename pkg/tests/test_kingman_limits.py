import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from coalsim.domain_core import Individual
from coalsim.experiments import compare_distributions
from coalsim.kingman_limits import (
    MergingState,
    OracleScaleError,
    block_counts,
    discrete_rebirth_counts,
    entrance_ccdf,
    entrance_count,
    entrance_path,
    entrance_pmf,
    entrance_truncation,
    initial_rebirth_state,
    marginal_distribution,
    n_alpha,
    n_mer,
    poisson_domination_rate,
    rebirth_merge,
    sample_merging_counts,
    sample_rebirth_counts,
    simulate_block_count,
    simulate_merging,
    simulate_rebirth,
    simulate_rebirth_discrete,
)

from .conftest import within_se

# grid search output for duration 0.5, frozen after the first computation
RHO_HALF = 6.042296878398386


def _ode_marginal(n0, s):
    # forward equations of the death chain, integrated numerically
    def rhs(_, p):
        out = np.zeros_like(p)
        for k in range(1, n0 + 1):
            out[k - 1] -= k * (k - 1) / 2 * p[k - 1]
            if k < n0:
                out[k - 1] += (k + 1) * k / 2 * p[k]
        return out
    p0 = np.zeros(n0)
    p0[-1] = 1.0
    return solve_ivp(rhs, (0, s), p0, rtol=1e-12, atol=1e-14).y[:, -1]


def _quad_recursion(n, k, r):
    # p_{n,k}(r) by nested numerical integration of the block-count recursion
    if k == n:
        return r ** (n * (n - 1) / 2)
    c = n * (n - 1) / 2
    f = lambda y: y ** (-c - 1) * _quad_recursion(n - 1, k, y * r)
    return c * quad(f, 1.0, 1.0 / r, epsabs=1e-13, epsrel=1e-12)[0]


def test_single_block_path_is_constant(rng):
    path = simulate_block_count(1, 10.0, 1.0, rng)
    assert list(path.counts) == [1] and path.at(5.0) == 1


def test_two_blocks_survive_with_exponential_probability(rng):
    n = 100_000
    hits = int(np.sum(block_counts(2, 1.0, 1.0, n, rng) == 2))
    assert within_se(hits, n, math.exp(-1))


def test_time_to_one_block(rng):
    n0, n = 10, 20_000
    times = []
    for _ in range(n):
        p = simulate_block_count(n0, 1e9, 1.0, rng)
        times.append(p.times[-1])
    times = np.array(times)
    assert abs(times.mean() - 2 * (1 - 1 / n0)) <= 3 * times.std() / math.sqrt(n)


def test_marginal_closed_form():
    assert np.allclose(marginal_distribution(1, 3.0), [1.0])
    p = marginal_distribution(3, math.log(2))
    assert np.allclose(p, [5 / 16, 9 / 16, 1 / 8], atol=1e-12)
    assert abs(marginal_distribution(40, 0.3).sum() - 1) < 1e-12
    with pytest.raises(OracleScaleError):
        marginal_distribution(61, 1.0)


@pytest.mark.parametrize("n0,s", [(5, math.log(4)), (8, 0.2), (12, 1.5)])
def test_marginal_matches_forward_equations(n0, s):
    assert np.max(np.abs(marginal_distribution(n0, s) - _ode_marginal(n0, s))) < 1e-8


def test_marginal_matches_integrated_recursion():
    r = 0.25
    quad_p = np.array([_quad_recursion(5, k, r) for k in range(1, 6)])
    assert np.max(np.abs(marginal_distribution(5, math.log(1 / r)) - quad_p)) < 1e-8


def test_entrance_pmf_is_the_large_start_limit():
    # coming down from infinity to n blocks takes time close to 2/n, so the
    # shifted finite start approaches the entrance law as n grows
    for d in (0.3, 1.0):
        err = [np.max(np.abs(entrance_pmf(d)[:n] - marginal_distribution(n, d - 2 / n)[:n])) for n in (30, 60)]
        assert err[1] < err[0] / 4 and err[1] < 5e-4
        assert abs(entrance_pmf(d, kmax=80).sum() - 1) < 1e-10
    with pytest.raises(ValueError):
        entrance_pmf(0.0)


def test_entrance_count_basic(rng):
    x = entrance_count(0.5, 1.0, 1e-3, rng, size=10_000)
    assert x.min() >= 1
    with pytest.raises(ValueError):
        entrance_count(0.0, 1.0, 1e-3, rng)
    assert isinstance(entrance_count(0.5, rng=rng), int)


def test_entrance_sampler_matches_exact_law(rng):
    x = entrance_count(0.5, 1.0, 1e-4, rng, size=200_000)
    p = entrance_pmf(0.5)
    k = np.arange(1, 16)
    obs = np.array([np.sum(x == v) for v in k])
    for v, o in zip(k, obs):
        if p[v - 1] * len(x) > 20:
            assert within_se(int(o), len(x), p[v - 1], k=4)


def test_entrance_mean_matches_high_truncation(rng):
    # truncation 10^4 is far beyond the tail bound; agreement of means checks
    # the tail-entry approximation used at the default truncation
    hi = entrance_count(1.0, 1.0, 1e-3, rng, size=10_000, truncation=10_000)
    lo = entrance_count(1.0, 1.0, 1e-3, rng, size=10_000)
    se = math.sqrt(hi.var() / len(hi) + lo.var() / len(lo))
    assert abs(hi.mean() - lo.mean()) <= 3 * se
    exact = float(np.sum(np.arange(1, 61) * entrance_pmf(1.0)))
    assert abs(hi.mean() - exact) <= 3 * hi.std() / math.sqrt(len(hi))


@pytest.mark.slow
def test_entrance_truncation_doubling_is_below_twice_epsilon(rng):
    # the sample size keeps the two-sample noise in TV near 8e-4
    eps, n = 1e-3, 2_000_000
    level = entrance_truncation(1.0, 1.0, eps)
    a = entrance_count(1.0, 1.0, eps, rng, size=n, truncation=level)
    b = entrance_count(1.0, 1.0, eps, rng, size=n, truncation=2 * level)
    assert compare_distributions(a, b).total_variation < 2 * eps


def test_entrance_path_is_non_increasing(rng):
    paths = entrance_path([0.1, 0.4, 2.0], 1.0, 1e-3, rng, 5000)
    assert np.all(np.diff(paths, axis=1) <= 0)


@pytest.mark.parametrize("delta", [0.25, 0.5, 1.0])
def test_entrance_tail_decays_faster_than_exponential(delta, rng):
    ccdf = entrance_ccdf(delta, nmax=30)
    n = np.arange(1, 31)
    # P(#K > n) = ccdf(n + 1); its ratio to e^{-n} tends to zero
    tail = np.append(ccdf[1:], 0.0)
    ratio = tail * np.exp(n)
    peak = int(np.argmax(ratio))
    assert np.all(np.diff(ratio[peak:]) <= 1e-15)
    c = ratio.max()
    x = entrance_count(delta, 1.0, 1e-6, rng, size=100_000)
    for m in range(1, 31):
        emp = np.mean(x > m)
        assert emp <= c * math.exp(-m) + 3 * math.sqrt(max(emp, 1 / len(x)) / len(x))


def test_poisson_domination_rate():
    from scipy.stats import poisson
    rho = poisson_domination_rate(0.5)
    assert rho == pytest.approx(RHO_HALF, rel=1e-12)
    n = np.arange(1, 31)
    assert np.all(entrance_ccdf(0.5, nmax=30) <= poisson.sf(n - 2, rho) + 1e-15)
    assert poisson_domination_rate(1.0) <= rho
    # the next smaller grid point fails somewhere
    assert np.any(entrance_ccdf(0.5, nmax=30) > poisson.sf(n - 2, rho / 1.01) + 1e-15)


def test_rebirth_transition_of_worked_example():
    s, t1 = -2.0, -1.5
    st = initial_rebirth_state([1, 2, 3], s, track_members=True)
    st = rebirth_merge(st, Individual(2, s), Individual(3, s), t1)
    expect = {
        frozenset({Individual(1, s)}),
        frozenset({Individual(2, s), Individual(3, s)}),
        frozenset({Individual(3, t1)}),
    }
    assert set(st.partition()) == expect
    assert [b.label for b in st.blocks] == [Individual(1, s), Individual(2, s), Individual(3, t1)]
    plain = rebirth_merge(st, Individual(1, s), Individual(3, t1), -1.0, rebirth=False)
    assert len(plain) == 2


def test_rebirth_window_conserves_block_count(rng):
    for _ in range(50):
        st = simulate_rebirth(-1.0, -0.3, -0.3, 40, 1.0, rng)
        assert len(st) == 40
        assert len({b.label.index for b in st.blocks}) == 40
    st = simulate_rebirth(-1.0, -0.3, 0.0, 40, 1.0, rng)
    assert n_alpha(st, -0.3) == len(st)
    assert n_alpha(st, -1.0) <= n_alpha(st, -0.6) <= n_alpha(st, -0.3)


def test_discrete_rebirth_identity_pathwise(rng):
    grid = [0.3, 0.45, 0.7]
    for _ in range(300):
        counts, st = simulate_rebirth_discrete(grid, 30, 1.0, rng, return_state=True)
        assert list(counts) == [n_alpha(st, math.log(a)) for a in grid]
        assert np.all(np.diff(counts) >= 0)
    counts, st = simulate_rebirth_discrete([0.7], 30, 1.0, rng, window=(math.log(0.3), math.log(0.7)),
                                           return_state=True)
    assert counts[0] == len(st)


def test_lumped_rebirth_sampler_matches_literal(rng):
    grid = [0.4, 0.55, 0.7]
    n = 20_000
    literal = []
    for _ in range(n):
        st = simulate_rebirth(math.log(0.4), math.log(0.7), 0.0, 24, 1.0, rng)
        literal.append([n_alpha(st, math.log(a)) for a in grid])
    literal = np.array(literal)
    lumped = sample_rebirth_counts(grid, 24, 1.0, rng, n)
    for j in range(len(grid)):
        assert compare_distributions(literal[:, j], lumped[:, j]).chi_square_p > 0.001
    d_lit = literal[:, -1] - literal[:, 0]
    d_lum = lumped[:, -1] - lumped[:, 0]
    assert compare_distributions(d_lit, d_lum).chi_square_p > 0.001


def test_merging_single_copy_is_a_plain_coalescent(rng):
    n = 5000
    lit = [len(simulate_merging([0.5], 1.7, 12, rng)) for _ in range(n)]
    ref = block_counts(12, 1.2, 1.0, n, rng)
    assert compare_distributions(lit, ref).chi_square_p > 0.001


def test_merging_with_equal_times_is_one_coalescent(rng):
    n = 5000
    lit = [len(simulate_merging([0.5, 0.5, 0.5], 1.0, 5, rng)) for _ in range(n)]
    ref = block_counts(15, 0.5, 1.0, n, rng)
    assert compare_distributions(lit, ref).chi_square_p > 0.001


def test_lumped_merging_sampler_matches_literal(rng):
    tau, ev, start = [0.3, 0.8, 1.1], 1.6, 0.0
    n = 6000
    lit = []
    for _ in range(n):
        st = simulate_merging(tau, ev, 10, rng, start_log_time=start)
        lit.append([n_mer(st, i) for i in (1, 2, 3)])
    lit = np.array(lit)
    lum = sample_merging_counts(tau, ev, rng, n, truncation_per_copy=10, start_log_time=start)
    for j in range(3):
        assert compare_distributions(lit[:, j], lum[:, j]).chi_square_p > 0.001


def test_merging_entrance_start_matches_large_truncation(rng):
    tau, ev = [0.5, 0.98], 1.2
    a = sample_merging_counts(tau, ev, rng, 50_000, start_log_time=0.0)
    b = sample_merging_counts(tau, ev, rng, 50_000, truncation_per_copy=400, start_log_time=0.0)
    for j in range(2):
        assert compare_distributions(a[:, j], b[:, j]).total_variation < 0.02


def test_n_mer_examples(rng):
    st = simulate_merging([0.2, 0.6], 1.5, 8, rng)
    assert n_mer(st, 2) == len(st)
    assert n_mer(st, 1) <= n_mer(st, 2)
    fixture = MergingState(np.array([0, 1, 1]), np.array([0, 0, 3]), 1.0, (0.2, 0.6))
    assert n_mer(fixture, 1) == 1 and n_mer(fixture, 2) == 3
    with pytest.raises(ValueError):
        n_mer(fixture, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 4.0))
def test_marginal_is_a_probability_vector(n0, s):
    p = marginal_distribution(n0, s)
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 3.0), min_size=1, max_size=4), st.integers(0, 2**31))
def test_merging_counts_non_decreasing_in_copy(tau, seed):
    tau = sorted(tau)
    out = sample_merging_counts(tau, tau[-1] + 0.5, np.random.default_rng(seed), 50, truncation_per_copy=6,
                                start_log_time=0.0)
    assert np.all(np.diff(out, axis=1) >= 0) and np.all(out >= 1)
