import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from coalsim.experiments import (
    CSV_COLUMNS,
    ConfigError,
    ScenarioConfig,
    collect,
    compare_distributions,
    exchangeability_sites,
    mix64,
    records_to_csv,
    run_full,
    sparse_recursion_table,
    summarize,
    tiny_torus_merge_probability,
    validate,
)
from coalsim.kingman_limits import block_counts, marginal_distribution


def test_mix64_reference_output():
    # first output of the reference SplitMix64 generator seeded with 0
    assert mix64(0, 0) == 0xE220A8397B1DCDAF
    assert mix64(0, 1) == 0x6E789E6AA1B965F4
    assert len({mix64(7, k) for k in range(1000)}) == 1000


def test_compare_distributions_edges(rng):
    a = rng.integers(0, 5, 500)
    assert compare_distributions(a, a).total_variation == 0.0
    assert compare_distributions([1] * 50, [2] * 50).total_variation == 1.0
    one = compare_distributions([3] * 20, [3] * 30)
    assert one.single_cell and one.chi_square_p == 1.0
    with pytest.raises(ValueError):
        compare_distributions([], [1])


def test_compare_distributions_accepts_exact_sampler(rng):
    n, s = 5, math.log(4.0)
    pmf = marginal_distribution(n, s)
    exact = rng.choice(np.arange(1, n + 1), size=20000, p=pmf / pmf.sum())
    sim = block_counts(n, s, 1.0, 20000, rng)
    assert compare_distributions(sim, exact).chi_square_p > 0.001


def test_sparse_recursion_examples():
    assert sparse_recursion_table(1, 0.3).tolist() == [1.0]
    for n in range(1, 7):
        tab = sparse_recursion_table(n, 1.0)
        assert np.allclose(tab, np.eye(n)[n - 1])
    assert np.allclose(sparse_recursion_table(2, 0.5), [0.5, 0.5])
    with pytest.raises(ValueError):
        sparse_recursion_table(7, 0.5)
    with pytest.raises(ValueError):
        sparse_recursion_table(3, 0.0)


def test_sparse_recursion_three_blocks_by_quadrature():
    # P{3 -> 1} with pair rates 3 then 1, in log time s = log(1/r)
    r = 0.4
    s = math.log(1 / r)
    p1 = quad(lambda x: 3 * math.exp(-3 * x) * (1 - math.exp(-(s - x))), 0, s)[0]
    p3 = math.exp(-3 * s)
    assert np.allclose(sparse_recursion_table(3, r), [p1, 1 - p1 - p3, p3], atol=1e-12)


@pytest.mark.parametrize("data, needle", [
    ({"scenario": "theorem1", "alpha": 0.5, "beta_grid": [0.4, 0.8], "rho": 1.0}, "beta_grid must lie strictly above"),
    ({"scenario": "theorem1", "alpha": 0.5, "beta_grid": [0.8, 0.6], "rho": 1.0}, "increasing"),
    ({"scenario": "theorem1", "alpha": 0.3, "beta_grid": [0.6], "rho": 1.0, "t": 1e4, "buffer": 3.0,
      "replicates": 0}, "replicates"),
    ({"scenario": "theorem2", "alpha": 0.3, "beta_grid": [0.6], "rho": 1.0}, "thinned"),
    ({"scenario": "theorem4", "alpha_grid": [0.4]}, "alpha_grid"),
    ({"scenario": "theorem5", "alpha": 0.3, "rho": 1.0, "u_vector": [0.2, 0.8]}, "alpha < u_1"),
    ({"scenario": "theorem5", "alpha": 0.3, "rho": 1.0, "u_vector": [0.8, 0.5]}, "strictly increasing"),
    ({"scenario": "moment_bound", "alpha": 0.4, "rho": 1.0, "beta_grid": [0.5, 0.7]}, "3 alpha / 2"),
    ({"scenario": "sparse_recursion", "n": 9, "alpha": 0.2, "beta": 0.4}, "1 <= n <= 6"),
    ({"scenario": "erdos_taylor", "alpha": 0.5}, "beta"),
    ({"scenario": "nonsense"}, "scenario must be one of"),
])
def test_validation_names_the_constraint(data, needle):
    with pytest.raises(ConfigError, match=needle):
        validate(ScenarioConfig.from_dict(data))


def test_unknown_config_key_is_rejected():
    with pytest.raises((TypeError, ConfigError)):
        ScenarioConfig.from_dict({"scenario": "theorem1", "colour": 3})


def test_config_roundtrip():
    cfg = ScenarioConfig.from_dict({"scenario": "theorem5", "alpha": 0.3, "rho": 1.0, "u_vector": [0.5, 0.8]})
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def _small_t1(seed=0):
    return ScenarioConfig(scenario="theorem1", t=200.0, alpha=0.3, beta_grid=(0.6, 1.0), rho=1.0, replicates=6,
                          master_seed=seed, gate_samples=2000)


def test_theorem1_records_and_determinism():
    run = run_full(_small_t1(), threads=1)
    # count and count_limit for each beta and replicate
    assert len(run.records) == 6 * 2 * 2
    again = run_full(_small_t1(), threads=1)
    assert records_to_csv(run.records) == records_to_csv(again.records)
    assert records_to_csv(run_full(_small_t1(), threads=2).records) == records_to_csv(run.records)
    assert records_to_csv(run_full(_small_t1(seed=1), threads=1).records) != records_to_csv(run.records)
    c = collect(run.records, "count", beta=0.6)
    assert len(c) == 6 and np.all(c >= collect(run.records, "count", beta=1.0))
    assert run.meta["monotone_fraction"] == 1.0


def test_summary_keys_and_csv_header():
    run = run_full(_small_t1(), threads=1)
    summ = summarize(run)
    assert {"count[beta=0.6]", "count_limit[beta=1]", "_meta"} <= set(summ)
    assert summ["count[beta=0.6]"]["tv_vs_limit"] is not None
    assert summ["count_limit[beta=0.6]"]["tv_vs_limit"] is None
    json.dumps(summ)
    assert records_to_csv(run.records).splitlines()[0] == ",".join(CSV_COLUMNS)


def test_erdos_taylor_target_caps_at_one():
    cfg = ScenarioConfig(scenario="erdos_taylor", t=100.0, alpha=0.5, beta=0.5, replicates=3)
    run = run_full(cfg, threads=1)
    assert run.meta["limit_target"] == 1.0
    assert set(collect(run.records, "no_meeting")) <= {0.0, 1.0}


def test_sparse_recursion_scenario_agrees_with_marginal():
    cfg = ScenarioConfig(scenario="sparse_recursion", n=5, alpha=0.25, beta=1.0)
    run = run_full(cfg)
    assert run.meta["max_abs_difference"] < 1e-12
    assert len(run.records) == 10


def test_exchangeability_sites_are_separated():
    sites = exchangeability_sites(1e4, 0.5)
    assert sites == [(0, 0), (10, 0), (0, 20)]


def test_tiny_torus_value():
    assert tiny_torus_merge_probability(1.0, 1.0, True) == pytest.approx(0.48596, abs=5e-6)
    assert tiny_torus_merge_probability(1.0, 0.0, False) == 0.0


def test_exchangeability_under_site_permutation():
    cfg = ScenarioConfig(scenario="exchangeability", t=100.0, alpha=0.5, replicates=20000, master_seed=3)
    run = run_full(cfg, threads=1)
    # the block count cannot see which particle started where
    cmp = compare_distributions(collect(run.records, "count"), collect(run.records, "count_permuted"))
    assert cmp.total_variation < 0.03
    assert cmp.chi_square_p > 0.001
