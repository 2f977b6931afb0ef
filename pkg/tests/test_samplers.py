import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

import oracles
from conftest import SIX_K_MAX, SIX_LAMBDA, six_site_table
from spinbath.catalog import LatticeCatalog
from spinbath.forward import LAMBDA_MIN
from spinbath.samplers import (ChainState, FlatTarget, KernelStats, ProposalConfig, TableTarget,
                               TemperatureLadder, birth_probability, pt_sweep, reflect,
                               rjmcmc_step, rwmh_lambda_step, rwmh_site_step, swap_log_ratio,
                               with_loglik)


class Scripted:
    """Stands in for a Generator, replaying fixed draws so acceptance edges are exact."""

    def __init__(self, random=(), integers=(), uniform=()):
        self._random, self._integers, self._uniform = iter(random), iter(integers), iter(uniform)

    def random(self):
        return next(self._random)

    def integers(self, *args):
        return next(self._integers)

    def uniform(self, *args):
        return next(self._uniform)


class LogLambda:
    """log L = log(lambda): a proposal from 0.5 to 0.25 halves the likelihood."""

    def __init__(self, catalog):
        self.catalog = catalog

    def loglik(self, sites, lam):
        return math.log(lam)


def line_catalog(n, spacing=1.5, radius=2.0):
    pos = np.column_stack([np.arange(n) * spacing, np.zeros(n), np.zeros(n)])
    return LatticeCatalog(pos, np.full(n, 30.0), np.full(n, 20.0), radius=radius)


def test_chain_state_rejects_duplicates_and_sorts():
    assert ChainState((3, 1), 0.5).sites == (1, 3)
    with pytest.raises(ValueError):
        ChainState((2, 2), 0.5)


@pytest.mark.parametrize("bad", [dict(r_spin=0), dict(r_lambda=1.0), dict(r_lambda=0.0), dict(k_max=0),
                                 dict(birth_prob=1.0), dict(dimension_prior="poisson")])
def test_proposal_config_validation(bad):
    with pytest.raises(ValueError):
        ProposalConfig(**bad)


def test_ladder():
    assert TemperatureLadder.geometric(4).betas == (1.0, 0.5, 0.25, 0.125)
    for betas in [(1.0,), (0.9, 0.5), (1.0, 0.5, 0.5), (1.0, 0.0)]:
        with pytest.raises(ValueError):
            TemperatureLadder(betas)


def test_reflection_matches_fold_oracle(rng):
    assert reflect(0.995 + 0.008, LAMBDA_MIN, 1.0) == pytest.approx(0.997)
    for _ in range(100):
        lam = rng.uniform(LAMBDA_MIN, 1.0)
        x = lam + rng.uniform(-0.01, 0.01)
        y = reflect(x, LAMBDA_MIN, 1.0)
        assert y == oracles.reflect_once(x, LAMBDA_MIN, 1.0)
        assert LAMBDA_MIN <= y <= 1.0


def test_lambda_step_reflects_at_upper_end(six_sites):
    s = ChainState((), 0.995)
    new = rwmh_lambda_step(s, FlatTarget(six_sites), ProposalConfig(), Scripted(uniform=[0.008]))
    assert new.lam == pytest.approx(0.997) and new.loglik == 0.0


def test_lambda_step_accepts_half_ratio_with_probability_half(six_sites):
    cfg = ProposalConfig(r_lambda=0.3)
    target = LogLambda(six_sites)
    s = with_loglik(ChainState((0,), 0.5), target)
    accepted = rwmh_lambda_step(s, target, cfg, Scripted(random=[0.4999], uniform=[-0.25]))
    assert accepted.lam == pytest.approx(0.25) and accepted.sites == (0,)
    rejected = rwmh_lambda_step(s, target, cfg, Scripted(random=[0.5001], uniform=[-0.25]))
    assert rejected is s


def test_lambda_walk_is_uniform_under_flat_likelihood(six_sites):
    rng = np.random.default_rng(3)
    cfg, target = ProposalConfig(r_lambda=0.2), FlatTarget(six_sites)
    s = with_loglik(ChainState((), 0.9), target)
    draws = []
    for _ in range(40000):
        s = rwmh_lambda_step(s, target, cfg, rng)
        draws.append(s.lam)
    counts, _ = np.histogram(draws, bins=5, range=(0, 1))
    assert np.allclose(counts / len(draws), 0.2, atol=0.03)


def test_site_step_without_free_neighbors_is_a_rejection():
    cat = line_catalog(3, radius=1.0)
    s = with_loglik(ChainState((1,), 0.5), FlatTarget(cat))
    assert rwmh_site_step(s, FlatTarget(cat), ProposalConfig(r_spin=1.0), np.random.default_rng(0)) is s
    assert rwmh_site_step(ChainState((), 0.5), FlatTarget(cat), ProposalConfig(), np.random.default_rng(0)).k == 0


def test_site_step_equal_counts_and_likelihood_always_accepts():
    # ring of four: every site has two neighbours, so n_from = n_to = 2 for a lone spin
    pos = np.array([[0, 0, 0], [1.5, 0, 0], [1.5, 1.5, 0], [0, 1.5, 0]], dtype=float)
    cat = LatticeCatalog(pos, np.full(4, 30.0), np.full(4, 20.0), radius=1.6)
    s = with_loglik(ChainState((0,), 0.5), FlatTarget(cat))
    rng = np.random.default_rng(1)
    for _ in range(50):
        new = rwmh_site_step(s, FlatTarget(cat), ProposalConfig(r_spin=1.6), rng)
        assert new is not s
        s = new


def _path_transition_matrix(weights):
    """Exact site-step kernel for one spin on the path A-B-C, written out by hand."""
    a, b, c = weights
    p = np.zeros((3, 3))
    # from an end: one proposal (the middle), n_from = 1, n_to = 2 after the move
    p[0, 1] = min(1.0, b / a * 1 / 2)
    p[2, 1] = min(1.0, b / c * 1 / 2)
    # from the middle: either end with probability 1/2, n_from = 2, n_to = 1
    p[1, 0] = 0.5 * min(1.0, a / b * 2)
    p[1, 2] = 0.5 * min(1.0, c / b * 2)
    p[np.diag_indices(3)] = 1 - p.sum(axis=1)
    return p


def test_site_step_hastings_on_path_graph():
    weights = np.array([0.2, 0.5, 0.3])
    p = _path_transition_matrix(weights)
    vals, vecs = np.linalg.eig(p.T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    assert np.allclose(pi / pi.sum(), weights, atol=1e-12)

    cat = line_catalog(3)
    target = TableTarget(cat, {(i,): math.log(w) for i, w in enumerate(weights)})
    rng = np.random.default_rng(7)
    s = with_loglik(ChainState((0,), 0.5), target)
    counts = Counter()
    for _ in range(60000):
        s = rwmh_site_step(s, target, ProposalConfig(r_spin=2.0), rng)
        counts[s.sites[0]] += 1
    freq = np.array([counts[i] for i in range(3)]) / 60000
    assert np.allclose(freq, weights, atol=0.015)


def test_site_step_two_spins_on_path_is_uniform_under_flat_likelihood():
    cat = line_catalog(5)
    target = FlatTarget(cat)
    rng = np.random.default_rng(11)
    s = with_loglik(ChainState((0, 1), 0.5), target)
    counts = Counter()
    for _ in range(100000):
        s = rwmh_site_step(s, target, ProposalConfig(r_spin=2.0), rng)
        counts[s.sites] += 1
    freq = np.array(list(counts.values())) / 100000
    assert len(counts) == 10
    assert np.allclose(freq, 0.1, atol=0.01)


def test_birth_probability_boundaries():
    assert birth_probability(0, 5, 0.5) == 1.0
    assert birth_probability(5, 5, 0.5) == 0.0
    assert birth_probability(2, 5, 0.3) == 0.3


def test_rjmcmc_birth_from_one_on_four_sites_is_always_accepted():
    # forward 1/2 * 1/3 against reverse 1/2 * 1/2: ratio 3/2, so no uniform draw is consumed
    cat = line_catalog(4)
    s = with_loglik(ChainState((0,), 0.5), FlatTarget(cat))
    new = rjmcmc_step(s, FlatTarget(cat), ProposalConfig(k_max=4), Scripted(random=[0.1], integers=[2]))
    assert new.sites == (0, 2)


def test_rjmcmc_birth_skips_occupied_sites():
    cat = line_catalog(4)
    s = with_loglik(ChainState((0, 1), 0.5), FlatTarget(cat))
    new = rjmcmc_step(s, FlatTarget(cat), ProposalConfig(k_max=4),
                      Scripted(random=[0.1, 0.0], integers=[0, 1, 3]))
    assert new.sites == (0, 1, 3)


def test_rjmcmc_death_to_empty_on_four_sites_has_alpha_half():
    # gamma ratio 1 / (1/2) = 2, densities (1/1) / (1/4): alpha = 2 * 1/4 = 1/2
    cat = line_catalog(4)
    cfg = ProposalConfig(k_max=4)
    s = with_loglik(ChainState((1,), 0.5), FlatTarget(cat))
    assert rjmcmc_step(s, FlatTarget(cat), cfg, Scripted(random=[0.9, 0.499], integers=[0])).k == 0
    assert rjmcmc_step(s, FlatTarget(cat), cfg, Scripted(random=[0.9, 0.501], integers=[0])) is s


def test_rjmcmc_uniform_k_prior_cancels_densities():
    cat = line_catalog(4)
    cfg = ProposalConfig(k_max=4, dimension_prior="uniform_k")
    s = with_loglik(ChainState((1,), 0.5), FlatTarget(cat))
    # only the gamma ratio 2 remains, so the death needs no uniform draw
    assert rjmcmc_step(s, FlatTarget(cat), cfg, Scripted(random=[0.9], integers=[0])).k == 0


def test_rjmcmc_boundaries_force_direction():
    cat = line_catalog(4)
    cfg = ProposalConfig(k_max=2)
    empty = with_loglik(ChainState((), 0.5), FlatTarget(cat))
    assert rjmcmc_step(empty, FlatTarget(cat), cfg, Scripted(random=[0.999], integers=[3])).sites == (3,)
    full = with_loglik(ChainState((0, 3), 0.5), FlatTarget(cat))
    out = rjmcmc_step(full, FlatTarget(cat), cfg, Scripted(random=[0.0, 0.0], integers=[1]))
    assert out.sites == (0,)


def test_swap_formula_examples():
    a, b = ChainState((0,), 0.5, -10.0), ChainState((1,), 0.5, -8.0)
    assert swap_log_ratio(a, b, 1.0, 0.5, -8.0, -10.0) == pytest.approx(1.0)
    assert math.exp(swap_log_ratio(b, a, 1.0, 0.5, -10.0, -8.0)) == pytest.approx(0.36787944117144233)
    assert swap_log_ratio(a, b, 0.7, 0.7, -8.0, -10.0) == 0.0
    c = ChainState((2,), 0.5, -10.0)
    assert swap_log_ratio(a, c, 1.0, 0.25, -10.0, -10.0) == 0.0


def test_swap_with_impossible_states():
    ok, dead = ChainState((0,), 0.5, -1.0), ChainState((1,), 0.5, -math.inf)
    assert swap_log_ratio(ok, dead, 1.0, 0.5, -math.inf, -1.0) == -math.inf
    assert swap_log_ratio(dead, ok, 1.0, 0.5, -1.0, -math.inf) == -math.inf


def test_pt_swaps_preserve_the_pooled_configurations(rng):
    # isolated sites: the within-strand site steps are all no-ops, so only swaps act
    cat = LatticeCatalog(np.eye(3) * 10, [10.0, 20.0, 30.0], [5.0, 5.0, 5.0], radius=1.0)
    target = TableTarget(cat, {(0,): -1.0, (1,): -3.0, (2,): -2.0})
    ladder = TemperatureLadder.geometric(3)
    states = [with_loglik(ChainState((i,), 0.5), target) for i in range(3)]
    stats = KernelStats()
    for _ in range(200):
        states = pt_sweep(states, ladder, target, ProposalConfig(r_spin=1.0), rng, stats=stats)
        assert sorted(s.sites for s in states) == [(0,), (1,), (2,)]
        assert all(s.loglik == target.loglik(s.sites, s.lam) for s in states)
    assert 0 < stats.rates()["pt_swap"] < 1


def test_pt_needs_matching_ladder(six_sites, rng):
    with pytest.raises(ValueError):
        pt_sweep([ChainState((), 0.5)], TemperatureLadder.geometric(2), FlatTarget(six_sites),
                 ProposalConfig(), rng)


def test_pt_never_swaps_across_dimensions(rng):
    cat = line_catalog(4)
    target = FlatTarget(cat)
    states = [with_loglik(ChainState((0,), 0.5), target), with_loglik(ChainState((1, 3), 0.5), target)]
    for _ in range(50):
        states = pt_sweep(states, TemperatureLadder.geometric(2), target, ProposalConfig(r_spin=2.0), rng)
        assert [s.k for s in states] == [1, 2]


def test_single_tempered_strand_targets_powered_likelihood(six_target):
    table = six_site_table(six_target)
    target = TableTarget(six_target.catalog, table)
    exact = oracles.enumerate_posterior(table, 6, SIX_K_MAX, beta=0.5)
    cfg = ProposalConfig(r_spin=2.2, k_max=SIX_K_MAX)
    rng = np.random.default_rng(2)
    s = with_loglik(ChainState((), SIX_LAMBDA), target)
    counts = Counter()
    n = 120000
    for i in range(n):
        step = rjmcmc_step if i % 2 else rwmh_site_step
        s = step(s, target, cfg, rng, beta=0.5)
        counts[s.sites] += 1
    empirical = {c: v / n for c, v in counts.items()}
    assert oracles.total_variation(empirical, exact) < 0.03


steps = st.lists(st.sampled_from(["lambda", "site", "rj"]), min_size=1, max_size=60)


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(steps, st.integers(0, 2 ** 32 - 1))
def test_kernel_invariants(six_target, sequence, seed):
    # the fixture is read-only here apart from its memo cache, which is safe to share
    cfg = ProposalConfig(r_spin=2.2, r_lambda=0.05, k_max=3)
    rng = np.random.default_rng(seed)
    s = with_loglik(ChainState((1,), 0.3), six_target)
    kernels = {"lambda": rwmh_lambda_step, "site": rwmh_site_step, "rj": rjmcmc_step}
    for name in sequence:
        s = kernels[name](s, six_target, cfg, rng)
        assert len(set(s.sites)) == s.k and 0 <= s.k <= cfg.k_max
        assert all(0 <= i < 6 for i in s.sites)
        assert LAMBDA_MIN <= s.lam <= 1.0
        ref = six_target.loglik_reference(s.sites, s.lam)
        assert s.loglik == pytest.approx(ref, rel=1e-10, abs=1e-10)
