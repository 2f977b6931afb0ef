"""Single-step MCMC kernels over (occupied lattice sites, lambda).

Every kernel takes a ``ChainState`` and returns a ``ChainState``; a rejected
proposal returns the very same object, so ``new is old`` means "rejected".
Likelihoods are handled in log space throughout.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from .catalog import LatticeCatalog
from .forward import (DEFAULT_ENVELOPE_SCALE_MS, LAMBDA_MIN, ExperimentSpec, Mode,
                      modulation_table, signal_from_product)
from .likelihood import LikelihoodConfig, ObservedSignal, log_likelihood, normalize_signal, \
    w2_squared_discrete


@dataclass(frozen=True)
class ChainState:
    sites: tuple[int, ...]
    lam: float
    loglik: float | None = None

    def __post_init__(self) -> None:
        sites = tuple(sorted(int(s) for s in self.sites))
        if len(set(sites)) != len(sites):
            raise ValueError(f"duplicate site in configuration {sites}")
        object.__setattr__(self, "sites", sites)

    @property
    def k(self) -> int:
        return len(self.sites)


# "subsets": every configuration equally likely a priori (so k ~ C(n, k)).
# "uniform_k": each k equally likely, configurations uniform within k.
DIMENSION_PRIORS = ("subsets", "uniform_k")


@dataclass(frozen=True)
class ProposalConfig:
    r_spin: float = 5.0
    r_lambda: float = 0.01
    k_max: int = 50
    birth_prob: float = 0.5
    dimension_prior: str = "subsets"

    def __post_init__(self) -> None:
        if self.dimension_prior not in DIMENSION_PRIORS:
            raise ValueError(f"dimension_prior must be one of {DIMENSION_PRIORS}")
        if not self.r_spin > 0:
            raise ValueError("r_spin must be positive")
        if not 0 < self.r_lambda < 1:
            raise ValueError("r_lambda must lie in (0, 1)")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not 0 < self.birth_prob < 1:
            raise ValueError("birth_prob must lie in (0, 1)")


@dataclass(frozen=True)
class TemperatureLadder:
    betas: tuple[float, ...]

    def __post_init__(self) -> None:
        betas = tuple(float(b) for b in self.betas)
        if len(betas) < 2:
            raise ValueError("a temperature ladder needs at least two strands")
        if betas[0] != 1.0:
            raise ValueError("the first inverse temperature must be exactly 1")
        if any(b <= 0 for b in betas) or any(a <= b for a, b in zip(betas, betas[1:])):
            raise ValueError("inverse temperatures must be positive and strictly decreasing")
        object.__setattr__(self, "betas", betas)

    @property
    def n_strands(self) -> int:
        return len(self.betas)

    @classmethod
    def geometric(cls, n_strands: int = 10, ratio: float = 0.5) -> "TemperatureLadder":
        return cls(tuple(ratio ** j for j in range(n_strands)))


class LogTarget(Protocol):
    catalog: LatticeCatalog

    def loglik(self, sites: Sequence[int], lam: float) -> float: ...


class Target:
    """Log-likelihood of a site configuration and lambda against observed data.

    Per-site modulation over the tau grid is tabulated once, so a
    configuration's signal is a row product followed by the envelope map.
    """

    def __init__(self, catalog: LatticeCatalog, spec: ExperimentSpec, data: ObservedSignal,
                 likelihood: LikelihoodConfig = LikelihoodConfig(), forward_mode: Mode = "verbatim",
                 envelope_scale_ms: float = DEFAULT_ENVELOPE_SCALE_MS, cache_size: int = 4096):
        if data.tau.size != spec.n_tau or not np.allclose(data.tau, spec.tau_grid, rtol=1e-12, atol=0):
            raise ValueError("observed tau grid does not match the experiment spec")
        self.catalog = catalog
        self.spec = spec
        self.data = data
        self.likelihood = likelihood
        self.forward_mode = forward_mode
        self.envelope_scale_ms = envelope_scale_ms
        self.table = modulation_table(catalog.a_par, catalog.a_perp, spec)
        self._tau = spec.tau_grid
        self._d = data.values
        self._mixed = likelihood.mode == "wasserstein_mixed" and likelihood.zeta > 0
        self._p_data = normalize_signal(data.values) if self._mixed else None
        self._cache: dict[tuple, float] = {}
        self._cache_size = cache_size
        self.n_evals = 0

    def signal(self, sites: Sequence[int], lam: float) -> np.ndarray:
        if len(sites):
            prod = self.table[list(sites)].prod(axis=0)
        else:
            prod = np.ones(self._tau.size)
        return signal_from_product(prod, lam, self._tau, self.forward_mode, self.envelope_scale_ms)

    def loglik(self, sites: Sequence[int], lam: float) -> float:
        key = (tuple(sites), lam)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        self.n_evals += 1
        try:
            f = self.signal(sites, lam)
        except ArithmeticError:
            value = -math.inf
        else:
            r = self._d - f
            gauss = -float(r @ r) / (2.0 * self.likelihood.sigma2)
            if self._mixed:
                w2 = w2_squared_discrete(self._tau, self._p_data, normalize_signal(f))
                value = (1.0 - self.likelihood.zeta) * gauss - self.likelihood.zeta * w2
            else:
                value = gauss
        if len(self._cache) >= self._cache_size:
            self._cache.clear()
        self._cache[key] = value
        return value

    def loglik_reference(self, sites: Sequence[int], lam: float) -> float:
        """Uncached evaluation through the public likelihood function."""
        try:
            f = self.signal(sites, lam)
        except ArithmeticError:
            return -math.inf
        return log_likelihood(self.data, f, self.likelihood)


class FlatTarget:
    """Constant likelihood: the chain then samples the prior implied by the kernels."""

    def __init__(self, catalog: LatticeCatalog):
        self.catalog = catalog

    def loglik(self, sites: Sequence[int], lam: float) -> float:
        return 0.0


class TableTarget:
    """Likelihood given directly as a lookup over configurations (lambda ignored)."""

    def __init__(self, catalog: LatticeCatalog, table: dict[tuple[int, ...], float]):
        self.catalog = catalog
        self.table = {tuple(sorted(k)): float(v) for k, v in table.items()}

    def loglik(self, sites: Sequence[int], lam: float) -> float:
        return self.table[tuple(sites)]


def with_loglik(state: ChainState, target: LogTarget) -> ChainState:
    if state.loglik is not None:
        return state
    return replace(state, loglik=target.loglik(state.sites, state.lam))


def _accept(log_ratio: float, rng: np.random.Generator) -> bool:
    if math.isnan(log_ratio):
        # both current and proposed at zero likelihood
        return True
    if log_ratio >= 0:
        return True
    # compared on the probability scale: rng.random() may return exactly 0
    return rng.random() < math.exp(log_ratio)


def _delta(new: float, old: float, beta: float) -> float:
    if old == -math.inf:
        return math.inf if new > -math.inf else math.nan
    return beta * (new - old)


def reflect(x: float, lo: float, hi: float) -> float:
    """Fold x back into [lo, hi] by mirror reflection at the ends."""
    while x < lo or x > hi:
        x = 2 * hi - x if x > hi else 2 * lo - x
    return x


def rwmh_lambda_step(state: ChainState, target: LogTarget, cfg: ProposalConfig,
                     rng: np.random.Generator, beta: float = 1.0) -> ChainState:
    """Uniform random walk on lambda with reflection at [LAMBDA_MIN, 1]; sites fixed."""
    state = with_loglik(state, target)
    lam_new = reflect(state.lam + rng.uniform(-cfg.r_lambda, cfg.r_lambda), LAMBDA_MIN, 1.0)
    ll_new = target.loglik(state.sites, lam_new)
    if _accept(_delta(ll_new, state.loglik, beta), rng):
        return ChainState(state.sites, lam_new, ll_new)
    return state


def _free_neighbors(catalog: LatticeCatalog, site: int, occupied: set[int]) -> list[int]:
    return [j for j in catalog.neighbor_index[site].tolist() if j not in occupied]


def rwmh_site_step(state: ChainState, target: LogTarget, cfg: ProposalConfig,
                   rng: np.random.Generator, beta: float = 1.0) -> ChainState:
    """Move one occupied site to an unoccupied neighbor within the catalog's radius.

    The Hastings factor is n_from / n_to, the unoccupied-neighbor counts of the
    source before the move and of the destination after it.
    """
    if state.k == 0:
        return state
    state = with_loglik(state, target)
    catalog = target.catalog
    occupied = set(state.sites)
    src = state.sites[int(rng.integers(state.k))]
    free_src = _free_neighbors(catalog, src, occupied)
    if not free_src:
        return state
    dst = free_src[int(rng.integers(len(free_src)))]
    occupied.discard(src)
    occupied.add(dst)
    n_to = len(_free_neighbors(catalog, dst, occupied))
    sites_new = tuple(sorted(occupied))
    ll_new = target.loglik(sites_new, state.lam)
    log_ratio = _delta(ll_new, state.loglik, beta) + math.log(len(free_src)) - math.log(n_to)
    if _accept(log_ratio, rng):
        return ChainState(sites_new, state.lam, ll_new)
    return state


def birth_probability(k: int, k_max: int, birth_prob: float) -> float:
    """gamma(k, k+1): forced birth at k = 0, forced death at k = k_max."""
    if k <= 0:
        return 1.0
    if k >= k_max:
        return 0.0
    return birth_prob


def rjmcmc_step(state: ChainState, target: LogTarget, cfg: ProposalConfig,
                rng: np.random.Generator, beta: float = 1.0) -> ChainState:
    """Birth (add a uniformly chosen free site) or death (drop a uniformly chosen occupant).

    The log ratio carries the likelihood, the gamma ratio, the within-move
    proposal densities and, for ``dimension_prior="uniform_k"``, the prior
    ratio C(n, k) / C(n, k*), which cancels the proposal densities exactly.
    """
    state = with_loglik(state, target)
    n = target.catalog.n_sites
    k_max = min(cfg.k_max, n)
    k = state.k
    p_up = birth_probability(k, k_max, cfg.birth_prob)
    if rng.random() < p_up:
        occupied = set(state.sites)
        while True:
            new = int(rng.integers(n))
            if new not in occupied:
                break
        sites_new = tuple(sorted(occupied | {new}))
        p_down_rev = 1.0 - birth_probability(k + 1, k_max, cfg.birth_prob)
        log_q = math.log(p_down_rev / p_up) + math.log(n - k) - math.log(k + 1)
        if cfg.dimension_prior == "uniform_k":
            log_q += math.log(k + 1) - math.log(n - k)
    else:
        drop = state.sites[int(rng.integers(k))]
        sites_new = tuple(s for s in state.sites if s != drop)
        p_up_rev = birth_probability(k - 1, k_max, cfg.birth_prob)
        log_q = math.log(p_up_rev / (1.0 - p_up)) + math.log(k) - math.log(n - k + 1)
        if cfg.dimension_prior == "uniform_k":
            log_q += math.log(n - k + 1) - math.log(k)
    ll_new = target.loglik(sites_new, state.lam)
    if _accept(_delta(ll_new, state.loglik, beta) + log_q, rng):
        return ChainState(sites_new, state.lam, ll_new)
    return state


def swap_log_ratio(a: ChainState, b: ChainState, beta_a: float, beta_b: float,
                   ll_b_at_a: float, ll_a_at_b: float) -> float:
    """Log acceptance for exchanging site configurations between strands a and b.

    ``ll_b_at_a`` is the log-likelihood of b's sites with a's lambda, and
    vice versa; with equal lambdas this is (beta_a - beta_b)(l_b - l_a).
    """
    if -math.inf in (ll_b_at_a, ll_a_at_b):
        return -math.inf
    if -math.inf in (a.loglik, b.loglik):
        return math.inf
    return math.fsum((beta_a * ll_b_at_a, -beta_a * a.loglik, beta_b * ll_a_at_b, -beta_b * b.loglik))


@dataclass
class KernelStats:
    proposed: Counter = field(default_factory=Counter)
    accepted: Counter = field(default_factory=Counter)

    def record(self, kernel: str, accepted: bool) -> None:
        self.proposed[kernel] += 1
        self.accepted[kernel] += int(accepted)

    def rates(self) -> dict[str, float]:
        return {k: self.accepted[k] / n for k, n in sorted(self.proposed.items()) if n}


def pt_sweep(states: list[ChainState], ladder: TemperatureLadder, target: LogTarget,
             cfg: ProposalConfig, rng: np.random.Generator,
             strand_rngs: Sequence[np.random.Generator] | None = None,
             stats: KernelStats | None = None) -> list[ChainState]:
    """One tempered site step per strand, then one swap attempt between a random pair.

    Strand j targets L^beta_j.  Swaps exchange site configurations only; each
    strand keeps its own lambda.
    """
    J = ladder.n_strands
    if len(states) != J:
        raise ValueError(f"{len(states)} states for a ladder of {J} strands")
    rngs = strand_rngs if strand_rngs is not None else [rng] * J
    out = []
    for j, (s, beta) in enumerate(zip(states, ladder.betas)):
        new = rwmh_site_step(s, target, cfg, rngs[j], beta=beta)
        if stats is not None and s.k:
            stats.record("pt_site" if j == 0 else "pt_site_hot", new is not s)
        out.append(with_loglik(new, target))
    a = int(rng.integers(J))
    b = int(rng.integers(J - 1))
    b += b >= a
    sa, sb = out[a], out[b]
    if sa.k != sb.k:
        if stats is not None:
            stats.record("pt_swap", False)
        return out
    ll_b_at_a = sb.loglik if sb.lam == sa.lam else target.loglik(sb.sites, sa.lam)
    ll_a_at_b = sa.loglik if sa.lam == sb.lam else target.loglik(sa.sites, sb.lam)
    log_alpha = swap_log_ratio(sa, sb, ladder.betas[a], ladder.betas[b], ll_b_at_a, ll_a_at_b)
    swapped = _accept(log_alpha, rng)
    if swapped:
        out[a] = ChainState(sb.sites, sa.lam, ll_b_at_a)
        out[b] = ChainState(sa.sites, sb.lam, ll_a_at_b)
    if stats is not None:
        stats.record("pt_swap", swapped)
    return out
