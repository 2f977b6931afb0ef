"""Hybrid scheduler: cycles of lambda random walk, birth/death moves and tempered site moves.

Each ensemble is an independent chain with its own seed stream.  The cold
(beta = 1) state is recorded after every kernel application, so one cycle
contributes ``n_rwmh + n_rjmcmc + n_pt`` samples; step 0 is the initial state.

During the tempered phase k is fixed.  Hot strands are kept per k: the first
time the cold chain enters the tempered phase with k spins, J - 1 copies of
it are created; later visits at the same k resume those strands.  Each hot
strand carries its own lambda and refreshes it with one tempered lambda step
at the start of every tempered phase (when lambda is being sampled at all).
"""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .samplers import (ChainState, KernelStats, LogTarget, ProposalConfig, TemperatureLadder,
                       pt_sweep, rjmcmc_step, rwmh_lambda_step, rwmh_site_step, with_loglik)

log = logging.getLogger(__name__)

KERNELS = ("rwmh", "rjmcmc", "pt")


@dataclass(frozen=True)
class ScheduleConfig:
    n_total: int = 143
    n_rwmh: int = 25
    n_rjmcmc: int = 50
    n_pt: int = 100
    n_ensembles: int = 5
    burn_in: int = 10000
    order: tuple[str, ...] = KERNELS
    n_strands: int = 10
    beta_ratio: float = 0.5
    lambda_init: float | None = None
    k_init_max: int = 10
    heartbeat_every: int = 0

    def __post_init__(self) -> None:
        for name in ("n_total", "n_rwmh", "n_rjmcmc", "n_pt", "n_ensembles", "burn_in",
                     "k_init_max", "heartbeat_every"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n_ensembles < 1:
            raise ValueError("n_ensembles must be at least 1")
        object.__setattr__(self, "order", tuple(self.order))
        if sorted(self.order) != sorted(KERNELS):
            raise ValueError(f"order must be a permutation of {KERNELS}")
        if self.n_pt > 0 and self.n_strands < 2:
            raise ValueError("tempering needs at least two strands")
        if self.burn_in >= self.steps_per_ensemble:
            raise ValueError(f"burn_in ({self.burn_in}) must be smaller than the "
                             f"{self.steps_per_ensemble} recorded samples per ensemble")

    @property
    def steps_per_cycle(self) -> int:
        return self.n_rwmh + self.n_rjmcmc + self.n_pt

    @property
    def steps_per_ensemble(self) -> int:
        return 1 + self.n_total * self.steps_per_cycle

    def ladder(self) -> TemperatureLadder:
        return TemperatureLadder.geometric(self.n_strands, self.beta_ratio)


def cycles_for_steps(n_steps: int, schedule: ScheduleConfig) -> int:
    """Smallest cycle count recording at least ``n_steps`` kernel applications."""
    return math.ceil(n_steps / max(schedule.steps_per_cycle, 1))


class Sample(NamedTuple):
    ensemble: int
    step: int
    k: int
    lam: float
    sites: tuple[int, ...]
    loglik: float

    def to_record(self) -> dict:
        return {"ensemble": self.ensemble, "step": self.step, "k": self.k, "lambda": self.lam,
                "site_ids": list(self.sites), "loglik": self.loglik}

    @classmethod
    def from_record(cls, rec: dict) -> "Sample":
        return cls(int(rec["ensemble"]), int(rec["step"]), int(rec["k"]), float(rec["lambda"]),
                   tuple(int(s) for s in rec["site_ids"]), float(rec["loglik"]))


@dataclass
class PosteriorEnsemble:
    """All recorded samples; ``burn_in`` leading steps per ensemble are excluded by ``kept()``."""

    samples: list[Sample]
    burn_in: int = 0
    stats: dict[int, dict[str, float]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def ensembles(self) -> list[int]:
        return sorted({s.ensemble for s in self.samples})

    def kept(self) -> list[Sample]:
        return [s for s in self.samples if s.step >= self.burn_in]

    def by_ensemble(self, ensemble: int, kept: bool = False) -> list[Sample]:
        pool = self.kept() if kept else self.samples
        return [s for s in pool if s.ensemble == ensemble]

    def without(self, ensemble: int) -> "PosteriorEnsemble":
        return PosteriorEnsemble([s for s in self.samples if s.ensemble != ensemble], self.burn_in)

    def k_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(s.k for s in self.kept()).items()))

    def config_frequencies(self) -> dict[tuple[int, ...], float]:
        kept = self.kept()
        counts = Counter(s.sites for s in kept)
        return {c: n / len(kept) for c, n in counts.items()}

    def write_jsonl(self, path: str | Path) -> None:
        write_samples(path, self.samples, mode="w")

    @classmethod
    def read_jsonl(cls, path: str | Path, burn_in: int = 0) -> "PosteriorEnsemble":
        with Path(path).open() as fh:
            samples = [Sample.from_record(json.loads(line)) for line in fh if line.strip()]
        return cls(samples, burn_in)


def write_samples(path: str | Path, samples: Iterable[Sample], mode: str = "a") -> None:
    with Path(path).open(mode) as fh:
        for s in samples:
            fh.write(json.dumps(s.to_record()) + "\n")


def initial_state(target: LogTarget, proposal: ProposalConfig, schedule: ScheduleConfig,
                  rng: np.random.Generator) -> ChainState:
    n = target.catalog.n_sites
    k_hi = min(schedule.k_init_max, proposal.k_max, n)
    k = int(rng.integers(k_hi + 1))
    sites = tuple(int(s) for s in rng.choice(n, size=k, replace=False)) if k else ()
    lam = schedule.lambda_init if schedule.lambda_init is not None else float(rng.uniform(0.5, 1.0))
    return with_loglik(ChainState(sites, lam), target)


def run_ensemble(target: LogTarget, proposal: ProposalConfig, schedule: ScheduleConfig,
                 seed: np.random.SeedSequence, ensemble: int = 0,
                 sink: str | Path | None = None) -> tuple[list[Sample], KernelStats]:
    """Run one ensemble; optionally append its records to ``sink`` once per cycle."""
    rng = np.random.default_rng(seed)
    ladder = schedule.ladder() if schedule.n_pt else None
    strand_rngs = ([np.random.default_rng(s) for s in seed.spawn(ladder.n_strands)]
                   if ladder else None)
    stats = KernelStats()
    hot: dict[int, list[ChainState]] = {}

    state = initial_state(target, proposal, schedule, rng)
    samples = [Sample(ensemble, 0, state.k, state.lam, state.sites, state.loglik)]
    if sink is not None:
        write_samples(sink, samples, mode="w")
    best = state.loglik

    def record(s: ChainState) -> None:
        samples.append(Sample(ensemble, len(samples), s.k, s.lam, s.sites, s.loglik))

    for cycle in range(schedule.n_total):
        flushed = len(samples)
        for phase in schedule.order:
            if phase == "rwmh":
                for _ in range(schedule.n_rwmh):
                    new = rwmh_lambda_step(state, target, proposal, rng)
                    stats.record("rwmh", new is not state)
                    state = new
                    record(state)
            elif phase == "rjmcmc":
                for _ in range(schedule.n_rjmcmc):
                    new = rjmcmc_step(state, target, proposal, rng)
                    stats.record("rjmcmc", new is not state)
                    state = new
                    record(state)
            elif schedule.n_pt:
                strands = hot.get(state.k)
                if strands is None:
                    strands = [state] * (ladder.n_strands - 1)
                elif schedule.n_rwmh:
                    strands = [rwmh_lambda_step(s, target, proposal, strand_rngs[j + 1], beta=b)
                               for j, (s, b) in enumerate(zip(strands, ladder.betas[1:]))]
                ladder_states = [state] + strands
                for _ in range(schedule.n_pt):
                    ladder_states = pt_sweep(ladder_states, ladder, target, proposal, rng,
                                             strand_rngs, stats)
                    record(ladder_states[0])
                state = ladder_states[0]
                hot[state.k] = ladder_states[1:]
        best = max(best, max(s.loglik for s in samples[flushed - 1:]))
        if sink is not None:
            write_samples(sink, samples[flushed:])
        if schedule.heartbeat_every and (cycle + 1) % schedule.heartbeat_every == 0:
            rates = " ".join(f"{k}={v:.3f}" for k, v in stats.rates().items())
            log.info("ensemble %d step %d k=%d best_loglik=%.6g acceptance %s",
                     ensemble, len(samples) - 1, state.k, best, rates)
    return samples, stats


def _run_one(args):
    target, proposal, schedule, seed, ensemble, sink = args
    samples, stats = run_ensemble(target, proposal, schedule, seed, ensemble, sink)
    return samples, stats.rates()


def ensemble_seeds(seed: int, n_ensembles: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_ensembles)


def run(target: LogTarget, proposal: ProposalConfig, schedule: ScheduleConfig, seed: int,
        workers: int = 1, trace_dir: str | Path | None = None) -> PosteriorEnsemble:
    """Run all ensembles; results do not depend on ``workers``."""
    if proposal.k_max > target.catalog.n_sites:
        raise ValueError(f"k_max={proposal.k_max} exceeds the {target.catalog.n_sites} catalog sites")
    if not math.isclose(getattr(target.catalog, "radius", proposal.r_spin), proposal.r_spin):
        raise ValueError("catalog neighbor radius differs from proposal r_spin")
    seeds = ensemble_seeds(seed, schedule.n_ensembles)
    sinks = [None] * schedule.n_ensembles
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
        sinks = [Path(trace_dir) / f"ensemble_{e}.jsonl" for e in range(schedule.n_ensembles)]
    jobs = [(target, proposal, schedule, seeds[e], e, sinks[e]) for e in range(schedule.n_ensembles)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    samples = [s for chunk, _ in results for s in chunk]
    stats = {e: rates for e, (_, rates) in enumerate(results)}
    return PosteriorEnsemble(samples, schedule.burn_in, stats)


def error_trace(posterior: PosteriorEnsemble, target, squared: bool = False) -> dict[int, np.ndarray]:
    """Per ensemble, the mean (absolute or squared) residual per data point at every recorded step."""
    d = target.data.values
    out: dict[int, np.ndarray] = {}
    for e in posterior.ensembles:
        samples = sorted(posterior.by_ensemble(e), key=lambda s: s.step)
        errs = np.empty(len(samples))
        last_key, last_err = None, math.nan
        for i, s in enumerate(samples):
            key = (s.sites, s.lam)
            if key != last_key:
                try:
                    r = d - target.signal(s.sites, s.lam)
                    last_err = float(np.mean(r * r) if squared else np.mean(np.abs(r)))
                except ArithmeticError:
                    last_err = math.inf
                last_key = key
            errs[i] = last_err
        out[e] = errs
    return out
