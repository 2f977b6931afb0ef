"""Synthetic experiments: ground-truth baths, noisy coherence data, perturbed catalogs."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import LatticeCatalog
from .forward import (DEFAULT_ENVELOPE_SCALE_MS, GAMMA_13C_KHZ_PER_G, ExperimentSpec, SpinBath,
                      check_lambda, coherence_signal, tau_grid_even)
from .likelihood import ObservedSignal

SIGNAL_HEADER = ("tau_ms", "coherence")


@dataclass(frozen=True)
class SyntheticScenario:
    """Everything needed to regenerate one synthetic dataset bit-for-bit."""

    truth_sites: tuple[int, ...]
    lambda_true: float = 0.5
    n_tau: int = 250
    tau_max_ms: float = 0.008
    noise_sd: float = 0.001
    n_pulses: int = 16
    b_field: float = 311.0
    gamma_n: float = GAMMA_13C_KHZ_PER_G
    hyperfine_perturbation_khz: float = 0.0
    tau_sampling: str = "even"
    forward_mode: str = "verbatim"
    envelope_scale_ms: float = DEFAULT_ENVELOPE_SCALE_MS
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "truth_sites", tuple(sorted(int(s) for s in self.truth_sites)))
        if len(set(self.truth_sites)) != len(self.truth_sites):
            raise ValueError("duplicate truth site")
        check_lambda(self.lambda_true)
        if self.n_tau < 1:
            raise ValueError("n_tau must be positive")
        if not self.tau_max_ms > 0:
            raise ValueError("tau_max_ms must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be non-negative")
        if self.hyperfine_perturbation_khz < 0:
            raise ValueError("hyperfine perturbation must be non-negative")
        if self.tau_sampling not in ("even", "iid"):
            raise ValueError("tau_sampling must be 'even' or 'iid'")

    def tau_grid(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.tau_sampling == "even":
            return tau_grid_even(self.n_tau, self.tau_max_ms)
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        # open at 0: draws of exactly 0 are resampled, ties are astronomically unlikely
        tau = rng.uniform(0.0, self.tau_max_ms, self.n_tau)
        while np.any(tau <= 0) or np.unique(tau).size != tau.size:
            tau = rng.uniform(0.0, self.tau_max_ms, self.n_tau)
        return np.sort(tau)

    def spec(self, tau_grid: np.ndarray) -> ExperimentSpec:
        return ExperimentSpec(tau_grid, self.n_pulses, self.b_field, self.gamma_n)


@dataclass
class SyntheticData:
    scenario: SyntheticScenario
    spec: ExperimentSpec
    clean: np.ndarray
    signal: ObservedSignal
    truth_couplings: np.ndarray = field(repr=False)

    def manifest(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "truth_site_ids": list(self.scenario.truth_sites),
            "truth_couplings_khz": self.truth_couplings.tolist(),
            "lambda_true": self.scenario.lambda_true,
            "seed": self.scenario.seed,
            "hyperfine_perturbation_khz": self.scenario.hyperfine_perturbation_khz,
            "tau_ms": self.spec.tau_grid.tolist(),
        }


def sample_bath(catalog: LatticeCatalog, k_true: int, rng: np.random.Generator) -> tuple[int, ...]:
    """k_true distinct site ids, uniform without replacement."""
    if not 0 <= k_true <= catalog.n_sites:
        raise ValueError(f"k_true={k_true} outside [0, {catalog.n_sites}]")
    return tuple(sorted(int(s) for s in rng.choice(catalog.n_sites, size=k_true, replace=False)))


def sample_bath_with_strong(catalog: LatticeCatalog, k_true: int, n_strong: int,
                            rng: np.random.Generator, strong_khz: float = 150.0) -> tuple[int, ...]:
    """Bath with exactly ``n_strong`` sites above ``strong_khz`` that also have a_perp > 0.

    Uniform draws almost never contain a strong spin (they are ~3% of sites),
    and strong sites with a_perp = 0 leave no trace in the signal at all.
    """
    mag = catalog.magnitude
    strong = np.flatnonzero((mag > strong_khz) & (catalog.a_perp > 0))
    rest = np.flatnonzero(mag <= strong_khz)
    if n_strong > strong.size or k_true - n_strong > rest.size or n_strong > k_true:
        raise ValueError("not enough sites for the requested bath")
    picked = np.concatenate([rng.choice(strong, n_strong, replace=False),
                             rng.choice(rest, k_true - n_strong, replace=False)])
    return tuple(sorted(int(s) for s in picked))


def synthesize(scenario: SyntheticScenario, catalog: LatticeCatalog) -> SyntheticData:
    """Clean signal of the truth bath on the scenario's tau grid plus iid Gaussian noise.

    Deterministic in the scenario (its seed drives tau sampling and noise).
    """
    rng = np.random.default_rng(scenario.seed)
    tau = scenario.tau_grid(rng)
    spec = scenario.spec(tau)
    couplings = catalog.couplings(scenario.truth_sites) if scenario.truth_sites else np.zeros((0, 2))
    clean = coherence_signal(SpinBath(couplings), scenario.lambda_true, spec,
                             scenario.forward_mode, scenario.envelope_scale_ms)
    noise = rng.normal(0.0, scenario.noise_sd, tau.size) if scenario.noise_sd > 0 else 0.0
    return SyntheticData(scenario, spec, clean, ObservedSignal(tau, clean + noise), couplings)


def clean_from_manifest(manifest: dict, catalog: LatticeCatalog | None = None) -> np.ndarray:
    """Recompute the noiseless signal recorded in a manifest."""
    sc = SyntheticScenario(**{**manifest["scenario"],
                              "truth_sites": tuple(manifest["scenario"]["truth_sites"])})
    spec = sc.spec(np.asarray(manifest["tau_ms"], dtype=float))
    couplings = (np.asarray(manifest["truth_couplings_khz"], dtype=float).reshape(-1, 2)
                 if catalog is None else catalog.couplings(sc.truth_sites))
    return coherence_signal(SpinBath(couplings), sc.lambda_true, spec, sc.forward_mode,
                            sc.envelope_scale_ms)


def perturb_catalog(catalog: LatticeCatalog, delta_khz: float,
                    rng: np.random.Generator) -> LatticeCatalog:
    """Shift each site's a_par and a_perp by an independent random +-delta.

    a_perp stays non-negative: where a_perp - delta would go below zero the
    shift is taken as +delta instead, so every component still moves by
    exactly delta.  Positions are unchanged; symmetry classes are regrouped.
    """
    if delta_khz < 0:
        raise ValueError("delta must be non-negative")
    if delta_khz == 0:
        return catalog
    n = catalog.n_sites
    s_par = rng.choice((-1.0, 1.0), n)
    s_perp = rng.choice((-1.0, 1.0), n)
    s_perp[catalog.a_perp - delta_khz < 0] = 1.0
    return LatticeCatalog(catalog.positions, catalog.a_par + s_par * delta_khz,
                          catalog.a_perp + s_perp * delta_khz,
                          cutoff_khz=catalog.cutoff_khz, radius=catalog.radius)


def write_signal(path: str | Path, signal: ObservedSignal) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SIGNAL_HEADER)
        for t, v in zip(signal.tau, signal.values):
            w.writerow((repr(float(t)), repr(float(v))))


def read_signal(path: str | Path) -> ObservedSignal:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows or tuple(c.strip() for c in rows[0]) != SIGNAL_HEADER:
        raise ValueError(f"{path}: expected header {','.join(SIGNAL_HEADER)}")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row ({exc})") from None
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns")
    return ObservedSignal(data[:, 0], data[:, 1])


def write_manifest(path: str | Path, data: SyntheticData) -> None:
    Path(path).write_text(json.dumps(data.manifest(), indent=2) + "\n")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
