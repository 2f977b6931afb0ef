"""Run configuration: one JSON document with a section per component.

Every leaf key ``section.key`` is also a command-line flag ``--section.key``.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .catalog import DEFAULT_CUTOFF_KHZ, DEFAULT_RADIUS, LatticeCatalog, dipolar_diamond_catalog, load_catalog
from .datagen import SyntheticScenario, sample_bath, sample_bath_with_strong
from .engine import ScheduleConfig
from .forward import DEFAULT_ENVELOPE_SCALE_MS, GAMMA_13C_KHZ_PER_G, MODES
from .likelihood import LikelihoodConfig
from .metrics import DEFAULT_BIN_EDGES
from .samplers import ProposalConfig

CATALOG_ENV = "SPINBATH_CATALOG"


@dataclass(frozen=True)
class CatalogSection:
    path: str | None = None
    cutoff_khz: float = DEFAULT_CUTOFF_KHZ
    radius: float = DEFAULT_RADIUS

    def __post_init__(self) -> None:
        if self.cutoff_khz < 0:
            raise ValueError("catalog.cutoff_khz must be non-negative")
        if not self.radius > 0:
            raise ValueError("catalog.radius must be positive")

    def resolved_path(self) -> str | None:
        return self.path or os.environ.get(CATALOG_ENV) or None

    def load(self) -> LatticeCatalog:
        path = self.resolved_path()
        if path is None:
            return dipolar_diamond_catalog(self.cutoff_khz, self.radius)
        return load_catalog(path, self.cutoff_khz, self.radius)


@dataclass(frozen=True)
class ExperimentSection:
    n_pulses: int = 16
    b_field: float = 311.0
    gamma_n: float = GAMMA_13C_KHZ_PER_G


@dataclass(frozen=True)
class ForwardSection:
    mode: str = "verbatim"
    envelope_scale_ms: float = DEFAULT_ENVELOPE_SCALE_MS

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"forward.mode must be one of {MODES}")
        if not self.envelope_scale_ms > 0:
            raise ValueError("forward.envelope_scale_ms must be positive")


@dataclass(frozen=True)
class ScenarioSection:
    k_true: int = 10
    n_strong: int = 0
    truth_sites: tuple[int, ...] | None = None
    lambda_true: float = 0.5
    n_tau: int = 250
    tau_max_ms: float = 0.008
    noise_sd: float = 0.001
    hyperfine_perturbation_khz: float = 0.0
    tau_sampling: str = "even"
    n_scenarios: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.truth_sites, int):
            object.__setattr__(self, "truth_sites", (self.truth_sites,))
        if self.truth_sites is not None:
            object.__setattr__(self, "truth_sites", tuple(int(s) for s in self.truth_sites))
        if self.k_true < 0 or not 0 <= self.n_strong <= self.k_true:
            raise ValueError("scenario needs 0 <= n_strong <= k_true")
        if self.n_tau < 1:
            raise ValueError("scenario.n_tau must be at least 1")
        if self.n_scenarios < 1:
            raise ValueError("scenario.n_scenarios must be at least 1")
        # remaining checks live in SyntheticScenario
        SyntheticScenario((), self.lambda_true, self.n_tau, self.tau_max_ms, self.noise_sd,
                          hyperfine_perturbation_khz=self.hyperfine_perturbation_khz,
                          tau_sampling=self.tau_sampling)


@dataclass(frozen=True)
class MetricsSection:
    bin_edges: tuple[float, ...] = DEFAULT_BIN_EDGES
    plausible_threshold: float = 0.0
    lambda_bins: int = 50

    def __post_init__(self) -> None:
        edges = tuple(float(e) for e in self.bin_edges)
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ValueError("metrics.bin_edges must be strictly increasing")
        object.__setattr__(self, "bin_edges", edges)


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    output: str = "out"
    workers: int = 0

    def n_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)


SECTIONS = {
    "run": RunSection,
    "catalog": CatalogSection,
    "experiment": ExperimentSection,
    "forward": ForwardSection,
    "scenario": ScenarioSection,
    "likelihood": LikelihoodConfig,
    "proposal": ProposalConfig,
    "schedule": ScheduleConfig,
    "metrics": MetricsSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    catalog: CatalogSection = field(default_factory=CatalogSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    forward: ForwardSection = field(default_factory=ForwardSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    def __post_init__(self) -> None:
        if not math.isclose(self.proposal.r_spin, self.catalog.radius):
            raise ValueError("proposal.r_spin and catalog.radius must agree")

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        return {name: {k: clean(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
                for name in SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config section(s): {sorted(unknown)}")
        parts = {}
        for name, klass in SECTIONS.items():
            values = dict(data.get(name, {}))
            known = {f.name for f in fields(klass) if f.init}
            bad = set(values) - known
            if bad:
                raise ValueError(f"unknown key(s) in [{name}]: {sorted(bad)}")
            values = {k: _coerce(v) for k, v in values.items()}
            parts[name] = klass(**values)
        return cls(**parts)

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def write(self, directory: str | Path) -> Path:
        path = Path(directory) / "config.json"
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def _coerce(v: Any) -> Any:
    if v == "inf":
        return math.inf
    if isinstance(v, list):
        return tuple(_coerce(x) for x in v)
    return v


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(data)


def flag_table() -> list[tuple[str, str, Any]]:
    """(section, key, default) for every config leaf."""
    base = RunConfig()
    out = []
    for name in SECTIONS:
        section = getattr(base, name)
        for f in fields(section):
            if f.init:
                out.append((name, f.name, getattr(section, f.name)))
    return out


def parse_flag_value(raw: str, default: Any) -> Any:
    """Interpret a flag string using the type of the default (JSON for lists and None)."""
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, str):
        return raw
    if raw.lower() in ("none", "null"):
        return None
    if raw.strip().startswith("["):
        return _coerce(json.loads(raw))
    if "," in raw:
        return tuple(_coerce(json.loads(x)) if x.strip() != "inf" else math.inf for x in raw.split(","))
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: RunConfig, overrides: dict[tuple[str, str], Any]) -> RunConfig:
    grouped: dict[str, dict] = {}
    for (section, key), value in overrides.items():
        grouped.setdefault(section, {})[key] = value
    data = cfg.to_dict()
    for section, changes in grouped.items():
        data[section].update(changes)
    return RunConfig.from_dict(data)


def scenario_seeds(seed: int, n: int) -> list[int]:
    """Independent 32-bit seeds for a batch of scenarios."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def build_scenario(cfg: RunConfig, catalog: LatticeCatalog, seed: int) -> SyntheticScenario:
    sc = cfg.scenario
    if sc.truth_sites is not None:
        truth = sc.truth_sites
    else:
        rng = np.random.default_rng([seed, 1])
        truth = (sample_bath_with_strong(catalog, sc.k_true, sc.n_strong, rng) if sc.n_strong
                 else sample_bath(catalog, sc.k_true, rng))
    return SyntheticScenario(
        truth_sites=truth, lambda_true=sc.lambda_true, n_tau=sc.n_tau, tau_max_ms=sc.tau_max_ms,
        noise_sd=sc.noise_sd, n_pulses=cfg.experiment.n_pulses, b_field=cfg.experiment.b_field,
        gamma_n=cfg.experiment.gamma_n, hyperfine_perturbation_khz=sc.hyperfine_perturbation_khz,
        tau_sampling=sc.tau_sampling, forward_mode=cfg.forward.mode,
        envelope_scale_ms=cfg.forward.envelope_scale_ms, seed=seed)
