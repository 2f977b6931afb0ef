"""Posterior summaries and recovery metrics.

Spins are identified only up to their symmetry class, and a class may hold
several truth spins.  The i-th truth copy of class c counts as detected in a
sample iff the sample has at least i spins of class c.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .catalog import LatticeCatalog
from .engine import PosteriorEnsemble, Sample

DEFAULT_BIN_EDGES = (0.0, 25.0, 50.0, 100.0, 150.0, math.inf)
TABLE1_COLUMNS = ("label", "A_minus_ref", "A_minus_rec", "a_par", "a_perp", "detection_rate")


def _kept(posterior) -> list[Sample]:
    kept = posterior.kept() if isinstance(posterior, PosteriorEnsemble) else list(posterior)
    if not kept:
        raise ValueError("posterior is empty after burn-in")
    return kept


def bin_label(lo: float, hi: float) -> str:
    return f"[{lo:g}, {hi:g})"


def bin_index(values, edges: Sequence[float] = DEFAULT_BIN_EDGES) -> np.ndarray:
    """Index of the half-open bin [e_i, e_{i+1}) holding each value; -1 if outside."""
    v = np.asarray(values, dtype=float)
    idx = np.searchsorted(np.asarray(edges, dtype=float), v, side="right") - 1
    idx[(idx < 0) | (idx >= len(edges) - 1)] = -1
    return idx


def class_counts(samples: Sequence[Sample], classes: np.ndarray) -> list[Counter]:
    return [Counter(classes[list(s.sites)].tolist()) if s.sites else Counter() for s in samples]


def truth_copies(truth_sites: Sequence[int], classes: np.ndarray) -> list[tuple[int, int, int]]:
    """(site, class, copy index starting at 1) for each truth spin, in site order."""
    seen: Counter = Counter()
    out = []
    for s in sorted(truth_sites):
        c = int(classes[s])
        seen[c] += 1
        out.append((int(s), c, seen[c]))
    return out


def detection_rate(posterior, truth_sites: Sequence[int], catalog: LatticeCatalog) -> dict[int, float]:
    """Per truth site id, the fraction of kept samples that detect it."""
    kept = _kept(posterior)
    counts = class_counts(kept, catalog.symmetry_class)
    return {site: sum(cc[c] >= i for cc in counts) / len(counts)
            for site, c, i in truth_copies(truth_sites, catalog.symmetry_class)}


def k_histogram(posterior) -> dict[int, int]:
    return dict(sorted(Counter(s.k for s in _kept(posterior)).items()))


def k_mode(hist: dict[int, int]) -> int:
    """Most frequent k; ties go to the smaller k."""
    if not hist:
        raise ValueError("empty k histogram")
    return min(hist, key=lambda k: (-hist[k], k))


def dimension_discrepancy(posterior, k_true: int) -> int:
    return abs(k_mode(k_histogram(posterior)) - int(k_true))


def modal_configuration(posterior) -> tuple[int, ...]:
    """Most frequent exact configuration among samples at the modal k (ties: lexicographic)."""
    kept = _kept(posterior)
    km = k_mode(Counter(s.k for s in kept))
    counts = Counter(s.sites for s in kept if s.k == km)
    return min(counts, key=lambda c: (-counts[c], c))


def classify_configuration(config: Sequence[int], truth_sites: Sequence[int],
                           classes: np.ndarray) -> dict[int, bool]:
    """Site -> True for true positives, matching classes with multiplicity."""
    budget = Counter(classes[list(truth_sites)].tolist()) if len(truth_sites) else Counter()
    out = {}
    for s in sorted(config):
        c = int(classes[s])
        out[int(s)] = budget[c] > 0
        budget[c] -= 1
    return out


def false_positive_rate(posterior, truth_sites: Sequence[int], catalog: LatticeCatalog,
                        edges: Sequence[float] = DEFAULT_BIN_EDGES) -> dict[str, float]:
    """False-positive fraction of the modal configuration's spins, per magnitude bin.

    Bins with no recovered spin are absent from the result.
    """
    config = modal_configuration(posterior)
    verdict = classify_configuration(config, truth_sites, catalog.symmetry_class)
    out: dict[str, list[int]] = {}
    if config:
        bins = bin_index(catalog.magnitude[list(config)], edges)
        for s, b in zip(config, bins):
            if b < 0:
                continue
            key = bin_label(edges[b], edges[b + 1])
            out.setdefault(key, []).append(0 if verdict[s] else 1)
    return {k: sum(v) / len(v) for k, v in out.items()}


def binned_detection(rates: dict[int, float], catalog: LatticeCatalog,
                     edges: Sequence[float] = DEFAULT_BIN_EDGES) -> dict[str, float]:
    """Mean detection rate of truth spins per magnitude bin (empty bins absent)."""
    groups: dict[str, list[float]] = {}
    sites = list(rates)
    if not sites:
        return {}
    for s, b in zip(sites, bin_index(catalog.magnitude[sites], edges)):
        if b >= 0:
            groups.setdefault(bin_label(edges[b], edges[b + 1]), []).append(rates[s])
    return {k: float(np.mean(v)) for k, v in groups.items()}


def baseline_probability(n_sites: int, n_draw: int, class_size: int, occurrence: int) -> float:
    """P(X >= occurrence) for X ~ Hypergeometric(population n_sites, successes class_size, draws n_draw)."""
    if not 1 <= class_size <= n_sites:
        raise ValueError("class size must lie in [1, n_sites]")
    if not 0 <= n_draw <= n_sites:
        raise ValueError("draw count must lie in [0, n_sites]")
    if occurrence not in (1, 2):
        raise ValueError("occurrence must be 1 or 2")
    total = math.comb(n_sites, n_draw)
    below = sum(math.comb(class_size, x) * math.comb(n_sites - class_size, n_draw - x)
                for x in range(occurrence))
    return float(1 - Fraction(below, total))


def baseline_table(n_sites: int, n_draw: int, class_sizes: Sequence[int]) -> list[dict]:
    return [{"class_size": m, "at_least_once": baseline_probability(n_sites, n_draw, m, 1),
             "at_least_twice": baseline_probability(n_sites, n_draw, m, 2) if m >= 2 else 0.0}
            for m in class_sizes]


def detected_spin_count(rates: dict[int, float], truth_sites: Sequence[int], catalog: LatticeCatalog,
                        n_draw: int) -> int:
    """Truth spins whose detection rate beats the chance of the class turning up in a random draw."""
    sizes = Counter(catalog.symmetry_class.tolist())
    n = 0
    for site, c, i in truth_copies(truth_sites, catalog.symmetry_class):
        m = sizes[c]
        chance = baseline_probability(catalog.n_sites, min(n_draw, catalog.n_sites), m, min(i, 2)) \
            if i <= m else 0.0
        n += rates[site] > chance
    return n


def site_frequencies(posterior) -> dict[int, float]:
    kept = _kept(posterior)
    counts = Counter(s for smp in kept for s in smp.sites)
    return {s: c / len(kept) for s, c in sorted(counts.items())}


def plausible_sites(posterior, threshold: float = 0.0) -> list[int]:
    """Sites whose occupancy frequency over kept samples exceeds ``threshold``."""
    return [s for s, f in site_frequencies(posterior).items() if f > threshold]


def coupling_posterior(posterior, catalog: LatticeCatalog) -> list[dict]:
    """Occupancy frequency of each distinct (a_par, a_perp) class over kept samples."""
    kept = _kept(posterior)
    counts = Counter(c for cc in class_counts(kept, catalog.symmetry_class) for c in cc)
    first = {}
    for i, c in enumerate(catalog.symmetry_class.tolist()):
        first.setdefault(c, i)
    return [{"class": c, "a_par": float(catalog.a_par[first[c]]),
             "a_perp": float(catalog.a_perp[first[c]]), "frequency": n / len(kept)}
            for c, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]


@dataclass
class LambdaPosterior:
    edges: list[float]
    counts: list[int]
    mode: float
    entropy: float


def lambda_histogram(posterior, n_bins: int = 50, lo: float = 0.0, hi: float = 1.0) -> LambdaPosterior:
    """Histogram of lambda; the mode is the centre of the fullest bin, entropy in nats."""
    lam = np.array([s.lam for s in _kept(posterior)])
    counts, edges = np.histogram(lam, bins=n_bins, range=(lo, hi))
    j = int(np.argmax(counts))
    p = counts[counts > 0] / counts.sum()
    return LambdaPosterior(edges.tolist(), counts.tolist(), float(0.5 * (edges[j] + edges[j + 1])),
                           float(-(p * np.log(p)).sum()))


@dataclass
class RecoveryReport:
    n_samples: int
    k_histogram: dict[int, int]
    k_mode: int
    modal_configuration: list[int]
    lambda_posterior: LambdaPosterior
    magnitude_bins: list[float]
    n_plausible_sites: int
    k_true: int | None = None
    discrepancy: int | None = None
    detection: dict[int, float] = field(default_factory=dict)
    detection_by_bin: dict[str, float] = field(default_factory=dict)
    false_positive_rate: dict[str, float] = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["magnitude_bins"] = [e if math.isfinite(e) else "inf" for e in self.magnitude_bins]
        d["k_histogram"] = {str(k): v for k, v in self.k_histogram.items()}
        d["detection"] = {str(k): v for k, v in self.detection.items()}
        d["acceptance"] = {str(k): v for k, v in self.acceptance.items()}
        return d


def recovery_report(posterior: PosteriorEnsemble, catalog: LatticeCatalog,
                    truth_sites: Sequence[int] | None = None,
                    edges: Sequence[float] = DEFAULT_BIN_EDGES,
                    plausible_threshold: float = 0.0) -> RecoveryReport:
    hist = k_histogram(posterior)
    km = k_mode(hist)
    report = RecoveryReport(
        n_samples=sum(hist.values()), k_histogram=hist, k_mode=km,
        modal_configuration=list(modal_configuration(posterior)),
        lambda_posterior=lambda_histogram(posterior), magnitude_bins=list(edges),
        n_plausible_sites=len(plausible_sites(posterior, plausible_threshold)),
        acceptance=dict(posterior.stats))
    if truth_sites is not None:
        rates = detection_rate(posterior, truth_sites, catalog)
        report.k_true = len(truth_sites)
        report.discrepancy = abs(km - len(truth_sites))
        report.detection = rates
        report.detection_by_bin = binned_detection(rates, catalog, edges)
        report.false_positive_rate = false_positive_rate(posterior, truth_sites, catalog, edges)
    return report


def a_minus(a_par: float, a_perp: float, gamma_b_khz: float) -> float:
    """Effective frequency sqrt((gamma*B - a_par)^2 + a_perp^2), kHz."""
    return math.hypot(gamma_b_khz - a_par, a_perp)


def read_reference_table(path: str | Path) -> list[dict]:
    """Rows with at least ``label, a_par, a_perp`` (kHz); other columns are kept as strings."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.lstrip().startswith("#")))
    for need in ("label", "a_par", "a_perp"):
        if rows and need not in rows[0]:
            raise ValueError(f"{path}: missing column {need!r}")
    return rows


def table1_rows(posterior, catalog: LatticeCatalog, reference: Sequence[dict],
                gamma_b_khz: float) -> list[dict]:
    """Reference couplings against the nearest recovered spin of the modal configuration.

    The detection rate is that of the catalog class closest to the reference coupling.
    """
    kept = _kept(posterior)
    config = modal_configuration(kept)
    counts = class_counts(kept, catalog.symmetry_class)
    rows = []
    for ref in reference:
        a_par, a_perp = float(ref["a_par"]), float(ref["a_perp"])
        nearest = int(np.argmin(np.hypot(catalog.a_par - a_par, catalog.a_perp - a_perp)))
        c = int(catalog.symmetry_class[nearest])
        rate = sum(cc[c] >= 1 for cc in counts) / len(counts)
        if config:
            rec = min(config, key=lambda s: (math.hypot(catalog.a_par[s] - a_par,
                                                        catalog.a_perp[s] - a_perp), s))
            rec_par, rec_perp = float(catalog.a_par[rec]), float(catalog.a_perp[rec])
            rec_minus = a_minus(rec_par, rec_perp, gamma_b_khz)
        else:
            rec_par = rec_perp = rec_minus = math.nan
        rows.append({"label": ref["label"], "A_minus_ref": a_minus(a_par, a_perp, gamma_b_khz),
                     "A_minus_rec": rec_minus, "a_par": rec_par, "a_perp": rec_perp,
                     "detection_rate": rate})
    return rows


def write_rows(path: str | Path, rows: Sequence[dict], columns: Sequence[str] | None = None) -> None:
    columns = list(columns) if columns is not None else (list(rows[0]) if rows else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
