"""Scores of a model signal against observed coherence data, in log space."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

LikelihoodMode = Literal["gaussian", "wasserstein_mixed"]


@dataclass(frozen=True)
class LikelihoodConfig:
    sigma2: float = 0.1
    zeta: float = 0.0
    mode: LikelihoodMode = "gaussian"

    def __post_init__(self) -> None:
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")
        if self.mode not in ("gaussian", "wasserstein_mixed"):
            raise ValueError(f"unknown likelihood mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class ObservedSignal:
    tau: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        tau = np.array(self.tau, dtype=float).ravel()
        values = np.array(self.values, dtype=float).ravel()
        if tau.size != values.size:
            raise ValueError(f"tau has {tau.size} points but values has {values.size}")
        if tau.size == 0:
            raise ValueError("empty signal")
        if np.any(np.diff(tau) <= 0):
            raise ValueError("tau must be strictly increasing")
        tau.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.tau.size


def _values(data) -> np.ndarray:
    return data.values if isinstance(data, ObservedSignal) else np.asarray(data, dtype=float)


def log_likelihood_gaussian(data, model, cfg: LikelihoodConfig) -> float:
    d = _values(data)
    f = np.asarray(model, dtype=float)
    if d.shape != f.shape:
        raise ValueError(f"data length {d.size} != model length {f.size}")
    r = d - f
    return float(-np.dot(r, r) / (2.0 * cfg.sigma2))


def normalize_signal(values) -> np.ndarray:
    """Probability vector from a signal: shift by its minimum, divide by the sum.

    A constant signal maps to the uniform distribution.
    """
    v = np.asarray(values, dtype=float)
    shifted = v - v.min()
    total = shifted.sum()
    if not total > 0:
        return np.full(v.size, 1.0 / v.size)
    return shifted / total


def w2_squared_discrete(support, p, q) -> float:
    """Squared 2-Wasserstein distance between two distributions on the same sorted 1-D support.

    Exact quantile matching: between consecutive breakpoints of the two CDFs
    both quantile functions are constant.
    """
    x = np.asarray(support, dtype=float)
    cp = np.cumsum(p, dtype=float)
    cq = np.cumsum(q, dtype=float)
    cp /= cp[-1]
    cq /= cq[-1]
    cp[-1] = cq[-1] = 1.0
    u = np.unique(np.concatenate(([0.0], cp, cq)))
    u = u[(u >= 0.0) & (u <= 1.0)]
    mids = 0.5 * (u[:-1] + u[1:])
    last = x.size - 1
    ip = np.minimum(np.searchsorted(cp, mids, side="left"), last)
    iq = np.minimum(np.searchsorted(cq, mids, side="left"), last)
    return float(np.sum(np.diff(u) * (x[ip] - x[iq]) ** 2))


def w2_squared(data: ObservedSignal, model) -> float:
    """W2^2 (ms^2) between the normalized data and model signals over the tau support."""
    f = np.asarray(model, dtype=float)
    if f.shape != data.values.shape:
        raise ValueError(f"data length {data.values.size} != model length {f.size}")
    return w2_squared_discrete(data.tau, normalize_signal(data.values), normalize_signal(f))


def log_likelihood(data: ObservedSignal, model, cfg: LikelihoodConfig) -> float:
    """Score used by the samplers.

    ``gaussian``: the Gaussian log-likelihood.  ``wasserstein_mixed``:
    (1 - zeta) * gaussian - zeta * W2^2.  With zeta = 0 both modes agree exactly.
    """
    gauss = log_likelihood_gaussian(data, model, cfg)
    if cfg.mode == "gaussian" or cfg.zeta == 0.0:
        return gauss
    return (1.0 - cfg.zeta) * gauss - cfg.zeta * w2_squared(data, model)


def literal_mixed_likelihood(data: ObservedSignal, model, cfg: LikelihoodConfig) -> float:
    """(1 - zeta) * exp(gaussian) - zeta * W2^2, the probability-space form (reporting only)."""
    gauss = log_likelihood_gaussian(data, model, cfg)
    return (1.0 - cfg.zeta) * float(np.exp(gauss)) - cfg.zeta * w2_squared(data, model)
