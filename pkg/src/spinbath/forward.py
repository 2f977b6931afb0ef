"""Analytic coherence of a defect spin coupled to a nuclear spin bath under N-pulse dynamical decoupling.

Units: couplings are given in kHz (cyclic) and converted to angular frequency
in rad/ms by multiplying with 2*pi, so that frequency * tau (ms) is a phase in
radians.  Fields are in gauss, the nuclear gyromagnetic ratio in kHz/G.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

TWO_PI = 2.0 * np.pi
GAMMA_13C_KHZ_PER_G = 1.0705
LAMBDA_MIN = 1e-6
DEFAULT_ENVELOPE_SCALE_MS = 0.02

Mode = Literal["verbatim", "envelope"]
MODES = ("verbatim", "envelope")


class ForwardDomainError(ArithmeticError):
    """The verbatim signal hits its pole (base 0 raised to a negative power)."""


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """Known experimental settings: pulse count, field and the tau grid (ms)."""

    tau_grid: np.ndarray
    n_pulses: int = 16
    b_field: float = 311.0
    gamma_n: float = GAMMA_13C_KHZ_PER_G

    def __post_init__(self) -> None:
        tau = np.array(self.tau_grid, dtype=float).ravel()
        if tau.size == 0:
            raise ValueError("tau grid is empty")
        if np.any(tau <= 0) or np.any(np.diff(tau) <= 0):
            raise ValueError("tau grid must be positive and strictly increasing")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValueError("n_pulses must be a positive integer")
        if not self.b_field > 0:
            raise ValueError("b_field must be positive")
        if self.gamma_n == 0:
            raise ValueError("gamma_n must be nonzero")
        tau.setflags(write=False)
        object.__setattr__(self, "tau_grid", tau)
        object.__setattr__(self, "n_pulses", int(self.n_pulses))

    @property
    def n_tau(self) -> int:
        return self.tau_grid.size


@dataclass(frozen=True, eq=False)
class SpinBath:
    """Hyperfine couplings (a_par, a_perp) in kHz, one row per nuclear spin."""

    couplings: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self) -> None:
        c = np.asarray(self.couplings, dtype=float).reshape(-1, 2)
        if np.any(c[:, 1] < 0):
            raise ValueError("a_perp must be non-negative")
        object.__setattr__(self, "couplings", c)

    @property
    def k(self) -> int:
        return len(self.couplings)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "SpinBath":
        return cls(np.array(pairs, dtype=float).reshape(-1, 2))


def check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (LAMBDA_MIN <= lam <= 1.0):
        raise ValueError(f"lambda must lie in [{LAMBDA_MIN}, 1], got {lam}")
    return lam


def larmor(spec: ExperimentSpec) -> float:
    """Nuclear Larmor angular frequency -gamma_n * B_z in rad/ms."""
    return -TWO_PI * spec.gamma_n * spec.b_field


def spin_modulation(a_par, a_perp, spec: ExperimentSpec, tau) -> np.ndarray:
    """Single-spin modulation M for couplings in kHz at inter-pulse spacing tau (ms).

    Inputs broadcast against each other; e.g. column vectors of couplings with
    a row vector of tau give an (n_spins, n_tau) table.
    """
    w_l = larmor(spec)
    a_par = TWO_PI * np.asarray(a_par, dtype=float)
    a_perp = TWO_PI * np.asarray(a_perp, dtype=float)
    tau = np.asarray(tau, dtype=float)

    shifted = a_par + w_l
    w_tilde = np.hypot(shifted, a_perp)
    with np.errstate(invalid="ignore", divide="ignore"):
        m_z = np.where(w_tilde > 0, shifted / w_tilde, 1.0)
        m_x = np.where(w_tilde > 0, a_perp / w_tilde, 0.0)
    alpha = w_tilde * tau
    beta = w_l * tau
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cos_phi = np.clip(ca * cb - m_z * sa * sb, -1.0, 1.0)
    numer = (1.0 - ca) * (1.0 - cb)
    denom = 1.0 + cos_phi
    with np.errstate(invalid="ignore", divide="ignore"):
        # m_x^2 * numer / denom equals 1 - n0.n1, which lies in [0, 2]; the 0/0
        # at phi = pi is a removable point
        depth = np.where(denom > 1e-300, m_x ** 2 * numer / denom, 0.0)
    depth = np.clip(depth, 0.0, 2.0)
    half_n_phi = 0.5 * spec.n_pulses * np.arccos(cos_phi)
    return 1.0 - depth * np.sin(half_n_phi) ** 2


def modulation_table(a_par, a_perp, spec: ExperimentSpec) -> np.ndarray:
    """(n_spins, n_tau) table of M over the spec's tau grid."""
    a_par = np.asarray(a_par, dtype=float).reshape(-1, 1)
    a_perp = np.asarray(a_perp, dtype=float).reshape(-1, 1)
    return spin_modulation(a_par, a_perp, spec, spec.tau_grid[None, :])


def signal_from_product(prod: np.ndarray, lam: float, tau: np.ndarray, mode: Mode = "verbatim",
                        envelope_scale_ms: float = DEFAULT_ENVELOPE_SCALE_MS) -> np.ndarray:
    """Map prod_i M_i over the tau grid to the coherence signal.

    ``verbatim``: (1/2 (1 + prod))^(-tau / lambda).
    ``envelope``: 1/2 (1 + prod) * exp(-tau / (lambda * envelope_scale_ms)).
    """
    base = 0.5 * (1.0 + prod)
    if mode == "verbatim":
        if np.any(base <= 0.0):
            raise ForwardDomainError("coherence base is zero; verbatim signal is singular")
        return base ** (-tau / lam)
    if mode == "envelope":
        return base * np.exp(-tau / (lam * envelope_scale_ms))
    raise ValueError(f"unknown forward mode {mode!r}")


def coherence_signal(bath: SpinBath, lam: float, spec: ExperimentSpec, mode: Mode = "verbatim",
                     envelope_scale_ms: float = DEFAULT_ENVELOPE_SCALE_MS) -> np.ndarray:
    lam = check_lambda(lam)
    if bath.k:
        prod = np.prod(modulation_table(bath.couplings[:, 0], bath.couplings[:, 1], spec), axis=0)
    else:
        prod = np.ones(spec.n_tau)
    return signal_from_product(prod, lam, spec.tau_grid, mode, envelope_scale_ms)


def tau_grid_even(n_tau: int, tau_max_ms: float) -> np.ndarray:
    """n_tau evenly spaced points on (0, tau_max]."""
    return tau_max_ms * np.arange(1, n_tau + 1) / n_tau
