"""Independent reference computations used to freeze expected values.

Nothing here imports the package under test.  Every routine is a slow,
straight-line version of the quantity it checks.
"""
from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog

TWO_PI = 2 * math.pi


def larmor(gamma_khz_per_g: float, b_gauss: float) -> float:
    return -gamma_khz_per_g * b_gauss * TWO_PI


def modulation(a_par_khz, a_perp_khz, n_pulses, b_gauss, tau_ms, gamma=1.0705):
    """One spin, one tau, scalar math only."""
    w_l = larmor(gamma, b_gauss)
    a_par = a_par_khz * TWO_PI
    a_perp = a_perp_khz * TWO_PI
    w_tilde = math.sqrt((a_par + w_l) ** 2 + a_perp ** 2)
    m_z = (a_par + w_l) / w_tilde
    m_x = a_perp / w_tilde
    alpha = w_tilde * tau_ms
    beta = w_l * tau_ms
    cos_phi = math.cos(alpha) * math.cos(beta) - m_z * math.sin(alpha) * math.sin(beta)
    phi = math.acos(max(-1.0, min(1.0, cos_phi)))
    frac = (1 - math.cos(alpha)) * (1 - math.cos(beta)) / (
        1 + math.cos(alpha) * math.cos(beta) - m_z * math.sin(alpha) * math.sin(beta))
    return 1 - m_x ** 2 * frac * math.sin(n_pulses * phi / 2) ** 2


def modulation_cos_phi(a_par_khz, a_perp_khz, b_gauss, tau_ms, gamma=1.0705):
    w_l = larmor(gamma, b_gauss)
    shifted = a_par_khz * TWO_PI + w_l
    w_tilde = math.hypot(shifted, a_perp_khz * TWO_PI)
    alpha, beta = w_tilde * tau_ms, w_l * tau_ms
    return math.cos(alpha) * math.cos(beta) - shifted / w_tilde * math.sin(alpha) * math.sin(beta)


def coherence(couplings, lam, n_pulses, b_gauss, taus, gamma=1.0705, mode="verbatim",
              scale_ms=0.02):
    out = []
    for tau in taus:
        prod = 1.0
        for a_par, a_perp in couplings:
            prod *= modulation(a_par, a_perp, n_pulses, b_gauss, tau, gamma)
        base = 0.5 * (1 + prod)
        if mode == "verbatim":
            out.append(base ** (-tau / lam))
        else:
            out.append(base * math.exp(-tau / (lam * scale_ms)))
    return np.array(out)


def w2_squared_lp(support, p, q) -> float:
    """Optimal transport cost with |x - y|^2 ground cost, as a linear program."""
    x = np.asarray(support, dtype=float)
    n = len(x)
    cost = (x[:, None] - x[None, :]) ** 2
    a_eq, b_eq = [], []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1
        a_eq.append(row.ravel())
        b_eq.append(p[i])
    for j in range(n):
        col = np.zeros((n, n))
        col[:, j] = 1
        a_eq.append(col.ravel())
        b_eq.append(q[j])
    res = linprog(cost.ravel(), A_eq=np.array(a_eq), b_eq=np.array(b_eq), bounds=(0, None),
                  method="highs", options={"primal_feasibility_tolerance": 1e-10,
                                           "dual_feasibility_tolerance": 1e-10})
    assert res.success, res.message
    return float(res.fun)


def reflect_once(x: float, lo: float, hi: float) -> float:
    """Single fold at whichever boundary was crossed (steps are far smaller than the interval)."""
    if x > hi:
        return 2 * hi - x
    if x < lo:
        return 2 * lo - x
    return x


def configurations(n_sites: int, k_max: int):
    for k in range(k_max + 1):
        yield from itertools.combinations(range(n_sites), k)


def enumerate_posterior(loglik: dict, n_sites: int, k_max: int, prior: str = "subsets",
                        beta: float = 1.0) -> dict:
    """Exact normalized posterior over every configuration of at most k_max sites."""
    weights = {}
    for c in configurations(n_sites, k_max):
        log_prior = 0.0 if prior == "subsets" else -math.log(math.comb(n_sites, len(c)))
        weights[c] = beta * loglik[c] + log_prior
    top = max(weights.values())
    z = sum(math.exp(v - top) for v in weights.values())
    return {c: math.exp(v - top) / z for c, v in weights.items()}


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def hypergeom_tail_mc(n: int, m: int, draws: int, at_least: int, n_mc: int, seed: int = 0):
    """Monte Carlo P(X >= at_least) and its standard error."""
    rng = np.random.default_rng(seed)
    x = rng.hypergeometric(m, n - m, draws, size=n_mc)
    p = float(np.mean(x >= at_least))
    return p, math.sqrt(max(p * (1 - p), 1e-300) / n_mc)
