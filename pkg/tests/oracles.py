"""Independent brute-force oracles used by the tests.

None of these share code with the package: the binary exponents come from
exhaustive grids over the two free policy parameters, and the hypothesis-test
errors from full enumeration in exact rational arithmetic.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


# ---------------------------------------------------------------------------
# binary smart-meter exponents
#
# Demand X in {0, peak}. Supply may not exceed demand, so x = 0 always maps to
# y = 0, and x = peak maps to y = 0 with probability a_h (renewable covers the
# peak). Distortion under h is (1 - p_h) * peak * a_h. The output marginal puts
# mass p_h + (1 - p_h) a_h on y = 0.


def _binary_grid(p_bar, p_tilde, s, peak, res):
    a = np.linspace(0.0, 1.0, int(round(1 / res)) + 1)
    a0 = a[(1 - p_bar) * peak * a <= s + 1e-15]
    a1 = a[(1 - p_tilde) * peak * a <= s + 1e-15]
    m0 = p_bar + (1 - p_bar) * a0
    m1 = p_tilde + (1 - p_tilde) * a1
    return m0[:, None], m1[None, :]


def _kl2(u, v):
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(u > 0, u * np.log(u / v), 0.0)
        t1 = np.where(u < 1, (1 - u) * np.log((1 - u) / (1 - v)), 0.0)
    return t0 + t1


def _ctau2(u, v, tau):
    return -np.log(u**tau * v ** (1 - tau) + (1 - u) ** tau * (1 - v) ** (1 - tau))


def binary_grid_phi(p_bar, p_tilde, s, peak=2.0, res=1e-3) -> float:
    m0, m1 = _binary_grid(p_bar, p_tilde, s, peak, res)
    return float(np.nanmin(_kl2(m0, m1)))


def binary_grid_nu_tau(p_bar, p_tilde, s, tau, peak=2.0, res=1e-3) -> float:
    m0, m1 = _binary_grid(p_bar, p_tilde, s, peak, res)
    return float(np.min(_ctau2(m0, m1, tau)))


def binary_grid_nu(p_bar, p_tilde, s, peak=2.0, res=1e-3, tau_points=101) -> float:
    """max over a tau grid (refined around the best point) of the policy-grid minimum."""
    m0, m1 = _binary_grid(p_bar, p_tilde, s, peak, res)
    taus = np.linspace(0.0, 1.0, tau_points)
    vals = [float(np.min(_ctau2(m0, m1, t))) for t in taus]
    k = int(np.argmax(vals))
    lo, hi = taus[max(k - 1, 0)], taus[min(k + 1, tau_points - 1)]
    fine = np.linspace(lo, hi, 41)
    return max(max(vals), max(float(np.min(_ctau2(m0, m1, t))) for t in fine))


# ---------------------------------------------------------------------------
# exact hypothesis tests by enumeration


def random_fraction_pmf(rng, k, allow_zero=True, denom=20):
    while True:
        w = rng.integers(0 if allow_zero else 1, denom, size=k)
        if w.sum() > 0:
            total = int(w.sum())
            return [Fraction(int(x), total) for x in w]


def joint_law(p, n):
    """Probabilities of all |Y|^n sequences (row-major) as Fractions."""
    out = []
    for seq in itertools.product(range(len(p)), repeat=n):
        pr = Fraction(1)
        for y in seq:
            pr *= p[y]
        out.append(pr)
    return out


def np_bruteforce(P0, P1, eps) -> Fraction:
    """Minimal type-II error over randomized tests with type-I error <= eps (exact)."""
    eps = Fraction(eps)
    outcomes = [(a, b) for a, b in zip(P0, P1) if a > 0 or b > 0]

    # Sort by likelihood ratio a/b descending; b = 0 means +inf.
    def key(o):
        a, b = o
        return (1, 0) if b == 0 else (0, a / b)

    outcomes.sort(key=key, reverse=True)
    groups = [list(g) for _, g in itertools.groupby(outcomes, key=key)]
    need = 1 - eps  # h0-probability the accept region must hold
    acc0, beta = Fraction(0), Fraction(0)
    for g in groups:
        g0 = sum(a for a, _ in g)
        g1 = sum(b for _, b in g)
        if acc0 + g0 < need:
            acc0 += g0
            beta += g1
            continue
        r = (need - acc0) / g0 if g0 > 0 else Fraction(0)
        return beta + r * g1
    return beta


def bayes_bruteforce(P0, P1, prior0=Fraction(1, 2)) -> Fraction:
    prior1 = 1 - prior0
    return sum(min(prior0 * a, prior1 * b) for a, b in zip(P0, P1))


def deterministic_region_beta(P0, P1, region, eps) -> float | None:
    """Type-II error of a deterministic accept-h0 region, or None if type I exceeds eps."""
    type1 = sum(a for a, r in zip(P0, region) if not r)
    if type1 > eps:
        return None
    return sum(b for b, r in zip(P1, region) if r)


# ---------------------------------------------------------------------------
# divergences


def chernoff_grid(p, q, step=1e-6) -> float:
    p, q = np.asarray(p, float), np.asarray(q, float)
    taus = np.arange(0.0, 1.0 + step / 2, step)
    both = (p > 0) & (q > 0)
    s = np.zeros_like(taus)
    for a, b in zip(p[both], q[both]):
        s += a**taus * b ** (1 - taus)
    return float(np.max(-np.log(s)))
