"""Exact finite-horizon adversary oracles.

The adversary observes ``y^n`` and tests h0 against h1 with full knowledge of
both observation laws. Three tests are provided:

* ``np_exact``: the randomized Neyman-Pearson test, minimal type-II error
  under a type-I cap;
* ``np_threshold_test``: the deterministic test that accepts h0 when the
  normalized log-likelihood ratio exceeds ``D - delta'/n``;
* ``bayes_exact``: the minimum-error likelihood-ratio test for given priors.

For i.i.d. observations the oracles work on type classes (symbol-count
histograms), so the enumeration grows polynomially in ``n``. Probabilities
are handled in the log domain and outcomes with zero probability under one
hypothesis get a log-likelihood ratio of exactly ``+inf`` or ``-inf``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .distributions import chernoff, kl

MAX_JOINT_OUTCOMES = 10**7
MAX_TYPE_CLASSES = 5 * 10**6
TIE_RTOL = 1e-12


class ResourceCapError(RuntimeError):
    """The requested enumeration exceeds the configured size cap."""


@dataclass(frozen=True, eq=False)
class TestSpec:
    """Observation laws for an ``n``-slot test.

    Product form: ``p_h0``/``p_h1`` are per-slot pmfs on a shared output
    alphabet and slots are i.i.d. Explicit form: ``joint_h0``/``joint_h1``
    hold the probabilities of all ``|Y|^n`` sequences (row-major order).
    """

    __test__ = False  # not a pytest class

    n: int
    p_h0: np.ndarray | None = None
    p_h1: np.ndarray | None = None
    mode: str = "neyman_pearson"
    epsilon: float | None = None
    joint_h0: np.ndarray | None = None
    joint_h1: np.ndarray | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("horizon n must be a positive integer")
        if self.mode not in ("neyman_pearson", "bayes"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "neyman_pearson" and self.epsilon is not None:
            _check_epsilon(self.epsilon)
        product = self.p_h0 is not None or self.p_h1 is not None
        joint = self.joint_h0 is not None or self.joint_h1 is not None
        if product == joint:
            raise ValueError("give either per-slot pmfs or explicit joint pmfs")
        for name in ("p_h0", "p_h1", "joint_h0", "joint_h1"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > 1e-9:
                    raise ValueError(f"{name} must be a probability vector")
                object.__setattr__(self, name, v)
        if product:
            if self.p_h0 is None or self.p_h1 is None or self.p_h0.size != self.p_h1.size:
                raise ValueError("per-slot pmfs must share one output alphabet")
        else:
            if self.joint_h0 is None or self.joint_h1 is None or self.joint_h0.size != self.joint_h1.size:
                raise ValueError("joint pmfs must have equal length")
            if self.joint_h0.size > MAX_JOINT_OUTCOMES:
                raise ResourceCapError(f"{self.joint_h0.size} joint outcomes exceed cap {MAX_JOINT_OUTCOMES}")

    @property
    def product_form(self) -> bool:
        return self.p_h0 is not None


@dataclass
class TestResult:
    __test__ = False

    type1: float | None = None
    type2: float | None = None
    bayes_error: float | None = None
    threshold: float = math.nan
    randomization: float = 0.0
    region_summary: dict = field(default_factory=dict)
    log_error: float = math.nan
    bound_holds: bool | None = None


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon={epsilon} outside (0, 1)")


# ---------------------------------------------------------------------------
# outcome groups


def compositions(n: int, k: int) -> np.ndarray:
    """All length-``k`` nonnegative integer vectors summing to ``n`` (one per row)."""
    count = math.comb(n + k - 1, k - 1)
    if count > MAX_TYPE_CLASSES:
        raise ResourceCapError(f"{count} type classes exceed cap {MAX_TYPE_CLASSES}")
    if k == 1:
        return np.array([[n]])
    # Stars and bars: choose k-1 bar positions among n+k-1 slots.
    bars = np.array(list(itertools.combinations(range(n + k - 1), k - 1)), dtype=np.int64)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), n + k - 1)])
    return np.diff(edges, axis=1) - 1


def _log_or_neg_inf(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def type_class_logprobs(n: int, p0: np.ndarray, p1: np.ndarray):
    """Per type class: counts, log size, log P(class | h0), log P(class | h1)."""
    counts = compositions(n, p0.size)
    log_size = gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)
    out = []
    for p in (p0, p1):
        lp = _log_or_neg_inf(p)
        used = counts > 0
        # 0 * log 0 = 0: unused symbols contribute nothing even if p = 0.
        term = np.where(used, counts * np.where(used, lp, 0.0), 0.0)
        out.append(log_size + term.sum(axis=1))
    return counts, log_size, out[0], out[1]


def _outcomes(spec: TestSpec):
    """Groups of outcomes as (log_size, lp0, lp1) arrays."""
    if spec.product_form:
        _, log_size, lp0, lp1 = type_class_logprobs(spec.n, spec.p_h0, spec.p_h1)
        return log_size, lp0, lp1
    lp0, lp1 = _log_or_neg_inf(spec.joint_h0), _log_or_neg_inf(spec.joint_h1)
    return np.zeros(lp0.size), lp0, lp1


def _llr(lp0: np.ndarray, lp1: np.ndarray) -> np.ndarray:
    """Log-likelihood ratio with symbolic infinities; nan where both laws vanish."""
    llr = np.full(lp0.size, np.nan)
    f0, f1 = np.isfinite(lp0), np.isfinite(lp1)
    both = f0 & f1
    llr[both] = lp0[both] - lp1[both]
    llr[f0 & ~f1] = np.inf
    llr[~f0 & f1] = -np.inf
    return llr


def _tie_groups(sorted_llr: np.ndarray) -> list[tuple[int, int]]:
    """Index ranges of equal log-likelihood ratios in a descending array."""
    groups = []
    start = 0
    for i in range(1, sorted_llr.size + 1):
        if i == sorted_llr.size:
            groups.append((start, i))
            break
        a, b = sorted_llr[start], sorted_llr[i]
        if a == b:
            continue
        if math.isfinite(a) and math.isfinite(b) and abs(a - b) <= TIE_RTOL * max(1.0, abs(a)):
            continue
        groups.append((start, i))
        start = i
    return groups


def _logsum(x: np.ndarray) -> float:
    return float(logsumexp(x)) if x.size else -math.inf


# ---------------------------------------------------------------------------
# oracles


def np_exact(spec: TestSpec, epsilon: float | None = None) -> TestResult:
    """Randomized Neyman-Pearson test: minimal type-II error with type-I error at most epsilon.

    Outcome groups are sorted by likelihood ratio ``p_h0 / p_h1`` (descending)
    and added to the accept-h0 region until its h0-probability reaches
    ``1 - epsilon``; the boundary tie group is accepted with the fractional
    probability that makes the type-I error exactly ``epsilon``.
    """
    epsilon = spec.epsilon if epsilon is None else epsilon
    if epsilon is None:
        raise ValueError("epsilon is required for the Neyman-Pearson test")
    _check_epsilon(epsilon)
    _, lp0, lp1 = _outcomes(spec)
    llr = _llr(lp0, lp1)
    keep = ~np.isnan(llr)
    lp0, lp1, llr = lp0[keep], lp1[keep], llr[keep]
    order = np.argsort(-llr, kind="stable")
    lp0, lp1, llr = lp0[order], lp1[order], llr[order]

    target = 1.0 - epsilon
    acc0 = 0.0
    accepted_lp1 = []
    n_accept = n_boundary = 0
    threshold, rand = math.inf, 0.0
    boundary_lp1 = -math.inf
    for a, b in _tie_groups(llr):
        g0 = math.exp(_logsum(lp0[a:b]))
        g1 = _logsum(lp1[a:b])
        if acc0 + g0 < target:
            acc0 += g0
            accepted_lp1.append(g1)
            n_accept += b - a
            continue
        rand = (target - acc0) / g0 if g0 > 0 else 0.0
        rand = min(max(rand, 0.0), 1.0)
        threshold = float(llr[a])
        boundary_lp1 = g1 + math.log(rand) if rand > 0 else -math.inf
        acc0 += rand * g0
        n_boundary = b - a
        break
    log_beta = _logsum(np.array(accepted_lp1 + [boundary_lp1]))
    total = int(llr.size)
    return TestResult(
        type1=max(0.0, 1.0 - acc0),
        type2=math.exp(log_beta),
        threshold=threshold,
        randomization=rand,
        region_summary={"accept_h0": n_accept, "boundary": n_boundary, "reject_h0": total - n_accept - n_boundary},
        log_error=log_beta,
    )


def np_threshold_test(spec: TestSpec, delta_prime: float) -> TestResult:
    """Deterministic test accepting h0 when ``(1/n) log LR >= D - delta'/n``.

    ``D`` is the per-slot divergence of the i.i.d. laws (or the joint divergence
    divided by ``n`` in explicit form). Every accepted outcome satisfies
    ``p_h1 <= p_h0 * exp(-n t)``, hence ``type2 <= exp(-n t)``; the result
    reports whether this bound holds for the computed errors.
    """
    if delta_prime <= 0:
        raise ValueError("delta_prime must be positive")
    if spec.product_form:
        d_total = spec.n * kl(spec.p_h0, spec.p_h1)
    else:
        d_total = kl(spec.joint_h0, spec.joint_h1)
    if not math.isfinite(d_total):
        raise ValueError("threshold test needs a finite divergence")
    t = (d_total - delta_prime) / spec.n
    _, lp0, lp1 = _outcomes(spec)
    llr = _llr(lp0, lp1)
    keep = ~np.isnan(llr)
    lp0, lp1, llr = lp0[keep], lp1[keep], llr[keep]
    accept = llr >= spec.n * t
    log_type2 = _logsum(lp1[accept])
    type1 = float(np.exp(lp0[~accept]).sum()) if np.any(~accept) else 0.0
    # Each accepted outcome obeys lp1 <= lp0 - n t, so the bound inherits only
    # rounding error from the log sums.
    bound = -spec.n * t
    holds = log_type2 <= bound + 1e-12 * max(1.0, abs(bound))
    return TestResult(
        type1=type1,
        type2=math.exp(log_type2),
        threshold=t,
        region_summary={"accept_h0": int(accept.sum()), "reject_h0": int((~accept).sum())},
        log_error=log_type2,
        bound_holds=bool(holds),
    )


def bayes_exact(spec: TestSpec, prior_h0: float = 0.5, prior_h1: float = 0.5) -> TestResult:
    """Minimal Bayes error ``sum min(p0 P_h0, p1 P_h1)``; ties decide h0."""
    if prior_h0 <= 0 or prior_h1 <= 0 or abs(prior_h0 + prior_h1 - 1.0) > 1e-12:
        raise ValueError("priors must be positive and sum to 1")
    _, lp0, lp1 = _outcomes(spec)
    w0 = lp0 + math.log(prior_h0)
    w1 = lp1 + math.log(prior_h1)
    decide_h0 = w0 >= w1
    log_alpha = _logsum(np.concatenate([w1[decide_h0], w0[~decide_h0]]))
    type1 = float(np.exp(lp0[~decide_h0]).sum())
    type2 = float(np.exp(lp1[decide_h0]).sum())
    live = np.isfinite(lp0) | np.isfinite(lp1)
    return TestResult(
        type1=type1,
        type2=type2,
        bayes_error=math.exp(log_alpha),
        threshold=math.log(prior_h1 / prior_h0),
        region_summary={"decide_h0": int((decide_h0 & live).sum()), "decide_h1": int((~decide_h0 & live).sum())},
        log_error=log_alpha,
    )


# ---------------------------------------------------------------------------
# finite-n exponents


@dataclass
class TrendTable:
    mode: str
    rows: list  # (n, error, exponent)
    limit: float

    @property
    def gaps(self) -> np.ndarray:
        return np.array([abs(r[2] - self.limit) for r in self.rows])

    @property
    def approaching(self) -> bool:
        g = self.gaps
        return bool(g[-1] < g[0]) if g.size > 1 else True

    def to_csv(self) -> str:
        from .exponents import format_float

        lines = ["n,error,exponent_nats"]
        for n, err, ex in self.rows:
            lines.append(f"{n},{format_float(err)},{format_float(ex)}")
        return "\n".join(lines) + "\n"


def exponent_trend(
    p_h0,
    p_h1,
    n_values,
    mode: str = "bayes",
    epsilon: float = 0.99,
    prior_h0: float = 0.5,
    prior_h1: float = 0.5,
) -> TrendTable:
    """Exact ``-(1/n) log error`` for i.i.d. observations at each horizon.

    The limit column is the KL divergence (Neyman-Pearson) or the Chernoff
    information (Bayes) of the per-slot laws.
    """
    p_h0, p_h1 = np.asarray(p_h0, float), np.asarray(p_h1, float)
    rows = []
    for n in n_values:
        n = int(n)
        spec = TestSpec(n, p_h0, p_h1, mode=mode, epsilon=epsilon if mode == "neyman_pearson" else None)
        res = np_exact(spec) if mode == "neyman_pearson" else bayes_exact(spec, prior_h0, prior_h1)
        rows.append((n, math.exp(res.log_error), -res.log_error / n))
    limit = kl(p_h0, p_h1) if mode == "neyman_pearson" else chernoff(p_h0, p_h1)[0]
    return TrendTable(mode, rows, limit)
