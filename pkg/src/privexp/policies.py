"""Executable management policies.

* ``memoryless_policy_apply`` runs a hypothesis-aware memoryless policy:
  every slot draws ``y_i`` from the row of the true hypothesis at ``x_i``.
* ``two_phase_apply`` runs the hypothesis-unaware policy with memory. It
  first emits ``min(Y)`` for ``o(n) = floor(log n)`` slots while learning the
  hypothesis with a relative-entropy typical-set test. It then applies the
  single-letter optimizer row of the learned hypothesis at reduced budgets
  ``(s - delta, s - omega)``.
* ``two_phase_audit`` checks the long-run distortion budget by Monte Carlo.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .distributions import PolicyPair, SourceModel
from .exponents import ConstraintSet, DistortionSpec, ExponentResult, solve_nu, solve_phi

H0, H1 = 0, 1
VARIANTS = ("np_rho_p", "bayes_rho_q")


def _rng(seed) -> np.random.Generator:
    if seed is None:
        raise ValueError("a seed is required for reproducible sampling")
    return np.random.default_rng(seed)


def sample_rows(rng: np.random.Generator, matrix: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """One draw per entry of ``rows`` from the corresponding row pmf of ``matrix`` (indices)."""
    cdf = np.cumsum(matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(rows.size)
    return (u[:, None] >= cdf[rows]).sum(axis=1)


def memoryless_policy_apply(policy: PolicyPair, h: int, x_seq, rng_seed) -> np.ndarray:
    """Outputs of the memoryless policy under hypothesis ``h``; deterministic given the seed."""
    if h not in (H0, H1):
        raise ValueError(f"hypothesis must be 0 or 1, got {h!r}")
    cond = policy[h]
    xi = cond.x_alphabet.indices(np.asarray(x_seq, dtype=float))
    yi = sample_rows(_rng(rng_seed), cond.matrix, xi)
    return cond.y_alphabet.symbols[yi]


def log_likelihoods(x_idx: np.ndarray, source: SourceModel) -> tuple[float, float]:
    """``log p_h(x^o)`` under both hypotheses, ``-inf`` for impossible sequences."""
    out = []
    for h in (H0, H1):
        p = source.pmf(h).probs[x_idx]
        out.append(-math.inf if np.any(p == 0) else float(np.log(p).sum()))
    return out[0], out[1]


def typical_set_decision(x_learn, source: SourceModel, xi: float) -> int:
    """Decide h0 iff ``|(1/o) log(p_h0(x^o)/p_h1(x^o)) - D| <= xi``.

    A sequence impossible under h0 decides h1. A sequence impossible under
    h1 (but possible under h0) has an infinite ratio. That falls outside the
    band, so by the formula it also decides h1, even though such data
    can only have come from h0.
    """
    x_learn = np.asarray(x_learn, dtype=float)
    if x_learn.size < 1:
        raise ValueError("learning sequence must be nonempty")
    idx = source.x_alphabet.indices(x_learn)
    return _decide(idx, source, xi)


def _decide(idx: np.ndarray, source: SourceModel, xi: float) -> int:
    l0, l1 = log_likelihoods(idx, source)
    if not math.isfinite(l0) or not math.isfinite(l1):
        return H1
    return H0 if abs((l0 - l1) / idx.size - source.divergence) <= xi else H1


# ---------------------------------------------------------------------------
# two-phase configuration


def learning_length(n: int, log_base: float = math.e) -> int:
    """``o(n) = floor(log n)``, natural log by default."""
    return int(math.floor(math.log(n) / math.log(log_base) + 1e-12))


@dataclass(frozen=True)
class TwoPhaseConfig:
    """Parameters of the two-phase policy, validated against the learning chain.

    Pass ``epsilon_prime`` (Neyman-Pearson variant, ``xi = 1 - epsilon_prime``)
    or ``xi`` directly (Bayes variant; also accepted for the NP variant).
    """

    n: int
    s: float
    delta: float
    omega: float
    divergence: float
    d_max: float
    xi: float | None = None
    epsilon_prime: float | None = None
    variant: str = "np_rho_p"
    log_base: float = math.e

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not 0 < self.delta < self.s or not 0 < self.omega < self.s:
            raise ValueError("delta and omega must lie in (0, s)")
        if self.learning_slots < 1:
            raise ValueError(f"n={self.n} gives an empty learning phase")
        cap = min(self.divergence, self.delta / self.d_max)
        if self.variant == "np_rho_p":
            eps = self.epsilon_prime
            if eps is None:
                if self.xi is None:
                    raise ValueError("give epsilon_prime or xi")
                eps = 1.0 - self.xi
                object.__setattr__(self, "epsilon_prime", eps)
            if not max(0.0, 1.0 - cap) < eps < 1.0:
                raise ValueError(f"epsilon_prime={eps} outside ({max(0.0, 1.0 - cap):.6g}, 1)")
            if self.xi is None:
                object.__setattr__(self, "xi", 1.0 - eps)
            elif abs(self.xi - (1.0 - eps)) > 1e-12:
                raise ValueError("xi must equal 1 - epsilon_prime")
        else:
            if self.xi is None or not 0.0 < self.xi < cap:
                raise ValueError(f"xi must lie in (0, {cap:.6g})")
        if self.psi <= 0:
            raise ValueError("psi = delta - d_max * xi must be positive")

    @classmethod
    def for_source(cls, n: int, s: float, source: SourceModel, distortion: DistortionSpec, delta: float,
                   omega: float, **kwargs) -> "TwoPhaseConfig":
        return cls(n=n, s=s, delta=delta, omega=omega, divergence=source.divergence, d_max=distortion.d_max,
                   **kwargs)

    @property
    def learning_slots(self) -> int:
        return learning_length(self.n, self.log_base)

    @property
    def phase_boundary(self) -> int:
        """First slot (1-based) of the privacy-preserving phase, ``c(n) = o(n) + 1``."""
        return self.learning_slots + 1

    @property
    def privacy_slots(self) -> int:
        return self.n - self.learning_slots

    @property
    def psi(self) -> float:
        return self.delta - self.d_max * self.xi

    @property
    def phase2_budgets(self) -> tuple[float, float]:
        return self.s - self.delta, self.s - self.omega

    @property
    def h0_margin(self) -> float:
        """``psi - (o(n)/n) d_max``; the h0 budget argument needs it nonnegative."""
        return self.psi - self.learning_slots / self.n * self.d_max

    @property
    def h1_excess(self) -> float:
        """Upper bound on the h1 budget excess; the argument needs it nonpositive."""
        o = self.learning_slots
        return self.d_max * math.exp(-o * (self.divergence - self.xi)) + o / self.n * self.d_max - self.omega

    @property
    def horizon_ok(self) -> bool:
        return self.h0_margin >= 0 and self.h1_excess <= 0


# ---------------------------------------------------------------------------
# phase-2 solver cache

_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def _cache_key(source, distortion, budgets, variant):
    return (
        variant,
        budgets,
        source.x_alphabet.symbols.tobytes(),
        source.p_x_h0.probs.tobytes(),
        source.p_x_h1.probs.tobytes(),
        distortion.y_alphabet.symbols.tobytes(),
        distortion.d.tobytes(),
        distortion.mask.tobytes(),
    )


def phase2_solution(cfg: TwoPhaseConfig, source: SourceModel, distortion: DistortionSpec) -> ExponentResult:
    """Single-letter optimizer at the reduced budgets, cached per source and budgets."""
    budgets = cfg.phase2_budgets
    key = _cache_key(source, distortion, budgets, cfg.variant)
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
    if hit is not None:
        return hit
    cons = ConstraintSet(distortion, *budgets)
    res = solve_phi(source, cons) if cfg.variant == "np_rho_p" else solve_nu(source, cons)
    with _CACHE_LOCK:
        _CACHE.setdefault(key, res)
    return res


# ---------------------------------------------------------------------------
# traces


@dataclass
class PolicyTrace:
    x_seq: np.ndarray
    y_seq: np.ndarray
    hypothesis: int
    learned_h: int | None
    distortions: np.ndarray
    phase_boundary: int

    @property
    def n(self) -> int:
        return int(self.x_seq.size)

    @property
    def average_distortion(self) -> float:
        return float(self.distortions.mean())

    def phases(self) -> np.ndarray:
        return np.where(np.arange(1, self.n + 1) < self.phase_boundary, 1, 2)

    def to_csv(self) -> str:
        from .exponents import format_float

        lines = ["slot,x,y,phase,distortion"]
        for i, (x, y, ph, d) in enumerate(zip(self.x_seq, self.y_seq, self.phases(), self.distortions), start=1):
            lines.append(f"{i},{format_float(x)},{format_float(y)},{ph},{format_float(d)}")
        return "\n".join(lines) + "\n"


def two_phase_apply(cfg: TwoPhaseConfig, source: SourceModel, distortion: DistortionSpec, h: int, x_seq,
                    rng_seed) -> PolicyTrace:
    """Run the two-phase hypothesis-unaware policy on ``x_seq`` (length ``cfg.n``).

    ``h`` is recorded in the trace only; the policy never reads it.
    """
    x_seq = np.asarray(x_seq, dtype=float)
    if x_seq.size != cfg.n:
        raise ValueError(f"x_seq has length {x_seq.size}, expected n={cfg.n}")
    xa, ya = distortion.x_alphabet, distortion.y_alphabet
    xi_idx = xa.indices(x_seq)
    o = cfg.learning_slots
    y_idx = np.zeros(cfg.n, dtype=int)  # phase 1: min(Y) is index 0
    learned = _decide(xi_idx[:o], source, cfg.xi)
    res = phase2_solution(cfg, source, distortion)
    row = res.policy[learned].matrix
    y_idx[o:] = sample_rows(_rng(rng_seed), row, xi_idx[o:])
    d = distortion.d[xi_idx, y_idx]
    if np.any(distortion.mask[xi_idx, y_idx]):
        raise RuntimeError("policy emitted a forbidden output")
    return PolicyTrace(x_seq, ya.symbols[y_idx], h, learned, d, cfg.phase_boundary)


def draw_source(source: SourceModel, h: int, n: int, rng_seed) -> np.ndarray:
    rng = _rng(rng_seed)
    idx = rng.choice(len(source.x_alphabet), size=n, p=source.pmf(h).probs)
    return source.x_alphabet.symbols[idx]


# ---------------------------------------------------------------------------
# Monte Carlo distortion audit


@dataclass
class HypothesisAudit:
    hypothesis: int
    mean_distortion: float
    std_error: float
    learning_error: float
    learning_std_error: float
    phase1_constant: bool
    within_budget: bool


@dataclass
class TwoPhaseAudit:
    config: TwoPhaseConfig
    traces: int
    per_hypothesis: list = field(default_factory=list)
    learning_ok: bool = True

    @property
    def passed(self) -> bool:
        return all(a.within_budget and a.phase1_constant for a in self.per_hypothesis) and self.learning_ok

    def to_csv(self) -> str:
        from .exponents import format_float

        lines = ["hypothesis,mean_distortion,std_error,budget,learning_error,phase1_constant,within_budget"]
        for a in self.per_hypothesis:
            lines.append(",".join([
                f"h{a.hypothesis}", format_float(a.mean_distortion), format_float(a.std_error),
                format_float(self.config.s), format_float(a.learning_error),
                str(a.phase1_constant).lower(), str(a.within_budget).lower(),
            ]))
        return "\n".join(lines) + "\n"


def _phase1_constant(cfg, source, distortion, h, rng, count) -> bool:
    """Run ``count`` full slot-by-slot traces and check that phase 1 emits only min(Y)."""
    ymin = distortion.y_alphabet.symbols[0]
    for _ in range(count):
        x = draw_source(source, h, cfg.n, rng.integers(2**63))
        trace = two_phase_apply(cfg, source, distortion, h, x, rng.integers(2**63))
        if np.any(trace.y_seq[: cfg.learning_slots] != ymin):
            return False
    return True


def two_phase_audit(cfg: TwoPhaseConfig, source: SourceModel, distortion: DistortionSpec, traces: int,
                    rng_seed, full_traces: int = 10) -> TwoPhaseAudit:
    """Monte Carlo check of ``E[(1/n) sum d(X_i, Y_i) | h] <= s`` for both hypotheses.

    Each replica draws its learning phase slot by slot and decides the
    hypothesis. Given that decision, the privacy phase is i.i.d. over
    ``(X, Y)`` pairs, so its distortion total comes from one multinomial draw
    of pair counts. This has exactly the distribution of the slot-by-slot
    simulation. ``full_traces`` extra replicas per hypothesis run slot by slot
    through :func:`two_phase_apply` to confirm the constant learning phase.
    """
    if traces < 2:
        raise ValueError("need at least two traces")
    res = phase2_solution(cfg, source, distortion)
    o, q = cfg.learning_slots, cfg.privacy_slots
    seeds = np.random.SeedSequence(rng_seed).spawn(2)
    report = TwoPhaseAudit(cfg, traces)
    nx = len(source.x_alphabet)
    for h in (H0, H1):
        rng = np.random.default_rng(seeds[h])
        p = source.pmf(h).probs
        learn = rng.choice(nx, size=(traces, o), p=p)
        learned = np.array([_decide(row, source, cfg.xi) for row in learn])
        # Phase 1 emits min(Y), output index 0.
        total = distortion.d[learn, 0].sum(axis=1).astype(float)
        for g in (H0, H1):
            sel = learned == g
            if not np.any(sel):
                continue
            joint = (p[:, None] * res.policy[g].matrix).ravel()
            joint = joint / joint.sum()
            counts = rng.multinomial(q, joint, size=int(sel.sum()))
            total[sel] += counts @ distortion.d.ravel()
        avg = total / cfg.n
        mean, se = float(avg.mean()), float(avg.std(ddof=1) / math.sqrt(traces))
        err = float(np.mean(learned != h))
        ref = cfg.xi if h == H0 else err
        err_se = math.sqrt(max(ref * (1 - ref), 0.0) / traces)
        report.per_hypothesis.append(HypothesisAudit(
            hypothesis=h,
            mean_distortion=mean,
            std_error=se,
            learning_error=err,
            learning_std_error=err_se,
            phase1_constant=_phase1_constant(cfg, source, distortion, h, rng, full_traces),
            within_budget=mean <= cfg.s + 3 * se,
        ))
    h0 = report.per_hypothesis[0]
    report.learning_ok = h0.learning_error <= cfg.xi + 3 * h0.learning_std_error
    return report
