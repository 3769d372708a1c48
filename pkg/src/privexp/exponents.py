"""Single-letter privacy exponents over distortion-constrained policy pairs.

``solve_phi`` minimizes ``D(p_Y|h0 || p_Y|h1)`` and ``solve_nu_tau`` minimizes
``C_tau(p_Y|h0, p_Y|h1)`` over all memoryless policy pairs whose expected
distortion under each hypothesis stays within its budget. Both objectives
depend on the policy only through the two output marginals and are jointly
convex, so an away-step Frank-Wolfe method with an exact LP linear oracle
solves them to a certified duality gap. ``solve_nu`` maximizes ``nu_tau`` over
tau, which equals the min-max Chernoff value by the saddle-point property.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .distributions import (
    Alphabet,
    ConditionalPmf,
    PolicyPair,
    Pmf,
    SourceModel,
    TAU_TOL,
    chernoff,
    chernoff_coeff,
    golden_max,
    kl,
)
from .optim import (
    ActiveSet,
    ChernoffObjective,
    InfeasibleError,
    KLObjective,
    Polytope,
    barrier,
    frank_wolfe,
)

logger = logging.getLogger(__name__)

GAP_TOL = 1e-8
MAX_ITER = 50_000
INFEASIBILITY_TOL = 1e-10
BUDGET_TOL = 1e-8
EFFECTIVELY_INFINITE = 1e3
FW_ITER = 30


@dataclass(frozen=True, eq=False)
class DistortionSpec:
    """Distortion matrix ``d[x, y] >= 0`` with a mask of forbidden pairs.

    Entries of ``d`` on forbidden pairs are ignored (stored as 0).
    """

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    d: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        shape = (len(self.x_alphabet), len(self.y_alphabet))
        mask = np.array(self.mask, dtype=bool)
        d = np.array(self.d, dtype=float)
        if d.shape != shape or mask.shape != shape:
            raise ValueError(f"distortion and mask must have shape {shape}")
        d = np.where(mask, 0.0, d)
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("distortion must be finite and nonnegative on allowed pairs")
        if np.any(mask.all(axis=1)):
            raise ValueError("every data symbol needs at least one allowed output")
        d.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "mask", mask)

    @property
    def allowed(self) -> np.ndarray:
        return ~self.mask

    @property
    def d_max(self) -> float:
        return float(self.d[self.allowed].max())

    @classmethod
    def energy(cls, x_alphabet: Alphabet, y_alphabet: Alphabet | None = None) -> "DistortionSpec":
        """Smart-meter distortion ``d = x - y`` where supply may never exceed demand."""
        y_alphabet = x_alphabet if y_alphabet is None else y_alphabet
        diff = x_alphabet.symbols[:, None] - y_alphabet.symbols[None, :]
        return cls(x_alphabet, y_alphabet, np.maximum(diff, 0.0), diff < 0)

    @classmethod
    def hamming(cls, alphabet: Alphabet) -> "DistortionSpec":
        k = len(alphabet)
        return cls(alphabet, alphabet, 1.0 - np.eye(k), np.zeros((k, k), dtype=bool))


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Distortion spec plus per-hypothesis budgets ``s_bar`` (h0) and ``s_tilde`` (h1)."""

    distortion: DistortionSpec
    s_bar: float
    s_tilde: float

    def __post_init__(self):
        if not (self.s_bar > 0 and self.s_tilde > 0):
            raise ValueError("distortion budgets must be positive")

    @property
    def budgets(self) -> tuple[float, float]:
        return float(self.s_bar), float(self.s_tilde)


@dataclass(eq=False)
class ExponentResult:
    value: float
    policy: PolicyPair
    tau_star: float | None
    distortions: tuple[float, float]
    iterations: int
    duality_gap: float
    converged: bool
    objective: str = "kl"
    marginals: tuple[Pmf, Pmf] | None = None
    method: str = ""
    _state: ActiveSet | None = field(default=None, repr=False)

    @property
    def effectively_infinite(self) -> bool:
        return self.value > EFFECTIVELY_INFINITE


def _polytope(source: SourceModel, cons: ConstraintSet) -> Polytope:
    dist = cons.distortion
    if dist.x_alphabet != source.x_alphabet:
        raise ValueError("distortion and source use different data alphabets")
    p = np.vstack([source.p_x_h0.probs, source.p_x_h1.probs])
    poly = Polytope(p, dist.d, dist.allowed, cons.budgets)
    violation = poly.violation()
    if violation > INFEASIBILITY_TOL:
        raise InfeasibleError(f"budgets {cons.budgets} infeasible (violation {violation:.3g})")
    return poly


def feasibility_violation(source: SourceModel, cons: ConstraintSet) -> float:
    """Smallest achievable excess of expected distortion over the budgets (<= 0 if feasible)."""
    dist = cons.distortion
    p = np.vstack([source.p_x_h0.probs, source.p_x_h1.probs])
    return Polytope(p, dist.d, dist.allowed, cons.budgets).violation()


def _result(poly, dist, P, value, tau, it, gap, converged, name, method, state=None) -> ExponentResult:
    xa, ya = dist.x_alphabet, dist.y_alphabet
    P = np.where(dist.allowed[None], np.maximum(P, 0.0), 0.0)
    P = P / P.sum(axis=2, keepdims=True)
    policy = PolicyPair(ConditionalPmf(xa, ya, P[0], dist.mask), ConditionalPmf(xa, ya, P[1], dist.mask))
    m = poly.marginals(P)
    margs = (Pmf(ya, m[0] / m[0].sum()), Pmf(ya, m[1] / m[1].sum()))
    return ExponentResult(
        value=value,
        policy=policy,
        tau_star=tau,
        distortions=poly.distortions(P),
        iterations=it,
        duality_gap=gap,
        converged=converged,
        objective=name,
        marginals=margs,
        method=method,
        _state=state,
    )


def _solve_smooth(source, cons, obj, warm, tol, max_iter, fw_iter=FW_ITER) -> ExponentResult:
    dist = cons.distortion
    poly = _polytope(source, cons)
    zero = poly.equal_marginals_policy()
    if zero is not None:
        return _result(poly, dist, zero, 0.0, obj.tau, 0, 0.0, True, obj.name, "lp", ActiveSet.single(poly, zero))
    if isinstance(obj, KLObjective):
        # Output symbols no h1 policy can emit must carry no h0 mass.
        fallback = poly.interior_point()
        if not poly.restrict(0, np.broadcast_to(poly.reachable(1), poly.allow[0].shape)) or poly.violation() > 0:
            return _result(poly, dist, fallback, math.inf, None, 0, math.inf, False, obj.name, "lp")
    active = None
    if warm is not None and warm._state is not None:
        if all(a.shape == (2, poly.nx, poly.ny) and poly.contains(a, BUDGET_TOL) for a in warm._state.atoms):
            active = warm._state.copy()
    if active is None:
        active = ActiveSet.single(poly, poly.interior_point())
    active, gap, it, _ = frank_wolfe(poly, obj, active, tol, min(fw_iter, max_iter))
    P = active.point()
    method = "frank-wolfe"
    if gap > tol:
        Pb, steps, gap_b = barrier(poly, obj, tol)
        it += steps
        mb, mf = poly.marginals(Pb), poly.marginals(P)
        if gap_b <= tol or obj.value(mb[0], mb[1]) < obj.value(mf[0], mf[1]):
            P, gap, method = Pb, gap_b, "barrier"
            active = ActiveSet.single(poly, P)
    if gap > tol:
        logger.warning("%s: no certified optimum (gap %.3g after %d iterations)", obj.name, gap, it)
    m = poly.marginals(P)
    return _result(poly, dist, P, obj.value(m[0], m[1]), obj.tau, it, gap, gap <= tol, obj.name, method, active)


def solve_phi(
    source: SourceModel,
    cons: ConstraintSet,
    warm: ExponentResult | None = None,
    tol: float = GAP_TOL,
    max_iter: int = MAX_ITER,
) -> ExponentResult:
    """Minimal KL divergence between the two output marginals.

    Raises :class:`InfeasibleError` when no policy pair meets the budgets.
    Non-convergence returns the best iterate with ``converged=False``.
    """
    return _solve_smooth(source, cons, KLObjective(), warm, tol, max_iter)


def _solve_endpoint(source: SourceModel, cons: ConstraintSet, tau: float) -> ExponentResult:
    # C_1(m0, m1) = -log m0(supp m1): give m1 its maximal support, then push
    # as much h0 mass into that support as the budget allows. tau = 0 mirrors it.
    poly = _polytope(source, cons)
    pair = poly.interior_point()
    spread, push = (1, 0) if tau == 1.0 else (0, 1)
    support = np.flatnonzero(poly.reachable(spread))
    _, pair[push] = poly.max_output_mass(push, support)
    m = poly.marginals(pair)
    value = chernoff_coeff(m[0], m[1], tau)
    return _result(poly, cons.distortion, pair, value, tau, 0, 0.0, True, f"chernoff_tau={tau:g}", "lp",
                   ActiveSet.single(poly, pair))


def solve_nu_tau(
    source: SourceModel,
    cons: ConstraintSet,
    tau: float,
    warm: ExponentResult | None = None,
    tol: float = GAP_TOL,
    max_iter: int = MAX_ITER,
) -> ExponentResult:
    """Minimal ``C_tau`` between the two output marginals, for fixed tau in [0, 1]."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    if tau in (0.0, 1.0):
        return _solve_endpoint(source, cons, tau)
    return _solve_smooth(source, cons, ChernoffObjective(tau), warm, tol, max_iter)


def solve_nu(
    source: SourceModel,
    cons: ConstraintSet,
    warm: ExponentResult | None = None,
    tol: float = GAP_TOL,
    tau_tol: float = TAU_TOL,
    max_iter: int = MAX_ITER,
) -> ExponentResult:
    """Single-letter Chernoff exponent ``max_tau nu_tau``.

    ``tau -> nu_tau`` is concave, so a golden-section search over tau (inner
    problems warm-started from the previous tau) plus both endpoints finds
    the maximum. The reported policy is the inner optimizer at ``tau_star``;
    ``max_tau C_tau`` at that policy matches ``value`` at a saddle point.
    """
    poly = _polytope(source, cons)
    zero = poly.equal_marginals_policy()
    if zero is not None:
        state = ActiveSet.single(poly, zero)
        return _result(poly, cons.distortion, zero, 0.0, 0.5, 0, 0.0, True, "chernoff", "lp", state)

    cache: dict[float, ExponentResult] = {}
    last = [warm]

    def inner(tau: float) -> float:
        res = solve_nu_tau(source, cons, tau, warm=last[0], tol=tol, max_iter=max_iter)
        cache[tau] = res
        last[0] = res
        return res.value

    tau_star, _ = golden_max(inner, 0.0, 1.0, tau_tol)
    # Polish the maximizer with a tighter inner tolerance.
    best = solve_nu_tau(source, cons, tau_star, warm=cache[tau_star], tol=min(tol, 1e-9), max_iter=max_iter)
    for t in (0.0, 1.0):
        end = solve_nu_tau(source, cons, t)
        if end.value > best.value:
            best = end
    iterations = sum(r.iterations for r in cache.values()) + best.iterations
    converged = best.converged and all(r.converged for r in cache.values())
    best.objective = "chernoff"
    best.iterations = iterations
    best.converged = converged
    return best


def chernoff_at_policy(source: SourceModel, policy: PolicyPair) -> tuple[float, float]:
    """Chernoff information of the output marginals induced by ``policy``."""
    from .distributions import marginal

    return chernoff(marginal(source.p_x_h0, policy.cond_h0), marginal(source.p_x_h1, policy.cond_h1))


def objective_at_policy(source: SourceModel, policy: PolicyPair, objective: str = "kl", tau: float | None = None) -> float:
    from .distributions import marginal

    m0 = marginal(source.p_x_h0, policy.cond_h0)
    m1 = marginal(source.p_x_h1, policy.cond_h1)
    if objective == "kl":
        return kl(m0, m1)
    if objective == "chernoff":
        return chernoff(m0, m1)[0]
    return chernoff_coeff(m0, m1, tau)


# ---------------------------------------------------------------------------
# alphabet reduction


def quantize_to_demand_alphabet(policy: PolicyPair, target: Alphabet) -> PolicyPair:
    """Merge outputs onto ``target``: ``y in (x_(i-1), x_(i)]`` goes to ``x_(i)``.

    Outputs at or below the smallest target symbol go to that symbol. Outputs
    above the largest target symbol cannot arise under the supply-below-demand
    mask and are rejected.
    """
    ys = policy.y_alphabet.symbols
    xs = target.symbols
    if np.any((ys > xs[-1]) & (policy.cond_h0.matrix.sum(axis=0) + policy.cond_h1.matrix.sum(axis=0) > 0)):
        raise ValueError("policy emits outputs above the largest target symbol")
    dest = np.minimum(np.searchsorted(xs, ys, side="left"), len(xs) - 1)
    Q = np.zeros((len(ys), len(xs)))
    Q[np.arange(len(ys)), dest] = 1.0
    mask = None
    if policy.cond_h0.x_alphabet == target:
        mask = target.symbols[None, :] > policy.x_alphabet.symbols[:, None]
    conds = []
    for cond in (policy.cond_h0, policy.cond_h1):
        M = cond.matrix @ Q
        M = M / M.sum(axis=1, keepdims=True)
        if mask is not None and np.any(M[mask] > 0):
            mask = None
        conds.append(ConditionalPmf(cond.x_alphabet, target, M, mask))
    return PolicyPair(*conds)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    s: float
    value: float
    tau_star: float | None
    dist_h0: float
    dist_h1: float
    converged: bool
    error: str | None = None
    result: ExponentResult | None = field(default=None, repr=False)


@dataclass
class SweepTable:
    which: str
    rows: list[SweepRow]
    monotone: bool
    convex: bool

    @property
    def s_values(self) -> np.ndarray:
        return np.array([r.s for r in self.rows])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])


def audit_curve(s: Sequence[float], v: Sequence[float], tol: float) -> tuple[bool, bool]:
    """Non-increase and three-point convexity of a sampled curve, up to ``tol``."""
    s, v = np.asarray(s, float), np.asarray(v, float)
    ok = np.isfinite(v)
    s, v = s[ok], v[ok]
    monotone = bool(np.all(np.diff(v) <= tol))
    convex = True
    for i in range(1, len(s) - 1):
        lam = (s[i + 1] - s[i]) / (s[i + 1] - s[i - 1])
        chord = lam * v[i - 1] + (1 - lam) * v[i + 1]
        if v[i] > chord + tol:
            convex = False
    return monotone, convex


def _solve_one(which, source, cons, warm, tol, tau):
    if which == "phi":
        return solve_phi(source, cons, warm=warm, tol=tol)
    if which == "nu":
        return solve_nu(source, cons, warm=warm, tol=tol)
    if which == "nu_tau":
        return solve_nu_tau(source, cons, tau, warm=warm, tol=tol)
    raise ValueError(f"unknown exponent {which!r}")


def sweep_exponent(
    source: SourceModel,
    distortion: DistortionSpec,
    s_values: Iterable[float],
    which: str = "phi",
    tau: float | None = None,
    tol: float = GAP_TOL,
    warm_start: bool = True,
    threads: int = 1,
) -> SweepTable:
    """Solve ``which`` (phi, nu or nu_tau) at equal budgets ``s`` for every grid value.

    Warm-starting reuses each solution at the next (larger) budget. With
    ``warm_start=False`` the points are independent and may run on ``threads``
    workers; row order never depends on the thread count.
    """
    s_values = [float(s) for s in s_values]
    if any(s <= 0 for s in s_values):
        raise ValueError("budgets must be positive")
    if warm_start and any(b < a for a, b in zip(s_values, s_values[1:])):
        raise ValueError("s_values must be sorted for a warm-started sweep")

    def run(s, warm):
        try:
            res = _solve_one(which, source, ConstraintSet(distortion, s, s), warm, tol, tau)
        except (InfeasibleError, ValueError) as exc:
            return SweepRow(s, math.nan, None, math.nan, math.nan, False, str(exc))
        return SweepRow(s, res.value, res.tau_star, *res.distortions, res.converged, None, res)

    rows: list[SweepRow] = []
    if warm_start:
        warm = None
        for s in s_values:
            row = run(s, warm)
            rows.append(row)
            if row.result is not None:
                warm = row.result
    elif threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda s: run(s, None), s_values))
    else:
        rows = [run(s, None) for s in s_values]
    monotone, convex = audit_curve([r.s for r in rows], [r.value for r in rows], 2 * tol)
    if not monotone or not convex:
        logger.warning("%s sweep audit: monotone=%s convex=%s", which, monotone, convex)
    return SweepTable(which, rows, monotone, convex)


def format_float(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def sweep_to_csv(table: SweepTable) -> str:
    lines = ["s,value_nats,tau_star,dist_h0,dist_h1,converged"]
    for r in table.rows:
        lines.append(
            ",".join(
                [
                    format_float(r.s),
                    format_float(r.value),
                    format_float(r.tau_star),
                    format_float(r.dist_h0),
                    format_float(r.dist_h1),
                    "true" if r.converged else "false",
                ]
            )
        )
    return "\n".join(lines) + "\n"
