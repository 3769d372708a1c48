"""Finite alphabets, pmfs, conditional policies and the divergences built on them.

All information measures are in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

SCHEMA_VERSION = "privexp-v1"
PMF_TOL = 1e-12

# Golden-section tolerance in tau for the Chernoff information search.
TAU_TOL = 1e-9
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Alphabet:
    """Strictly increasing finite set of real symbols."""

    symbols: np.ndarray

    def __post_init__(self):
        arr = _frozen(np.ravel(self.symbols))
        if arr.size == 0:
            raise ValueError("alphabet must be nonempty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("alphabet symbols must be finite")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("alphabet symbols must be strictly increasing")
        object.__setattr__(self, "symbols", arr)

    def __len__(self) -> int:
        return self.symbols.size

    def __iter__(self):
        return iter(self.symbols.tolist())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Alphabet)
            and len(self) == len(other)
            and bool(np.all(self.symbols == other.symbols))
        )

    def __hash__(self) -> int:
        return hash(self.symbols.tobytes())

    def __repr__(self) -> str:
        return f"Alphabet({self.symbols.tolist()})"

    def index(self, symbol: float) -> int:
        i = int(np.searchsorted(self.symbols, symbol))
        if i >= len(self) or self.symbols[i] != symbol:
            raise ValueError(f"symbol {symbol!r} not in {self!r}")
        return i

    def indices(self, values) -> np.ndarray:
        """Vectorized :meth:`index`; raises on any symbol outside the alphabet."""
        values = np.asarray(values, dtype=float)
        idx = np.searchsorted(self.symbols, values)
        bad = (idx >= len(self)) | (self.symbols[np.minimum(idx, len(self) - 1)] != values)
        if np.any(bad):
            raise ValueError(f"symbols {np.unique(values[bad]).tolist()} not in {self!r}")
        return idx


@dataclass(frozen=True, eq=False)
class Pmf:
    """Probability mass function over an :class:`Alphabet`."""

    alphabet: Alphabet
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(np.ravel(self.probs))
        if p.size != len(self.alphabet):
            raise ValueError(f"{p.size} probabilities for an alphabet of size {len(self.alphabet)}")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > PMF_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.15g}, not 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def normalized(cls, alphabet: Alphabet, weights) -> "Pmf":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive total")
        return cls(alphabet, w / w.sum())

    @classmethod
    def point_mass(cls, alphabet: Alphabet, symbol: float) -> "Pmf":
        p = np.zeros(len(alphabet))
        p[alphabet.index(symbol)] = 1.0
        return cls(alphabet, p)

    @property
    def support(self) -> np.ndarray:
        return self.probs > 0

    def mean(self) -> float:
        return float(self.probs @ self.alphabet.symbols)

    def __repr__(self) -> str:
        return f"Pmf({dict(zip(self.alphabet, self.probs.tolist()))})"


@dataclass(frozen=True, eq=False)
class ConditionalPmf:
    """Row-stochastic matrix ``matrix[i, j] = P(Y = y_j | X = x_i)``.

    ``mask`` marks forbidden (x, y) pairs; those entries must be exactly zero.
    """

    x_alphabet: Alphabet
    y_alphabet: Alphabet
    matrix: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        m = _frozen(self.matrix)
        shape = (len(self.x_alphabet), len(self.y_alphabet))
        if m.shape != shape:
            raise ValueError(f"conditional has shape {m.shape}, expected {shape}")
        if np.any(m < 0) or np.any(m > 1) or not np.all(np.isfinite(m)):
            raise ValueError("conditional entries must lie in [0, 1]")
        bad = np.abs(m.sum(axis=1) - 1.0) > PMF_TOL
        if np.any(bad):
            raise ValueError(f"rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != shape:
                raise ValueError("mask shape does not match the conditional")
            if np.any(m[mask] != 0):
                raise ValueError("conditional puts mass on forbidden pairs")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, alphabet: Alphabet) -> "ConditionalPmf":
        return cls(alphabet, alphabet, np.eye(len(alphabet)))

    def row(self, x: float) -> Pmf:
        return Pmf(self.y_alphabet, self.matrix[self.x_alphabet.index(x)])


@dataclass(frozen=True, eq=False)
class PolicyPair:
    """Memoryless hypothesis-aware policy: one conditional per hypothesis."""

    cond_h0: ConditionalPmf
    cond_h1: ConditionalPmf

    def __post_init__(self):
        if self.cond_h0.x_alphabet != self.cond_h1.x_alphabet:
            raise ValueError("policy members use different data alphabets")
        if self.cond_h0.y_alphabet != self.cond_h1.y_alphabet:
            raise ValueError("policy members use different observation alphabets")

    @property
    def x_alphabet(self) -> Alphabet:
        return self.cond_h0.x_alphabet

    @property
    def y_alphabet(self) -> Alphabet:
        return self.cond_h0.y_alphabet

    def __getitem__(self, h: int) -> ConditionalPmf:
        if h not in (0, 1):
            raise IndexError("hypothesis index must be 0 or 1")
        return self.cond_h1 if h else self.cond_h0


@dataclass(frozen=True, eq=False)
class SourceModel:
    """Pair of data pmfs on a shared alphabet plus the hypothesis priors.

    Priors follow the convention ``0 < prior_h0 <= prior_h1 < 1``. The
    divergence ``D(p_x_h0 || p_x_h1)`` must be finite; it must also be
    positive unless ``strict=False`` (useful for degenerate test sources).
    """

    x_alphabet: Alphabet
    p_x_h0: Pmf
    p_x_h1: Pmf
    prior_h0: float = 0.5
    prior_h1: float = 0.5
    strict: bool = field(default=True, repr=False)

    def __post_init__(self):
        for p in (self.p_x_h0, self.p_x_h1):
            if p.alphabet != self.x_alphabet:
                raise ValueError("source pmfs must live on x_alphabet")
        p0, p1 = float(self.prior_h0), float(self.prior_h1)
        if abs(p0 + p1 - 1.0) > PMF_TOL:
            raise ValueError("priors must sum to 1")
        if not 0.0 < p0 <= p1 < 1.0:
            raise ValueError("priors must satisfy 0 < prior_h0 <= prior_h1 < 1")
        d = kl(self.p_x_h0, self.p_x_h1)
        if not math.isfinite(d):
            raise ValueError("D(p_x_h0 || p_x_h1) must be finite")
        if self.strict and d <= 0.0:
            raise ValueError("D(p_x_h0 || p_x_h1) must be positive")

    @classmethod
    def from_probs(cls, symbols, p0, p1, prior_h0=0.5, prior_h1=0.5, strict=True) -> "SourceModel":
        a = Alphabet(symbols)
        return cls(a, Pmf(a, p0), Pmf(a, p1), prior_h0, prior_h1, strict)

    @classmethod
    def binary(cls, p_bar: float, p_tilde: float, symbols=(0.0, 2.0), **kwargs) -> "SourceModel":
        """Two-symbol source with ``P(X = min | h0) = p_bar``, ``P(X = min | h1) = p_tilde``."""
        return cls.from_probs(symbols, [p_bar, 1 - p_bar], [p_tilde, 1 - p_tilde], **kwargs)

    def pmf(self, h: int) -> Pmf:
        return self.p_x_h1 if h else self.p_x_h0

    @property
    def divergence(self) -> float:
        return kl(self.p_x_h0, self.p_x_h1)


# ---------------------------------------------------------------------------
# information measures

PmfLike = Union[Pmf, Sequence[float], np.ndarray]


def _pair(p: PmfLike, q: PmfLike) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, Pmf) and isinstance(q, Pmf) and p.alphabet != q.alphabet:
        raise ValueError("pmfs live on different alphabets")
    pa = p.probs if isinstance(p, Pmf) else np.asarray(p, dtype=float)
    qa = q.probs if isinstance(q, Pmf) else np.asarray(q, dtype=float)
    if pa.shape != qa.shape:
        raise ValueError(f"pmf shapes differ: {pa.shape} vs {qa.shape}")
    return pa, qa


def marginal(source_pmf: Pmf, cond: ConditionalPmf) -> Pmf:
    """Output pmf ``sum_x p(x) P(y|x)``."""
    if source_pmf.alphabet != cond.x_alphabet:
        raise ValueError("source pmf and conditional use different data alphabets")
    m = source_pmf.probs @ cond.matrix
    return Pmf(cond.y_alphabet, m / m.sum())


def kl(p: PmfLike, q: PmfLike) -> float:
    """Kullback-Leibler divergence ``D(p || q)``; ``inf`` if p is not dominated by q."""
    p, q = _pair(p, q)
    pos = p > 0
    if np.any(q[pos] <= 0):
        return math.inf
    return max(float(np.sum(p[pos] * np.log(p[pos] / q[pos]))), 0.0)


def chernoff_coeff(p: PmfLike, q: PmfLike, tau: float) -> float:
    """``C_tau(p, q) = -log sum p^tau q^(1-tau)``.

    A term whose zero-exponent factor is a zero probability counts as 0, so
    ``C_1(p, q) = -log p(q > 0)`` and ``C_0(p, q) = -log q(p > 0)``.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau={tau} outside [0, 1]")
    p, q = _pair(p, q)
    both = (p > 0) & (q > 0)
    s = float(np.sum(p[both] ** tau * q[both] ** (1.0 - tau)))
    if s <= 0.0:
        return math.inf
    return max(-math.log(s), 0.0)


def renyi(p: PmfLike, q: PmfLike, tau: float) -> float:
    """Renyi divergence of order ``tau`` in [0, 1).

    Related to the Chernoff coefficient by ``D_tau(p||q) = C_tau(p, q) / (1 - tau)``.
    """
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"Renyi order {tau} outside [0, 1)")
    return chernoff_coeff(p, q, tau) / (1.0 - tau)


def chernoff(p: PmfLike, q: PmfLike, tol: float = TAU_TOL) -> tuple[float, float]:
    """Chernoff information ``max_tau C_tau(p, q)`` and its maximizer.

    ``tau -> C_tau`` is concave, so a golden-section search on [0, 1] plus the
    two endpoints finds the maximum. Identical pmfs report ``tau_star = 0.5``.
    """
    p, q = _pair(p, q)
    if np.array_equal(p, q):
        return 0.0, 0.5
    f = lambda t: chernoff_coeff(p, q, t)  # noqa: E731
    tau, val = golden_max(f, 0.0, 1.0, tol)
    for t in (0.0, 1.0):
        v = f(t)
        if v > val:
            tau, val = t, v
    return val, tau


def golden_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section maximization of a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def total_variation(p: PmfLike, q: PmfLike) -> float:
    p, q = _pair(p, q)
    return 0.5 * float(np.abs(p - q).sum())


# ---------------------------------------------------------------------------
# privexp-v1 JSON


def alphabet_from_json(data) -> Alphabet:
    return Alphabet(data)


def pmf_to_json(p: Pmf) -> dict:
    return {"schema": SCHEMA_VERSION, "alphabet": p.alphabet.symbols.tolist(), "probs": p.probs.tolist()}


def pmf_from_json(data: dict) -> Pmf:
    _check_schema(data)
    return Pmf(Alphabet(data["alphabet"]), data["probs"])


def source_to_json(src: SourceModel) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "source",
        "x_alphabet": src.x_alphabet.symbols.tolist(),
        "p_x_h0": src.p_x_h0.probs.tolist(),
        "p_x_h1": src.p_x_h1.probs.tolist(),
        "prior_h0": src.prior_h0,
        "prior_h1": src.prior_h1,
    }


def source_from_json(data: dict, strict: bool = True) -> SourceModel:
    _check_schema(data)
    return SourceModel.from_probs(
        data["x_alphabet"],
        data["p_x_h0"],
        data["p_x_h1"],
        data.get("prior_h0", 0.5),
        data.get("prior_h1", 0.5),
        strict=strict,
    )


def policy_to_json(policy: PolicyPair) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "kind": "policy",
        "x_alphabet": policy.x_alphabet.symbols.tolist(),
        "y_alphabet": policy.y_alphabet.symbols.tolist(),
        "cond_h0": policy.cond_h0.matrix.tolist(),
        "cond_h1": policy.cond_h1.matrix.tolist(),
    }


def policy_from_json(data: dict) -> PolicyPair:
    _check_schema(data)
    xa, ya = Alphabet(data["x_alphabet"]), Alphabet(data["y_alphabet"])
    return PolicyPair(
        ConditionalPmf(xa, ya, np.asarray(data["cond_h0"], dtype=float)),
        ConditionalPmf(xa, ya, np.asarray(data["cond_h1"], dtype=float)),
    )


def _check_schema(data: dict) -> None:
    version = data.get("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema {version!r}, expected {SCHEMA_VERSION!r}")
