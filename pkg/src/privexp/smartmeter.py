"""Smart-meter specialization: renewable supply shaping of appliance demand.

The meter reports the grid supply ``y`` while the renewable source covers
``x - y``. The supply may never exceed the demand (the renewable battery is
not charged from the grid), and the long-run renewable usage per slot is at
most the generation rate ``s``. This is the distortion ``d(x, y) = x - y``
with pairs ``y > x`` forbidden.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .distributions import (
    SCHEMA_VERSION,
    Alphabet,
    ConditionalPmf,
    PolicyPair,
    Pmf,
    SourceModel,
    _check_schema,
    kl,
    total_variation,
)
from .exponents import ConstraintSet, DistortionSpec, ExponentResult, SweepTable, format_float, solve_nu, \
    solve_phi, sweep_exponent
from .policies import memoryless_policy_apply


@dataclass(frozen=True, eq=False)
class DemandModel:
    """Appliance demand statistics under the two hypotheses (watts)."""

    name: str
    x_alphabet: Alphabet
    p_x_h0: Pmf
    p_x_h1: Pmf
    labels: tuple[str, str] = ("h0", "h1")
    prior_h0: float = 0.5
    prior_h1: float = 0.5

    def __post_init__(self):
        if np.any(self.x_alphabet.symbols < 0):
            raise ValueError("demand values must be nonnegative")
        # Validates pmfs, priors and the divergence conditions.
        object.__setattr__(self, "_source", SourceModel(self.x_alphabet, self.p_x_h0, self.p_x_h1,
                                                        self.prior_h0, self.prior_h1))

    @property
    def source(self) -> SourceModel:
        return self._source

    @property
    def distortion(self) -> DistortionSpec:
        return DistortionSpec.energy(self.x_alphabet)

    @classmethod
    def from_probs(cls, name, symbols, p0, p1, labels=("h0", "h1"), prior_h0=0.5, prior_h1=0.5) -> "DemandModel":
        a = Alphabet(symbols)
        return cls(name, a, Pmf(a, p0), Pmf(a, p1), tuple(labels), prior_h0, prior_h1)

    @classmethod
    def binary(cls, p_bar: float, p_tilde: float, peak: float = 2.0) -> "DemandModel":
        """Demand 0 with probability ``p_bar`` (h0) / ``p_tilde`` (h1), else ``peak``."""
        return cls.from_probs(f"binary({p_bar:g},{p_tilde:g})", [0.0, peak], [p_bar, 1 - p_bar],
                              [p_tilde, 1 - p_tilde])

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": "demand_model",
            "name": self.name,
            "units": "W",
            "labels": list(self.labels),
            "x_alphabet": self.x_alphabet.symbols.tolist(),
            "p_x_h0": self.p_x_h0.probs.tolist(),
            "p_x_h1": self.p_x_h1.probs.tolist(),
            "prior_h0": self.prior_h0,
            "prior_h1": self.prior_h1,
        }

    @classmethod
    def from_json(cls, data: dict) -> "DemandModel":
        _check_schema(data)
        return cls.from_probs(
            data.get("name", "model"),
            data["x_alphabet"],
            data["p_x_h0"],
            data["p_x_h1"],
            tuple(data.get("labels", ("h0", "h1"))),
            data.get("prior_h0", 0.5),
            data.get("prior_h1", 0.5),
        )


def load_demand_model(path) -> DemandModel:
    """Read a demand model from JSON, or from CSV with columns ``demand_w,p_h0,p_h1``."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".csv":
        rows = list(csv.DictReader(io.StringIO(text)))
        return DemandModel.from_probs(
            path.stem,
            [float(r["demand_w"]) for r in rows],
            [float(r["p_h0"]) for r in rows],
            [float(r["p_h1"]) for r in rows],
        )
    return DemandModel.from_json(json.loads(text))


def fixture(name: str) -> DemandModel:
    """Bundled demand model: ``table1_dishwasher`` or ``binary_075_020``."""
    data = resources.files("privexp").joinpath("fixtures", f"{name}.json").read_text()
    return DemandModel.from_json(json.loads(data))


def build_energy_constraint(model: DemandModel, s: float) -> ConstraintSet:
    """Supply alphabet equal to the demand alphabet, ``d = x - y``, mask ``y > x``, budgets ``(s, s)``."""
    if not s > 0:
        raise ValueError("renewable generation rate must be positive")
    return ConstraintSet(model.distortion, s, s)


def smart_meter_exponents(model: DemandModel, s_grid, tol: float = 1e-8) -> dict[str, SweepTable]:
    """phi(s, s) and nu(s, s) over the generation-rate grid."""
    s_grid = sorted(float(s) for s in s_grid)
    return {which: sweep_exponent(model.source, model.distortion, s_grid, which, tol=tol)
            for which in ("phi", "nu")}


def identity_policy(model: DemandModel) -> PolicyPair:
    """The only policy with zero renewable usage: supply equals demand."""
    cond = ConditionalPmf.identity(model.x_alphabet)
    return PolicyPair(cond, cond)


def optimal_policy(model: DemandModel, s: float, variant: str = "phi") -> tuple[PolicyPair, float]:
    """Optimal memoryless policy at rate ``s`` and its exponent (``s = 0`` gives the identity)."""
    if variant not in ("phi", "nu"):
        raise ValueError("variant must be 'phi' or 'nu'")
    if s == 0:
        from .distributions import chernoff

        src = model.source
        value = kl(src.p_x_h0, src.p_x_h1) if variant == "phi" else chernoff(src.p_x_h0, src.p_x_h1)[0]
        return identity_policy(model), value
    cons = build_energy_constraint(model, s)
    res: ExponentResult = solve_phi(model.source, cons) if variant == "phi" else solve_nu(model.source, cons)
    return res.policy, res.value


@dataclass
class SupplyTrace:
    demand: np.ndarray
    supply: np.ndarray
    hypothesis: int
    s: float
    exponent: float
    policy: PolicyPair = field(repr=False)

    @property
    def renewable(self) -> np.ndarray:
        return self.demand - self.supply

    @property
    def average_renewable(self) -> float:
        return float(self.renewable.mean())

    @property
    def renewable_std_error(self) -> float:
        n = self.demand.size
        return float(self.renewable.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    @property
    def within_budget(self) -> bool:
        """Average renewable usage at most ``s`` up to a 3-sigma sampling margin."""
        return self.average_renewable <= self.s + 3 * self.renewable_std_error

    def to_csv(self) -> str:
        lines = ["slot,demand_w,supply_w,renewable_w"]
        for i, (x, y) in enumerate(zip(self.demand, self.supply), start=1):
            lines.append(f"{i},{format_float(x)},{format_float(y)},{format_float(x - y)}")
        return "\n".join(lines) + "\n"


def apply_to_trace(model: DemandModel, s: float, trace, variant: str = "phi", seed=None, hypothesis: int = 0) \
        -> SupplyTrace:
    """Shape a demand trace with the optimal memoryless policy row of ``hypothesis``."""
    if s < 0:
        raise ValueError("renewable generation rate must be nonnegative")
    demand = np.asarray(trace, dtype=float)
    model.x_alphabet.indices(demand)  # rejects symbols outside the alphabet
    policy, value = optimal_policy(model, s, variant)
    supply = memoryless_policy_apply(policy, hypothesis, demand, seed)
    if np.any(supply > demand):
        raise RuntimeError("supply exceeded demand")
    return SupplyTrace(demand, supply, hypothesis, s, value, policy)


def synthetic_trace(model: DemandModel, hypothesis: int, n: int, seed) -> np.ndarray:
    """I.i.d. demand trace drawn from the model's pmf under ``hypothesis``."""
    from .policies import draw_source

    return draw_source(model.source, hypothesis, n, seed)


def read_trace_csv(path) -> np.ndarray:
    """Demand column of a trace CSV (``demand_w`` header, or the single column)."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    col = header.index("demand_w") if "demand_w" in header else 0
    return np.array([float(r[col]) for r in body if r])


def supply_distance(model: DemandModel, s: float, variant: str = "phi") -> float:
    """Total variation between the per-slot supply marginals under h0 and h1."""
    policy, _ = optimal_policy(model, s, variant)
    m0 = model.p_x_h0.probs @ policy.cond_h0.matrix
    m1 = model.p_x_h1.probs @ policy.cond_h1.matrix
    return total_variation(m0, m1)
