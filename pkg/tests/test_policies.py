import math

import numpy as np
import pytest

from privexp.distributions import Alphabet, ConditionalPmf, PolicyPair, SourceModel
from privexp.exponents import DistortionSpec
from privexp.policies import (
    H0,
    H1,
    TwoPhaseConfig,
    draw_source,
    learning_length,
    memoryless_policy_apply,
    phase2_solution,
    two_phase_apply,
    two_phase_audit,
    typical_set_decision,
)

BINARY = SourceModel.binary(0.75, 0.2)
BIN_D = DistortionSpec.energy(BINARY.x_alphabet)
# Three demand levels; symbols 0 and 1 carry the same likelihood ratio, so
# every learning sequence without a 2 has normalized log-LR exactly D = log 2.
TRI = SourceModel.from_probs([0, 1, 2], [0.5, 0.5, 0.0], [0.25, 0.25, 0.5])
TRI_D = DistortionSpec.energy(TRI.x_alphabet)


def tri_config(n=10**5, **kw):
    args = dict(delta=0.05, omega=0.05, xi=0.02)
    args.update(kw)
    return TwoPhaseConfig.for_source(n, 0.5, TRI, TRI_D, **args)


# ---------------------------------------------------------------------------
# memoryless policies


def test_identity_and_constant_policies():
    xa = BINARY.x_alphabet
    x = draw_source(BINARY, H0, 1000, 1)
    ident = PolicyPair(ConditionalPmf.identity(xa), ConditionalPmf.identity(xa))
    assert np.array_equal(memoryless_policy_apply(ident, H0, x, 7), x)
    const = ConditionalPmf(xa, xa, [[1, 0], [1, 0]])
    y = memoryless_policy_apply(PolicyPair(const, const), H1, x, 7)
    assert np.all(y == 0)


def test_policy_frequencies_match_rows():
    xa = BINARY.x_alphabet
    row = ConditionalPmf(xa, xa, [[1.0, 0.0], [0.3, 0.7]], BIN_D.mask)
    pol = PolicyPair(row, ConditionalPmf.identity(xa))
    n = 10**6
    y = memoryless_policy_apply(pol, H0, np.full(n, 2.0), 3)
    freq = np.mean(y == 0)
    assert abs(freq - 0.3) <= 3 * math.sqrt(0.3 * 0.7 / n)


def test_policy_is_reproducible_and_needs_seed():
    pol = phase2_solution(tri_config(), TRI, TRI_D).policy
    x = draw_source(TRI, H1, 500, 5)
    a = memoryless_policy_apply(pol, H1, x, 11)
    assert np.array_equal(a, memoryless_policy_apply(pol, H1, x, 11))
    with pytest.raises(ValueError):
        memoryless_policy_apply(pol, H1, x, None)
    with pytest.raises(ValueError):
        memoryless_policy_apply(pol, 2, x, 1)


# ---------------------------------------------------------------------------
# learning phase


def test_learning_length():
    assert learning_length(3) == 1
    assert learning_length(10**5) == 11
    assert learning_length(1024, 2) == 10
    assert learning_length(math.ceil(math.e**3)) == 3


def test_typical_set_decision_cases():
    assert typical_set_decision([0, 1, 0, 1], TRI, 0.02) == H0
    # Impossible under h0: log LR = -inf, decide h1.
    assert typical_set_decision([0, 2, 1], TRI, 0.02) == H1
    with pytest.raises(ValueError):
        typical_set_decision([], TRI, 0.02)


def test_typical_set_single_symbol_band_is_empty_for_binary():
    # Per-symbol log-LRs are log 3.75 and log(0.3125); neither is within 0.1 of D.
    for x in (0, 2):
        assert typical_set_decision([x], BINARY, 0.1) == H1


def test_binary_model_learning_fails_under_h0():
    # With o = 1 the band never contains a single-symbol average, so h0 is never learned.
    cfg = TwoPhaseConfig.for_source(3, 1.0, BINARY, BIN_D, delta=0.5, omega=0.5, xi=0.1, variant="bayes_rho_q")
    audit = two_phase_audit(cfg, BINARY, BIN_D, 2000, rng_seed=0, full_traces=2)
    assert audit.per_hypothesis[0].learning_error == 1.0
    assert not audit.learning_ok
    assert not audit.passed


# ---------------------------------------------------------------------------
# configuration


def test_config_chain_values():
    cfg = tri_config()
    assert cfg.epsilon_prime == pytest.approx(0.98)
    assert cfg.psi == pytest.approx(0.01)
    assert cfg.phase2_budgets == (0.45, 0.45)
    assert cfg.learning_slots == 11 and cfg.phase_boundary == 12 and cfg.privacy_slots == 10**5 - 11
    assert cfg.h0_margin == pytest.approx(0.01 - 11 / 1e5 * 2)
    assert cfg.h1_excess == pytest.approx(2 * math.exp(-11 * (math.log(2) - 0.02)) + 22 / 1e5 - 0.05)
    assert cfg.horizon_ok


def test_config_from_epsilon_prime():
    cfg = tri_config(xi=None, epsilon_prime=0.99)
    assert cfg.xi == pytest.approx(0.01)


@pytest.mark.parametrize("kw", [
    dict(delta=0.6),
    dict(omega=0.0),
    dict(xi=0.03),  # psi = 0.05 - 2 * 0.03 < 0 and xi above delta / d_max
    dict(xi=None),
    dict(xi=0.02, epsilon_prime=0.97),
    dict(variant="other"),
    dict(variant="bayes_rho_q", xi=None),
])
def test_config_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        tri_config(**kw)


def test_config_rejects_empty_learning_phase():
    with pytest.raises(ValueError):
        tri_config(n=2)


def test_short_horizon_is_flagged_not_rejected():
    cfg = tri_config(n=3)
    assert cfg.learning_slots == 1
    assert not cfg.horizon_ok


# ---------------------------------------------------------------------------
# two-phase traces


def test_two_phase_trace_structure():
    cfg = tri_config(n=2000)
    x = draw_source(TRI, H0, cfg.n, 2)
    tr = two_phase_apply(cfg, TRI, TRI_D, H0, x, 9)
    o = cfg.learning_slots
    assert np.all(tr.y_seq[:o] == 0)
    assert np.all(tr.y_seq <= tr.x_seq)
    assert tr.learned_h == H0
    assert np.array_equal(tr.phases()[: o + 1], [1] * o + [2])
    assert np.allclose(tr.distortions, tr.x_seq - tr.y_seq)
    lines = tr.to_csv().splitlines()
    assert lines[0] == "slot,x,y,phase,distortion" and len(lines) == cfg.n + 1


def test_two_phase_reproducible():
    cfg = tri_config(n=500)
    x = draw_source(TRI, H1, cfg.n, 4)
    a = two_phase_apply(cfg, TRI, TRI_D, H1, x, 21)
    b = two_phase_apply(cfg, TRI, TRI_D, H1, x, 21)
    assert np.array_equal(a.y_seq, b.y_seq)
    with pytest.raises(ValueError):
        two_phase_apply(cfg, TRI, TRI_D, H1, x[:-1], 21)


def test_two_phase_never_reads_true_hypothesis():
    cfg = tri_config(n=500)
    x = draw_source(TRI, H1, cfg.n, 4)
    a = two_phase_apply(cfg, TRI, TRI_D, H0, x, 21)
    b = two_phase_apply(cfg, TRI, TRI_D, H1, x, 21)
    assert np.array_equal(a.y_seq, b.y_seq)


def test_phase2_cache_returns_same_object():
    cfg = tri_config()
    assert phase2_solution(cfg, TRI, TRI_D) is phase2_solution(cfg, TRI, TRI_D)


def test_count_level_audit_matches_slot_level_simulation():
    cfg = tri_config(n=200)
    reps = 400
    rng = np.random.default_rng(8)
    slot_means = []
    for h in (H0, H1):
        vals = [two_phase_apply(cfg, TRI, TRI_D, h, draw_source(TRI, h, cfg.n, rng.integers(2**63)),
                                rng.integers(2**63)).average_distortion for _ in range(reps)]
        slot_means.append((np.mean(vals), np.std(vals, ddof=1) / math.sqrt(reps)))
    audit = two_phase_audit(cfg, TRI, TRI_D, 4000, rng_seed=3, full_traces=2)
    for (m, se), a in zip(slot_means, audit.per_hypothesis):
        assert abs(m - a.mean_distortion) <= 4 * math.hypot(se, a.std_error)


def test_audit_passes_and_is_reproducible():
    cfg = tri_config()
    a = two_phase_audit(cfg, TRI, TRI_D, 2000, rng_seed=1, full_traces=2)
    b = two_phase_audit(cfg, TRI, TRI_D, 2000, rng_seed=1, full_traces=2)
    assert a.passed
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == (
        "hypothesis,mean_distortion,std_error,budget,learning_error,phase1_constant,within_budget")
    with pytest.raises(ValueError):
        two_phase_audit(cfg, TRI, TRI_D, 1, rng_seed=1)
