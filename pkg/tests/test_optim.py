import numpy as np
import pytest

from privexp.distributions import SourceModel
from privexp.exponents import DistortionSpec
from privexp.optim import (
    ActiveSet,
    ChernoffObjective,
    KLObjective,
    Polytope,
    barrier,
    frank_wolfe,
    fw_gap,
)

TABLE1 = SourceModel.from_probs([0, 200, 500, 1200], [0.2528, 0.3676, 0, 0.3796], [0.1599, 0.0579, 0.2318, 0.5504])


def policy_objective(obj, p, P):
    return obj.value(p[0] @ P[0], p[1] @ P[1])


def policy_gradient(obj, p, P):
    g0, g1 = obj.grad(p[0] @ P[0], p[1] @ P[1])
    return np.stack([np.outer(p[0], g0), np.outer(p[1], g1)])


@pytest.mark.parametrize("obj", [KLObjective(), ChernoffObjective(0.3), ChernoffObjective(0.5), ChernoffObjective(0.8)],
                         ids=lambda o: o.name)
def test_gradient_matches_central_differences(obj):
    rng = np.random.default_rng(0)
    for _ in range(10):
        nx, ny = 3, 4
        p = rng.dirichlet(np.ones(nx), size=2)
        P = rng.dirichlet(np.ones(ny), size=(2, nx))
        G = policy_gradient(obj, p, P)
        num = np.zeros_like(P)
        h = 1e-6
        for idx in np.ndindex(P.shape):
            Pp, Pm = P.copy(), P.copy()
            Pp[idx] += h
            Pm[idx] -= h
            num[idx] = (policy_objective(obj, p, Pp) - policy_objective(obj, p, Pm)) / (2 * h)
        rel = np.abs(G - num) / np.maximum(np.abs(num), 1e-3)
        assert rel.max() < 1e-5


def test_chernoff_hessian_matches_gradient_differences():
    rng = np.random.default_rng(1)
    obj = ChernoffObjective(0.4)
    m0, m1 = rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(3))
    H = obj.hessian(m0, m1)
    h = 1e-6
    z = np.concatenate([m0, m1])
    for i in range(6):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        gp = np.concatenate(obj.grad(zp[:3], zp[3:]))
        gm = np.concatenate(obj.grad(zm[:3], zm[3:]))
        assert np.allclose((gp - gm) / (2 * h), H[:, i], atol=1e-5)


def table1_polytope(y=None, s=150.0):
    xa = TABLE1.x_alphabet
    dist = DistortionSpec.energy(xa, None if y is None else type(xa)(y))
    p = np.vstack([TABLE1.p_x_h0.probs, TABLE1.p_x_h1.probs])
    return Polytope(p, dist.d, dist.allowed, (s, s))


def test_interior_point_is_feasible_and_positive():
    poly = table1_polytope()
    P = poly.interior_point()
    assert poly.contains(P, 1e-12)
    assert np.all(P[0][poly.allow[0]] > 0)


def test_lmo_returns_feasible_vertex():
    poly = table1_polytope()
    rng = np.random.default_rng(2)
    for _ in range(20):
        S = poly.lmo(rng.normal(size=poly.ny), rng.normal(size=poly.ny))
        assert poly.contains(S, 1e-9)
        assert np.allclose(S.sum(axis=2), 1.0)


def test_barrier_and_frank_wolfe_agree():
    poly = table1_polytope()
    obj = KLObjective()
    poly.restrict(0, np.broadcast_to(poly.reachable(1), poly.allow[0].shape))
    Pb, _, gap_b = barrier(poly, obj, 1e-10)
    active, gap_f, _, _ = frank_wolfe(poly, obj, ActiveSet.single(poly, poly.interior_point()), 1e-6, 20000)
    mb, mf = poly.marginals(Pb), poly.marginals(active.point())
    assert gap_b <= 1e-10
    assert obj.value(*mb) == pytest.approx(obj.value(*mf), abs=1e-6)
    assert fw_gap(poly, obj, Pb) == pytest.approx(gap_b)


def test_enlarged_alphabet_barrier_converges():
    poly = table1_polytope([0, 100, 200, 350, 500, 850, 1200])
    obj = KLObjective()
    poly.restrict(0, np.broadcast_to(poly.reachable(1), poly.allow[0].shape))
    P, _, gap = barrier(poly, obj, 1e-9)
    assert gap <= 1e-9
    assert poly.contains(P, 1e-8)
    assert obj.value(*poly.marginals(P)) == pytest.approx(0.0202807949, abs=1e-8)
