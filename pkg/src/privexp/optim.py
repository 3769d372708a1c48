"""Convex minimization of marginal-pair divergences over the policy polytope.

The feasible set is a product of two polytopes (one per hypothesis): row
stochastic matrices supported on allowed pairs whose expected distortion
stays within the budget. Objectives depend on a policy pair only through its
output marginals ``m_h = p_h @ P_h``.

Two methods share one optimality certificate, the Frank-Wolfe duality gap
``<grad, m - s>`` with ``s`` the exact LP minimizer of the linearization:

* away-step Frank-Wolfe, which terminates quickly when the optimum is a
  vertex (typical for binary alphabets);
* a log-barrier Newton method, for optima inside faces, where Frank-Wolfe
  converges only sublinearly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distributions import chernoff_coeff, kl
from .lp import simplex

_LOG_FLOOR = 1e-300
_GRAD_CAP = 1e12
_TIGHT = 1e-12


class InfeasibleError(ValueError):
    """No policy pair meets both distortion budgets."""


# ---------------------------------------------------------------------------
# objectives on the marginal pair


class KLObjective:
    name = "kl"
    tau = None

    def value(self, m0, m1) -> float:
        return kl(m0, m1)

    def grad(self, m0, m1):
        pos1 = m1 > 0
        g0 = np.ones_like(m0)
        g1 = -np.ones_like(m1)
        g0[pos1] = np.log(np.maximum(m0[pos1], _LOG_FLOOR) / m1[pos1]) + 1.0
        g1[pos1] = -m0[pos1] / m1[pos1]
        g1[~pos1 & (m0 > 0)] = -_GRAD_CAP
        return g0, g1

    def hess_blocks(self, m0, m1):
        """Per-symbol 2x2 Hessian entries (aa, ab, bb); the KL is separable."""
        return 1.0 / m0, -1.0 / m1, m0 / m1**2


class ChernoffObjective:
    """``C_tau(m0, m1) = -log sum m0^tau m1^(1-tau)`` for fixed interior tau."""

    def __init__(self, tau: float):
        if not 0.0 < tau < 1.0:
            raise ValueError("interior tau required")
        self.tau = tau
        self.name = f"chernoff_tau={tau:.12g}"

    def value(self, m0, m1) -> float:
        return chernoff_coeff(m0, m1, self.tau)

    def grad(self, m0, m1):
        t = self.tau
        both = (m0 > 0) & (m1 > 0)
        s = max(float(np.sum(m0[both] ** t * m1[both] ** (1 - t))), _LOG_FLOOR)
        # (0, 0) symbols take the supergradient of m0^t m1^(1-t) along m0 = m1.
        r10 = np.ones_like(m0)
        r01 = np.ones_like(m0)
        r10[both] = (m1[both] / m0[both]) ** (1 - t)
        r01[both] = (m0[both] / m1[both]) ** t
        only1 = (m0 <= 0) & (m1 > 0)
        only0 = (m0 > 0) & (m1 <= 0)
        r10[only1], r01[only1] = _GRAD_CAP, 0.0
        r10[only0], r01[only0] = 0.0, _GRAD_CAP
        return -t * np.minimum(r10, _GRAD_CAP) / s, -(1 - t) * np.minimum(r01, _GRAD_CAP) / s

    def hessian(self, m0, m1):
        """Dense Hessian in the stacked coordinates ``(m0, m1)``; needs positive entries."""
        t = self.tau
        h = m0**t * m1 ** (1 - t)
        s = h.sum()
        ga = t * h / m0
        gb = (1 - t) * h / m1
        grad_s = np.concatenate([ga, gb])
        n = m0.size
        H = np.zeros((2 * n, 2 * n))
        i = np.arange(n)
        H[i, i] = t * (t - 1) * h / m0**2
        H[i, n + i] = H[n + i, i] = t * (1 - t) * h / (m0 * m1)
        H[n + i, n + i] = -t * (1 - t) * h / m1**2
        return -H / s + np.outer(grad_s, grad_s) / s**2


# ---------------------------------------------------------------------------
# feasible polytope


class Polytope:
    """Policy pairs on per-hypothesis allowed pairs meeting both budgets."""

    def __init__(self, p: np.ndarray, d: np.ndarray, allowed: np.ndarray, budgets):
        self.p = np.asarray(p, dtype=float)
        self.d = np.asarray(d, dtype=float)
        base = np.asarray(allowed, dtype=bool)
        self.base_allowed = base
        self.budgets = np.asarray(budgets, dtype=float)
        self.nx, self.ny = base.shape
        self.allow = [base.copy(), base.copy()]
        self._index()

    def _index(self):
        self.rows, self.cols, self.A_eq, self.cost_d = [], [], [], []
        for h in (0, 1):
            r, c = np.nonzero(self.allow[h])
            A = np.zeros((self.nx, r.size))
            A[r, np.arange(r.size)] = 1.0
            self.rows.append(r)
            self.cols.append(c)
            self.A_eq.append(A)
            self.cost_d.append(self.p[h][r] * self.d[r, c])

    def restrict(self, h: int, keep: np.ndarray) -> bool:
        """Drop pairs outside ``keep`` on rows carrying mass. False if a row empties."""
        new = self.allow[h].copy()
        live = self.p[h] > 0
        new[live] &= keep[live]
        if np.any(~new[live].any(axis=1)):
            return False
        self.allow[h] = new
        self._index()
        return True

    def to_matrix(self, h: int, v: np.ndarray) -> np.ndarray:
        P = np.zeros((self.nx, self.ny))
        P[self.rows[h], self.cols[h]] = v
        return P / P.sum(axis=1, keepdims=True)

    def lp(self, h: int, cost: np.ndarray) -> np.ndarray:
        """Vertex of the h-side polytope minimizing ``cost`` (one entry per allowed pair)."""
        res = simplex(
            cost,
            A_ub=self.cost_d[h][None, :],
            b_ub=self.budgets[h : h + 1],
            A_eq=self.A_eq[h],
            b_eq=np.ones(self.nx),
        )
        if not res.success:
            raise InfeasibleError(f"LP oracle failed under h{h}: {res.message}")
        return self.to_matrix(h, res.x)

    def lmo(self, g0: np.ndarray, g1: np.ndarray) -> np.ndarray:
        out = np.empty((2, self.nx, self.ny))
        for h, g in ((0, g0), (1, g1)):
            out[h] = self.lp(h, self.p[h][self.rows[h]] * g[self.cols[h]])
        return out

    def marginals(self, P: np.ndarray) -> np.ndarray:
        return np.stack([self.p[0] @ P[0], self.p[1] @ P[1]])

    def distortions(self, P: np.ndarray) -> tuple[float, float]:
        return tuple(float(self.p[h] @ (P[h] * self.d).sum(axis=1)) for h in (0, 1))

    def min_distortion(self, h: int) -> float:
        dd = np.where(self.allow[h], self.d, np.inf).min(axis=1)
        return float(self.p[h] @ dd)

    def min_distortion_policy(self, h: int) -> np.ndarray:
        dd = np.where(self.allow[h], self.d, np.inf)
        P = (dd == dd.min(axis=1, keepdims=True)).astype(float)
        return P / P.sum(axis=1, keepdims=True)

    def violation(self) -> float:
        return max(self.min_distortion(h) - self.budgets[h] for h in (0, 1))

    def is_tight(self, h: int) -> bool:
        return self.budgets[h] - self.min_distortion(h) <= _TIGHT * max(1.0, abs(self.budgets[h]))

    def contains(self, P: np.ndarray, tol: float) -> bool:
        if np.any(P[0][~self.allow[0]] != 0) or np.any(P[1][~self.allow[1]] != 0):
            return False
        dist = self.distortions(P)
        return all(dist[h] <= self.budgets[h] + tol for h in (0, 1))

    def max_output_mass(self, h: int, ys) -> tuple[float, np.ndarray]:
        """Maximal ``P(Y in ys | h)`` over the h-side polytope, with a maximizer."""
        weight = np.zeros(self.ny)
        weight[np.asarray(ys)] = 1.0
        P = self.lp(h, -self.p[h][self.rows[h]] * weight[self.cols[h]])
        return float(self.p[h] @ P @ weight), P

    def reachable(self, h: int) -> np.ndarray:
        """Outputs that some feasible h-side policy emits with positive probability."""
        if self.is_tight(h):
            P = self.min_distortion_policy(h)
        else:
            P = self.allow[h] / self.allow[h].sum(axis=1, keepdims=True)
        return (self.p[h] @ P) > 0

    def interior_point(self) -> np.ndarray:
        """Feasible pair with strictly positive entries on every allowed pair when the
        budget has slack (otherwise on every minimal-distortion pair)."""
        out = np.empty((2, self.nx, self.ny))
        for h in (0, 1):
            uniform = self.allow[h] / self.allow[h].sum(axis=1, keepdims=True)
            V = self.min_distortion_policy(h)
            if self.is_tight(h):
                out[h] = V
                continue
            dv = self.min_distortion(h)
            du = float(self.p[h] @ (uniform * self.d).sum(axis=1))
            theta = 1.0 if du < self.budgets[h] else 0.5 * (self.budgets[h] - dv) / (du - dv)
            out[h] = theta * uniform + (1 - theta) * V
        return out

    def equal_marginals_policy(self) -> np.ndarray | None:
        """A feasible pair with identical output marginals, if one exists."""
        n0, n1 = self.rows[0].size, self.rows[1].size
        A_eq = np.zeros((2 * self.nx + self.ny, n0 + n1))
        A_eq[: self.nx, :n0] = self.A_eq[0]
        A_eq[self.nx : 2 * self.nx, n0:] = self.A_eq[1]
        A_eq[2 * self.nx + self.cols[0], np.arange(n0)] = self.p[0][self.rows[0]]
        A_eq[2 * self.nx + self.cols[1], n0 + np.arange(n1)] = -self.p[1][self.rows[1]]
        b_eq = np.concatenate([np.ones(2 * self.nx), np.zeros(self.ny)])
        A_ub = np.zeros((2, n0 + n1))
        A_ub[0, :n0] = self.cost_d[0]
        A_ub[1, n0:] = self.cost_d[1]
        res = simplex(np.zeros(n0 + n1), A_ub=A_ub, b_ub=self.budgets, A_eq=A_eq, b_eq=b_eq)
        if not res.success:
            return None
        return np.stack([self.to_matrix(0, res.x[:n0]), self.to_matrix(1, res.x[n0:])])


def fw_gap(poly: Polytope, obj, P: np.ndarray) -> float:
    m = poly.marginals(P)
    g0, g1 = obj.grad(m[0], m[1])
    s = poly.marginals(poly.lmo(g0, g1))
    return float(g0 @ (m[0] - s[0]) + g1 @ (m[1] - s[1]))


# ---------------------------------------------------------------------------
# away-step Frank-Wolfe


@dataclass
class ActiveSet:
    atoms: list
    marg: list
    weights: list

    def point(self) -> np.ndarray:
        return np.tensordot(np.asarray(self.weights), np.asarray(self.atoms), axes=1)

    def marginal(self) -> np.ndarray:
        return np.tensordot(np.asarray(self.weights), np.asarray(self.marg), axes=1)

    def copy(self) -> "ActiveSet":
        return ActiveSet(list(self.atoms), list(self.marg), list(self.weights))

    @classmethod
    def single(cls, poly: Polytope, P: np.ndarray) -> "ActiveSet":
        return cls([P], [poly.marginals(P)], [1.0])


def _line_search(obj, m: np.ndarray, dm: np.ndarray, gmax: float) -> float:
    """Minimizer of the convex map ``g -> obj(m + g*dm)`` on [0, gmax], by bisection on the slope."""

    def slope(g):
        x = np.maximum(m + g * dm, 0.0)
        g0, g1 = obj.grad(x[0], x[1])
        return float(g0 @ dm[0] + g1 @ dm[1])

    end = np.maximum(m + gmax * dm, 0.0)
    if math.isfinite(obj.value(end[0], end[1])) and slope(gmax) <= 0:
        return gmax
    lo, hi = 0.0, gmax
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if slope(mid) > 0:
            hi = mid
        else:
            lo = mid
    return lo


def frank_wolfe(poly: Polytope, obj, active: ActiveSet, tol: float, max_iter: int):
    """Away-step Frank-Wolfe. Returns (active set, gap, iterations, stalled)."""
    m = active.marginal()
    keys = [a.tobytes() for a in active.atoms]
    gap = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g0, g1 = obj.grad(m[0], m[1])
        g = np.stack([g0, g1])
        s = poly.lmo(g0, g1)
        sm = poly.marginals(s)
        gap = float(np.sum(g * (m - sm)))
        if gap <= tol:
            return active, gap, it, False
        lin = [float(np.sum(g * a)) for a in active.marg]
        away = int(np.argmax(lin))
        g_away = lin[away] - float(np.sum(g * m))
        if gap >= g_away or len(active.atoms) == 1:
            gamma = _line_search(obj, m, sm - m, 1.0)
            if gamma <= 0.0:
                return active, gap, it, True
            active.weights = [(1 - gamma) * w for w in active.weights]
            key = s.tobytes()
            if key in keys:
                active.weights[keys.index(key)] += gamma
            else:
                active.atoms.append(s)
                active.marg.append(sm)
                active.weights.append(gamma)
                keys.append(key)
            if gamma >= 1.0:
                j = keys.index(key)
                active.atoms, active.marg, active.weights, keys = [s], [sm], [1.0], [key]
                del j
        else:
            wa = active.weights[away]
            gmax = wa / (1.0 - wa)
            gamma = _line_search(obj, m, m - active.marg[away], gmax)
            if gamma <= 0.0:
                return active, gap, it, True
            active.weights = [(1 + gamma) * w for w in active.weights]
            active.weights[away] -= gamma
            if gamma >= gmax or active.weights[away] <= 0.0:
                for lst in (active.atoms, active.marg, active.weights, keys):
                    del lst[away]
        total = sum(active.weights)
        active.weights = [w / total for w in active.weights]
        m = active.marginal()
    return active, gap, it, False


# ---------------------------------------------------------------------------
# log-barrier Newton method


class _BarrierProblem:
    """Free variables are the entries of rows that carry mass and have a choice."""

    def __init__(self, poly: Polytope, obj):
        self.poly = poly
        self.obj = obj
        self.blocks = []
        self.const_m = np.zeros((2, poly.ny))
        self.const_b = np.zeros(2)
        offset = 0
        eq_rows = []
        for h in (0, 1):
            allow = poly.allow[h]
            live = poly.p[h] > 0
            free_rows = np.flatnonzero(live & (allow.sum(axis=1) > 1))
            fixed_rows = np.flatnonzero(live & (allow.sum(axis=1) == 1))
            for x in fixed_rows:
                y = int(np.flatnonzero(allow[x])[0])
                self.const_m[h, y] += poly.p[h][x]
                self.const_b[h] += poly.p[h][x] * poly.d[x, y]
            r, c = np.nonzero(allow[free_rows])
            r = free_rows[r]
            n = r.size
            self.blocks.append((offset, n, r, c))
            for x in free_rows:
                eq_rows.append(offset + np.flatnonzero(r == x))
            offset += n
        self.N = offset
        self.A = np.zeros((len(eq_rows), self.N))
        for i, cols in enumerate(eq_rows):
            self.A[i, cols] = 1.0
        # Jacobian of the stacked marginals (m0, m1) and budget rows.
        self.J = np.zeros((2 * poly.ny, self.N))
        self.dvec = np.zeros((2, self.N))
        self.barrier_budget = [not poly.is_tight(h) for h in (0, 1)]
        for h, (off, n, r, c) in enumerate(self.blocks):
            self.J[h * poly.ny + c, off + np.arange(n)] = poly.p[h][r]
            self.dvec[h, off : off + n] = poly.p[h][r] * poly.d[r, c]
        self.n_ineq = self.N + sum(self.barrier_budget)

    def start(self) -> np.ndarray:
        P = self.poly.interior_point()
        return self.pack(P)

    def pack(self, P: np.ndarray) -> np.ndarray:
        z = np.empty(self.N)
        for h, (off, n, r, c) in enumerate(self.blocks):
            z[off : off + n] = P[h][r, c]
        return z

    def unpack(self, z: np.ndarray) -> np.ndarray:
        P = self.poly.interior_point()
        for h, (off, n, r, c) in enumerate(self.blocks):
            rows = np.unique(r)
            P[h][rows] = 0.0
            P[h][r, c] = z[off : off + n]
        return P / P.sum(axis=2, keepdims=True)

    def marg(self, z):
        m = self.J @ z + self.const_m.ravel()
        ny = self.poly.ny
        return m[:ny], m[ny:]

    def slack(self, z):
        return self.poly.budgets - self.const_b - self.dvec @ z

    def fval(self, z, t) -> float:
        """Objective plus barrier/t (scaled so large t keeps full precision)."""
        if np.any(z <= 0):
            return math.inf
        sl = self.slack(z)
        val = -np.sum(np.log(z))
        for h in (0, 1):
            if self.barrier_budget[h]:
                if sl[h] <= 0:
                    return math.inf
                val -= math.log(sl[h])
        m0, m1 = self.marg(z)
        return self.obj.value(m0, m1) + val / t

    def derivs(self, z, t):
        m0, m1 = self.marg(z)
        g0, g1 = self.obj.grad(m0, m1)
        grad = self.J.T @ np.concatenate([g0, g1]) - 1.0 / (t * z)
        if isinstance(self.obj, KLObjective):
            aa, ab, bb = self.obj.hess_blocks(m0, m1)
            ny = m0.size
            Hm = np.zeros((2 * ny, 2 * ny))
            i = np.arange(ny)
            Hm[i, i], Hm[i, ny + i], Hm[ny + i, i], Hm[ny + i, ny + i] = aa, ab, ab, bb
        else:
            Hm = self.obj.hessian(m0, m1)
        H = self.J.T @ Hm @ self.J + np.diag(1.0 / (t * z**2))
        sl = self.slack(z)
        for h in (0, 1):
            if self.barrier_budget[h]:
                grad = grad + self.dvec[h] / (t * sl[h])
                H = H + np.outer(self.dvec[h], self.dvec[h]) / (t * sl[h] ** 2)
        return grad, H

    def center(self, z, t, max_steps=100):
        steps = 0
        neq = self.A.shape[0]
        for steps in range(1, max_steps + 1):
            g, H = self.derivs(z, t)
            # Scale by the current point so the barrier Hessian becomes the identity.
            Hs = z[:, None] * H * z[None, :]
            As = self.A * z[None, :]
            K = np.zeros((self.N + neq, self.N + neq))
            K[: self.N, : self.N] = Hs
            K[: self.N, self.N :] = As.T
            K[self.N :, : self.N] = As
            rhs = np.concatenate([-z * g, np.zeros(neq)])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            dz = z * sol[: self.N]
            dec = -float(g @ dz)
            if dec / 2 <= 1e-16:
                break
            f0 = self.fval(z, t)
            alpha = 1.0
            neg = dz < 0
            if np.any(neg):
                alpha = min(1.0, 0.99 * float(np.min(-z[neg] / dz[neg])))
            accepted = False
            for _ in range(60):
                zn = z + alpha * dz
                fn = self.fval(zn, t)
                if fn <= f0 - 0.25 * alpha * dec:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            z = zn
        return z, steps


def barrier(poly: Polytope, obj, tol: float, t0: float = 1.0, mu: float = 20.0, t_max: float = 1e15):
    """Barrier method; returns (policy pair, Newton steps, final FW gap)."""
    prob = _BarrierProblem(poly, obj)
    if prob.N == 0:
        P = prob.unpack(np.zeros(0))
        return P, 0, fw_gap(poly, obj, P)
    z = prob.start()
    t = t0
    steps = 0
    gap = math.inf
    while True:
        z, k = prob.center(z, t)
        steps += k
        if prob.n_ineq / t <= 10 * tol:
            P = prob.unpack(z)
            gap = fw_gap(poly, obj, P)
            if gap <= tol or t >= t_max:
                break
        t *= mu
    return P, steps, gap
