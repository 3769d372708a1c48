"""Dense two-phase tableau simplex for the small LPs used by the exponent solvers.

Solves ``min c @ x`` subject to ``A_ub @ x <= b_ub``, ``A_eq @ x == b_eq``,
``x >= 0``. Problem sizes here are a few dozen variables, so a dense tableau
with Bland's anti-cycling rule is both exact enough and fast enough.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMAL, ITERATION_LIMIT, INFEASIBLE, UNBOUNDED = 0, 1, 2, 3

_MESSAGES = {
    OPTIMAL: "optimal",
    ITERATION_LIMIT: "iteration limit reached",
    INFEASIBLE: "problem is infeasible",
    UNBOUNDED: "problem is unbounded",
}


@dataclass
class LPResult:
    x: np.ndarray | None
    fun: float
    status: int
    nit: int

    @property
    def success(self) -> bool:
        return self.status == OPTIMAL

    @property
    def message(self) -> str:
        return _MESSAGES[self.status]


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    piv = T[row]
    others = T[:, col].copy()
    others[row] = 0.0
    T -= np.outer(others, piv)


def _run(T: np.ndarray, basis: list[int], ncols: int, tol: float, max_iter: int) -> tuple[int, int]:
    """Iterate on tableau ``T`` whose last row is the reduced-cost row.

    Only the first ``ncols`` columns may enter. Returns (status, iterations).
    """
    m = T.shape[0] - 1
    for it in range(max_iter):
        cost = T[-1, :ncols]
        entering = np.flatnonzero(cost < -tol)
        if entering.size == 0:
            return OPTIMAL, it
        col = int(entering[0])  # Bland: lowest index
        column = T[:m, col]
        pos = column > tol
        if not np.any(pos):
            return UNBOUNDED, it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / column[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = min(ties, key=lambda r: basis[r])  # Bland: lowest basic index leaves
        _pivot(T, row, col)
        basis[row] = col
    return ITERATION_LIMIT, max_iter


def simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, tol: float = 1e-11, max_iter: int = 5000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    # Equality form with slacks: [A_ub I; A_eq 0] [x; s] = b, then flip rows so b >= 0.
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    nv = n + m_ub

    # Phase 1: artificial variable per row.
    T = np.zeros((m + 1, nv + m + 1))
    T[:m, :nv] = A
    T[:m, nv:nv + m] = np.eye(m)
    T[:m, -1] = b
    T[-1, :nv] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    basis = list(range(nv, nv + m))
    status, it1 = _run(T, basis, nv + m, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if status != OPTIMAL or -T[-1, -1] > 1e-9 * scale:
        return LPResult(None, np.inf, INFEASIBLE, it1)

    # Drive remaining artificials out of the basis; drop redundant rows.
    keep = []
    for r in range(m):
        if basis[r] >= nv:
            cand = np.flatnonzero(np.abs(T[r, :nv]) > 1e-9)
            if cand.size == 0:
                continue
            _pivot(T, r, int(cand[0]))
            basis[r] = int(cand[0])
        keep.append(r)
    T = np.vstack([T[keep][:, list(range(nv)) + [T.shape[1] - 1]], np.zeros((1, nv + 1))])
    basis = [basis[r] for r in keep]

    # Phase 2 reduced costs.
    cfull = np.concatenate([c, np.zeros(m_ub)])
    T[-1, :nv] = cfull
    for r, j in enumerate(basis):
        T[-1] -= cfull[j] * T[r]
    status, it2 = _run(T, basis, nv, tol, max_iter)
    if status != OPTIMAL:
        return LPResult(None, -np.inf if status == UNBOUNDED else np.inf, status, it1 + it2)
    x = np.zeros(nv)
    for r, j in enumerate(basis):
        x[j] = T[r, -1]
    x = np.maximum(x[:n], 0.0)
    return LPResult(x, float(c @ x), OPTIMAL, it1 + it2)
