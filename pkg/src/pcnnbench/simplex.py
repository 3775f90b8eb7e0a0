"""Dense bounded-variable revised primal simplex.

Solves ``min c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper``.
Nonbasic variables sit at one of their bounds (free ones at zero), so box
constraints never become rows. The basis inverse is kept explicitly and
updated with rank-one pivots, with periodic refactorization. Pricing is
Dantzig's rule; after a run of degenerate pivots it falls back to Bland's
rule until progress resumes.

A crash basis built from slacks and column singletons avoids phase 1 when
possible; otherwise artificial variables are added and their sum minimized
first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg.blas import dger

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-8
OPT_TOL = 1e-9
REFACTOR_EVERY = 100
DEGENERATE_RUN = 30

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

_BASIC, _LOWER, _UPPER, _FREE = 0, 1, 2, 3


@dataclass
class LpProblem:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = len(self.c)
        if n == 0:
            raise ValueError("LP has no variables")
        self.A_ub, self.b_ub = self._rows(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = self._rows(self.A_eq, self.b_eq, n, "eq")
        self.lower = np.zeros(n) if self.lower is None else np.asarray(self.lower, dtype=float).copy()
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).copy()
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must have one entry per variable")

    @staticmethod
    def _rows(A, b, n, name):
        if A is None:
            return np.zeros((0, n)), np.zeros(0)
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape[1] != n or A.shape[0] != len(b):
            raise ValueError(f"A_{name} has shape {A.shape}, expected ({len(b)}, {n})")
        return A, b

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def objective(self, x) -> float:
        return float(self.c @ x)

    def residual(self, x) -> float:
        """Infinity-norm primal infeasibility of ``x``."""
        x = np.asarray(x, dtype=float)
        r = [0.0]
        if len(self.b_ub):
            r.append(float(np.max(self.A_ub @ x - self.b_ub)))
        if len(self.b_eq):
            r.append(float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        r.append(float(np.max(self.lower - x)))
        r.append(float(np.max(x - self.upper)))
        return max(r)

    def dump(self, path) -> None:
        """Plain-text standard form, one constraint per line (see README)."""
        fmt = lambda v: " ".join(repr(float(t)) for t in v)
        with open(path, "w") as fh:
            fh.write(f"# vars {self.n_vars} ub_rows {len(self.b_ub)} eq_rows {len(self.b_eq)}\n")
            fh.write(f"minimize {fmt(self.c)}\n")
            for row, rhs in zip(self.A_ub, self.b_ub):
                fh.write(f"ub {fmt(row)} <= {rhs!r}\n")
            for row, rhs in zip(self.A_eq, self.b_eq):
                fh.write(f"eq {fmt(row)} == {rhs!r}\n")
            fh.write(f"lower {fmt(self.lower)}\n")
            fh.write(f"upper {fmt(self.upper)}\n")


@dataclass
class LpSolution:
    x: np.ndarray | None
    objective: float
    status: str
    iterations: int
    residual: float = np.nan


class _Simplex:
    def __init__(self, A, b, c, lo, hi, x, basis, state, max_iter):
        self.A, self.b, self.lo, self.hi = A, b, lo, hi
        self.At = sparse.csr_matrix(A.T)  # pricing
        self.c = c
        self.x, self.basis, self.state = x, basis, state
        self.iterations = 0
        self.max_iter = max_iter
        self.refactor()

    def recompute_basics(self):
        nonbasic = self.state != _BASIC
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = np.linalg.solve(self.A[:, self.basis], rhs)

    def refactor(self):
        B = self.A[:, self.basis]
        diag = np.diag(B)
        if np.all(diag != 0) and np.count_nonzero(B) == len(diag):
            Binv = np.diag(1.0 / diag)
        else:
            Binv = np.linalg.inv(B)
        self.Binv = np.asfortranarray(Binv)
        nonbasic = self.state != _BASIC
        rhs = self.b - self.A[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.Binv @ rhs
        self.since_refactor = 0

    def run(self, cost) -> str:
        A, lo, hi, x = self.A, self.lo, self.hi, self.x
        movable = hi > lo
        degenerate = 0
        bland = False
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            if self.since_refactor >= REFACTOR_EVERY:
                self.refactor()
            basis, state = self.basis, self.state
            y = cost[basis] @ self.Binv
            d = cost - self.At @ y
            can_up = movable & ((state == _LOWER) | (state == _FREE)) & (d < -OPT_TOL)
            can_down = movable & ((state == _UPPER) | (state == _FREE)) & (d > OPT_TOL)
            eligible = can_up | can_down
            if not eligible.any():
                return OPTIMAL
            idx = np.flatnonzero(eligible)
            q = int(idx[0]) if bland else int(idx[np.argmax(np.abs(d[idx]))])
            direction = 1.0 if can_up[q] else -1.0

            alpha = self.Binv @ A[:, q]
            delta = direction * alpha
            xb = x[basis]
            ratios = np.full(len(basis), np.inf)
            dec = delta > PIVOT_TOL
            inc = delta < -PIVOT_TOL
            lob, hib = lo[basis], hi[basis]
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = (xb[dec] - lob[dec]) / delta[dec]
                ratios[inc] = (hib[inc] - xb[inc]) / (-delta[inc])
            ratios = np.where(np.isnan(ratios), np.inf, np.maximum(ratios, 0.0))
            t_row = ratios.min() if len(ratios) else np.inf
            t_flip = hi[q] - lo[q]
            self.iterations += 1

            if t_flip <= t_row:
                if not np.isfinite(t_flip):
                    return UNBOUNDED
                x[q] = hi[q] if direction > 0 else lo[q]
                state[q] = _UPPER if direction > 0 else _LOWER
                x[basis] = xb - t_flip * delta
                degenerate = 0
                bland = False
                continue
            if not np.isfinite(t_row):
                return UNBOUNDED
            ties = np.flatnonzero(ratios <= t_row + PIVOT_TOL)
            if bland:
                r = int(ties[np.argmin(basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(delta[ties]))])
            t = ratios[r]
            leave = basis[r]
            x[basis] = xb - t * delta
            if delta[r] > 0:
                x[leave], state[leave] = lo[leave], _LOWER
            else:
                x[leave], state[leave] = hi[leave], _UPPER
            x[q] = x[q] + direction * t
            state[q] = _BASIC
            basis[r] = q
            piv = self.Binv[r] / alpha[r]
            self.Binv = dger(-1.0, alpha, piv, a=self.Binv, overwrite_a=True)
            self.Binv[r] = piv
            self.since_refactor += 1
            if t <= PIVOT_TOL:
                degenerate += 1
                if degenerate >= DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
                bland = False


def _initial_values(c, lo, hi):
    x = np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))
    prefer_upper = (c < 0) & np.isfinite(hi)
    x = np.where(prefer_upper, hi, x)
    state = np.where(np.isfinite(lo) & ~prefer_upper, _LOWER,
                     np.where(np.isfinite(hi), _UPPER, _FREE))
    return x, state


def solve_lp(problem: LpProblem, max_iter: int | None = None) -> LpSolution:
    n = problem.n_vars
    m_ub, m_eq = len(problem.b_ub), len(problem.b_eq)
    m = m_ub + m_eq
    if np.any(problem.lower > problem.upper + FEAS_TOL):
        return LpSolution(None, np.nan, INFEASIBLE, 0)

    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = problem.A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = problem.A_eq
    b = np.concatenate([problem.b_ub, problem.b_eq])
    lo = np.concatenate([problem.lower, np.zeros(m_ub)])
    hi = np.concatenate([problem.upper, np.full(m_ub, np.inf)])
    c = np.concatenate([problem.c, np.zeros(m_ub)])
    x, state = _initial_values(c, lo, hi)

    # crash basis: per row, a slack or column singleton that can absorb the residual
    nnz = np.count_nonzero(A, axis=0)
    singles = {}
    for j in np.flatnonzero(nnz == 1):
        singles.setdefault(int(np.flatnonzero(A[:, j])[0]), []).append(int(j))
    resid = b - A @ x
    basis = np.full(m, -1)
    for i in range(m):
        for j in singles.get(i, ()):
            if state[j] == _BASIC:
                continue
            val = x[j] + resid[i] / A[i, j]
            if lo[j] - FEAS_TOL <= val <= hi[j] + FEAS_TOL:
                x[j] = min(max(val, lo[j]), hi[j])
                state[j] = _BASIC
                basis[i] = j
                resid[i] = 0.0
                break
    need = np.flatnonzero(basis < 0)
    n_art = len(need)
    if n_art:
        art = np.zeros((m, n_art))
        art[need, np.arange(n_art)] = np.where(resid[need] >= 0, 1.0, -1.0)
        A = np.hstack([A, art])
        x = np.concatenate([x, np.abs(resid[need])])
        lo = np.concatenate([lo, np.zeros(n_art)])
        hi = np.concatenate([hi, np.full(n_art, np.inf)])
        c = np.concatenate([c, np.zeros(n_art)])
        state = np.concatenate([state, np.full(n_art, _BASIC)])
        basis[need] = n + m_ub + np.arange(n_art)

    if max_iter is None:
        max_iter = 20 * (m + A.shape[1]) + 1000
    smp = _Simplex(A, b, c, lo, hi, x, basis, state, max_iter)
    if n_art:
        phase1 = np.zeros(A.shape[1])
        phase1[n + m_ub:] = 1.0
        status = smp.run(phase1)
        smp.recompute_basics()
        infeas = float(np.sum(smp.x[n + m_ub:]))
        if status == ITERATION_LIMIT:
            return LpSolution(None, np.nan, ITERATION_LIMIT, smp.iterations)
        if infeas > FEAS_TOL * max(1.0, np.abs(b).max()):
            return LpSolution(None, np.nan, INFEASIBLE, smp.iterations)
        # artificials are now fixed at zero and never re-enter
        smp.hi[n + m_ub:] = 0.0
        nb = np.flatnonzero(smp.state[n + m_ub:] != _BASIC) + n + m_ub
        smp.x[nb], smp.state[nb] = 0.0, _LOWER
    status = smp.run(c)
    if status != OPTIMAL:
        return LpSolution(None, np.nan, status, smp.iterations)
    smp.recompute_basics()
    sol = np.clip(smp.x[:n], problem.lower, problem.upper)
    return LpSolution(sol, problem.objective(sol), OPTIMAL, smp.iterations, problem.residual(sol))
