"""Dense revised simplex with an explicit basis inverse.

``RevisedSimplex`` solves ``min c^T x  s.t.  A x = b, x >= 0`` from a given
feasible basis.  Pricing is Dantzig's rule or steepest edge (Goldfarb-Reid
weights); after a run of degenerate pivots either one hands over to Bland's
smallest-index rule, which cannot cycle.  The ratio test is Harris' two-pass
test with a pivot floor relative to the largest candidate.  Columns can be
appended between solves, which is what column generation needs.

``solve_lp`` handles the inequality form ``min c^T w  s.t.  M w >= g, w >= 0``
used by the dominating-portfolio programs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


class RevisedSimplex:
    def __init__(self, A: np.ndarray, b: np.ndarray, c: np.ndarray, basis: np.ndarray,
                 tol: float = 1e-9, rule: str = "dantzig", refactor_every: int = 100,
                 degenerate_switch: int = 1000):
        self.m = A.shape[0]
        self._cap = max(A.shape[1], 16)
        self._A = np.zeros((self.m, self._cap))
        self._c = np.zeros(self._cap)
        self.n = A.shape[1]
        self._A[:, :self.n] = A
        self._c[:self.n] = c
        self._gamma = np.ones(self._cap)   # steepest-edge reference weights 1 + |B^-1 a_j|^2
        self.b = np.asarray(b, dtype=float).copy()
        self.basis = np.asarray(basis, dtype=np.int64).copy()
        self.tol = tol
        self.rule = rule
        self.refactor_every = refactor_every
        self.degenerate_switch = degenerate_switch
        self.iterations = 0
        self.blocked = np.zeros(self._cap, dtype=bool)   # columns never allowed to enter
        self.b_scale = float(max(np.abs(self.b).max(), 1e-300))
        self.harris = 1e-9
        self._refactor()
        if rule == "steepest":
            self._gamma[:self.n] = 1.0 + ((self.Binv @ A) ** 2).sum(axis=0)

    @property
    def A(self) -> np.ndarray:
        return self._A[:, :self.n]

    @property
    def c(self) -> np.ndarray:
        return self._c[:self.n]

    def add_columns(self, A_new: np.ndarray, c_new: np.ndarray) -> None:
        k = A_new.shape[1]
        if self.n + k > self._cap:
            cap = max(2 * self._cap, self.n + k)
            A2 = np.zeros((self.m, cap))
            A2[:, :self.n] = self.A
            c2 = np.zeros(cap)
            c2[:self.n] = self.c
            bl = np.zeros(cap, dtype=bool)
            bl[:self.n] = self.blocked[:self.n]
            gm = np.ones(cap)
            gm[:self.n] = self._gamma[:self.n]
            self._A, self._c, self.blocked, self._gamma, self._cap = A2, c2, bl, gm, cap
        self._A[:, self.n:self.n + k] = A_new
        self._c[self.n:self.n + k] = c_new
        self._gamma[self.n:self.n + k] = 1.0 + ((self.Binv @ A_new) ** 2).sum(axis=0)
        self.n += k

    def _refactor(self) -> None:
        self.Binv = np.linalg.inv(self._A[:, self.basis])
        self.xB = self.Binv @ self.b
        # wipe rounding noise; a genuinely infeasible basis shows up as large negatives
        self.xB[np.abs(self.xB) < 1e-13 * (1.0 + np.abs(self.b).max())] = 0.0
        self._since_refactor = 0

    def duals(self) -> np.ndarray:
        return self._c[self.basis] @ self.Binv

    def reduced_costs(self) -> np.ndarray:
        return self.c - self.duals() @ self.A

    def x(self) -> np.ndarray:
        out = np.zeros(self.n)
        out[self.basis] = np.maximum(self.xB, 0.0)
        return out

    def objective(self) -> float:
        return float(self._c[self.basis] @ self.xB)

    def solve(self, max_iter: int = 200_000) -> str:
        degenerate_run = 0
        for _ in range(max_iter):
            d = self.reduced_costs()
            d[self.basis] = 0.0
            d[self.blocked[:self.n]] = 0.0
            thresh = -self.tol * (1.0 + np.abs(self.c))
            cand = d < thresh
            if not np.any(cand):
                return OPTIMAL
            bland = self.rule == "bland" or degenerate_run >= self.degenerate_switch
            if bland:
                q = int(np.flatnonzero(cand)[0])
            elif self.rule == "steepest":
                q = int(np.argmax(np.where(cand, d * d / self._gamma[:self.n], 0.0)))
            else:
                q = int(np.argmin(np.where(cand, d, 0.0)))
            alpha = self.Binv @ self._A[:, q]
            amax = float(np.max(np.abs(alpha)))
            pos = alpha > max(self.tol, 1e-9 * amax)
            if not np.any(pos):
                return UNBOUNDED
            xb = np.maximum(self.xB, 0.0)
            if bland:
                ratios = np.full(self.m, np.inf)
                ratios[pos] = xb[pos] / alpha[pos]
                step = ratios.min()
                ties = np.flatnonzero(ratios <= step * (1.0 + 1e-12))
                # smallest index among the tied rows whose pivot is not tiny
                ties = ties[alpha[ties] >= 1e-3 * alpha[ties].max()]
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                # Harris: among rows within a small slack of the minimum ratio, pivot on the largest alpha
                slack = self.harris * self.b_scale
                bound = np.min((xb[pos] + slack) / alpha[pos])
                ok = np.flatnonzero(pos)
                ok = ok[xb[ok] / alpha[ok] <= bound]
                r = int(ok[np.argmax(alpha[ok])])
                step = xb[r] / alpha[r]
            degenerate_run = degenerate_run + 1 if step <= 1e-14 * self.b_scale else 0
            self._pivot(r, q, alpha, step)
        return ITERATION_LIMIT

    def _update_weights(self, r: int, q: int, alpha: np.ndarray) -> None:
        # Goldfarb-Reid recurrence
        A = self.A
        ratio = (self.Binv[r] @ A) / alpha[r]
        w = self.Binv.T @ alpha
        gq = self._gamma[q]
        g = self._gamma[:self.n]
        g[:] = np.maximum(g - 2.0 * ratio * (w @ A) + ratio * ratio * gq, 1.0 + ratio * ratio)
        g[self.basis[r]] = max(gq / alpha[r] ** 2, 1.0 + 1.0 / alpha[r] ** 2)
        if not np.all(np.isfinite(g)):
            g[:] = 1.0      # restart the reference framework

    def _pivot(self, r: int, q: int, alpha: np.ndarray, step: float) -> None:
        if self.rule == "steepest":
            self._update_weights(r, q, alpha)
        self.xB -= step * alpha
        self.xB[r] = step
        piv = alpha[r]
        row = self.Binv[r] / piv
        self.Binv -= np.outer(alpha, row)
        self.Binv[r] = row
        self.basis[r] = q
        self.iterations += 1
        self._since_refactor += 1
        if self._since_refactor >= self.refactor_every:
            self._refactor()


# ----------------------------------------------------------------- LP front end

@dataclass
class LpSolution:
    primal: np.ndarray      # w
    dual: np.ndarray        # one multiplier per constraint row, >= 0
    status: str
    objective: float
    iterations: int
    dual_objective: float = float("nan")   # g^T y before clipping y at zero


COST_UNIT_FLOOR = 1e-6


class DualColumnGeneration:
    """``min c^T w, M w >= g, w >= 0`` with ``c >= 0`` solved through its dual.

    The dual ``max g^T y, M^T y <= c, y >= 0`` starts feasible at the slack
    basis, so no phase one is needed and new constraint rows of the primal
    become new dual columns that keep the current basis feasible.

    The program is equilibrated first: each variable is measured in units
    of its cost (so every cost is at most one) and each row is divided by its
    largest entry.  Without this a row that can only be met by nearly free
    variables keeps winning the pricing step while its multiplier has no
    room to move, and the simplex crawls.
    """

    def __init__(self, M: np.ndarray, g: np.ndarray, c: np.ndarray, tol: float = 1e-9,
                 rule: str = "dantzig", perturb: float = 0.0, seed: int = 0):
        c = np.asarray(c, dtype=float)
        if np.any(c < 0):
            raise ValueError("dual route needs c >= 0")
        nvar = c.size
        self.nvar = nvar
        self.c = c
        # Unit scale capped at 1e6 / max(c): past that, rows met only by
        # near-free variables would price below the tolerance and never enter.
        floor = COST_UNIT_FLOOR * float(c.max()) if c.size and c.max() > 0 else 1.0
        self.col = 1.0 / np.maximum(c, floor)
        rhs = c * self.col
        # A random relative lift of the dual right-hand side breaks ties.
        # Optimality of a basis does not depend on it, so the primal read off
        # the duals stays feasible; only the objective moves, by at most
        # ``perturb`` relative.
        if perturb > 0:
            rhs = rhs * (1.0 + perturb * np.random.default_rng(seed).random(nvar))
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        self.g = np.asarray(g, dtype=float)
        Ms, gs, self.row = self._scale_rows(M, g)
        A = np.hstack([np.eye(nvar), Ms.T])
        cost = np.concatenate([np.zeros(nvar), -gs])
        self.lp = RevisedSimplex(A, rhs, cost, np.arange(nvar), tol=tol, rule=rule)

    def _scale_rows(self, M, g):
        Ms = np.atleast_2d(np.asarray(M, dtype=float)) * self.col[None, :]
        rho = np.abs(Ms).max(axis=1)
        rho = np.where(rho > 0, rho, 1.0)
        return Ms / rho[:, None], np.asarray(g, dtype=float) / rho, rho

    @property
    def n_rows(self) -> int:
        return self.lp.n - self.nvar

    def add_rows(self, M_new: np.ndarray, g_new: np.ndarray) -> None:
        self.M = np.vstack([self.M, M_new])
        self.g = np.concatenate([self.g, g_new])
        Ms, gs, rho = self._scale_rows(M_new, g_new)
        self.row = np.concatenate([self.row, rho])
        self.lp.add_columns(Ms.T, -gs)

    def _basic_primal(self, w_fallback: np.ndarray) -> np.ndarray:
        """Primal vertex of the optimal basis, solved in the caller's units.

        Reading ``w`` off the simplex multipliers loses every variable whose
        cost is below machine precision relative to the largest one.  The
        basis says the same thing exactly: a basic dual slack means
        ``w_i = 0`` and a basic row column means that row is tight.
        """
        basis = self.lp.basis
        tight = basis[basis >= self.nvar] - self.nvar
        free = np.setdiff1d(np.arange(self.nvar), basis[basis < self.nvar])
        w = np.zeros(self.nvar)
        if free.size != tight.size:
            return w_fallback
        if free.size:
            B = self.M[np.ix_(tight, free)]
            try:
                w[free] = np.linalg.solve(B, self.g[tight])
            except np.linalg.LinAlgError:
                return w_fallback
            if not np.all(np.isfinite(w)):
                return w_fallback
        return np.maximum(w, 0.0)

    def solve(self, max_iter: int = 200_000) -> LpSolution:
        status = self.lp.solve(max_iter)
        y = self.lp.x()[self.nvar:] / self.row
        w = np.maximum(-self.lp.duals(), 0.0) * self.col
        if status == OPTIMAL:
            w = self._basic_primal(w)
        if status == UNBOUNDED:
            return LpSolution(w, y, INFEASIBLE, np.inf, self.lp.iterations)
        return LpSolution(w, y, status, float(self.c @ w), self.lp.iterations, -self.lp.objective())


def _two_phase(M: np.ndarray, g: np.ndarray, c: np.ndarray, tol: float, rule: str) -> LpSolution:
    """General route: surplus variables, artificials and a phase-one objective."""
    nrow, nvar = M.shape
    sign = np.where(g < 0, -1.0, 1.0)
    # rows: sign * (M w - s) = sign * g
    A = np.hstack([sign[:, None] * M, -np.diag(sign), np.eye(nrow)])
    b = sign * g
    n_struct = nvar + nrow
    c1 = np.concatenate([np.zeros(n_struct), np.ones(nrow)])
    lp = RevisedSimplex(A, b, c1, np.arange(n_struct, n_struct + nrow), tol=tol, rule=rule)
    status = lp.solve()
    if status != OPTIMAL:
        return LpSolution(np.zeros(nvar), np.zeros(nrow), status, np.nan, lp.iterations)
    if lp.objective() > tol * (1.0 + np.abs(b).sum()):
        return LpSolution(np.zeros(nvar), np.zeros(nrow), INFEASIBLE, np.nan, lp.iterations)
    # drive artificials out of the basis where a structural pivot exists
    for r in range(nrow):
        if lp.basis[r] >= n_struct:
            row = lp.Binv[r] @ lp.A[:, :n_struct]
            row[lp.basis[lp.basis < n_struct]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-9:
                lp._pivot(r, j, lp.Binv @ lp.A[:, j], 0.0)
    lp._refactor()
    lp._c[:lp.n] = np.concatenate([c, np.zeros(nrow), np.zeros(nrow)])
    lp.blocked[n_struct:lp.n] = True
    status = lp.solve()
    x = lp.x()
    y = lp.duals() * sign
    if status == UNBOUNDED:
        return LpSolution(x[:nvar], np.maximum(y, 0.0), UNBOUNDED, -np.inf, lp.iterations)
    return LpSolution(x[:nvar], np.maximum(y, 0.0), status, float(c @ x[:nvar]), lp.iterations)


def solve_inequality_lp(M, g, c, tol: float = 1e-9, rule: str = "dantzig") -> LpSolution:
    """``min c^T w  s.t.  M w >= g, w >= 0``; dual multipliers are returned per row."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    g = np.asarray(g, dtype=float)
    c = np.asarray(c, dtype=float)
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(g)) and np.all(np.isfinite(c))):
        raise ValueError("LP data must be finite")
    if np.all(c >= 0):
        return DualColumnGeneration(M, g, c, tol, rule).solve()
    return _two_phase(M, g, c, tol, rule)
