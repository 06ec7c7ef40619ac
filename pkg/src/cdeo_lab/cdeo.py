"""Cheapest dominating European payoff measure of an American claim.

The semi-infinite program

    minimize   v_eu,mu(T, x0) = e^{-rT} |mu|
    subject to v_eu,mu(theta, x) >= g(x)   for (theta, x) in (0, T] x (-inf, K]

is discretized in both directions.  The measure is a piecewise-linear
density on a support grid in ``[K - L, K]`` (one hat function per node),
and the constraints are enforced on a finite set of points that an
exchange loop enlarges with the worst violations it can find.

Variables are scaled by ``phi(x0 + r^ T, s^2 T, y_i)`` so that a variable
reads as a payoff level rather than as a density value; the raw density
values span hundreds of orders of magnitude.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize_scalar

from .euro import DEFAULT_L, PayoffMeasure, kernel_nodes, price_measure_payoff
from .kernel import MarketParams, log_norm_pdf
from .payoff import AmericanPayoff, PayoffReport, validate_payoff
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, DualColumnGeneration, LpSolution, solve_inequality_lp


class ConfigError(ValueError):
    pass


MAX_ROW_ENTRY = 1e15      # HiGHS refuses larger matrix coefficients


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class SupportGrid:
    """Support nodes in ``(-inf, K]``; ``kind`` is ``"hats"`` (density) or ``"atoms"``."""

    nodes: np.ndarray
    kind: str = "hats"

    def __post_init__(self) -> None:
        if self.nodes.size == 0:
            raise ConfigError("empty support grid")
        if self.kind not in ("hats", "atoms"):
            raise ConfigError(f"unknown support kind {self.kind!r}")
        if self.kind == "hats" and self.nodes.size < 2:
            raise ConfigError("a density support needs at least two nodes")
        if np.any(np.diff(self.nodes) <= 0):
            raise ConfigError("support nodes must be strictly increasing")

    @property
    def size(self) -> int:
        return self.nodes.size

    def widths(self) -> np.ndarray:
        """``int hat_i`` for hats, the Voronoi cell length for atoms."""
        y = self.nodes
        if y.size == 1:
            return np.ones(1)
        d = np.diff(y)
        return 0.5 * (np.concatenate([[0.0], d]) + np.concatenate([d, [0.0]]))


def clustered(K: float, L: float, n: int, cluster: float, include_knot: bool = True) -> np.ndarray:
    """``n`` points on ``[K - L, K]`` with spacing growing geometrically away from K."""
    s = np.linspace(0.0, 1.0, n) if include_knot else np.linspace(0.0, 1.0, n + 1)[1:]
    off = L * np.expm1(cluster * s) / math.expm1(cluster) if cluster > 0 else L * s
    return np.sort(K - off)


def support_grid(K: float, L: float = DEFAULT_L, n: int = 600, cluster: float = 4.0,
                 kind: str = "hats") -> SupportGrid:
    return SupportGrid(clustered(K, L, n, cluster), kind)


@dataclass(frozen=True)
class ConstraintGrid:
    theta: np.ndarray
    x: np.ndarray

    def __post_init__(self) -> None:
        if self.theta.size == 0:
            raise ConfigError("empty constraint grid")
        if self.theta.shape != self.x.shape:
            raise ConfigError("constraint theta and x must pair up")
        if np.any(self.theta <= 0):
            raise ConfigError("constraints need theta > 0")

    @classmethod
    def product(cls, thetas, xs) -> "ConstraintGrid":
        tt, xx = np.meshgrid(np.asarray(thetas, float), np.asarray(xs, float), indexing="ij")
        return cls(tt.ravel(), xx.ravel())

    @property
    def size(self) -> int:
        return self.theta.size


def maturity_grid(T: float, n: int, smallest: float = 1e-4, n_geometric: Optional[int] = None) -> np.ndarray:
    """Geometric near 0 (from ``smallest * T``), then linear up to T."""
    n_geo = n // 2 if n_geometric is None else n_geometric
    geo = T * np.geomspace(smallest, 0.1, n_geo, endpoint=False)
    lin = np.linspace(0.1 * T, T, n - n_geo)
    return np.unique(np.concatenate([geo, lin]))


# ---------------------------------------------------------------- LP assembly

def _log_scale(m: MarketParams, supp: SupportGrid) -> np.ndarray:
    """Log of the column scale: anchor density at the node (times the width for atoms)."""
    an = m.anchor()
    ls = log_norm_pdf(an.mean, an.variance, supp.nodes)
    if supp.kind == "atoms":
        ls = ls + np.log(supp.widths())
    return ls


def constraint_rows(m: MarketParams, supp: SupportGrid, theta: float, xs) -> np.ndarray:
    """Scaled constraint rows ``v(theta, x_k) = sum_i R[k, i] u_i`` for one maturity."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    n = supp.size
    ls = _log_scale(m, supp)
    disc = math.exp(-m.r * theta)
    s1, s2 = m.sigma2 * theta, m.sigma2 * m.T
    mu2 = m.x0 + m.r_hat * m.T
    if supp.kind == "atoms":
        y = supp.nodes[None, :]
        mu1 = (xs + m.r_hat * theta)[:, None]
        lr = -0.5 * (y - mu1) ** 2 / s1 + 0.5 * (y - mu2) ** 2 / s2 + 0.5 * math.log(s2 / s1)
        with np.errstate(over="ignore"):
            return disc * np.exp(lr + ls[None, :])
    y = supp.nodes
    log_cell = np.maximum(ls[:-1], ls[1:])
    out = np.zeros(xs.size * n)
    for nb in kernel_nodes(m, y, log_cell, theta, xs):
        c = nb.cell
        t = (nb.y - y[c]) / (y[c + 1] - y[c])
        base = nb.row * n + c
        with np.errstate(over="ignore"):
            out += np.bincount(base, nb.w * (1.0 - t) * np.exp(nb.lr + ls[c]), minlength=out.size)
            out += np.bincount(base + 1, nb.w * t * np.exp(nb.lr + ls[c + 1]), minlength=out.size)
    return disc * out.reshape(xs.size, n)


def constraint_values(m: MarketParams, supp: SupportGrid, theta: float, xs, u) -> np.ndarray:
    """``constraint_rows(m, supp, theta, xs) @ u`` without forming the rows."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    u = np.asarray(u, dtype=float)
    if supp.kind == "atoms":
        return constraint_rows(m, supp, theta, xs) @ u
    y = supp.nodes
    ls = _log_scale(m, supp)
    log_cell = np.maximum(ls[:-1], ls[1:])
    out = np.zeros(xs.size)
    for nb in kernel_nodes(m, y, log_cell, theta, xs):
        c = nb.cell
        t = (nb.y - y[c]) / (y[c + 1] - y[c])
        with np.errstate(over="ignore"):
            val = (1.0 - t) * np.exp(nb.lr + ls[c]) * u[c] + t * np.exp(nb.lr + ls[c + 1]) * u[c + 1]
        out += np.bincount(nb.row, nb.w * val, minlength=xs.size)
    return math.exp(-m.r * theta) * out


def rows_for_points(m: MarketParams, supp: SupportGrid, thetas, xs) -> np.ndarray:
    thetas = np.asarray(thetas, dtype=float)
    xs = np.asarray(xs, dtype=float)
    out = np.empty((thetas.size, supp.size))
    for t in np.unique(thetas):
        sel = thetas == t
        out[sel] = constraint_rows(m, supp, float(t), xs[sel])
    return out


@dataclass
class LpInstance:
    """``min c^T u  s.t.  M u >= g, u >= 0`` in scaled variables.

    Unscaled variables (atom masses or density knot values) are
    ``u * scale``; ``matrix()`` and ``cost()`` give the unscaled data.
    """

    c: np.ndarray
    M: np.ndarray
    g: np.ndarray
    scale: np.ndarray
    theta: np.ndarray
    x: np.ndarray
    supp: SupportGrid

    def matrix(self) -> np.ndarray:
        return self.M / self.scale[None, :]

    def cost(self) -> np.ndarray:
        return self.c / self.scale


def build_lp(m: MarketParams, g: AmericanPayoff, supp: SupportGrid, cons: ConstraintGrid,
             cost_floor: float = 0.0) -> LpInstance:
    """Discretized program: one variable per support node, one row per constraint point.

    ``cost_floor`` lifts every scaled cost to at least ``cost_floor * max(c)``.
    Deep-tail nodes otherwise cost ~1e-180 per unit level, a range the
    simplex cannot pivot through stably; the price perturbation is at most
    ``cost_floor * max(c) * sum(u)``.
    """
    if np.any(supp.nodes > g.K + 1e-12):
        raise ConfigError("support must lie in (-inf, K]")
    if np.any(cons.x > g.K + 1e-12) or np.any(cons.theta > m.T + 1e-12):
        raise ConfigError("constraints must lie in (0, T] x (-inf, K]")
    ls = _log_scale(m, supp)
    scale = np.exp(ls)
    M = rows_for_points(m, supp, cons.theta, cons.x)
    widths = supp.widths() if supp.kind == "hats" else np.ones(supp.size)
    c = math.exp(-m.r * m.T) * widths * scale
    if cost_floor > 0:
        c = np.maximum(c, cost_floor * c.max())
    return LpInstance(c, M, np.asarray(g(cons.x), dtype=float), scale,
                      cons.theta.copy(), cons.x.copy(), supp)


def solve_lp(lp: LpInstance, tol: float = 1e-9, rule: str = "dantzig") -> tuple[np.ndarray, np.ndarray, str]:
    """Returns ``(primal, dual, status)``; the primal is in unscaled units."""
    sol = solve_inequality_lp(lp.M, lp.g, lp.c, tol=tol, rule=rule)
    return sol.primal * lp.scale, sol.dual, sol.status


def measure_from_levels(m: MarketParams, supp: SupportGrid, u: np.ndarray, K: float,
                        L: float = DEFAULT_L) -> PayoffMeasure:
    vals = u * np.exp(_log_scale(m, supp))
    if supp.kind == "atoms":
        return PayoffMeasure(K, supp.nodes.copy(), vals, L=L)
    return PayoffMeasure(K, knots=supp.nodes.copy(), density=vals, L=L)


class HighsEngine:
    """Same interface as :class:`DualColumnGeneration`, backed by HiGHS dual simplex.

    Every solve starts from scratch (scipy exposes no warm start).  Used for
    the full-size exchange loop, where the dense explicit-inverse simplex
    loses accuracy on the nearly collinear kernel columns.
    """

    def __init__(self, M: np.ndarray, g: np.ndarray, c: np.ndarray, tol: float = 1e-9):
        self.M = np.asarray(M, dtype=float)
        self.g = np.asarray(g, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.tol = tol

    @property
    def n_rows(self) -> int:
        return self.g.size

    def add_rows(self, M_new: np.ndarray, g_new: np.ndarray) -> None:
        self.M = np.vstack([self.M, M_new])
        self.g = np.concatenate([self.g, g_new])

    def solve(self) -> LpSolution:
        opts = {"primal_feasibility_tolerance": self.tol, "dual_feasibility_tolerance": self.tol}
        r = linprog(self.c, A_ub=-self.M, b_ub=-self.g, bounds=(0, None), method="highs-ds",
                    options=opts)
        if r.status == 0:
            y = -r.ineqlin.marginals
            return LpSolution(np.maximum(r.x, 0.0), np.maximum(y, 0.0), OPTIMAL, float(r.fun),
                              int(r.nit), float(self.g @ y))
        status = {2: INFEASIBLE, 3: UNBOUNDED}.get(r.status, r.message)
        return LpSolution(np.zeros(self.c.size), np.zeros(self.g.size), status, math.nan, int(r.nit))


@dataclass
class TerminalRows:
    M: np.ndarray
    g: np.ndarray
    theta: np.ndarray
    x: np.ndarray


def terminal_rows(supp: SupportGrid, g: AmericanPayoff) -> TerminalRows:
    """Rows ``u_i >= g(y_i)``, recorded at ``theta = 0``.

    For a hat support the scaled variable ``u_i`` is the European payoff
    level at node ``y_i``, which is what ``v(theta, y_i)`` tends to as
    ``theta -> 0``.  Nodes with ``g = 0`` are skipped.
    """
    gy = np.asarray(g(supp.nodes), dtype=float)
    idx = np.flatnonzero(gy > 0)
    M = np.zeros((idx.size, supp.size))
    M[np.arange(idx.size), idx] = 1.0
    return TerminalRows(M, gy[idx], np.zeros(idx.size), supp.nodes[idx].copy())


# ---------------------------------------------------------------- exchange loop

@dataclass
class CdeoConfig:
    L: float = DEFAULT_L
    n_support: int = 600
    support_cluster: float = 4.0
    support_kind: str = "hats"
    seed_theta: int = 40
    seed_x: int = 120
    scan_theta: int = 96
    scan_x: int = 800
    smallest_theta: float = 1e-6          # fraction of T for the scan
    new_points: int = 25
    max_rounds: int = 40
    feas_tol: Optional[float] = None      # default 1e-6 e^K
    lp_tol: float = 1e-9
    lp_engine: str = "highs"              # or "simplex" (in-house, fine for small instances)
    pivot_rule: str = "steepest"
    lp_perturb: float = 1e-9              # relative lift of the costs against degeneracy


@dataclass
class DualAtoms:
    theta: np.ndarray
    x: np.ndarray
    mass: np.ndarray          # LP multipliers in the original scale
    mass0: np.ndarray         # same atoms in the driftless scale


@dataclass
class CdeoSolution:
    mu_star: PayoffMeasure
    levels: np.ndarray
    lam: DualAtoms
    primal_obj: float
    dual_obj: float
    converged: bool
    max_violation: float
    feas_tol: float
    supp: SupportGrid
    cons_theta: np.ndarray
    cons_x: np.ndarray
    refinement_log: list = field(default_factory=list)
    payoff_report: Optional[PayoffReport] = None
    slackness: Optional[dict] = None

    @property
    def node_masses(self) -> np.ndarray:
        """Mass of ``mu_star`` per support node (atom weight, or density times hat integral)."""
        mu = self.mu_star
        if self.supp.kind == "atoms":
            return mu.atoms_w.copy()
        return mu.density * self.supp.widths()

    @property
    def price(self) -> float:
        return self.primal_obj

    def summary(self) -> dict:
        return {
            "price": self.primal_obj,
            "primal_obj": self.primal_obj,
            "dual_obj": self.dual_obj,
            "relative_gap": abs(self.primal_obj - self.dual_obj) / max(abs(self.primal_obj), 1e-300),
            "converged": self.converged,
            "max_violation": self.max_violation,
            "feas_tol": self.feas_tol,
            "rounds": len(self.refinement_log),
            "n_constraints": int(self.cons_theta.size),
            "n_dual_atoms": int(self.lam.theta.size),
            "total_mass": self.mu_star.total_mass(),
            "refinement_log": self.refinement_log,
            "slackness": self.slackness,
        }


class _Scan:
    """Dense grid of (theta, x) points with cached constraint rows."""

    def __init__(self, m: MarketParams, supp: SupportGrid, g: AmericanPayoff, cfg: CdeoConfig):
        self.theta = maturity_grid(m.T, cfg.scan_theta, cfg.smallest_theta)
        self.x = clustered(g.K, cfg.L, cfg.scan_x, cfg.support_cluster, include_knot=False)
        self.rows = np.stack([constraint_rows(m, supp, float(t), self.x) for t in self.theta])
        self.gx = np.asarray(g(self.x), dtype=float)

    def violation(self, u: np.ndarray) -> np.ndarray:
        return self.rows @ u - self.gx[None, :]


def _local_minima(V: np.ndarray) -> np.ndarray:
    pad = np.pad(V, 1, constant_values=np.inf)
    core = pad[1:-1, 1:-1]
    ok = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                ok &= core <= pad[1 + di:pad.shape[0] - 1 + di, 1 + dj:pad.shape[1] - 1 + dj]
    return ok


def _refine(m, supp, g, u, scan: _Scan, j: int, k: int) -> tuple[float, float, float]:
    """Alternating bounded Brent in x and theta around scan node (j, k)."""
    def h(t, x):
        return float(constraint_rows(m, supp, t, [x])[0] @ u - g(x))

    th, xs = scan.theta, scan.x
    t = th[j]
    x = xs[k]
    xlo, xhi = xs[max(k - 1, 0)], xs[min(k + 1, xs.size - 1)]
    tlo, thi = th[max(j - 1, 0)], th[min(j + 1, th.size - 1)]
    best = (h(t, x), t, x)
    for _ in range(2):
        r = minimize_scalar(lambda z: h(t, z), bounds=(xlo, xhi), method="bounded",
                            options={"xatol": 1e-7})
        if r.fun < best[0]:
            best = (float(r.fun), t, float(r.x))
            x = float(r.x)
        if thi > tlo:
            r = minimize_scalar(lambda s: h(s, x), bounds=(tlo, thi), method="bounded",
                                options={"xatol": 1e-6 * thi})
            if r.fun < best[0]:
                best = (float(r.fun), float(r.x), x)
                t = float(r.x)
    return best


def solve_cdeo(m: MarketParams, g: AmericanPayoff, cfg: CdeoConfig = CdeoConfig(),
               verbose: bool = False) -> CdeoSolution:
    """Exchange loop around the discretized program; see the module docstring."""
    t_start = time.time()
    report = validate_payoff(g, m.r, m.sigma)
    feas_tol = cfg.feas_tol if cfg.feas_tol is not None else 1e-6 * math.exp(g.K)
    supp = support_grid(g.K, cfg.L, cfg.n_support, cfg.support_cluster, cfg.support_kind)
    probe = clustered(g.K, cfg.L, max(cfg.scan_x, cfg.seed_x), cfg.support_cluster, include_knot=False)
    if not np.any(np.asarray(g(np.concatenate([probe, supp.nodes]))) > 0):
        # nothing to dominate: the zero measure is optimal
        u = np.zeros(supp.size)
        empty = np.zeros(0)
        lam = DualAtoms(empty, empty, empty, empty)
        mu = measure_from_levels(m, supp, u, g.K, cfg.L)
        log = [{"round": 0, "n_constraints": 0, "primal_obj": 0.0, "dual_obj": 0.0,
                "max_violation": 0.0, "simplex_iterations": 0, "elapsed": time.time() - t_start}]
        return CdeoSolution(mu, u, lam, 0.0, 0.0, True, 0.0, feas_tol, supp, empty, empty, log, report)
    if cfg.lp_engine not in ("highs", "simplex"):
        raise ConfigError(f"unknown lp_engine {cfg.lp_engine!r}")

    seed_t = maturity_grid(m.T, cfg.seed_theta, 1e-4)
    seed_x = clustered(g.K, cfg.L, cfg.seed_x, cfg.support_cluster, include_knot=False)
    cons = ConstraintGrid.product(seed_t, seed_x)
    keep = np.asarray(g(cons.x)) > 0          # rows with g = 0 hold trivially
    lp = build_lp(m, g, supp, ConstraintGrid(cons.theta[keep], cons.x[keep]))
    big = float(np.max(lp.M)) if lp.M.size else 0.0
    if not big < MAX_ROW_ENTRY:
        # the anchor density changes by e^big across one tail cell: levels stop being local
        raise ConfigError(f"support grid too coarse for its span (row entry {big:.3g}); "
                          "raise n_support or reduce L")
    if supp.kind == "hats":
        # theta -> 0 limit of the constraints: the payoff level at each node dominates g
        t0 = terminal_rows(supp, g)
        lp.M = np.vstack([lp.M, t0.M])
        lp.g = np.concatenate([lp.g, t0.g])
        lp.theta = np.concatenate([lp.theta, t0.theta])
        lp.x = np.concatenate([lp.x, t0.x])
    if cfg.lp_engine == "highs":
        solver = HighsEngine(lp.M, lp.g, lp.c, tol=cfg.lp_tol)
    else:
        solver = DualColumnGeneration(lp.M, lp.g, lp.c, tol=cfg.lp_tol, rule=cfg.pivot_rule,
                                      perturb=cfg.lp_perturb)
    scan = _Scan(m, supp, g, cfg)
    c_theta, c_x, c_g = list(lp.theta), list(lp.x), list(lp.g)
    log: list[dict] = []
    converged = False
    sol: Optional[LpSolution] = None
    max_viol = math.inf

    for rnd in range(cfg.max_rounds + 1):
        sol = solver.solve()
        if sol.status != OPTIMAL:
            raise RuntimeError(f"LP solve failed: {sol.status}")
        u = sol.primal
        y = sol.dual
        primal = float(lp.c @ u)
        dual = sol.dual_objective if math.isfinite(sol.dual_objective) else float(np.asarray(c_g) @ y)
        V = scan.violation(u)
        cand = np.argwhere(_local_minima(V) & (V < -feas_tol))
        order = np.argsort(V[cand[:, 0], cand[:, 1]])[: 2 * cfg.new_points]
        found = [_refine(m, supp, g, u, scan, int(j), int(k)) for j, k in cand[order]]
        found.sort()
        worst_grid = float(-V.min()) if V.size else 0.0
        max_viol = max([worst_grid] + [-f[0] for f in found])
        entry = {"round": rnd, "n_constraints": len(c_theta), "primal_obj": primal,
                 "dual_obj": dual, "max_violation": max_viol,
                 "simplex_iterations": sol.iterations, "elapsed": time.time() - t_start}
        log.append(entry)
        if verbose:
            print(entry)
        if max_viol <= feas_tol or rnd == cfg.max_rounds:
            converged = max_viol <= feas_tol
            break
        new_t, new_x = [], []
        for val, t, x in found:
            if val >= -feas_tol:
                continue
            if any(abs(t - a) <= 1e-9 * m.T and abs(x - b) <= 1e-9 for a, b in zip(new_t, new_x)):
                continue
            new_t.append(t)
            new_x.append(x)
            if len(new_t) >= cfg.new_points:
                break
        if not new_t:
            # violations exist on the scan grid but refinement found nothing new: add grid points
            flat = np.argsort(V, axis=None)[: cfg.new_points]
            jj, kk = np.unravel_index(flat, V.shape)
            new_t = list(scan.theta[jj])
            new_x = list(scan.x[kk])
        rows = rows_for_points(m, supp, new_t, new_x)
        gn = np.asarray(g(np.asarray(new_x)), dtype=float)
        solver.add_rows(rows, gn)
        c_theta += new_t
        c_x += new_x
        c_g += list(gn)

    assert sol is not None
    u = sol.primal
    y = sol.dual
    c_theta_a, c_x_a = np.asarray(c_theta), np.asarray(c_x)
    active = y > 0
    lam = DualAtoms(c_theta_a[active], c_x_a[active], y[active],
                    y[active] * np.exp(m.gamma * (m.x0 - c_x_a[active])))
    mu = measure_from_levels(m, supp, u, g.K, cfg.L)
    return CdeoSolution(mu, u, lam, float(lp.c @ u), dual, converged,
                        max_viol, feas_tol, supp, c_theta_a, c_x_a, log, report)


# ---------------------------------------------------------------- diagnostics

def hat_kernel_averages(m: MarketParams, supp: SupportGrid, theta, x) -> np.ndarray:
    """``int hat_i(y) kappa(T - theta, x, y) dy / int hat_i`` through the driftless kernel.

    Computed independently of the LP matrix (different drift, and cells are
    only dropped once the integrand is ``e^-80`` below the row maximum).
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    y = supp.nodes
    n = supp.size
    out = np.zeros((theta.size, n))
    flat_log = np.zeros(n - 1)
    for t in np.unique(theta):
        sel = np.flatnonzero(theta == t)
        acc = np.zeros(sel.size * n)
        for nb in kernel_nodes(m, y, flat_log, float(t), x[sel], drift=m.r_tilde, prune=80.0):
            c = nb.cell
            tt = (nb.y - y[c]) / (y[c + 1] - y[c])
            base = nb.row * n + c
            with np.errstate(over="ignore"):
                e = np.exp(nb.lr)
            acc += np.bincount(base, nb.w * (1.0 - tt) * e, minlength=acc.size)
            acc += np.bincount(base + 1, nb.w * tt * e, minlength=acc.size)
        out[sel] = acc.reshape(sel.size, n)
    return out / supp.widths()[None, :]


def slackness_report(sol: CdeoSolution, m: MarketParams, g: AmericanPayoff,
                     slack_tol: float = 1e-4, lp_tol: float = 1e-9) -> dict:
    """Complementary slackness of the final discretized pair, evaluated off the LP matrix.

    Condition (ii) is asserted on the support nodes whose level carries mass
    and whose cost ``c_i`` is at least ``lp_tol / slack_tol``.  Below that the
    LP solver's absolute dual tolerance ``lp_tol`` cannot pin the relative
    residual to ``slack_tol``.  The unresolved nodes are still reported: their
    worst residual, their share of the mass and the mass-weighted residual
    over all mass nodes.
    """
    lam = sol.lam
    supp = sol.supp
    term = lam.theta == 0.0                 # theta -> 0 rows sit on support nodes
    node = np.searchsorted(supp.nodes, lam.x[term])
    # (i) the dominating value touches the payoff at every dual atom
    v = np.empty(lam.theta.size)
    v[term] = sol.levels[node]
    v[~term] = [price_measure_payoff(m, sol.mu_star, float(t), float(x))
                for t, x in zip(lam.theta[~term], lam.x[~term])]
    gx = np.asarray(g(lam.x), dtype=float)
    res_i = np.abs(v - gx) / np.maximum(gx, 1e-300)
    # (ii) the transformed dual measure integrates the kernel to one where mu carries mass
    carries = sol.levels > 1e-12 * max(1.0, float(np.max(sol.levels)))
    res_all = np.zeros(0)
    resolved_share = 1.0
    weighted = 0.0
    if sol.supp.kind == "hats" and lam.theta.size:
        kb = hat_kernel_averages(m, supp, lam.theta[~term], lam.x[~term])
        tk = lam.mass0[~term] @ kb
        cost = math.exp(-m.r * m.T) * supp.widths() * np.exp(_log_scale(m, supp))
        np.add.at(tk, node, lam.mass[term] / cost[node])
        resolved = carries & (cost >= lp_tol / slack_tol)
        res_ii = np.abs(tk[resolved] - 1.0)
        res_all = np.abs(tk[carries] - 1.0)
        mass = np.where(carries, sol.levels * cost, 0.0)
        frac = mass / mass.sum()
        resolved_share = float(frac[resolved].sum())
        weighted = float(frac[carries] @ res_all)
        # excess load where the cost is resolvable; tiny-cost nodes see only lp_tol / c_i
        dual_feas = float(np.max(tk[cost >= lp_tol / slack_tol] - 1.0))
    else:
        res_ii = np.zeros(0)
        resolved = carries
        dual_feas = float("nan")
    # (iii) no dual mass on the zero set of g
    zero_mass = float(np.sum(lam.mass[gx <= 0.0]))
    disp = dual_dispersion(lam)
    rep = {
        "max_rel_residual_i": float(res_i.max()) if res_i.size else 0.0,
        "max_abs_residual_ii": float(res_ii.max()) if res_ii.size else 0.0,
        "max_dual_excess": dual_feas,
        "dual_mass_on_zero_set": zero_mass,
        "n_dual_atoms": int(lam.theta.size),
        "n_mass_nodes": int(np.sum(carries)),
        "n_resolved_nodes": int(np.sum(resolved)),
        "resolved_mass_share": resolved_share,
        "max_abs_residual_ii_all_nodes": float(res_all.max()) if res_all.size else 0.0,
        "mass_weighted_residual_ii": weighted,
        "ok_i": bool(res_i.size == 0 or res_i.max() <= slack_tol),
        "ok_ii": bool(res_ii.size == 0 or res_ii.max() <= slack_tol),
        "ok_iii": zero_mass == 0.0,
        "dispersion": disp,
    }
    rep["ok"] = rep["ok_i"] and rep["ok_ii"] and rep["ok_iii"]
    sol.slackness = rep
    return rep


def dual_dispersion(lam: DualAtoms, bins: int = 12) -> dict:
    """Spread of the dual atoms in x within maturity bins (small = one curve)."""
    if lam.theta.size == 0:
        return {"max_weighted_std": 0.0, "bins": 0}
    edges = np.quantile(lam.theta, np.linspace(0, 1, bins + 1))
    stds = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (lam.theta >= a) & (lam.theta <= b)
        if sel.sum() < 2:
            continue
        w = lam.mass[sel] / lam.mass[sel].sum()
        mu = float(w @ lam.x[sel])
        stds.append(float(np.sqrt(w @ (lam.x[sel] - mu) ** 2)))
    return {"max_weighted_std": max(stds) if stds else 0.0,
            "mean_weighted_std": float(np.mean(stds)) if stds else 0.0, "bins": len(stds)}


def relocate_mass(mu: PayoffMeasure, K_knot: float) -> PayoffMeasure:
    """Move all mass above ``K_knot`` into an atom at ``K_knot``; total mass is preserved."""
    moved = float(np.sum(mu.atoms_w[mu.atoms_y > K_knot]))
    keep = mu.atoms_y <= K_knot
    ay, aw = list(mu.atoms_y[keep]), list(mu.atoms_w[keep])
    kn, dn = mu.knots, mu.density
    if kn.size and kn[-1] > K_knot:
        if kn[0] >= K_knot:
            moved += float(np.sum(0.5 * (dn[1:] + dn[:-1]) * np.diff(kn)))
            kn, dn = np.zeros(0), np.zeros(0)
        else:
            dK = float(np.interp(K_knot, kn, dn))
            above = kn > K_knot
            tail_k = np.concatenate([[K_knot], kn[above]])
            tail_d = np.concatenate([[dK], dn[above]])
            moved += float(np.sum(0.5 * (tail_d[1:] + tail_d[:-1]) * np.diff(tail_k)))
            below = kn < K_knot
            kn = np.concatenate([kn[below], [K_knot]])
            dn = np.concatenate([dn[below], [dK]])
            # knot at K carries density dK; the relocated atom sits on top of it
    if moved > 0.0:
        hit = [i for i, a in enumerate(ay) if a == K_knot]
        if hit:
            aw[hit[0]] += moved
        else:
            ay.append(K_knot)
            aw.append(moved)
    return PayoffMeasure(mu.K, np.asarray(ay, float), np.asarray(aw, float), kn, dn, mu.L)
