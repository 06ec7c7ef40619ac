"""Numerical checks that a computed CDEO represents the American claim.

For a payoff measure ``mu`` the minima curve is ``x_breve(theta) = argmin_x
v(theta, x) - g(x)`` on ``[K - L, K]``.  When the representation holds the
curve is the early-exercise boundary, the value touches the payoff along
it, and the second-order quantity

    H = (2/sigma^2) D1 v + (2r/sigma^2)(v - g) - c

stays positive there.  ``representability_report`` evaluates each of these
with the numbers that back the verdict.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .american import ExerciseBoundary, ValueSurface, exercise_boundary
from .eao import embed_american
from .euro import PayoffMeasure, boundary_proxy, euro_derivs, price_measure_payoff
from .io import write_csv, write_json
from .kernel import MarketParams
from .payoff import AmericanPayoff, concavity_c


@dataclass
class MinimaCurve:
    theta: np.ndarray
    x_breve: np.ndarray
    min_value: np.ndarray          # v - g at the minimizer
    unique_flags: np.ndarray
    brackets: list = field(default_factory=list)   # near-minimal scan points per theta

    def to_rows(self):
        return zip(self.theta, self.x_breve, np.exp(self.x_breve), self.min_value,
                   self.unique_flags.astype(int))


def _scan_minima(d: np.ndarray) -> np.ndarray:
    pad = np.concatenate([[np.inf], d, [np.inf]])
    return np.flatnonzero((d <= pad[:-2]) & (d <= pad[2:]))


def minima_curve(m: MarketParams, g: AmericanPayoff, mu: PayoffMeasure, theta_grid,
                 L: Optional[float] = None, n_scan: int = 2000, xtol: float = 1e-9,
                 value_tol: Optional[float] = None) -> MinimaCurve:
    """Minimizer of ``v(theta, .) - g`` on ``[K - L, K]`` for each theta.

    A 2000-point scan picks the best bracket, bounded Brent refines it to
    ``xtol``.  A theta is flagged non-unique when another local minimum of
    the scan lies within ``value_tol`` (default ``1e-6 e^K``) of the best.
    """
    L = mu.L if L is None else L
    value_tol = 1e-6 * math.exp(g.K) if value_tol is None else value_tol
    thetas = np.atleast_1d(np.asarray(theta_grid, dtype=float))
    xs = np.linspace(g.K - L, g.K, n_scan)
    gx = np.asarray(g(xs), dtype=float)
    xb = np.empty(thetas.size)
    mv = np.empty(thetas.size)
    uniq = np.empty(thetas.size, dtype=bool)
    brackets = []
    for k, t in enumerate(thetas):
        t = float(t)
        d = np.asarray(price_measure_payoff(m, mu, t, xs), dtype=float) - gx
        mins = _scan_minima(d)
        best = int(mins[np.argmin(d[mins])])
        lo, hi = xs[max(best - 1, 0)], xs[min(best + 1, xs.size - 1)]
        res = minimize_scalar(lambda z: price_measure_payoff(m, mu, t, z) - g(z), bounds=(lo, hi),
                              method="bounded", options={"xatol": xtol})
        if res.fun <= d[best]:
            xb[k], mv[k] = float(res.x), float(res.fun)
        else:
            xb[k], mv[k] = float(xs[best]), float(d[best])
        rivals = mins[(d[mins] <= mv[k] + value_tol) & (np.abs(mins - best) > 1)]
        uniq[k] = rivals.size == 0
        brackets.append([float(xs[i]) for i in mins[d[mins] <= mv[k] + value_tol]])
    return MinimaCurve(thetas, xb, mv, uniq, brackets)


@dataclass
class HValue:
    H: float
    identity_lhs: float    # D22 (v - g)
    identity_rhs: float    # H + (1 - 2r/sigma^2) D2 (v - g)

    @property
    def identity_residual(self) -> float:
        scale = max(abs(self.identity_lhs), abs(self.identity_rhs), 1e-300)
        return abs(self.identity_lhs - self.identity_rhs) / scale


def h_terms(m: MarketParams, g: AmericanPayoff, mu: PayoffMeasure, theta: float, x: float) -> HValue:
    if not theta > 0:
        raise ValueError("H needs theta > 0")
    D = euro_derivs(m, mu, theta, x)
    gx, g1, g2 = float(g(x)), float(g.d1(x)), float(g.d2(x))
    c = float(concavity_c(g, m.r, m.sigma, x))
    H = 2.0 / m.sigma2 * D.D1 + m.gamma * (D.v - gx) - c
    lhs = D.D22 - g2
    rhs = H + (1.0 - m.gamma) * (D.D2 - g1)
    return HValue(float(H), float(lhs), float(rhs))


def h_function(m: MarketParams, g: AmericanPayoff, mu: PayoffMeasure, theta: float, x: float) -> float:
    """``H = (2/sigma^2) D1 v + (2r/sigma^2)(v - g) - c`` at ``(theta, x)``, ``x < K``."""
    return h_terms(m, g, mu, theta, x).H


# ---------------------------------------------------------------- the report

@dataclass
class RepresentabilityReport:
    applicable: bool
    assumption1_ok: Optional[bool] = None
    assumption2_ok: Optional[bool] = None
    assumption2_window_ok: Optional[bool] = None    # same test restricted to [window lo, T + delta]
    assumption3_ok: Optional[bool] = None
    assumption4_ok: Optional[bool] = None
    touch_ok: Optional[bool] = None                 # v = g along the curve
    value_match_ok: Optional[bool] = None           # v vs FD American in the continuation region
    am_match_ok: Optional[bool] = None              # embedded American of mu equals g on the curve
    stopping_region_ok: Optional[bool] = None
    curve_monotone_ok: Optional[bool] = None        # x_breve decreasing in theta (see README)
    curve_increasing_literal: Optional[bool] = None
    curve_matches_fd_ok: Optional[bool] = None
    evidence: dict = field(default_factory=dict)
    curve: Optional[MinimaCurve] = None
    H_on_curve: Optional[np.ndarray] = None

    @property
    def flags(self) -> dict:
        keys = ("assumption1_ok", "assumption2_ok", "assumption2_window_ok", "assumption3_ok", "assumption4_ok", "touch_ok",
                "value_match_ok", "am_match_ok", "stopping_region_ok", "curve_monotone_ok",
                "curve_increasing_literal", "curve_matches_fd_ok")
        return {k: getattr(self, k) for k in keys}

    def to_json(self, path: str | Path, meta: Mapping[str, Any] | None = None) -> Path:
        payload = {"meta": dict(meta or {}), "applicable": self.applicable, "flags": self.flags,
                   "evidence": self.evidence}
        return write_json(path, payload)

    def curve_to_csv(self, path: str | Path, meta: Mapping[str, Any] | None = None) -> Path:
        c = self.curve
        H = self.H_on_curve if self.H_on_curve is not None else np.full(c.theta.size, np.nan)
        rows = zip(c.theta, c.x_breve, np.exp(c.x_breve), H)
        return write_csv(path, ("theta", "x_breve", "exp_x_breve", "H_on_curve"), rows, meta)


def _strictly_monotone(y: np.ndarray, sign: int, tol: float) -> bool:
    return bool(y.size < 2 or np.all(sign * np.diff(y) > tol))


def representability_report(m: MarketParams, g: AmericanPayoff, mu: PayoffMeasure,
                            fd: ValueSurface, delta: Optional[float] = None,
                            theta_grid=None, boundary: Optional[ExerciseBoundary] = None,
                            feas_tol: Optional[float] = None, touch_tol: Optional[float] = None,
                            match_tol: Optional[float] = None, fd_tol: Optional[float] = None,
                            window=(0.05, None), n_continuation: int = 8,
                            n_scan: int = 2000) -> RepresentabilityReport:
    """Evaluates the representation assumptions and conclusions for ``mu``.

    Tolerances default to multiples of ``e^K``: ``feas_tol = 1e-6``,
    ``touch_tol = 1e-4``, ``match_tol = 1e-4`` and ``fd_tol = 2e-2``
    (the last one in price units along the exercise boundary).
    """
    eK = math.exp(g.K)
    delta = 0.1 * m.T if delta is None else delta
    feas_tol = 1e-6 * eK if feas_tol is None else feas_tol
    touch_tol = 1e-4 * eK if touch_tol is None else touch_tol
    match_tol = 1e-4 * eK if match_tol is None else match_tol
    fd_tol = 2e-2 * eK if fd_tol is None else fd_tol
    ev: dict = {"tolerances": {"feas_tol": feas_tol, "touch_tol": touch_tol, "match_tol": match_tol,
                               "fd_tol": fd_tol, "delta": delta}}

    probe = np.linspace(g.K - mu.L, g.K, 64)
    if not np.any(np.asarray(g(probe)) > 0):
        ev["reason"] = "payoff vanishes on the support: no minima curve"
        return RepresentabilityReport(False, evidence=ev)

    if theta_grid is None:
        theta_grid = np.concatenate([m.T * np.geomspace(1e-4, 0.1, 12, endpoint=False),
                                     np.linspace(0.1 * m.T, m.T + delta, 30)])
    thetas = np.asarray(theta_grid, dtype=float)
    in_T = thetas <= m.T + 1e-12
    lo_w = window[0]
    hi_w = m.T if window[1] is None else window[1]
    in_w = (thetas >= lo_w - 1e-12) & (thetas <= hi_w + 1e-12)

    # (a) finiteness beyond the horizon
    v_far = price_measure_payoff(m, mu, m.T + 2 * delta, m.x0)
    a_ok = bool(np.isfinite(v_far))
    ev["assumption1"] = {"theta": m.T + 2 * delta, "x": m.x0, "value": v_far}

    # (b) unique interior minimum, tending to K as theta -> 0
    curve = minima_curve(m, g, mu, thetas, n_scan=n_scan)
    below_K = bool(np.all(curve.x_breve[1:] < g.K)) if curve.theta.size > 1 else True
    b_ok = bool(np.all(curve.unique_flags) and np.all(curve.min_value >= -feas_tol) and below_K)
    ev["assumption2"] = {"all_unique": bool(np.all(curve.unique_flags)),
                         "min_of_min_value": float(curve.min_value.min()),
                         "x_breve_at_smallest_theta": float(curve.x_breve[0]),
                         "K": g.K, "non_unique_thetas": curve.theta[~curve.unique_flags].tolist()}
    late = thetas >= lo_w - 1e-12
    b_win = bool(late.any() and np.all(curve.unique_flags[late])
                 and np.all(curve.min_value[late] >= -feas_tol) and np.all(curve.x_breve[late] < g.K))
    ev["assumption2"]["window"] = [lo_w, m.T + delta]
    ev["assumption2"]["min_of_min_value_window"] = (float(curve.min_value[late].min())
                                                   if late.any() else None)

    # (c) H > 0 on the curve
    terms = [h_terms(m, g, mu, float(t), float(x)) for t, x in zip(curve.theta, curve.x_breve)]
    H = np.array([h.H for h in terms])
    resid = np.array([h.identity_residual for h in terms])
    c_ok = bool(np.all(H > 0))
    ev["assumption3"] = {"H_min": float(H.min()), "H_max": float(H.max()),
                         "H_min_window": float(H[in_w].min()) if in_w.any() else None,
                         "H_max_window": float(H[in_w].max()) if in_w.any() else None,
                         "identity_max_rel_residual": float(resid.max())}

    # (d) bounded as theta decreases to 0 at the knot
    bp = boundary_proxy(m, mu, g.K)
    d_ok = bool(not bp.diverging and np.isfinite(bp.value))
    ev["assumption4"] = {"liminf_proxy": bp.value, "diverging": bp.diverging}

    # (e) the value touches the payoff along the curve
    touch = np.abs(curve.min_value[in_T])
    e_ok = bool(touch.size and touch.max() <= touch_tol)
    ev["touch"] = {"max_abs": float(touch.max()) if touch.size else None}

    # (f) continuation region: European value of mu equals the American value
    errs = []
    for t, xb in zip(curve.theta[in_w & in_T], curve.x_breve[in_w & in_T]):
        xs = np.linspace(xb, g.K, n_continuation + 2)[1:-1]
        v_eu = np.asarray(price_measure_payoff(m, mu, float(t), xs), dtype=float)
        v_am = np.asarray(fd.value_at(float(t), xs, method="cubic"), dtype=float)
        errs.append(np.max(np.abs(v_eu - v_am)))
    f_err = float(max(errs)) if errs else math.nan
    f_ok = bool(errs and f_err <= match_tol)
    ev["value_match"] = {"max_abs": f_err}

    # (g) the embedded American option of mu coincides with g on the curve
    xg = curve.x_breve[in_T & in_w]
    eao = embed_american(m, mu, m.T, xg)
    g_err = float(np.max(np.abs(eao.am_values - np.asarray(g(xg))))) if xg.size else math.nan
    g_ok = bool(xg.size and g_err <= touch_tol)
    ev["am_match"] = {"max_abs": g_err}

    # (h) stopping regions and the FD boundary
    bnd = boundary if boundary is not None else exercise_boundary(fd, g)
    tw = curve.theta[in_w & in_T]
    xw = curve.x_breve[in_w & in_T]
    b_fd = np.asarray(bnd.at(tw), dtype=float)
    dx = float(np.max(np.diff(fd.x)))
    cell_err = np.abs(xw - b_fd)
    h_ok = bool(tw.size and cell_err.max() <= dx)
    price_err = np.abs(np.exp(xw) - np.exp(b_fd))
    fd_ok = bool(tw.size and price_err.max() <= fd_tol)
    ev["stopping_region"] = {"max_abs_log_gap": float(cell_err.max()) if tw.size else None,
                             "fd_cell": dx}
    ev["fd_boundary"] = {"max_abs_price_gap": float(price_err.max()) if tw.size else None,
                         "theta": tw.tolist(), "exp_x_breve": np.exp(xw).tolist(),
                         "exp_b_fd": np.exp(b_fd).tolist()}

    # monotonicity along the window: the curve rises towards K as theta falls
    mono_tol = 0.0
    monotone = _strictly_monotone(xw, -1, mono_tol)
    literal = _strictly_monotone(xw, +1, mono_tol)
    ev["monotone"] = {"decreasing_in_theta": monotone, "increasing_in_theta": literal,
                      "max_step_up": float(np.max(np.diff(xw))) if xw.size > 1 else None}

    return RepresentabilityReport(True, a_ok, b_ok, b_win, c_ok, d_ok, e_ok, f_ok, g_ok, h_ok,
                                  monotone, literal, fd_ok, ev, curve, H)
