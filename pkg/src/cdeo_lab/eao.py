"""Embedded American options: ``am_T(f)(x) = inf_{theta in [0, T]} v_eu,f(theta, x)``.

The minimizing maturity ``theta_breve(x)`` is the largest minimizer, and
the shape checks here are numerical consistency checks, not proofs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Union

import numpy as np
from scipy.optimize import brentq

from .euro import PayoffMeasure, _price_batch, price_function_payoff, price_measure_boundary
from .io import write_csv
from .kernel import MarketParams, bs_put_derivs, bs_put_value
from .payoff import EuropeanPayoff

ValueFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class EaoResult:
    x_grid: np.ndarray
    am_values: np.ndarray
    theta_breve: np.ndarray
    unique_min_flags: np.ndarray
    T: float
    truncation: float = 0.0   # max |am_T - am_{T/2}|, a large-T proxy diagnostic

    def to_csv(self, path: str | Path, meta: Mapping | None = None) -> Path:
        rows = zip(self.x_grid, self.am_values, self.theta_breve, self.unique_min_flags.astype(int))
        return write_csv(path, ("x", "am", "theta_breve", "unique_flag"), rows, meta)


def value_function(m: MarketParams, f: Union[EuropeanPayoff, PayoffMeasure, ValueFn],
                   tol: float = 1e-12) -> ValueFn:
    """European value ``(theta, x) -> v`` for the supported payoff kinds, vectorized over pairs."""
    if isinstance(f, EuropeanPayoff):
        return lambda th, x: np.asarray(price_function_payoff(m, f, th, x, tol=tol), dtype=float)
    if isinstance(f, PayoffMeasure):
        def measure_value(th, x):
            th, x = np.broadcast_arrays(np.asarray(th, float), np.asarray(x, float))
            out = np.empty(th.shape)
            ft, fx, fo = th.ravel(), x.ravel(), out.reshape(-1)
            for t in np.unique(ft):
                sel = ft == t
                if t == 0.0:
                    fo[sel] = [price_measure_boundary(m, f, xi) for xi in fx[sel]]
                else:
                    fo[sel] = _price_batch(m, f, float(t), fx[sel], refine=2)
            return out
        return measure_value
    return lambda th, x: np.asarray(f(th, x), dtype=float)


def _golden(value: ValueFn, a: np.ndarray, b: np.ndarray, xs: np.ndarray, tol: float):
    """Lockstep golden-section search on many brackets at once."""
    a, b = a.copy(), b.copy()
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = value(c, xs), value(d, xs)
    width = float(np.max(b - a)) if a.size else 0.0
    n_iter = int(math.ceil(math.log(tol / width) / math.log(INVPHI))) if width > tol else 0
    for _ in range(n_iter):
        left = fc < fd
        # keep [a, d] where the left probe is lower, else [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        nd = np.where(left, c, a + INVPHI * (b - a))
        nc = np.where(left, b - INVPHI * (b - a), d)
        nfd = np.where(left, fc, np.nan)
        nfc = np.where(left, np.nan, fd)
        need_c, need_d = left, ~left
        if np.any(need_c):
            nfc[need_c] = value(nc[need_c], xs[need_c])
        if np.any(need_d):
            nfd[need_d] = value(nd[need_d], xs[need_d])
        c, d, fc, fd = nc, nd, nfc, nfd
    t = 0.5 * (a + b)
    return t, value(t, xs)


def embed_american(m: MarketParams, f: Union[EuropeanPayoff, PayoffMeasure, ValueFn], T: float,
                   x_grid, theta_samples: int = 50, value_tol: float = 1e-7,
                   theta_tol: float = 1e-8) -> EaoResult:
    """Minimize the European value over maturities in ``[0, T]`` for each x.

    Coarse scan on ``theta_samples + 1`` equally spaced maturities, then
    golden-section refinement inside every local-minimum bracket.  The
    reported minimizer is the largest one; an endpoint wins whenever its
    sampled value is no worse than the refined interior value.
    """
    if theta_samples < 50:
        raise ValueError("theta_samples must be >= 50")
    value = value_function(m, f)
    xs = np.atleast_1d(np.asarray(x_grid, dtype=float))
    th = np.linspace(0.0, T, theta_samples + 1)
    V = value(th[:, None], xs[None, :])          # (n_theta, n_x)

    # local minima of the sampled sequences, one task per (x, bracket)
    pad = np.vstack([np.full(xs.size, np.inf), V, np.full(xs.size, np.inf)])
    is_min = (pad[1:-1] <= pad[:-2]) & (pad[1:-1] <= pad[2:])
    kk, ii = np.nonzero(is_min)
    lo = th[np.maximum(kk - 1, 0)]
    hi = th[np.minimum(kk + 1, th.size - 1)]
    t_ref, v_ref = _golden(value, lo, hi, xs[ii], theta_tol)
    # brackets touching 0 or T: the endpoint wins unless strictly beaten
    for edge in (0, th.size - 1):
        at = kk == edge
        v_edge = V[edge, ii[at]]
        beaten = v_ref[at] < v_edge
        t_ref[at] = np.where(beaten, t_ref[at], th[edge])
        v_ref[at] = np.where(beaten, v_ref[at], v_edge)

    am = np.empty(xs.size)
    tb = np.empty(xs.size)
    uniq = np.empty(xs.size, dtype=bool)
    am_half = np.empty(xs.size)
    for i in range(xs.size):
        sel = ii == i
        cand_t = np.concatenate([th, t_ref[sel]])
        cand_v = np.concatenate([V[:, i], v_ref[sel]])
        vmin = float(np.min(cand_v))
        exact = cand_v <= vmin + 1e-15 * abs(vmin)
        tb[i] = float(np.max(cand_t[exact]))
        am[i] = vmin
        am_half[i] = float(np.min(cand_v[cand_t <= 0.5 * T + 1e-15]))
        near = V[:, i] <= vmin + value_tol * (1.0 + abs(vmin))
        ref_near = v_ref[sel] <= vmin + value_tol * (1.0 + abs(vmin))
        near[kk[sel][ref_near]] = True
        idx = np.flatnonzero(near)
        uniq[i] = bool(idx.size and idx[-1] - idx[0] + 1 == idx.size)
    return EaoResult(xs, am, tb, uniq, T, float(np.max(np.abs(am_half - am))))


@dataclass
class Report:
    ok: bool
    details: dict = field(default_factory=dict)


def eao_monotonicity_suite(m: MarketParams, f, T1: float, T2: float, f2, x_grid,
                           theta_samples: int = 50) -> Report:
    """``am_{T2}(f) <= am_{T1}(f)`` for ``T1 <= T2`` and ``am_T(f) <= am_T(f2)`` for ``f <= f2``."""
    r1 = embed_american(m, f, T1, x_grid, theta_samples)
    r2 = embed_american(m, f, T2, x_grid, theta_samples)
    r3 = embed_american(m, f2, T1, x_grid, theta_samples)
    dT = float(np.max(r2.am_values - r1.am_values))
    df = float(np.max(r1.am_values - r3.am_values))
    return Report(dT <= 1e-8 and df <= 1e-8,
                  {"max_increase_in_T": dT, "max_excess_over_larger_payoff": df})


def check_concavity_on_curve(m: MarketParams, eao: EaoResult, tol: float = 1e-5) -> Report:
    """Sign of ``(s^2/2) g'' + r^ g' - r g`` for ``g = am`` where ``0 < theta_breve < T``.

    Uses second differences on the EAO grid; points whose stencil touches a
    maturity at 0 or T are skipped.
    """
    x, g, tb = eao.x_grid, eao.am_values, eao.theta_breve
    inner = (tb > 1e-9) & (tb < eao.T - 1e-9)
    ok_pts = inner[1:-1] & inner[:-2] & inner[2:]
    h1, h2 = x[1:-1] - x[:-2], x[2:] - x[1:-1]
    g1 = (g[2:] - g[:-2]) / (h1 + h2)
    g2 = 2.0 * (h1 * g[2:] - (h1 + h2) * g[1:-1] + h2 * g[:-2]) / (h1 * h2 * (h1 + h2))
    op = 0.5 * m.sigma2 * g2 + m.r_hat * g1 - m.r * g[1:-1]
    vals = op[ok_pts]
    worst = float(np.max(vals)) if vals.size else float("-inf")
    return Report(worst <= tol, {"checked": int(vals.size), "max_operator": worst,
                                 "violations": int(np.sum(vals > tol))})


# ------------------------------------------------------------------ put EAO

def put_value_fn(m: MarketParams, K: float) -> ValueFn:
    def v(th, x):
        th, x = np.broadcast_arrays(np.asarray(th, float), np.asarray(x, float))
        out = np.maximum(math.exp(K) - np.exp(x), 0.0)
        pos = th > 0
        if np.any(pos):
            out = out.copy()
            out[pos] = bs_put_value(m, K, th[pos], x[pos])
        return out
    return v


def put_exercise_knot(m: MarketParams, K: float, T: float) -> float:
    """Log-price ``log K_T`` where the theta-derivative of the put value at T vanishes."""
    d1 = lambda x: bs_put_derivs(m, K, T, x).D1
    lo, hi = K - 1.0, K
    while d1(lo) > 0:
        lo -= 1.0
    return brentq(d1, lo, hi, xtol=1e-14, rtol=1e-15)


def put_eao_shape(m: MarketParams, K: float, T: float, x_grid, theta_samples: int = 200) -> Report:
    """Shape of the put's minimizing maturity: T below ``log K_T``, 0 above K, decreasing between."""
    res = embed_american(m, put_value_fn(m, K), T, x_grid, theta_samples)
    kt = put_exercise_knot(m, K, T)
    x, tb = res.x_grid, res.theta_breve
    dx = float(np.max(np.diff(x)))
    below = x < kt - dx
    above = x >= K
    mid = (x > kt + dx) & (x < K - dx)
    zero_above = bool(np.all(tb[above] == 0.0))
    full_below = bool(np.all(np.abs(tb[below] - T) <= 1e-7))
    dec = np.diff(tb[mid])
    decreasing = bool(np.all(dec < 0))
    # continuity: jumps shrink with the grid; compare to the largest slope seen in the middle
    jumps = np.abs(np.diff(tb))
    slope = float(np.max(np.abs(dec) / np.diff(x[mid]))) if dec.size else 0.0
    continuous = bool(np.all(jumps <= 2.0 * slope * np.diff(x) + 1e-6))
    return Report(zero_above and full_below and decreasing and continuous,
                  {"log_K_T": kt, "K_T": math.exp(kt), "zero_above_K": zero_above,
                   "T_below_K_T": full_below, "strictly_decreasing": decreasing,
                   "continuous": continuous, "max_jump": float(np.max(jumps)), "eao": res})
