"""European pricing of payoff functions and of payoff measures.

A payoff measure ``mu`` on ``(-inf, K]`` prices as

    v(theta, x) = e^{-r theta} * int phi(x + r^ theta, s^2 theta, y)
                                    / phi(x0 + r^ T, s^2 T, y) mu(dy)

so that ``v(T, x0) = e^{-rT} |mu|``.  Measures here are a finite set of
atoms plus a piecewise-linear density on ``[K - L, K]``; the density part is
integrated with composite 16-point Gauss-Legendre in log-kernel space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .io import read_csv, write_csv
from .kernel import DomainError, GaussParams, MarketParams, log_pdf_ratio
from .payoff import EuropeanPayoff

__all__ = [
    "MarketParams",
    "PayoffMeasure",
    "price_function_payoff",
    "price_measure_payoff",
    "price_measure_boundary",
    "euro_derivs",
    "driftless_transform_check",
]

GL_X, GL_W = np.polynomial.legendre.leggauss(16)

DEFAULT_L = 8.0
NODE_BUDGET = 2_000_000


class DivergenceError(RuntimeError):
    """The pricing integral does not converge (payoff grows too fast)."""


# ------------------------------------------------------------------- measures

@dataclass
class PayoffMeasure:
    """Atoms plus a piecewise-linear density, normally on ``[K - L, K]``.

    ``knots`` must be increasing; ``density`` holds the (non-negative)
    density values at the knots and is linear in between, zero outside.
    Mass above K is representable so that it can be relocated.
    """

    K: float
    atoms_y: np.ndarray = field(default_factory=lambda: np.zeros(0))
    atoms_w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    density: np.ndarray = field(default_factory=lambda: np.zeros(0))
    L: float = DEFAULT_L

    def __post_init__(self) -> None:
        self.atoms_y = np.asarray(self.atoms_y, dtype=float).ravel()
        self.atoms_w = np.asarray(self.atoms_w, dtype=float).ravel()
        self.knots = np.asarray(self.knots, dtype=float).ravel()
        self.density = np.asarray(self.density, dtype=float).ravel()
        if self.atoms_y.shape != self.atoms_w.shape:
            raise ValueError("atoms_y and atoms_w differ in length")
        if self.knots.shape != self.density.shape:
            raise ValueError("knots and density differ in length")
        if self.knots.size == 1:
            raise ValueError("a density needs at least two knots")
        if np.any(self.atoms_w < 0) or np.any(self.density < 0):
            raise ValueError("payoff measures must be non-negative")
        if self.knots.size and np.any(np.diff(self.knots) <= 0):
            raise ValueError("density knots must be strictly increasing")

    @property
    def on_half_line(self) -> bool:
        """True when no mass sits above the knot K."""
        above_atoms = np.any((self.atoms_y > self.K) & (self.atoms_w > 0))
        above_dens = self.knots.size and np.any((self.knots > self.K) & (self.density > 0))
        return not (above_atoms or above_dens)

    @classmethod
    def from_atoms(cls, K: float, y: Sequence[float], w: Sequence[float], L: float = DEFAULT_L):
        return cls(K, np.asarray(y, float), np.asarray(w, float), L=L)

    @classmethod
    def from_density(cls, K: float, knots, density, L: float = DEFAULT_L):
        return cls(K, knots=knots, density=density, L=L)

    @property
    def has_density(self) -> bool:
        return self.knots.size >= 2 and bool(np.any(self.density > 0))

    def total_mass(self) -> float:
        dens = np.sum(0.5 * (self.density[1:] + self.density[:-1]) * np.diff(self.knots)) if self.knots.size else 0.0
        return float(np.sum(self.atoms_w) + dens)

    def scaled(self, c: float) -> "PayoffMeasure":
        return PayoffMeasure(self.K, self.atoms_y.copy(), c * self.atoms_w, self.knots.copy(),
                             c * self.density, self.L)

    def density_at(self, y):
        if not self.knots.size:
            return np.zeros_like(np.asarray(y, float))
        return np.interp(y, self.knots, self.density, left=0.0, right=0.0)

    # CSV rows: (type, y, value) with type in {atom, density-knot}
    def to_csv(self, path: str | Path, meta: Mapping | None = None) -> Path:
        meta = dict(meta or {})
        meta.setdefault("K", self.K)
        meta.setdefault("L", self.L)
        rows = [("atom", y, w) for y, w in zip(self.atoms_y, self.atoms_w)]
        rows += [("density-knot", y, d) for y, d in zip(self.knots, self.density)]
        return write_csv(path, ("type", "y", "value"), rows, meta)

    @classmethod
    def from_csv(cls, path: str | Path) -> "PayoffMeasure":
        cols, rows, meta = read_csv(path)
        if cols != ["type", "y", "value"]:
            raise ValueError(f"{path}: unexpected columns {cols}")
        ay, aw, ky, kd = [], [], [], []
        for kind, y, v in rows:
            if kind == "atom":
                ay.append(float(y)); aw.append(float(v))
            elif kind == "density-knot":
                ky.append(float(y)); kd.append(float(v))
            else:
                raise ValueError(f"{path}: unknown row type {kind!r}")
        return cls(float(meta["K"]), np.array(ay), np.array(aw), np.array(ky), np.array(kd),
                   float(meta.get("L", DEFAULT_L)))


# --------------------------------------------------------- function payoffs

def _gauss_expect(f: Callable, mean: np.ndarray, sd: np.ndarray, breakpoints: Sequence[float],
                  tol: float, window: float = 10.0, max_window: float = 640.0) -> np.ndarray:
    """``E f(mean + sd Z)`` for each pair, vectorized over pairs."""
    bps = np.asarray(sorted(breakpoints), dtype=float)
    mean = mean[:, None]
    sd = sd[:, None]

    def integrate(lo: float, hi: float, npan: int) -> np.ndarray:
        # sub-intervals split at the breakpoints (standardized per pair)
        inner = np.clip((bps[None, :] - mean) / sd, lo, hi) if bps.size else np.zeros((mean.shape[0], 0))
        ends = np.sort(np.concatenate([np.full_like(mean, lo), inner, np.full_like(mean, hi)], axis=1), axis=1)
        a, b = ends[:, :-1], ends[:, 1:]
        frac = np.arange(npan + 1) / npan
        pa = a[:, :, None] + (b - a)[:, :, None] * frac[None, None, :-1]
        pb = a[:, :, None] + (b - a)[:, :, None] * frac[None, None, 1:]
        half = 0.5 * (pb - pa)
        u = (0.5 * (pa + pb))[..., None] + half[..., None] * GL_X
        w = half[..., None] * GL_W
        u = u.reshape(u.shape[0], -1)
        w = w.reshape(w.shape[0], -1)
        y = mean + sd * u
        with np.errstate(over="ignore", invalid="ignore"):
            fy = np.asarray(f(y), dtype=float)
            dens = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
            val = np.where(dens == 0.0, 0.0, fy * dens)
        return np.sum(w * val, axis=1)

    def converged(lo: float, hi: float) -> np.ndarray:
        npan = 8
        prev = integrate(lo, hi, npan)
        while True:
            npan *= 2
            cur = integrate(lo, hi, npan)
            err = np.abs(cur - prev)
            if np.all(err <= 0.1 * tol * (1.0 + np.abs(cur))):
                return cur
            if npan >= 4096:
                raise DivergenceError("Gauss-Legendre panels did not converge")
            prev = cur

    W = window
    while True:
        core = converged(-W, W)
        tails = converged(-2 * W, -W) + converged(W, 2 * W)
        if not np.all(np.isfinite(core + tails)):
            raise DivergenceError("pricing integral overflowed")
        if np.all(np.abs(tails) <= tol * (1.0 + np.abs(core))):
            return core + tails
        W *= 2.0
        if W > max_window:
            raise DivergenceError("payoff mass keeps escaping the integration window")


def price_function_payoff(m: MarketParams, f: EuropeanPayoff | Callable, theta, x, tol: float = 1e-10):
    """European value ``e^{-r theta} E f(x + r^ theta + s W_theta)``.

    ``theta`` and ``x`` broadcast against each other; ``theta = 0`` returns
    ``f(x)``.  Accuracy is ``tol * (1 + |v|)`` absolute.
    """
    bps = getattr(f, "breakpoints", ())
    th, xx = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(x, dtype=float))
    if np.any(th < 0):
        raise DomainError("theta must be >= 0")
    flat_t, flat_x = th.ravel(), xx.ravel()
    out = np.empty_like(flat_t)
    zero = flat_t == 0.0
    if np.any(zero):
        out[zero] = np.asarray(f(flat_x[zero]), dtype=float)
    pos = ~zero
    if np.any(pos):
        t = flat_t[pos]
        e = _gauss_expect(f, flat_x[pos] + m.r_hat * t, m.sigma * np.sqrt(t), bps, tol)
        out[pos] = np.exp(-m.r * t) * e
    out = out.reshape(th.shape)
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------- measure quadrature engine

@dataclass
class NodeBatch:
    """Quadrature nodes for one chunk of evaluation points at a fixed maturity."""

    row: np.ndarray     # index of the evaluation point
    cell: np.ndarray    # density cell containing the node
    y: np.ndarray
    w: np.ndarray       # Gauss-Legendre weight
    lr: np.ndarray      # log kernel ratio at the node


def _log_ratio(y, mu1, s1, mu2, s2):
    return -0.5 * (y - mu1) ** 2 / s1 + 0.5 * (y - mu2) ** 2 / s2 + 0.5 * math.log(s2 / s1)


def kernel_nodes(m: MarketParams, knots: np.ndarray, log_dcell: np.ndarray, theta: float,
                 xs: np.ndarray, drift: Optional[float] = None, refine: int = 1,
                 prune: float = 50.0, budget: int = NODE_BUDGET) -> Iterator[NodeBatch]:
    """Yield node batches for ``int kernel(theta, x, y) d(y) dy`` over the cells.

    ``log_dcell`` bounds the log density on each cell; cells whose bound on
    the integrand is more than ``prune`` below the best cell are skipped.
    Pieces are sized to the kernel's curvature and slope so that GL16 is
    accurate to rounding on every piece.
    """
    if theta <= 0:
        raise DomainError("kernel_nodes needs theta > 0")
    drift = m.r_hat if drift is None else drift
    xs = np.asarray(xs, dtype=float)
    a, b = knots[:-1], knots[1:]
    s1, s2 = m.sigma2 * theta, m.sigma2 * m.T
    mu1 = xs + drift * theta
    mu2 = m.x0 + drift * m.T
    a2 = 0.5 / s2 - 0.5 / s1

    la = _log_ratio(a[None, :], mu1[:, None], s1, mu2, s2)
    lb = _log_ratio(b[None, :], mu1[:, None], s1, mu2, s2)
    bound = np.maximum(la, lb)
    if a2 < 0.0:
        A = (mu1 * s2 - mu2 * s1) / (s2 - s1)
        yc = np.clip(A[:, None], a[None, :], b[None, :])
        bound = np.maximum(bound, _log_ratio(yc, mu1[:, None], s1, mu2, s2))
    U = bound + log_dcell[None, :]
    rowmax = np.max(U, axis=1, keepdims=True)
    keep = np.isfinite(U) & (U >= rowmax - prune)

    ix, ic = np.nonzero(keep)
    if ix.size == 0:
        return
    slope = np.maximum(np.abs(-(a[ic] - mu1[ix]) / s1 + (a[ic] - mu2) / s2),
                       np.abs(-(b[ic] - mu1[ix]) / s1 + (b[ic] - mu2) / s2))
    h = np.full(ix.shape, np.inf)
    if a2 != 0.0:
        h[:] = math.sqrt(0.5 / abs(a2))
    with np.errstate(divide="ignore"):
        h = np.minimum(h, 4.0 / slope)
    width = b[ic] - a[ic]
    nsub = np.clip(np.ceil(width / h).astype(np.int64), 1, 1 << 16) * refine

    # chunk on evaluation points so the node arrays stay bounded
    per_row = np.bincount(ix, weights=nsub, minlength=xs.size) * GL_X.size
    starts = np.searchsorted(ix, np.arange(xs.size))
    lo_row = 0
    while lo_row < xs.size:
        acc = np.cumsum(per_row[lo_row:])
        hi_row = lo_row + max(1, int(np.searchsorted(acc, budget, side="right")))
        hi_row = min(hi_row, xs.size)
        p0, p1 = starts[lo_row], (starts[hi_row] if hi_row < xs.size else ix.size)
        lo_row = hi_row
        if p1 <= p0:
            continue
        pix, pic, pn = ix[p0:p1], ic[p0:p1], nsub[p0:p1]
        total = int(pn.sum())
        rep = np.repeat(np.arange(pix.size), pn)
        k = np.arange(total) - np.repeat(np.cumsum(pn) - pn, pn)
        step = (b[pic] - a[pic])[rep] / pn[rep]
        left = a[pic][rep] + k * step
        half = 0.5 * step
        y = ((left + half)[:, None] + half[:, None] * GL_X).ravel()
        w = (half[:, None] * GL_W).ravel()
        row = np.repeat(pix[rep], GL_X.size)
        cell = np.repeat(pic[rep], GL_X.size)
        lr = _log_ratio(y, mu1[row], s1, mu2, s2)
        yield NodeBatch(row, cell, y, w, lr)


def _density_log_bound(mu: PayoffMeasure) -> np.ndarray:
    d = np.maximum(mu.density[:-1], mu.density[1:])
    with np.errstate(divide="ignore"):
        return np.log(d)


@dataclass
class _Moments:
    S0: np.ndarray
    S1: np.ndarray
    S2: np.ndarray


def _measure_moments(m: MarketParams, mu: PayoffMeasure, theta: float, xs: np.ndarray,
                     drift: Optional[float] = None, refine: int = 1, order: int = 0) -> _Moments:
    """Sums of ``ratio * z^k`` against mu for ``k <= order``, ``z = y - x - drift*theta``."""
    drift = m.r_hat if drift is None else drift
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    S = [np.zeros(n) for _ in range(3)]
    s1, s2 = m.sigma2 * theta, m.sigma2 * m.T
    mu2 = m.x0 + drift * m.T
    if mu.atoms_y.size:
        lr = _log_ratio(mu.atoms_y[None, :], (xs + drift * theta)[:, None], s1, mu2, s2)
        with np.errstate(over="ignore"):
            val = mu.atoms_w[None, :] * np.exp(lr)
        z = mu.atoms_y[None, :] - (xs + drift * theta)[:, None]
        S[0] += val.sum(axis=1)
        if order >= 1:
            S[1] += (val * z).sum(axis=1)
        if order >= 2:
            S[2] += (val * z * z).sum(axis=1)
    if mu.has_density:
        kn, dn = mu.knots, mu.density
        for nb in kernel_nodes(m, kn, _density_log_bound(mu), theta, xs, drift, refine):
            t = (nb.y - kn[nb.cell]) / (kn[nb.cell + 1] - kn[nb.cell])
            d = dn[nb.cell] * (1.0 - t) + dn[nb.cell + 1] * t
            with np.errstate(over="ignore"):
                val = nb.w * d * np.exp(nb.lr)
            S[0] += np.bincount(nb.row, val, minlength=n)
            if order >= 1:
                z = nb.y - (xs[nb.row] + drift * theta)
                S[1] += np.bincount(nb.row, val * z, minlength=n)
                if order >= 2:
                    S[2] += np.bincount(nb.row, val * z * z, minlength=n)
    return _Moments(*S)


def _price_batch(m: MarketParams, mu: PayoffMeasure, theta: float, xs, refine: int = 1) -> np.ndarray:
    mo = _measure_moments(m, mu, theta, np.atleast_1d(xs), refine=refine)
    return math.exp(-m.r * theta) * mo.S0


def _adaptive(fn: Callable[[int], np.ndarray], tol: float, max_refine: int = 16) -> np.ndarray:
    """Halve the quadrature pieces until two levels agree to ``tol (1 + |v|)``."""
    refine = 1
    prev = fn(refine)
    while refine < max_refine:
        refine *= 2
        cur = fn(refine)
        if np.all(np.abs(cur - prev) <= tol * (1.0 + np.abs(cur))):
            return cur
        prev = cur
    return prev


def price_measure_payoff(m: MarketParams, mu: PayoffMeasure, theta: float, x, tol: float = 1e-10):
    """European value of the payoff measure; ``theta = 0`` uses the boundary proxy."""
    if theta < 0:
        raise DomainError("theta must be >= 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if theta == 0.0:
        out = np.array([price_measure_boundary(m, mu, float(xi)) for xi in xa])
    else:
        out = _adaptive(lambda k: _price_batch(m, mu, theta, xa, k), tol)
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass
class BoundaryProxy:
    value: float
    thetas: np.ndarray
    history: np.ndarray
    diverging: bool


def boundary_proxy(m: MarketParams, mu: PayoffMeasure, x: float, theta0: Optional[float] = None,
                   depth: int = 30, window: int = 3) -> BoundaryProxy:
    """Values along ``theta_j = 2^-j theta0`` and the liminf estimate.

    The estimate is the minimum over the last ``window`` levels; the
    sequence is flagged as diverging when it grows geometrically there.
    """
    theta0 = 0.1 * m.T if theta0 is None else theta0
    thetas = theta0 * 2.0 ** -np.arange(depth + 1)
    hist = np.array([_price_batch(m, mu, float(t), [x])[0] for t in thetas])
    tail = hist[-window:]
    diverging = bool(np.all(np.diff(hist[-(window + 2):]) > 0) and tail[-1] > 1.2 * tail[0] > 0)
    value = math.inf if diverging else float(np.min(tail))
    return BoundaryProxy(value, thetas, hist, diverging)


def price_measure_boundary(m: MarketParams, mu: PayoffMeasure, x: float,
                           theta0: Optional[float] = None, depth: int = 30) -> float:
    """``liminf`` of the value as theta decreases to 0, via a dyadic sequence."""
    return boundary_proxy(m, mu, x, theta0, depth).value


@dataclass
class EuroDerivs:
    v: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D22: np.ndarray


def euro_derivs(m: MarketParams, mu: PayoffMeasure, theta: float, x, refine: int = 2) -> EuroDerivs:
    """Value and the derivatives in theta (D1) and x (D2, D22) for ``theta > 0``.

    Derivatives are taken under the integral sign, so they inherit the
    accuracy of the value quadrature.
    """
    if not theta > 0:
        raise DomainError("derivatives need theta > 0")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    mo = _measure_moments(m, mu, theta, xa, refine=refine, order=2)
    s1 = m.sigma2 * theta
    disc = math.exp(-m.r * theta)
    v = disc * mo.S0
    D2 = disc * mo.S1 / s1
    D22 = disc * (mo.S2 / s1 ** 2 - mo.S0 / s1)
    D1 = -m.r * v + disc * (-mo.S0 / (2.0 * theta) + m.r_hat * mo.S1 / s1
                            + mo.S2 / (2.0 * s1 * theta))
    if np.ndim(x) == 0:
        return EuroDerivs(float(v[0]), float(D1[0]), float(D2[0]), float(D22[0]))
    return EuroDerivs(v, D1, D2, D22)


def driftless_price(m: MarketParams, mu: PayoffMeasure, theta: float, x, refine: int = 2):
    """Value computed through the driftless kernel and the ``e^{(2r/s^2)x}`` change of scale."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    mo = _measure_moments(m, mu, theta, xa, drift=m.r_tilde, refine=refine)
    out = np.exp(-m.gamma * xa + m.gamma * m.x0 - m.r * m.T) * mo.S0
    return float(out[0]) if np.ndim(x) == 0 else out


def driftless_transform_check(m: MarketParams, mu: PayoffMeasure, theta: float, x) -> float:
    """Largest absolute gap between the direct and the driftless-route values."""
    direct = np.atleast_1d(_price_batch(m, mu, theta, np.atleast_1d(x), 2))
    other = np.atleast_1d(driftless_price(m, mu, theta, x))
    return float(np.max(np.abs(direct - other)))
