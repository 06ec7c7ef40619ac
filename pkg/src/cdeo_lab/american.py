"""American option values: Crank-Nicolson/PSOR in log-price and a CRR tree.

Both solvers are independent of the measure machinery and serve as the
oracle that the dominating portfolios are checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numba
import numpy as np
from scipy.interpolate import CubicSpline

from .io import write_csv
from .kernel import MarketParams
from .payoff import AmericanPayoff


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FDGrid:
    """Log-price grid ``[K - below, K + above]`` with ``n_x`` nodes and ``n_theta`` steps."""

    n_x: int = 400
    n_theta: int = 200
    below: float = 6.0
    above: float = 4.0
    omega: float = 1.5
    tol: float = 1e-10
    max_iter: int = 100_000
    rannacher: bool = True


@dataclass
class ValueSurface:
    theta: np.ndarray   # (n_theta + 1,)
    x: np.ndarray       # (n_x,)
    values: np.ndarray  # (n_theta + 1, n_x)
    psor_iterations: int = 0

    def row(self, theta: float) -> np.ndarray:
        """Values at maturity ``theta``, linear in theta between grid rows."""
        th = self.theta
        if theta <= th[0]:
            return self.values[0]
        if theta >= th[-1]:
            return self.values[-1]
        j = int(np.searchsorted(th, theta)) - 1
        w = (theta - th[j]) / (th[j + 1] - th[j])
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]

    def value_at(self, theta: float, x, method: str = "linear"):
        """Bilinear interpolation; ``method="cubic"`` uses a cubic spline in x."""
        row = self.row(theta)
        xq = np.asarray(x, dtype=float)
        out = CubicSpline(self.x, row)(xq) if method == "cubic" else np.interp(xq, self.x, row)
        return float(out) if np.ndim(out) == 0 else out

    def to_csv(self, path: str | Path, meta: Mapping | None = None, stride: int = 1) -> Path:
        rows = ((t, xv, v) for j, t in enumerate(self.theta[::stride])
                for xv, v in zip(self.x, self.values[j * stride]))
        return write_csv(path, ("theta", "x", "value"), rows, meta)


@dataclass
class ExerciseBoundary:
    theta: np.ndarray
    b: np.ndarray

    @property
    def exp_b(self) -> np.ndarray:
        return np.exp(self.b)

    def at(self, theta):
        return np.interp(theta, self.theta, self.b)

    def to_csv(self, path: str | Path, meta: Mapping | None = None) -> Path:
        rows = zip(self.theta, self.b, self.exp_b)
        return write_csv(path, ("theta", "b", "exp_b"), rows, meta)


@numba.njit(cache=True)
def _psor(lo, di, up, rhs, obstacle, u, omega, tol, max_iter):
    """Projected SOR for a tridiagonal LCP; u is updated in place.

    The first and last entries of u are Dirichlet values and are not touched.
    """
    n = u.size
    for it in range(max_iter):
        err = 0.0
        for i in range(1, n - 1):
            y = (rhs[i] - lo[i] * u[i - 1] - up[i] * u[i + 1]) / di[i]
            new = u[i] + omega * (y - u[i])
            if new < obstacle[i]:
                new = obstacle[i]
            d = abs(new - u[i])
            if d > err:
                err = d
            u[i] = new
        if err <= tol:
            return it + 1
    return -1


def _operator(m: MarketParams, dx: float):
    """Coefficients of ``(s^2/2) v'' + r^ v' - r v`` on a uniform grid."""
    a = 0.5 * m.sigma2 / dx ** 2
    c = 0.5 * m.r_hat / dx
    return a - c, -2.0 * a - m.r, a + c


def fd_american_surface(m: MarketParams, g: AmericanPayoff, theta_max: Optional[float] = None,
                        grid: FDGrid = FDGrid()) -> ValueSurface:
    """American value surface ``v_am(theta, x)`` for ``theta`` in ``[0, theta_max]``.

    Boundary conditions are the exercise value at the lower edge and zero at
    the upper edge, which is right for put-like payoffs.
    """
    theta_max = m.T if theta_max is None else theta_max
    x = np.linspace(g.K - grid.below, g.K + grid.above, grid.n_x)
    dx = x[1] - x[0]
    obstacle = np.asarray(g(x), dtype=float)
    lo, di, up = _operator(m, dx)
    n = grid.n_x

    def step(u: np.ndarray, dt: float, implicit_weight: float) -> int:
        # (I - w dt L) u_new = (I + (1 - w) dt L) u
        ew = (1.0 - implicit_weight) * dt
        rhs = u.copy()
        rhs[1:-1] = u[1:-1] + ew * (lo * u[:-2] + di * u[1:-1] + up * u[2:])
        iw = implicit_weight * dt
        L = np.full(n, -iw * lo)
        D = np.full(n, 1.0 - iw * di)
        Up = np.full(n, -iw * up)
        u[0], u[-1] = obstacle[0], 0.0
        it = _psor(L, D, Up, rhs, obstacle, u, grid.omega, grid.tol, grid.max_iter)
        if it < 0:
            raise ConvergenceError("PSOR did not reach tolerance")
        return it

    dt = theta_max / grid.n_theta
    vals = np.empty((grid.n_theta + 1, n))
    u = obstacle.copy()
    # cell-average the payoff on the cell holding the kink; the obstacle stays exact
    k = int(np.argmin(np.abs(x - g.K)))
    if 0 < k < n - 1 and abs(x[k] - g.K) > 1e-12 * dx:
        sub = np.linspace(x[k] - 0.5 * dx, x[k] + 0.5 * dx, 257)
        u[k] = float(np.mean(np.asarray(g(sub), dtype=float)))
    vals[0] = u
    total = 0
    for j in range(1, grid.n_theta + 1):
        if grid.rannacher and j == 1:
            total += step(u, 0.5 * dt, 1.0)
            total += step(u, 0.5 * dt, 1.0)
        else:
            total += step(u, dt, 0.5)
        vals[j] = u
    theta = np.linspace(0.0, theta_max, grid.n_theta + 1)
    return ValueSurface(theta, x, vals, total)


def richardson_surface(m: MarketParams, g: AmericanPayoff, theta_max: Optional[float] = None,
                       grid: FDGrid = FDGrid()) -> ValueSurface:
    """Spatial Richardson extrapolation ``(4 v_{dx/2} - v_dx) / 3`` on the nodes of ``grid``.

    Removes the O(dx^2) term of the Crank-Nicolson error.  That expansion
    holds for claims whose early-exercise right is worthless (the put at
    r = 0); near a free boundary the error is not a clean power of dx.
    """
    fine = FDGrid(2 * grid.n_x - 1, grid.n_theta, grid.below, grid.above, grid.omega, grid.tol,
                  grid.max_iter, grid.rannacher)
    c = fd_american_surface(m, g, theta_max, grid)
    f = fd_american_surface(m, g, theta_max, fine)
    vals = (4.0 * f.values[:, ::2] - c.values) / 3.0
    return ValueSurface(c.theta, c.x, vals, c.psor_iterations + f.psor_iterations)


def exercise_boundary(surface: ValueSurface, g: AmericanPayoff, tol: float = 1e-7) -> ExerciseBoundary:
    """Upper edge of the stopping region ``{v_am = g}`` attached to the lower grid edge.

    The node-level edge is refined by smooth fit: ``sqrt(v - g)`` is close to
    linear just above the boundary, and its zero is taken as ``b``.
    """
    x = surface.x
    gx = np.asarray(g(x), dtype=float)
    b = np.empty(surface.theta.size)
    b[0] = g.K
    for j in range(1, surface.theta.size):
        psi = surface.values[j] - gx
        stop = (psi <= tol * (1.0 + np.abs(gx))) & (x < g.K)
        if not stop[0]:
            b[j] = np.nan
            continue
        i = int(np.argmin(stop)) - 1 if not np.all(stop) else x.size - 1
        if i + 2 >= x.size:
            b[j] = x[i]
            continue
        s1, s2 = math.sqrt(max(psi[i + 1], 0.0)), math.sqrt(max(psi[i + 2], 0.0))
        if s2 > s1 > 0.0:
            est = x[i + 1] - s1 * (x[i + 2] - x[i + 1]) / (s2 - s1)
            b[j] = min(max(est, x[i]), x[i + 1])
        else:
            b[j] = x[i]
    return ExerciseBoundary(surface.theta.copy(), b)


def binomial_american(m: MarketParams, g: AmericanPayoff, theta: float, x: float,
                      steps: int = 4000) -> float:
    """Cox-Ross-Rubinstein value of the American claim ``g`` on ``e^x``."""
    if steps < 10:
        raise ValueError(f"need at least 10 steps, got {steps}")
    if theta == 0.0:
        return float(g(x))
    dt = theta / steps
    u = math.exp(m.sigma * math.sqrt(dt))
    p = (math.exp(m.r * dt) - 1.0 / u) / (u - 1.0 / u)
    if not 0.0 < p < 1.0:
        raise ValueError("CRR probability outside (0, 1); use more steps")
    disc = math.exp(-m.r * dt)
    lnu = math.log(u)
    k = np.arange(steps + 1)
    v = np.asarray(g(x + (2 * k - steps) * lnu), dtype=float)
    for n in range(steps - 1, -1, -1):
        k = k[:-1]
        cont = disc * (p * v[1:] + (1.0 - p) * v[:-1])
        v = np.maximum(cont, np.asarray(g(x + (2 * k - n) * lnu), dtype=float))
    return float(v[0])
