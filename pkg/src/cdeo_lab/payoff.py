"""American and European payoff functions in log-price coordinates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray
Fn = Callable[[Array], Array]

FD_STEP = 1e-5


def _central(fn: Fn, order: int, h: float = FD_STEP) -> Fn:
    if order == 1:
        return lambda x: (fn(np.asarray(x) + h) - fn(np.asarray(x) - h)) / (2.0 * h)
    return lambda x: (fn(np.asarray(x) + h) - 2.0 * fn(np.asarray(x)) + fn(np.asarray(x) - h)) / (h * h)


@dataclass(frozen=True)
class AmericanPayoff:
    """``g(x) = phi(x)`` for ``x <= K`` and ``0`` above the knot ``K``.

    ``phi`` must be twice continuously differentiable on ``(-inf, K]``;
    derivatives of custom payoffs fall back to central differences.
    """

    K: float
    phi: Fn
    dphi: Fn
    d2phi: Fn
    kind: str = "custom"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= self.K, self.phi(np.minimum(x, self.K)), 0.0)
        return float(out) if out.ndim == 0 else out

    def d1(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= self.K, self.dphi(np.minimum(x, self.K)), 0.0)
        return float(out) if out.ndim == 0 else out

    def d2(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= self.K, self.d2phi(np.minimum(x, self.K)), 0.0)
        return float(out) if out.ndim == 0 else out


def make_put(K: float) -> AmericanPayoff:
    """Put with log-strike K: ``g(x) = (e^K - e^x)^+``."""
    eK = math.exp(K)
    return AmericanPayoff(
        K=K,
        phi=lambda x: eK - np.exp(x),
        dphi=lambda x: -np.exp(x),
        d2phi=lambda x: -np.exp(x),
        kind="put",
    )


def make_custom(K: float, phi: Fn, dphi: Optional[Fn] = None,
                d2phi: Optional[Fn] = None) -> AmericanPayoff:
    return AmericanPayoff(
        K=K,
        phi=phi,
        dphi=dphi if dphi is not None else _central(phi, 1),
        d2phi=d2phi if d2phi is not None else _central(phi, 2),
        kind="custom",
    )


def payoff_from_expression(K: float, expr: str) -> AmericanPayoff:
    """Custom payoff from an expression in ``x`` and ``K``, e.g. ``"(exp(K)-exp(x))**3"``.

    Parsed with sympy so no arbitrary code runs; derivatives still use
    central differences like every other custom payoff.
    """
    import sympy

    x, k = sympy.symbols("x K")
    parsed = sympy.sympify(expr, locals={"x": x, "K": k})
    extra = parsed.free_symbols - {x, k}
    if extra:
        raise ValueError(f"unknown symbols in payoff expression: {sorted(map(str, extra))}")
    fn = sympy.lambdify((x, k), parsed, modules="numpy")
    return make_custom(K, lambda xx: np.asarray(fn(np.asarray(xx, dtype=float), K), dtype=float)
                       + np.zeros_like(np.asarray(xx, dtype=float)))


def concavity_c(g: AmericanPayoff, r: float, sigma: float, x):
    """``c = g'' - (2r/sigma^2)(g - g') - g'``, evaluated on ``x <= K``."""
    x = np.asarray(x, dtype=float)
    gamma = 2.0 * r / (sigma * sigma)
    v, d1, d2 = g.phi(x), g.dphi(x), g.d2phi(x)
    out = d2 - gamma * (v - d1) - d1
    out = np.where(x <= g.K, out, np.nan)
    return float(out) if out.ndim == 0 else out


@dataclass
class PayoffReport:
    positive: bool
    knot_zero: bool
    growth: bool
    concave: bool
    max_c: float
    tail_ratio: float
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.positive and self.knot_zero and self.growth and self.concave


def validation_grid(K: float, h: float = 1e-3, tail: float = 40.0) -> Array:
    """Geometric grid ``K - 2^j h`` refined toward the knot, down to ``K - tail``."""
    J = int(math.ceil(math.log2(tail / h)))
    steps = h * 2.0 ** np.arange(J + 1)
    steps = np.minimum(steps, tail)
    # fill the gaps between dyadic points so concavity is not checked too sparsely
    fine = np.concatenate([np.linspace(a, b, 9)[:-1] for a, b in zip(steps[:-1], steps[1:])])
    return np.unique(K - np.concatenate([fine, [tail]]))


def validate_payoff(g: AmericanPayoff, r: float, sigma: float,
                    h: float = 1e-3, tail: float = 40.0) -> PayoffReport:
    """Check positivity below K, ``g(K) = 0``, decay of ``e^{(2r/s^2)x} g`` and ``c <= 0``."""
    x = validation_grid(g.K, h, tail)
    vals = np.asarray(g.phi(x), dtype=float)
    scale = max(1.0, float(np.max(np.abs(vals))))
    notes: list[str] = []

    positive = bool(np.all(vals > 0.0))
    if not positive:
        notes.append(f"g <= 0 at x={x[np.argmin(vals)]:.6g}")

    knot = float(g.phi(np.array([g.K]))[0])
    knot_zero = abs(knot) <= 1e-12 * scale
    if not knot_zero:
        notes.append(f"g(K) = {knot:.6g}")

    gamma = 2.0 * r / (sigma * sigma)
    with np.errstate(divide="ignore"):
        logt = gamma * x + np.log(np.abs(vals))
    top = float(np.max(logt))
    tail_ratio = float(np.exp(logt[0] - top)) if np.isfinite(top) else 0.0   # g = 0 decays trivially
    # the scaled payoff has to die out in the far tail and keep falling there
    growth = tail_ratio <= 1e-6 and (not np.isfinite(top) or bool(np.all(np.diff(logt[:8]) >= 0.0)))
    if not growth:
        notes.append(f"e^(2r/s^2 x) g does not vanish, tail ratio {tail_ratio:.3g}")

    c = np.asarray(concavity_c(g, r, sigma, x[x < g.K]), dtype=float)
    max_c = float(np.max(c))
    tol = 1e-9 * scale if g.kind != "custom" else 1e-4 * scale
    concave = max_c <= tol
    if not concave:
        notes.append(f"c > 0 somewhere, max c = {max_c:.6g}")
    return PayoffReport(positive, knot_zero, growth, concave, max_c, tail_ratio, notes)


# ------------------------------------------------------------------ European

@dataclass(frozen=True)
class EuropeanPayoff:
    """Payoff function ``f`` of the log-price at maturity.

    ``breakpoints`` lists kinks and jumps so quadrature panels can respect
    them; ``value`` is an optional closed form ``v(theta, x)`` used as a
    reference.
    """

    f: Fn
    breakpoints: Sequence[float] = ()
    value: Optional[Callable[[float, float], float]] = None
    name: str = "f"

    def __call__(self, y):
        return self.f(np.asarray(y, dtype=float))
