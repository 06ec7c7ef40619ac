"""Cheapest dominating European options of American claims in the Black-Scholes model."""
from __future__ import annotations

from .american import FDGrid, ValueSurface, binomial_american, exercise_boundary, fd_american_surface
from .cdeo import CdeoConfig, CdeoSolution, relocate_mass, slackness_report, solve_cdeo, solve_lp
from .eao import embed_american
from .euro import PayoffMeasure, euro_derivs, price_function_payoff, price_measure_payoff
from .kernel import GaussParams, MarketParams, bs_put_derivs, bs_put_value, norm_cdf, norm_pdf, pdf_ratio
from .payoff import AmericanPayoff, EuropeanPayoff, concavity_c, make_put, validate_payoff
from .verify import h_function, minima_curve, representability_report

__version__ = "0.1.0"

__all__ = [
    "AmericanPayoff", "CdeoConfig", "CdeoSolution", "EuropeanPayoff", "FDGrid", "GaussParams",
    "MarketParams", "PayoffMeasure", "ValueSurface", "binomial_american", "bs_put_derivs",
    "bs_put_value", "concavity_c", "embed_american", "euro_derivs", "exercise_boundary",
    "fd_american_surface", "h_function", "make_put", "minima_curve", "norm_cdf", "norm_pdf",
    "pdf_ratio", "price_function_payoff", "price_measure_payoff", "relocate_mass",
    "representability_report", "slackness_report", "solve_cdeo", "solve_lp", "validate_payoff",
]
