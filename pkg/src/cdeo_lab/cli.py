"""Config-driven experiment runner.

    cdeo-lab <command> --config <path> [--out <dir>] [--figure N]

Commands: price-euro, price-american, eao, cdeo, verify, reproduce.
Artifacts are named ``<command>_<hash12>_<what>.{csv,json}`` where the hash
is taken over the canonical config, and every file carries the full hash
and the tolerance set in its header.  Exit codes: 0 success, 2 invalid
config, 3 solver did not converge, 64 unknown command.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import jsonschema
import numpy as np

from .american import FDGrid, binomial_american, exercise_boundary, fd_american_surface
from .cdeo import CdeoConfig, ConfigError, CdeoSolution, slackness_report, solve_cdeo
from .eao import embed_american, put_value_fn
from .euro import DEFAULT_L, price_function_payoff, price_measure_payoff
from .io import config_hash, write_csv, write_json
from .kernel import DomainError, MarketParams, bs_put_value
from .payoff import AmericanPayoff, EuropeanPayoff, make_put, payoff_from_expression
from .verify import representability_report

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_USAGE = 0, 2, 3, 64
COMMANDS = ("price-euro", "price-american", "eao", "cdeo", "verify", "reproduce")

_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}
_axis = {
    "type": "object",
    "properties": {"lo": {"type": "number"}, "hi": {"type": "number"}, "n": _count,
                   "values": {"type": "array", "items": {"type": "number"}, "minItems": 1}},
    "additionalProperties": False,
}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["market"],
    "additionalProperties": False,
    "properties": {
        "market": {
            "type": "object",
            "required": ["r", "sigma", "T"],
            "additionalProperties": False,
            "properties": {"r": {"type": "number", "minimum": 0}, "sigma": _pos, "T": _pos,
                           "x0": {"type": "number"}},
        },
        "payoff": {
            "type": "object",
            "required": ["kind", "log_strike"],
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["put", "custom", "zero"]},
                           "log_strike": {"type": "number"},
                           "expression": {"type": "string"}},
        },
        "european": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["put", "expression", "indicator"]},
                           "log_strike": {"type": "number"},
                           "expression": {"type": "string"},
                           "breakpoints": {"type": "array", "items": {"type": "number"}},
                           "lo": {"type": "number"}, "hi": {"type": "number"}},
        },
        "grids": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "support": {"type": "object", "additionalProperties": False,
                            "properties": {"L": _pos, "n": {"type": "integer", "minimum": 2},
                                           "cluster": _pos, "kind": {"enum": ["hats", "atoms"]}}},
                "constraint": {"type": "object", "additionalProperties": False,
                               "properties": {"seed_theta": _count, "seed_x": _count,
                                              "scan_theta": _count, "scan_x": _count,
                                              "smallest_theta": _pos, "new_points": _count,
                                              "max_rounds": _count}},
                "fd": {"type": "object", "additionalProperties": False,
                       "properties": {"n_x": {"type": "integer", "minimum": 3},
                                      "n_theta": _count, "below": _pos, "above": _pos}},
                "theta": _axis,
                "x": _axis,
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _pos for k in ("feas_tol", "lp_tol", "slack_tol", "touch_tol",
                                             "match_tol", "fd_tol", "value_tol")},
        },
        "delta": _pos,
        "output_dir": {"type": "string"},
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eao_T": _pos,
                "theta_samples": {"type": "integer", "minimum": 50},
                "binomial_steps": {"type": "integer", "minimum": 10},
                "probes": {"type": "array",
                           "items": {"type": "array", "items": {"type": "number"},
                                     "minItems": 2, "maxItems": 2}},
                "surface_stride": _count,
                "lp_engine": {"enum": ["highs", "simplex"]},
            },
        },
    },
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- config

def load_config(path: str | Path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})", EXIT_CONFIG)
    validate_config(cfg)
    return cfg


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        # the missing key is only named in the message
        missing = err.message.split("'")[1] if "'" in err.message else "?"
        parts.append(missing)
    return "/".join(parts) or "<root>"


def validate_config(cfg: Any) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        raise CliError(f"config field '{_field_path(e)}': {e.message}", EXIT_CONFIG)


def _need(cfg: dict, key: str, command: str) -> dict:
    if key not in cfg:
        raise CliError(f"config field '{key}': required by command '{command}'", EXIT_CONFIG)
    return cfg[key]


def market_from(cfg: dict) -> MarketParams:
    mk = cfg["market"]
    x0 = mk.get("x0", cfg.get("payoff", {}).get("log_strike", 0.0))
    try:
        return MarketParams(float(mk["r"]), float(mk["sigma"]), float(mk["T"]), float(x0))
    except DomainError as exc:
        raise CliError(f"config field 'market': {exc}", EXIT_CONFIG)


def american_from(cfg: dict, command: str) -> AmericanPayoff:
    p = _need(cfg, "payoff", command)
    K = float(p["log_strike"])
    if p["kind"] == "put":
        return make_put(K)
    if p["kind"] == "zero":
        return payoff_from_expression(K, "0")
    if "expression" not in p:
        raise CliError("config field 'payoff/expression': required for kind 'custom'", EXIT_CONFIG)
    try:
        return payoff_from_expression(K, p["expression"])
    except Exception as exc:   # sympy raises a zoo of types
        raise CliError(f"config field 'payoff/expression': {exc}", EXIT_CONFIG)


def european_from(cfg: dict, command: str) -> EuropeanPayoff:
    e = _need(cfg, "european", command)
    kind = e["kind"]
    if kind == "put":
        if "log_strike" not in e:
            raise CliError("config field 'european/log_strike': required for kind 'put'", EXIT_CONFIG)
        K = float(e["log_strike"])
        eK = math.exp(K)
        return EuropeanPayoff(lambda y: np.maximum(eK - np.exp(y), 0.0), (K,), name="put")
    if kind == "indicator":
        if "lo" not in e or "hi" not in e:
            raise CliError("config field 'european/lo': indicator needs lo and hi", EXIT_CONFIG)
        lo, hi = float(e["lo"]), float(e["hi"])
        return EuropeanPayoff(lambda y: ((y >= lo) & (y <= hi)).astype(float), (lo, hi),
                              name="indicator")
    if "expression" not in e:
        raise CliError("config field 'european/expression': required for kind 'expression'",
                       EXIT_CONFIG)
    try:
        g = payoff_from_expression(0.0, e["expression"])
    except Exception as exc:
        raise CliError(f"config field 'european/expression': {exc}", EXIT_CONFIG)
    phi = g.phi
    return EuropeanPayoff(lambda y: np.asarray(phi(y), dtype=float),
                          tuple(float(b) for b in e.get("breakpoints", ())), name="expression")


def axis_from(cfg: dict, name: str, lo: float, hi: float, n: int) -> np.ndarray:
    a = cfg.get("grids", {}).get(name, {})
    if "values" in a:
        return np.asarray(a["values"], dtype=float)
    return np.linspace(float(a.get("lo", lo)), float(a.get("hi", hi)), int(a.get("n", n)))


def fd_grid_from(cfg: dict) -> FDGrid:
    f = cfg.get("grids", {}).get("fd", {})
    return FDGrid(n_x=int(f.get("n_x", 1201)), n_theta=int(f.get("n_theta", 1000)),
                  below=float(f.get("below", 3.0)), above=float(f.get("above", 3.0)))


def cdeo_config_from(cfg: dict) -> CdeoConfig:
    grids = cfg.get("grids", {})
    s = grids.get("support", {})
    c = grids.get("constraint", {})
    tol = cfg.get("tolerances", {})
    opts = cfg.get("options", {})
    kw: dict[str, Any] = {"L": float(s.get("L", DEFAULT_L))}
    for src, key, dst in ((s, "n", "n_support"), (s, "cluster", "support_cluster"),
                          (s, "kind", "support_kind"), (tol, "feas_tol", "feas_tol"),
                          (tol, "lp_tol", "lp_tol"), (opts, "lp_engine", "lp_engine")):
        if key in src:
            kw[dst] = src[key]
    for key in ("seed_theta", "seed_x", "scan_theta", "scan_x", "smallest_theta",
                "new_points", "max_rounds"):
        if key in c:
            kw[key] = c[key]
    return CdeoConfig(**kw)


def tolerances(cfg: dict) -> dict:
    return dict(sorted(cfg.get("tolerances", {}).items()))


# ---------------------------------------------------------------- artifacts

class Artifacts:
    """Names and headers for everything one command writes."""

    def __init__(self, command: str, cfg: dict, out: Path):
        self.command = command
        self.hash = config_hash(cfg)
        self.out = out
        self.meta = {"command": command, "config_hash": self.hash, "tolerances": tolerances(cfg)}
        self.written: list[Path] = []

    def path(self, what: str, ext: str) -> Path:
        return self.out / f"{self.command}_{self.hash[:12]}_{what}.{ext}"

    def csv(self, what: str, columns: Sequence[str], rows) -> Path:
        p = write_csv(self.path(what, "csv"), columns, rows, self.meta)
        self.written.append(p)
        return p

    def json(self, what: str, payload: dict) -> Path:
        p = write_json(self.path(what, "json"), {"meta": self.meta, **payload})
        self.written.append(p)
        return p

    def add(self, p: Path) -> None:
        self.written.append(p)


def _strip_timing(obj: Any) -> Any:
    # wall-clock fields would break byte-identical reruns
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "elapsed"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


# ---------------------------------------------------------------- commands

def cmd_price_euro(cfg: dict, art: Artifacts) -> int:
    m = market_from(cfg)
    f = european_from(cfg, "price-euro")
    thetas = axis_from(cfg, "theta", 0.0, m.T, 11)
    xs = axis_from(cfg, "x", -2.0, 2.0, 41)
    rows = []
    for t in thetas:
        vals = np.atleast_1d(price_function_payoff(m, f, float(t), xs))
        rows.extend((t, x, v) for x, v in zip(xs, vals))
    art.csv("values", ("theta", "x", "value"), rows)
    return EXIT_OK


def cmd_price_american(cfg: dict, art: Artifacts) -> int:
    m = market_from(cfg)
    g = american_from(cfg, "price-american")
    grid = fd_grid_from(cfg)
    opts = cfg.get("options", {})
    surf = fd_american_surface(m, g, m.T, grid)
    bnd = exercise_boundary(surf, g)
    art.add(surf.to_csv(art.path("surface", "csv"), art.meta, stride=int(opts.get("surface_stride", 10))))
    art.add(bnd.to_csv(art.path("boundary", "csv"), art.meta))
    probes = opts.get("probes", [[m.T, m.x0]])
    steps = int(opts.get("binomial_steps", 4000))
    rows = []
    for t, x in probes:
        fd = surf.value_at(float(t), float(x), method="cubic")
        bi = binomial_american(m, g, float(t), float(x), steps)
        rows.append((t, x, fd, bi, abs(fd - bi) / max(abs(bi), 1e-300)))
    art.csv("probes", ("theta", "x", "fd", "binomial", "rel_diff"), rows)
    return EXIT_OK


def cmd_eao(cfg: dict, art: Artifacts) -> int:
    m = market_from(cfg)
    f = european_from(cfg, "eao")
    opts = cfg.get("options", {})
    T = float(opts.get("eao_T", m.T))
    xs = axis_from(cfg, "x", -2.0, 2.0, 81)
    res = embed_american(m, f, T, xs, theta_samples=int(opts.get("theta_samples", 200)))
    art.add(res.to_csv(art.path("eao", "csv"), art.meta))
    art.json("summary", {"T": T, "truncation": res.truncation,
                         "all_unique": bool(np.all(res.unique_min_flags))})
    return EXIT_OK


def _solve(cfg: dict, command: str) -> tuple[MarketParams, AmericanPayoff, CdeoSolution]:
    m = market_from(cfg)
    g = american_from(cfg, command)
    try:
        sol = solve_cdeo(m, g, cdeo_config_from(cfg))
    except ConfigError as exc:
        raise CliError(f"config field 'grids': {exc}", EXIT_CONFIG)
    tol = cfg.get("tolerances", {})
    if sol.lam.theta.size:
        slackness_report(sol, m, g, slack_tol=float(tol.get("slack_tol", 1e-4)),
                         lp_tol=float(tol.get("lp_tol", 1e-9)))
    return m, g, sol


def _write_solution(sol: CdeoSolution, art: Artifacts) -> None:
    mu = sol.mu_star
    art.csv("mu_star", ("y", "mass"), zip(sol.supp.nodes, sol.node_masses))
    art.add(mu.to_csv(art.path("measure", "csv"), art.meta))
    art.csv("lambda", ("theta", "x", "mass"), zip(sol.lam.theta, sol.lam.x, sol.lam.mass))
    summary = _strip_timing(sol.summary())
    summary["payoff_measure_total_mass"] = mu.total_mass()
    art.json("summary", summary)


def cmd_cdeo(cfg: dict, art: Artifacts) -> int:
    _, _, sol = _solve(cfg, "cdeo")
    _write_solution(sol, art)
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _verify(cfg: dict, art: Artifacts):
    m, g, sol = _solve(cfg, art.command)
    _write_solution(sol, art)
    tol = cfg.get("tolerances", {})
    surf = fd_american_surface(m, g, m.T, fd_grid_from(cfg))
    bnd = exercise_boundary(surf, g)
    kw = {k: float(tol[k]) for k in ("touch_tol", "match_tol", "fd_tol") if k in tol}
    if "feas_tol" in tol:
        kw["feas_tol"] = float(tol["feas_tol"])
    rep = representability_report(m, g, sol.mu_star, surf, delta=cfg.get("delta"),
                                  boundary=bnd, **kw)
    return m, g, sol, surf, bnd, rep


def cmd_verify(cfg: dict, art: Artifacts) -> int:
    m, g, sol, surf, bnd, rep = _verify(cfg, art)
    art.add(rep.to_json(art.path("report", "json"), art.meta))
    if rep.applicable:
        art.add(rep.curve_to_csv(art.path("curve", "csv"), art.meta))
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


# ---------------------------------------------------------------- figures

def _figure_put_eao(cfg: dict, art: Artifacts, which: int) -> int:
    m = market_from(cfg)
    e = cfg.get("european") or cfg.get("payoff") or {}
    if "log_strike" not in e:
        raise CliError("config field 'european/log_strike': figures 1-2 need the put strike",
                       EXIT_CONFIG)
    K = float(e["log_strike"])
    opts = cfg.get("options", {})
    T = float(opts.get("eao_T", m.T))
    xs = axis_from(cfg, "x", K - 0.6, K + 0.2, 161)
    res = embed_american(m, put_value_fn(m, K), T, xs, theta_samples=int(opts.get("theta_samples", 200)))
    if which == 1:
        eK = math.exp(K)
        rows = zip(xs, np.exp(xs), res.am_values, np.maximum(eK - np.exp(xs), 0.0),
                   bs_put_value(m, K, T, xs))
        art.csv("figure1", ("x", "s", "am", "put_payoff", "european_value_T"), rows)
    else:
        art.csv("figure2", ("x", "s", "theta_breve", "unique_flag"),
                zip(xs, np.exp(xs), res.theta_breve, res.unique_min_flags.astype(int)))
    return EXIT_OK


def _figure_cdeo(cfg: dict, art: Artifacts, which: int) -> int:
    m, g, sol, surf, bnd, rep = _verify(cfg, art)
    if not rep.applicable:
        raise CliError("figures 3-6 need a payoff with a minima curve", EXIT_CONFIG)
    c = rep.curve
    if which == 3:
        thetas = axis_from(cfg, "theta", 0.01 * m.T, m.T + (cfg.get("delta") or 0.1 * m.T), 40)
        xs = axis_from(cfg, "x", g.K - 1.0, g.K + 0.3, 80)
        rows = []
        for t in thetas:
            v = np.atleast_1d(price_measure_payoff(m, sol.mu_star, float(t), xs))
            rows.extend(zip(np.full(xs.size, t), np.exp(xs), v, g(xs)))
        art.csv("figure3_surface", ("theta", "s", "v_cdeo", "payoff"), rows)
        art.csv("figure3_curve", ("theta", "exp_x_breve", "v_minus_g"),
                zip(c.theta, np.exp(c.x_breve), c.min_value))
    elif which == 4:
        thetas = c.theta
        xs = axis_from(cfg, "x", g.K - 1.0, g.K, 80)
        rows = []
        for t in thetas:
            v = np.atleast_1d(price_measure_payoff(m, sol.mu_star, float(t), xs)) - g(xs)
            rows.extend(zip(np.full(xs.size, t), np.exp(xs), v))
        art.csv("figure4_levels", ("theta", "s", "v_minus_g"), rows)
        art.add(rep.curve_to_csv(art.path("figure4_curve", "csv"), art.meta))
    elif which == 5:
        art.csv("figure5", ("theta", "H_on_curve"), zip(c.theta, rep.H_on_curve))
    else:
        ev = rep.evidence["fd_boundary"]
        th = np.asarray(ev["theta"])
        a, b = np.asarray(ev["exp_x_breve"]), np.asarray(ev["exp_b_fd"])
        art.csv("figure6", ("theta", "exp_x_breve", "exp_b_fd", "abs_diff"),
                zip(th, a, b, np.abs(a - b)))
        art.json("figure6_summary", {"max_abs_diff": float(np.max(np.abs(a - b))) if th.size else None,
                                     "curve_matches_fd_ok": rep.curve_matches_fd_ok})
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def cmd_reproduce(cfg: dict, art: Artifacts, figure: Optional[int]) -> int:
    if figure not in (1, 2, 3, 4, 5, 6):
        raise CliError("reproduce needs --figure N with N in 1..6", EXIT_USAGE)
    art.command = f"reproduce-fig{figure}"
    art.meta["command"] = art.command
    if figure in (1, 2):
        return _figure_put_eao(cfg, art, figure)
    return _figure_cdeo(cfg, art, figure)


HANDLERS: dict[str, Callable[[dict, Artifacts], int]] = {
    "price-euro": cmd_price_euro,
    "price-american": cmd_price_american,
    "eao": cmd_eao,
    "cdeo": cmd_cdeo,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cdeo-lab", description=__doc__.split("\n\n")[0])
    p.add_argument("command", help=", ".join(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (default: $OUTPUT_DIR, then config output_dir)")
    p.add_argument("--figure", type=int, help="figure number for 'reproduce'")
    return p


def output_dir(args_out: Optional[str], cfg: dict) -> Path:
    return Path(args_out or os.environ.get("OUTPUT_DIR") or cfg.get("output_dir") or "out")


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    if not argv or argv[0] in ("-h", "--help"):
        parser.print_help()
        return EXIT_OK if argv else EXIT_USAGE
    if argv[0] not in COMMANDS:
        print(f"cdeo-lab: unknown command {argv[0]!r}\n", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        art = Artifacts(args.command, cfg, output_dir(args.out, cfg))
        if args.command == "reproduce":
            code = cmd_reproduce(cfg, art, args.figure)
        else:
            code = HANDLERS[args.command](cfg, art)
    except CliError as exc:
        print(f"cdeo-lab: {exc}", file=sys.stderr)
        return exc.code
    for p in art.written:
        print(p)
    if code == EXIT_NOT_CONVERGED:
        print("cdeo-lab: exchange loop stopped at the round cap with violations left", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())
