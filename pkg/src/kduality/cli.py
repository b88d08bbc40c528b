"""Command-line front end.

Exit codes: 0 when every checked condition holds, 2 when a condition fails
(e.g. the dual exists only as a sub-Markov process, or not at all), 1 on
input errors such as malformed configs or expressions.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

import numpy as np

from . import expr as ex
from .config import RunConfig, grid_from_config, spec_from_config
from .duality import (
    build_f_operator,
    check_monotone_order_k,
    check_self_dual,
    dual_diffusion_analytic,
    dual_jump_analytic,
    dual_matrix,
    dual_spec,
    intertwining_residual,
    local_coefficients,
)
from .errors import ConfigError, KDualityError
from .evolution import Propagator, chain_rule_residual, dual_propagator, ft_duality_residual
from .fractional import write_columns
from .model import DensityJump, NoJump, StableLike, SymmetricStable, discretize, martingale_residual
from .montecarlo import PathConfig
from .options import (
    STRADDLE_GRID,
    putcall_symmetry_report,
    spread_symmetry_report,
    straddle_selfsymmetry_report,
)

EXIT_OK, EXIT_INPUT, EXIT_CONDITION = 0, 1, 2

# tolerance defaults, overridable with --tol-<name>
TOLERANCES = {
    "limit": 1e-2,       # limit-condition residual of closed-form duals
    "boundary": 1e-2,    # boundary limits of jump duals
    "monotone": 1e-8,    # relative negativity allowed in dual jump densities
    "positivity": 1e-10, # relative negativity of dual-matrix off-diagonals
    "gap": 1e-2,         # symmetry gaps in verify
    "selfdual": 1e-6,
    "martingale": 1e-6,
    "derivative": None,  # monotonicity check; None means 1e-6 * max|g|
    "edge": 5e-2,        # edge limits of the normalized order k-1 derivative
    "chain": 1e-8,
    "ft": 1e-3,
}


def _kv(path, items):
    keys, vals = [], []
    for k, v in items:
        keys.append(k)
        if isinstance(v, (bool, np.bool_)):
            v = "true" if v else "false"
        elif isinstance(v, ex.Expr):
            v = ex.serialize(v)
        elif v is None:
            v = ""
        vals.append(v)
    write_columns(path, ["key", "value"], [keys, vals])


def _say(items):
    for k, v in items:
        if isinstance(v, float):
            v = "%.6g" % v
        elif isinstance(v, ex.Expr):
            v = ex.serialize(v)
        print(f"{k}: {v}")


# -- commands ----------------------------------------------------------------

def cmd_dualize(cfg: RunConfig, out: str, tol: dict, args) -> int:
    spec = spec_from_config(cfg)
    grid = grid_from_config(cfg, n_override=args.grid_n)
    k = cfg.number("duality", "k", required=True)
    L = discretize(spec, grid)
    F = build_f_operator(k, grid)
    LD = dual_matrix(L, F)
    items = [("k", k), ("intertwining_residual", intertwining_residual(LD, F, L) / L.scale)]
    result = None
    if isinstance(spec.jump, NoJump) and not spec.time_dependent:
        result = dual_diffusion_analytic(spec.a, spec.b, k, grid, tol_limit=tol["limit"], tol_monotone=tol["monotone"])
        items += [("kind", "diffusion"), ("a_dual", result.analytic.a_dual), ("b_dual", result.analytic.b_dual),
                  ("killing", result.analytic.killing)]
    elif isinstance(spec.jump, DensityJump) and spec.a == ex.ZERO and spec.b == ex.ZERO and not spec.jump.compensated:
        result = dual_jump_analytic(spec.jump.nu, k, grid, tol_boundary=tol["boundary"], tol_monotone=tol["monotone"])
        items += [("kind", "jump")]
    elif isinstance(spec.jump, (StableLike, SymmetricStable)):
        try:
            ds = dual_spec(spec, k)
            side = ds.jump.side if isinstance(ds.jump, StableLike) else "symmetric"
            items += [("kind", "stable"), ("dual_side", side), ("dual_scale", ds.jump.scale)]
        except ValueError:
            items += [("kind", "matrix")]
    else:
        items += [("kind", "matrix")]

    if result is not None:
        d = result.diagnostics
        monotone_ok, limit_ok, sub = d["monotone_ok"], d["limit_ok"], d["subMarkov"]
        items += [("monotone_ok", monotone_ok), ("limit_condition_residual", d["limit_condition_residual"]),
                  ("subMarkov", sub)]
        w = grid.window()
        f = np.exp(-grid.nodes**2)
        ref = LD.m @ f
        gap = np.abs(result.matrix.m @ f - ref)[w].max() / max(np.abs(ref[w]).max(), 1e-300)
        items += [("analytic_vs_matrix", gap)]
        result.write_jump_csv(os.path.join(out, "dual_jump_density.csv"))
    else:
        w = grid.window()
        block = LD.m[np.ix_(w, w)].copy()
        np.fill_diagonal(block, np.inf)
        off_min = float(block.min())
        monotone_ok = off_min >= -tol["positivity"] * LD.scale
        limit_ok, sub = True, False
        items += [("monotone_ok", monotone_ok), ("offdiagonal_min", off_min)]
    xs, kill, drift, diff = local_coefficients(LD)
    write_columns(os.path.join(out, "dual_coefficients.csv"), ["x", "killing", "drift", "diffusion"],
                  [xs, kill, drift, diff])
    exists = bool(monotone_ok and limit_ok)
    items += [("markov_dual", exists)]
    _kv(os.path.join(out, "dual_report.csv"), items)
    _say(items)
    return EXIT_OK if exists else EXIT_CONDITION


def _mc_config(cfg: RunConfig, args) -> PathConfig:
    seed = args.seed if args.seed is not None else cfg.integer("mc", "seed", 0)
    return PathConfig(dt=cfg.number("mc", "dt", 1e-3), n_paths=cfg.integer("mc", "n_paths", 10_000), seed=seed)


def cmd_verify(cfg: RunConfig, out: str, tol: dict, args) -> int:
    spec = spec_from_config(cfg)
    payoff = cfg.tag("task", "payoff", ("call", "straddle", "spread"), "call")
    t = cfg.number("task", "t", required=True)
    spots = cfg.numbers("task", "spots", required=True)
    strikes = cfg.numbers("task", "strikes", required=True)
    pairs = [(x, y) for x in spots for y in strikes]
    gap = tol["gap"]
    if payoff == "straddle":
        default = (STRADDLE_GRID.x_min, STRADDLE_GRID.x_max, STRADDLE_GRID.n)
        grid = grid_from_config(cfg, default, args.grid_n)
        k = cfg.number("duality", "k", required=True)
        table = straddle_selfsymmetry_report(spec, k, pairs, t, grid, tol=gap)
    elif payoff == "spread":
        grid = grid_from_config(cfg, n_override=args.grid_n)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            table = spread_symmetry_report(spec, cfg.number("task", "alpha", required=True),
                                           cfg.number("task", "beta_shift", required=True), pairs, t, grid, tol=gap)
    else:
        grid = grid_from_config(cfg, n_override=args.grid_n)
        k = cfg.number("duality", "k", required=True)
        method = cfg.tag("task", "method", ("grid", "mc", "both"), "grid")
        table = None
        for m in (("grid", "mc") if method == "both" else (method,)):
            part = putcall_symmetry_report(spec, k, strikes, spots, t, m, grid, tol=gap, cfg=_mc_config(cfg, args))
            if table is None:
                table = part
            else:
                table.rows += part.rows
                table.warnings += part.warnings
    table.to_csv(os.path.join(out, "verify.csv"))
    for w in table.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _say([("rows", len(table.rows)), ("max_gap", table.max_gap), ("all_passed", table.all_passed)])
    return EXIT_OK if table.all_passed else EXIT_CONDITION


def cmd_monotone(cfg: RunConfig, out: str, tol: dict, args) -> int:
    spec = spec_from_config(cfg)
    grid = grid_from_config(cfg, n_override=args.grid_n)
    k = cfg.number("duality", "k", required=True)
    t = cfg.number("task", "t", required=True)
    factor = cfg.number("task", "enlarge", 2.0)
    big = grid.enlarged(factor)
    rep = check_monotone_order_k(discretize(spec, big), k, t, tol=tol["derivative"], window=(grid.x_min, grid.x_max))
    per_y = np.nanmin(rep.derivative[big.mask_between(grid.x_min, grid.x_max)], axis=0)
    write_columns(os.path.join(out, "monotone.csv"), ["y", "min_derivative"], [rep.y, per_y])
    edges_ok = max(rep.edge_upper_dev, rep.edge_lower_dev) <= tol["edge"]
    items = [("k", k), ("t", t), ("min_derivative", rep.min_derivative), ("tol", rep.tol),
             ("monotone", rep.monotone), ("edge_upper_dev", rep.edge_upper_dev), ("edge_lower_dev", rep.edge_lower_dev),
             ("edges_ok", edges_ok)]
    _kv(os.path.join(out, "monotone_report.csv"), items)
    _say(items)
    return EXIT_OK if rep.monotone and edges_ok else EXIT_CONDITION


def cmd_selfdual(cfg: RunConfig, out: str, tol: dict, args) -> int:
    spec = spec_from_config(cfg)
    if not isinstance(spec.jump, DensityJump):
        raise ConfigError("selfdual needs a density jump model (jump = density)", cfg.path, cfg.line_of("model", "jump"))
    grid = grid_from_config(cfg, n_override=args.grid_n)
    order = cfg.integer("task", "order", 1)
    if order not in (1, 2):
        raise ConfigError("order must be 1 or 2", cfg.path, cfg.line_of("task", "order"))
    mres = martingale_residual(spec, grid)
    w = grid.window()
    mart = float(np.abs(mres.values[w]).max())
    res = check_self_dual(spec.jump.nu, order, grid)
    mres.to_csv(os.path.join(out, "martingale_residual.csv"), header=("x", "residual"))
    ok = mart <= tol["martingale"] and res <= tol["selfdual"]
    items = [("order", order), ("martingale_residual", mart), ("selfdual_residual", res), ("self_dual", ok)]
    _kv(os.path.join(out, "selfdual_report.csv"), items)
    _say(items)
    return EXIT_OK if ok else EXIT_CONDITION


def cmd_propagator(cfg: RunConfig, out: str, tol: dict, args) -> int:
    spec = spec_from_config(cfg)
    grid = grid_from_config(cfg, default=(-5.0, 5.0, 200), n_override=args.grid_n)
    k = cfg.number("duality", "k", required=True)
    T = cfg.number("task", "T", 1.0)
    dt = cfg.number("task", "dt", 1e-3)
    s = cfg.number("task", "s", 0.0)
    t = cfg.number("task", "t", T)
    P = Propagator.from_spec(spec, grid, T, dt)
    F = build_f_operator(k, grid)
    D = dual_propagator(P, F, T)
    mid = P.dt * round((s + t) / 2 / P.dt)
    chain = max(chain_rule_residual(P, s, mid, t), chain_rule_residual(D, s, mid, t))
    ft = ft_duality_residual(P, D, s, t)
    ok = chain <= tol["chain"] and ft <= tol["ft"]
    gen = D.generator(s)
    xs = grid.nodes
    w = grid.window()
    write_columns(os.path.join(out, "dual_generator_diag.csv"), ["x", "diagonal"], [xs[w], np.diag(gen)[w]])
    items = [("k", k), ("T", T), ("dt", P.dt), ("s", s), ("t", t), ("chain_rule_residual", chain),
             ("ft_duality_residual", ft), ("ok", ok)]
    _kv(os.path.join(out, "propagator_report.csv"), items)
    _say(items)
    return EXIT_OK if ok else EXIT_CONDITION


COMMANDS = {
    "dualize": cmd_dualize,
    "verify": cmd_verify,
    "monotone": cmd_monotone,
    "selfdual": cmd_selfdual,
    "propagator": cmd_propagator,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kduality", description="Order-k duals of one-dimensional Markov generators.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", default=".", help="output directory for CSV reports")
    p.add_argument("--grid-n", type=int, default=None, help="override the grid size")
    p.add_argument("--seed", type=int, default=None, help="override the Monte Carlo seed")
    return p


def _config_tolerances(cfg: RunConfig, tol: dict) -> dict:
    """Apply ``tol_<name>`` keys of the [duality] section."""
    tol = dict(tol)
    for key in cfg.sections.get("duality", {}):
        if key.startswith("tol_"):
            name = key[len("tol_"):]
            if name not in tol:
                raise ConfigError(f"unknown tolerance {name!r}", cfg.path, cfg.line_of("duality", key))
            tol[name] = cfg.number("duality", key)
    return tol


def _tolerances(extra) -> dict:
    tol = {}
    i = 0
    while i < len(extra):
        arg = extra[i]
        if not arg.startswith("--tol-"):
            raise ConfigError(f"unrecognised argument {arg}")
        name, _, val = arg[len("--tol-"):].partition("=")
        if not val:
            if i + 1 >= len(extra):
                raise ConfigError(f"{arg} needs a value")
            val = extra[i + 1]
            i += 1
        name = name.replace("-", "_")
        if name not in TOLERANCES:
            raise ConfigError(f"unknown tolerance {name!r}; known: {', '.join(sorted(TOLERANCES))}")
        try:
            tol[name] = float(val)
        except ValueError:
            raise ConfigError(f"tolerance {name} must be a number, got {val!r}") from None
        i += 1
    return tol


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as stop:
        # argparse uses 2 for usage errors, which here means a failed condition
        return EXIT_OK if stop.code in (0, None) else EXIT_INPUT
    try:
        overrides = _tolerances(extra)
        cfg = RunConfig.from_file(args.config)
        tol = {**_config_tolerances(cfg, TOLERANCES), **overrides}
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, tol, args)
    except (KDualityError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
