"""Acceptance criteria, one test each.

Every test prints a single ``PASS criterion N: ...`` or ``FAIL criterion N: ...``
line (run with ``-s`` to see them) and then asserts the same verdict.
"""

import math
import time
import warnings

import numpy as np
import pytest

from kduality import expr as ex
from kduality.duality import (
    build_f_operator,
    check_monotone_order_k,
    check_self_dual,
    dual_diffusion_analytic,
    dual_matrix,
    intertwining_residual,
    local_coefficients,
)
from kduality.errors import ParseError
from kduality.evolution import Propagator, chain_rule_residual, dual_propagator, dual_semigroup_check, ft_duality_residual
from kduality.fractional import (
    FracOrder,
    Grid,
    GridFn,
    derivative_matrix,
    integral_matrix,
    integration_by_parts_residual,
    power_kernel,
)
from kduality.model import DensityJump, GeneratorSpec, StableLike, SymmetricStable, discretize
from kduality.montecarlo import PathConfig, duality_mc_report
from kduality.options import (
    PeriodicityWarning,
    PoweredCall,
    PoweredPut,
    price_grid,
    spread_symmetry_report,
    straddle_selfsymmetry_report,
)

KS = (0.5, 1.0, 1.5, 2.0, 2.5)
CASES = {
    "brownian": GeneratorSpec(1, 0),
    "drifted brownian": GeneratorSpec(1, 0.5),
    "a = 1 + 0.1 sin x": GeneratorSpec("1 + 0.1*sin(x)", 0),
    "symmetric stable 0.5": GeneratorSpec(jump=SymmetricStable(0.5)),
    "symmetric stable 1.5": GeneratorSpec(jump=SymmetricStable(1.5)),
    "uniform jumps": GeneratorSpec(jump=DensityJump("step(1 - abs(z-x))")),
}


def verdict(number, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def bump(x):
    return np.where(np.abs(x) < 1, np.exp(-1 / np.maximum(1 - x**2, 1e-300)), 0.0)


def test_criterion_01_exact_intertwining():
    g = Grid(-5, 5, 200)
    t0 = time.perf_counter()
    worst = 0.0
    for spec in CASES.values():
        L = discretize(spec, g)
        for k in KS:
            F = build_f_operator(k, g)
            worst = max(worst, intertwining_residual(dual_matrix(L, F), F, L) / L.scale)
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-10 and elapsed < 10,
            f"max relative intertwining residual {worst:.2e} (<= 1e-10), {elapsed:.1f} s (< 10 s)")


def test_criterion_02_dual_semigroup_similarity():
    g = Grid(-5, 5, 200)
    t0 = time.perf_counter()
    worst = 0.0
    for spec in CASES.values():
        L = discretize(spec, g)
        for k in KS:
            F = build_f_operator(k, g)
            for t in (0.1, 1.0):
                worst = max(worst, dual_semigroup_check(L, F, t))
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-8 and elapsed < 30,
            f"max similarity residual {worst:.2e} (<= 1e-8), {elapsed:.1f} s (< 30 s)")


def _analytic_gap(a, b, k, n):
    g = Grid(-5, 5, n)
    LD = dual_matrix(discretize(GeneratorSpec(a, b), g), build_f_operator(k, g))
    A = dual_diffusion_analytic(a, b, k, g).matrix
    f = np.exp(-g.nodes**2)
    w = g.window()
    d1, d2 = LD.m @ f, A.m @ f
    return np.abs(d1 - d2)[w].max() / np.abs(d1[w]).max()


def test_criterion_03_analytic_vs_matrix_convergence():
    t0 = time.perf_counter()
    lines, ok = [], True
    for a, b, k in ((1, "sin(x)", 2.0), ("1 + 0.1*sin(x)", 0, 2.5)):
        gaps = [_analytic_gap(a, b, k, n) for n in (100, 200, 400)]
        ok &= gaps[0] > gaps[1] > gaps[2] and gaps[2] < 5e-2
        lines.append(f"a={a}, b={b}, k={k}: " + " > ".join(f"{v:.2e}" for v in gaps))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 60
    verdict(3, ok, "; ".join(lines) + f" (monotone, last < 5e-2), {elapsed:.1f} s (< 60 s)")


def test_criterion_04_siegmund_drift():
    lines, ok = [], True
    for n in (200, 400):
        g = Grid(-5, 5, n)
        for c in (0.5, -0.7):
            LD = dual_matrix(discretize(GeneratorSpec(1, c), g), build_f_operator(1, g))
            _, _, drift, _ = local_coefficients(LD)
            err = np.abs(drift - (0.0 - c)).max()
            ok &= err < 10 * g.h
            lines.append(f"n={n}, c={c}: {err:.1e} < {10 * g.h:.2e}")
    verdict(4, ok, "dual drift a' - b; " + "; ".join(lines))


def test_criterion_05_stable_like_reflection():
    lines, ok = [], True
    g = Grid(-5, 5, 400)
    w = g.window()
    block = np.ix_(w, w)
    for beta in (0.5, 1.5):
        L = discretize(GeneratorSpec(jump=StableLike(beta, "plus", "2 + sin(x)")), g)
        LD = dual_matrix(L, build_f_operator(beta, g))
        ref = discretize(GeneratorSpec(jump=StableLike(beta, "minus", "2 + sin(x)")), g)
        err = np.abs(LD.m - ref.m)[block].max() / np.abs(ref.m[block]).max()
        ok &= err < 5e-2
        lines.append(f"beta=k={beta}: {err:.2e}")
    verdict(5, ok, "interior block relative error " + "; ".join(lines) + " (< 5e-2)")


def test_criterion_06_fractional_identities():
    lines, ok = [], True
    # derivative undoes integral; the right-sided derivative inverts the left-sided integral on grids
    g = Grid(-1.25, 1.25, 2048)
    q = bump(g.nodes)
    for beta in (0.5, 1.5):
        r = derivative_matrix(FracOrder(beta, "minus"), g.n, g.h) @ integral_matrix(beta, g.n, g.h, "plus") @ q
        err = np.abs(r - q)[g.window()].max()
        ok &= err < 1e-3
        lines.append(f"D o I (beta={beta}) {err:.1e}")
    # integration by parts on images of bumps
    g = Grid(-3, 3, 1024)
    x = g.nodes
    for beta in (0.5, 1.5):
        pp = GridFn(g, integral_matrix(beta, g.n, g.h, "minus") @ bump(x - 0.3))
        pm = GridFn(g, integral_matrix(beta, g.n, g.h, "plus") @ bump(x + 0.2))
        res = integration_by_parts_residual(pp, pm, beta)
        ok &= res < 1e-6
        lines.append(f"by parts (beta={beta}) {res:.1e}")
    # fundamental solution: d^b/dx^b of x_+^{b-1}/Gamma(b) acts as a delta against a bump
    g = Grid(-3, 3, 2048)
    x = g.nodes
    sel = g.mask_between(-1.5, 1.5)
    for beta in (0.5, 1.5):
        d = derivative_matrix(FracOrder(beta, "plus"), g.n, g.h) @ power_kernel(beta, x)
        conv = g.h * (bump(x[:, None] - x[None, :]) @ d)
        err = np.abs(conv - bump(x))[sel].max()
        ok &= err < 1e-2
        lines.append(f"fundamental (beta={beta}) {err:.1e}")
    verdict(6, ok, "; ".join(lines) + " (< 1e-3, 1e-6, 1e-2)")


def test_criterion_07_monte_carlo_duality():
    t0 = time.perf_counter()
    X, Y = GeneratorSpec(0.5, 0.3), GeneratorSpec(0.5, -0.3)
    r = duality_mc_report(X, Y, 2, 1.0, 0.0, 1.0, PathConfig(dt=1e-3, n_paths=100_000, seed=2024))
    call_grid = price_grid(X, PoweredCall(2, 0.0), 1.0, 1.0)
    put_grid = price_grid(Y, PoweredPut(2, 1.0), 1.0, 0.0)
    zc = abs(r.call.mean - call_grid) / r.call.stderr
    zp = abs(r.put.mean - put_grid) / r.put.stderr
    elapsed = time.perf_counter() - t0
    ok = abs(r.z_score) < 3 and zc < 3 and zp < 3 and elapsed < 120
    verdict(7, ok, f"z={r.z_score:.2f}; call vs grid {zc:.2f} stderr; put vs grid {zp:.2f} stderr "
                   f"(all < 3), {elapsed:.1f} s (< 120 s)")


def test_criterion_08_straddle_self_symmetry():
    pairs = [(x, y) for x in (-1.0, 0.0, 1.5) for y in (-2.0, 0.5, 2.0)]
    tb = straddle_selfsymmetry_report(GeneratorSpec(jump=SymmetricStable(1.5, "2 + sin(x)")), 1.5, pairs, 0.5)
    ok = len(tb.rows) == 9 and tb.max_gap < 1e-2
    verdict(8, ok, f"max gap {tb.max_gap:.2e} over {len(tb.rows)} pairs (< 1e-2)")


def test_criterion_09_periodic_spread():
    pairs = [(x, y) for x in (-1.0, 0.0, 1.5) for y in (-2.0, 0.5, 2.0)]
    spec = GeneratorSpec(f"2 + cos({2 * math.pi!r}*x)", 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", PeriodicityWarning)
        tb = spread_symmetry_report(spec, 0.5, 1.5, pairs, 0.5)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        bad = spread_symmetry_report(GeneratorSpec("2 + x^2", 0), 0.5, 1.5, pairs, 0.5)
    warned = any(issubclass(w.category, PeriodicityWarning) for w in caught)
    ok = tb.max_gap < 1e-2 and warned and not any(r.asserted for r in bad.rows)
    verdict(9, ok, f"periodic max gap {tb.max_gap:.2e} (< 1e-2); non-periodic warned={warned}")


def test_criterion_10_self_duality_detector():
    g = Grid(-5, 5, 201)
    lines, ok = [], True
    for order in (1, 2):
        good = check_self_dual("exp(-(z-x)^2)", order, g)
        bad = check_self_dual("(1 + x^2)*exp(-(z-x)^2)", order, g)
        ok &= good < 1e-6 and bad > 1e-2
        lines.append(f"order {order}: {good:.1e} vs {bad:.2e}")
    verdict(10, ok, "; ".join(lines) + " (< 1e-6 vs > 1e-2)")


def test_criterion_11_order_k_monotonicity():
    big = Grid(-10, 10, 400).enlarged(2.0)
    L = discretize(GeneratorSpec(1, 0), big)
    lines, ok = [], True
    for k in (1, 2):
        rep = check_monotone_order_k(L, k, 0.5, window=(-10, 10))
        edge = max(rep.edge_upper_dev, rep.edge_lower_dev)
        ok &= rep.monotone and rep.min_derivative >= -1e-6 and edge <= 5e-2
        lines.append(f"k={k}: min derivative {rep.min_derivative:.1e}, edge deviation {edge:.2e}")
    verdict(11, ok, "; ".join(lines) + " (>= -1e-6, <= 5e-2)")


def test_criterion_12_propagator_duality():
    g = Grid(-5, 5, 200)
    lap = discretize(GeneratorSpec(1, 0), g)
    P = Propagator(lambda t: (1 + t) * lap.m, 1.0, 1e-3)
    D = dual_propagator(P, build_f_operator(2, g), 1.0)
    chain = max(chain_rule_residual(P, 0.0, 0.5, 1.0), chain_rule_residual(D, 0.0, 0.5, 1.0))
    ft = ft_duality_residual(P, D, 0.0, 1.0)
    verdict(12, chain < 1e-8 and ft < 1e-3, f"chain rule {chain:.1e} (< 1e-8); (f,T) identity {ft:.1e} (< 1e-3)")


FUZZ_ALPHABET = list("xyzt0123456789.+-*/^(), eE") + ["sin", "cos", "exp", "log", "sqrt", "abs", "max", "min",
                                                         "pow", "step", "sign", "#", "$", "\t", "é"]


def _smooth(rng, depth=0):
    if depth >= 3 or rng.random() < 0.25:
        return str(rng.choice(["x", f"{rng.uniform(-2, 2):.3f}", "x^2", "(0.5*x)"]))
    a, b = _smooth(rng, depth + 1), _smooth(rng, depth + 1)
    return [f"({a} + {b})", f"({a} * {b})", f"sin({a})", f"cos({a})", f"exp(0.3*sin({a}))",
            f"sqrt(1 + ({a})^2)", f"log(2 + cos({a}))", f"({a} - {b})"][rng.integers(0, 8)]


def test_criterion_13_parser():
    rng = np.random.default_rng(13)
    crashes = 0
    for _ in range(1000):
        text = "".join(rng.choice(FUZZ_ALPHABET, size=rng.integers(0, 30)))
        try:
            ex.parse(text)
        except ParseError:
            pass
        except Exception:  # noqa: BLE001 - anything else is a crash
            crashes += 1
    h = 1e-5
    worst = 0.0
    for _ in range(200):
        e = ex.parse(_smooth(rng))
        d = ex.differentiate(e, "x")
        p = rng.uniform(-1, 1)
        fd = (ex.evaluate(e, x=p + h) - ex.evaluate(e, x=p - h)) / (2 * h)
        worst = max(worst, abs(ex.evaluate(d, x=p) - fd) / (1 + abs(ex.evaluate(e, x=p))))
    verdict(13, crashes == 0 and worst < 1e-6,
            f"{crashes} crashes in 1000 fuzzed inputs; worst derivative error {worst:.1e} over 200 expressions (< 1e-6)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
