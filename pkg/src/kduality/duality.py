"""Order-k duals of grid generators.

The pairing kernel is ``f_k(x, y) = (x - y)_+^{k-1} / Gamma(k)``.  Its grid
version ``F`` maps cell densities in ``x`` to functions of ``y`` and is
upper triangular, so the dual ``L^D = F L' F^{-1}`` costs two triangular
solves.  Closed-form duals for diffusions and jump kernels are built here
too, together with numeric checks of monotonicity of order k and of the
self-duality conditions for martingale jump generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import rgamma

from . import expr as ex
from .errors import DomainError, KernelNegative, NegativeKernel, OrderNonPositive, SmoothnessUnavailable
from .fractional import Grid, gl_matrix, integral_matrix, power_kernel, write_columns
from .model import (
    GeneratorMatrix,
    GeneratorSpec,
    NoJump,
    StableLike,
    SymmetricStable,
    density_rows,
    diffusion_drift_matrix,
    moments,
)


def centred_shift(k: float) -> int:
    """Node shift that keeps the GL stencil of order `k` roughly centred."""
    if k <= 1:
        return 0
    if k <= 2:
        return 1
    return int(math.floor(k / 2 + 0.5))


def order_k_matrix(k: float, grid: Grid, side="plus", closure="zero") -> np.ndarray:
    """GL derivative of order ``k > 0`` (shifted for centring) on `grid`."""
    return gl_matrix(k, grid.n, grid.h, side, centred_shift(k), closure)


@dataclass(frozen=True)
class FOperator:
    """Grid version of ``Q -> int (x - y)_+^{k-1} / Gamma(k) Q(dx)``."""

    k: float
    grid: Grid
    f_matrix: np.ndarray

    def apply(self, q) -> np.ndarray:
        return self.f_matrix @ np.asarray(q, dtype=float)

    def solve(self, g) -> np.ndarray:
        """``F^{-1} g`` by back substitution."""
        return solve_triangular(self.f_matrix, np.asarray(g, dtype=float), lower=False)

    def conjugate(self, m: np.ndarray) -> np.ndarray:
        """``F m F^{-1}``."""
        w = self.f_matrix
        # X W = W m  <=>  W' X' = (W m)'
        return solve_triangular(w.T, (w @ m).T, lower=True).T


def build_f_operator(k: float, grid: Grid) -> FOperator:
    """F operator of order `k`; at ``k = 1`` the kernel is the step ``x >= y``.

    Orders up to 2 use exact product integration over cells.  Above 2 those
    weights have a generating function with zeros inside the unit disc and
    the triangular inverse blows up exponentially in ``n``, so the Grünwald
    weights of ``(1 - z)^{-k}`` (same kernel to first order, inverse equal to
    the GL derivative) are used instead.
    """
    if not k > 0:
        raise OrderNonPositive(f"duality order must be positive, got {k}")
    if k <= 2:
        w = integral_matrix(k, grid.n, grid.h, "plus")
    else:
        w = gl_matrix(-k, grid.n, grid.h, "plus").T
    assert np.all(np.diag(w) > 0)
    return FOperator(float(k), grid, w)


def dual_matrix(L: GeneratorMatrix, F: FOperator) -> GeneratorMatrix:
    """``F L' F^{-1}``; the transpose is the adjoint for the pairing ``h sum f mu``."""
    if L.grid != F.grid:
        raise ValueError("generator and F operator live on different grids")
    return GeneratorMatrix(L.grid, F.conjugate(L.m.T))


def intertwining_residual(LD: GeneratorMatrix, F: FOperator, L: GeneratorMatrix) -> float:
    """``max |L^D F - F L'|``."""
    return float(np.abs(LD.m @ F.f_matrix - F.f_matrix @ L.m.T).max())


def local_coefficients(m: GeneratorMatrix, margin=0.1, band: int | None = 1):
    """Killing, drift and diffusion rates of the interior rows of `m`.

    Only entries within `band` of the diagonal are used (``None`` takes whole
    rows).  Truncation of the original generator leaves O(1) entries in the
    edge columns of a dual matrix, which would swamp full-row moments.
    """
    mat = m.m
    if band is not None:
        off = np.abs(np.arange(mat.shape[0])[:, None] - np.arange(mat.shape[1])[None, :])
        mat = np.where(off <= band, mat, 0.0)
    c, b, a = moments(mat, m.grid)
    idx = m.grid.window(margin)
    return m.grid.nodes[idx], c[idx], b[idx], a[idx]


@dataclass(frozen=True)
class AnalyticDual:
    a_dual: ex.Expr
    b_dual: ex.Expr
    killing: ex.Expr | None = None
    jump_dual: np.ndarray | None = None  # rows y, columns x


@dataclass
class DualGeneratorResult:
    matrix: GeneratorMatrix
    analytic: AnalyticDual | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def monotone_ok(self) -> bool:
        return bool(self.diagnostics.get("monotone_ok", True))

    @property
    def subMarkov(self) -> bool:
        return bool(self.diagnostics.get("subMarkov", False))

    def write_jump_csv(self, path):
        g = self.matrix.grid
        jd = self.analytic.jump_dual if self.analytic is not None else None
        if jd is None:
            jd = np.zeros((g.n, g.n))
        header = ["y"] + ["%.12g" % v for v in g.nodes]
        write_columns(path, header, [g.nodes] + [jd[:, j] for j in range(g.n)])


def _eval(e, **env):
    try:
        return ex.evaluate_on(e, **env)
    except DomainError as err:
        raise SmoothnessUnavailable(f"coefficient or derivative not evaluable: {err}") from err


def _diffusion_increment_kernel(a, b, k, xs, ys):
    """``B_k + A_k`` on rows ``y`` and columns ``x``, zero where ``x <= y``."""
    da, d2a, db = (ex.differentiate(a, "x"), ex.nth_derivative(a, "x", 2), ex.differentiate(b, "x"))
    X = xs[None, :]
    Y = ys[:, None]
    u = X - Y
    pos = u > 0
    up = np.where(pos, u, 1.0)
    bx, ax = _eval(b, x=X, shape_like=u), _eval(a, x=X, shape_like=u)
    by, dby = _eval(b, x=Y, shape_like=u), _eval(db, x=Y, shape_like=u)
    ay, day, d2ay = (_eval(e, x=Y, shape_like=u) for e in (a, da, d2a))
    out = np.zeros_like(u)
    if rgamma(k - 1) != 0:
        out += (bx - by - dby * u) * up ** (k - 2) * rgamma(k - 1)
    if rgamma(k - 2) != 0:
        out += (ax - ay - day * u - 0.5 * d2ay * u**2) * up ** (k - 3) * rgamma(k - 2)
    return np.where(pos, out, 0.0)


def dual_diffusion_analytic(a, b, k: float, grid: Grid, tol_limit=1e-2, tol_monotone=1e-8,
                            margin=0.1, enlarge=1.5) -> DualGeneratorResult:
    """Closed-form dual of ``a g'' + b g'`` of order `k`.

    The dual is ``a g'' - (b + (k-2) a') g' + c g + int_y^inf g(x) J(x, y) dx``
    with ``c = (k-1) b' + (k-1)(k-2) a''/2`` and ``J`` the order-k
    x-derivative of ``B_k + A_k``.  Reciprocal gamma factors vanish at
    their poles, which reproduces the integer cases.  The limit of the
    order ``k-1`` derivative is evaluated at the right edge of an enlarged
    grid and compared with ``-c``.

    Parameters
    ----------
    a, b : Expr or str
        Coefficients in ``x``.
    k : float
        Duality order.
    grid : Grid
        Working grid; the dual is returned on it.
    """
    if not k > 0:
        raise OrderNonPositive(f"duality order must be positive, got {k}")
    a, b = ex.as_expr(a), ex.as_expr(b)
    da = ex.differentiate(a, "x")
    b_dual = ex.neg(ex.add(b, ex.mul(ex.Num(k - 2.0), da)))
    killing = ex.add(
        ex.mul(ex.Num(k - 1.0), ex.differentiate(b, "x")),
        ex.mul(ex.Num(0.5 * (k - 1) * (k - 2)), ex.nth_derivative(a, "x", 2)),
    )
    x = grid.nodes
    n, h = grid.n, grid.h
    a_y = _eval(a, x=x, shape_like=x)
    bd_y = _eval(b_dual, x=x, shape_like=x)
    c_y = _eval(killing, x=x, shape_like=x)

    H = _diffusion_increment_kernel(a, b, k, x, x)
    J = H @ order_k_matrix(k, grid).T  # derivative along x (columns)
    J = np.triu(J)
    quad = h * J
    quad[np.diag_indices(n)] *= 0.5
    m = diffusion_drift_matrix(a_y, bd_y, grid, upwind=False) + np.diag(c_y) + quad

    # limit condition on an enlarged grid
    big = grid.enlarged(enlarge)
    Hb = _diffusion_increment_kernel(a, b, k, big.nodes, x)
    # unshifted stencil: the last node must not reach beyond the grid
    edge = Hb[:, -1] if k == 1 else (Hb @ gl_matrix(k - 1, big.n, big.h).T)[:, -1]
    target = -c_y
    win = grid.window(margin)
    gap = edge[win] - target[win]
    residual = float(np.abs(gap).max())
    jwin = J[np.ix_(win, win)]
    jscale = max(1.0, float(np.abs(jwin).max()))
    diagnostics = {
        "limit_condition_residual": residual,
        "limit_ok": residual <= tol_limit,
        "subMarkov": bool(residual > tol_limit and np.all(gap <= tol_limit)),
        "monotone_ok": bool(jwin.min() >= -tol_monotone * jscale),
        "jump_min": float(jwin.min()),
    }
    analytic = AnalyticDual(a, b_dual, killing, J)
    return DualGeneratorResult(GeneratorMatrix(grid, m), analytic, diagnostics)


def _jump_bracket(nu_vals, grid: Grid, k: float, y_nodes=None):
    """``K(z, y)`` of the order-k jump dual on rows ``z`` and columns ``y``.

    ``K = int nu(z, w) (w - y)_+^{k-1}/Gamma(k) dw
    + (m(y) - m(z)) (z - y)_+^{k-1}/Gamma(k)`` with ``m`` the row mass.
    """
    h = grid.h
    w = integral_matrix(k, grid.n, h, "plus")
    t1 = nu_vals @ w.T
    mass = h * nu_vals.sum(axis=1)
    x = grid.nodes
    pk = power_kernel(k, x[:, None] - x[None, :])
    np.fill_diagonal(pk, 0.0)
    t2 = (mass[None, :] - mass[:, None]) * pk
    return t1, t2, mass


def dual_jump_analytic(nu, k: float, grid: Grid, tol_boundary=1e-2, tol_monotone=1e-8,
                       margin=0.1, enlarge=1.5) -> DualGeneratorResult:
    """Closed-form dual of the jump generator ``int (g(z) - g(x)) nu(x, z) dz``.

    Returns ``L^D g(y) = -m(y) g(y) + int g(z) J(y, z) dz`` where ``J`` is the
    order-k z-derivative of the bracket from `_jump_bracket`.  Diagnostics
    cover nonnegativity of ``J`` (monotonicity of the kernel function) and
    the two boundary limits, evaluated at the ends of an enlarged grid.
    """
    if not k > 0:
        raise OrderNonPositive(f"duality order must be positive, got {k}")
    nu = ex.as_expr(nu)
    try:
        nu_vals = density_rows(nu, grid)
    except NegativeKernel as err:
        raise KernelNegative(str(err)) from err
    h, n = grid.h, grid.n
    t1, t2, mass = _jump_bracket(nu_vals, grid, k)
    D = order_k_matrix(k, grid)
    J = (D @ (t1 + t2)).T  # rows y, columns z
    m = -np.diag(mass) + h * J

    big = grid.enlarged(enlarge)
    nb = density_rows(nu, big)
    b1, b2, bmass = _jump_bracket(nb, big, k)
    emb = big.embed_indices(grid)
    ys = emb[grid.window(margin)]
    d = np.eye(big.n) if k == 1 else gl_matrix(k - 1, big.n, big.h)
    lo = (d @ b1)[0, ys]
    # upper limit: int nu(z, dw) [(w-y)_+^{k-1} - (z-y)^{k-1}] / Gamma(k)
    pk = power_kernel(k, big.nodes[:, None] - big.nodes[None, :])
    upper = b1 - bmass[:, None] * pk
    hi = (d @ upper)[-1, ys]
    res1 = float(np.abs(lo).max())
    res2 = float(np.abs(hi).max())
    win = grid.window(margin)
    jwin = J[np.ix_(win, win)]
    jscale = max(1.0, float(np.abs(jwin).max()))
    diagnostics = {
        "boundary_lower_residual": res1,
        "boundary_upper_residual": res2,
        "limit_condition_residual": max(res1, res2),
        "limit_ok": max(res1, res2) <= tol_boundary,
        "subMarkov": bool(res1 <= tol_boundary and res2 > tol_boundary and np.all(hi <= tol_boundary)),
        "monotone_ok": bool(jwin.min() >= -tol_monotone * jscale),
        "jump_min": float(jwin.min()),
    }
    analytic = AnalyticDual(ex.ZERO, ex.ZERO, None, J)
    return DualGeneratorResult(GeneratorMatrix(grid, m), analytic, diagnostics)


def jump_dual_order1_direct(nu, grid: Grid) -> np.ndarray:
    """Order-1 dual jump density by direct quadrature of the mirrored form.

    ``J(y, z) = 1_{z<y} int_{w>=y} d_1 nu(z, w) dw - 1_{z>=y} int_{w<y} d_1 nu(z, w) dw``
    with the symbolic x-derivative of `nu`.  Serves as an independent oracle.
    """
    nu = ex.as_expr(nu)
    dnu = ex.differentiate(nu, "x")
    x = grid.nodes
    vals = ex.evaluate_on(dnu, x=x[:, None], z=x[None, :])  # rows z, cols w
    vals = np.broadcast_to(vals, (grid.n, grid.n))
    h = grid.h
    # trapezoid cumulative sums along w
    right = np.zeros_like(vals)  # int_{w >= w_j}
    seg = 0.5 * h * (vals[:, 1:] + vals[:, :-1])
    right[:, :-1] = np.cumsum(seg[:, ::-1], axis=1)[:, ::-1]
    left = np.zeros_like(vals)  # int_{w < w_j}
    left[:, 1:] = np.cumsum(seg, axis=1)
    z_idx = np.arange(grid.n)[None, :]
    y_idx = np.arange(grid.n)[:, None]
    # out[y, z]
    return np.where(z_idx < y_idx, right.T, -left.T)


@dataclass
class MonotoneReport:
    k: float
    t: float
    min_derivative: float
    tol: float
    monotone: bool
    edge_upper: float
    edge_lower: float
    edge_upper_dev: float
    edge_lower_dev: float
    derivative: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)


def _x_derivative(g, order, h):
    """Order-`order` derivative along axis 0: central differences when integer."""
    if order == 0:
        return g.copy()
    if float(order).is_integer():
        out = g.copy()
        for _ in range(int(order) // 2):
            nxt = np.full_like(out, np.nan)
            nxt[1:-1] = (out[2:] - 2 * out[1:-1] + out[:-2]) / h**2
            out = nxt
        if int(order) % 2:
            nxt = np.full_like(out, np.nan)
            nxt[1:-1] = (out[2:] - out[:-2]) / (2 * h)
            out = nxt
        return out
    n = g.shape[0]
    if order > 0:
        mat = gl_matrix(order, n, h, "plus", centred_shift(order))
    else:
        mat = gl_matrix(order, n, h, "plus")
    return mat @ g


def check_monotone_order_k(L: GeneratorMatrix, k: float, t: float, tol=None, window=None,
                           margin=0.1) -> MonotoneReport:
    """Numerical check of stochastic monotonicity of order `k` at time `t`.

    Forms ``g_y(x) = sum_z (z - y)_+^{k-1} / Gamma(k) P_t(x, z)`` and its
    order-k x-derivative, whose minimum over the report window should be
    nonnegative.  The order ``k-1`` derivative at the window edges is
    reported against the limits 1 (right) and 0 (left).

    Parameters
    ----------
    window : (lo, hi), optional
        Report window.  Defaults to the interior window of ``L.grid``.  Build
        `L` on a larger grid than the window so that boundary losses do not
        reach it.
    """
    from .evolution import transition

    if not t > 0:
        raise ValueError("monotonicity check needs t > 0")
    if not k > 0:
        raise OrderNonPositive(f"order must be positive, got {k}")
    grid = L.grid
    x = grid.nodes
    if window is None:
        inner = x[grid.window(margin)]
        lo, hi = inner[0], inner[-1]
    else:
        lo, hi = window
    xmask = (x >= lo - 1e-12) & (x <= hi + 1e-12)
    span = hi - lo
    ymask = (x >= lo + margin * span - 1e-12) & (x <= hi - margin * span + 1e-12)
    P = transition(L, t)
    kern = power_kernel(k, x[:, None] - x[None, ymask])  # rows z, cols y
    G = P @ kern  # rows x, cols y
    D = _x_derivative(G, k, grid.h)
    block = D[xmask]
    dmin = float(np.nanmin(block))
    if tol is None:
        tol = 1e-6 * max(1.0, float(np.abs(G[xmask]).max()))
    E = _x_derivative(G, k - 1, grid.h) if k != 1 else G
    i_hi = np.flatnonzero(xmask)[-1]
    i_lo = np.flatnonzero(xmask)[0]
    up, down = E[i_hi], E[i_lo]
    return MonotoneReport(
        k=k, t=t, min_derivative=dmin, tol=float(tol), monotone=dmin >= -tol,
        edge_upper=float(up.min()), edge_lower=float(np.abs(down).max()),
        edge_upper_dev=float(np.abs(up - 1).max()), edge_lower_dev=float(np.abs(down).max()),
        derivative=D, x=x, y=x[ymask],
    )


def check_self_dual(nu, order: int, grid: Grid) -> float:
    """Residual of the density form of the self-duality condition.

    Order 1: ``max |d_1 nu(y, z) + d_1 nu(z, y)|``; order 2:
    ``max |d_1^2 nu(y, z) - d_1^2 nu(z, y)|``, with ``d_1`` the derivative in
    the starting point, taken by central differences on the grid.  Both
    vanish for ``nu(x, z) = phi(z - x)`` with even ``phi``.
    """
    if order not in (1, 2):
        raise ValueError("self-duality is checked for orders 1 and 2")
    nu_vals = density_rows(ex.as_expr(nu), grid)  # rows start point
    h = grid.h
    if order == 1:
        d = (nu_vals[2:, 1:-1] - nu_vals[:-2, 1:-1]) / (2 * h)
        return float(np.abs(d + d.T).max())
    d = (nu_vals[2:, 1:-1] - 2 * nu_vals[1:-1, 1:-1] + nu_vals[:-2, 1:-1]) / h**2
    return float(np.abs(d - d.T).max())


_CHECK_GRID = Grid(-10.0, 10.0, 200)


def dual_spec(spec: GeneratorSpec, k: float, grid: Grid | None = None) -> GeneratorSpec:
    """Closed-form dual as a new spec where it stays in the same family.

    Diffusions whose dual has no jump and no killing part map to
    ``(a, -(b + (k-2) a'))``.  Pure stable-like generators of order ``k``
    map to the opposite side, and symmetric stable generators with a
    constant scale are their own duals.  Anything else raises ``ValueError``; use
    `dual_matrix` instead.  Absence of jump and killing terms is checked on
    `grid` (a default grid when omitted).
    """
    if spec.time_dependent:
        raise ValueError("closed-form duals are implemented for time-homogeneous specs")
    if isinstance(spec.jump, NoJump):
        grid = grid or _CHECK_GRID
        res = dual_diffusion_analytic(spec.a, spec.b, k, grid)
        jd = res.analytic.jump_dual
        c = ex.evaluate_on(res.analytic.killing, shape_like=grid.nodes, x=grid.nodes)
        if np.abs(jd).max() > 1e-9 or np.abs(c).max() > 1e-12:
            raise ValueError("dual has jump or killing terms; no closed-form spec")
        da = ex.differentiate(spec.a, "x")
        return GeneratorSpec(spec.a, ex.neg(ex.add(spec.b, ex.mul(ex.Num(k - 2.0), da))))
    zero = ex.ZERO
    if spec.a != zero or spec.b != zero:
        raise ValueError("closed-form stable-like duals need a pure stable-like generator")
    if isinstance(spec.jump, StableLike) and abs(spec.jump.beta - k) < 1e-12:
        side = "minus" if spec.jump.side == "plus" else "plus"
        return GeneratorSpec(jump=StableLike(spec.jump.beta, side, spec.jump.scale))
    if isinstance(spec.jump, SymmetricStable) and not ex.free_vars(spec.jump.scale):
        # translation invariant and reflection symmetric
        return spec
    raise ValueError("no closed-form dual for this spec; use dual_matrix")
