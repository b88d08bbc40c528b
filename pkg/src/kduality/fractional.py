"""Fractional integrals and derivatives on a uniform grid.

Conventions
-----------
* ``plus`` derivative ``d^b/dx^b`` looks to the left (history on ``x' < x``);
  its Fourier symbol is ``(i p)^b``.  ``minus`` derivative ``d^b/d(-x)^b``
  looks to the right.
* ``I_k^+`` has kernel ``(x - y)_+^{k-1} / Gamma(k)`` and integrates the
  measure to the right of ``y``; it is inverted by the ``minus`` derivative.
  ``I_k^-`` mirrors this.
* Densities live on cells.  For ``I_k^+`` cell ``j`` is ``[x_j, x_{j+1})``,
  for ``I_k^-`` it is ``(x_{j-1}, x_j]``.  Integrating the kernel exactly
  against piecewise-constant densities makes the matrices triangular with
  diagonal ``h^k / Gamma(k + 1)``.
* Functions are zero-extended outside the grid unless a closure says
  otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gamma, gammaln

from .errors import GridError, OrderNonPositive, OrderOutOfRange, SkewnessOutOfRange

SIDES = ("plus", "minus", "symmetric")


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``x_i = x_min + i*h`` with ``n`` nodes."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise GridError("grid bounds must be finite")
        if not self.x_min < self.x_max:
            raise GridError(f"x_min={self.x_min} must be below x_max={self.x_max}")
        if int(self.n) != self.n or self.n < 8:
            raise GridError(f"grid needs an integer n >= 8, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def h(self) -> float:
        return (self.x_max - self.x_min) / (self.n - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @cached_property
    def nodes(self) -> np.ndarray:
        x = self.x_min + self.h * np.arange(self.n)
        x[-1] = self.x_max
        x.flags.writeable = False
        return x

    def window(self, margin: float = 0.1) -> np.ndarray:
        """Boolean mask of nodes at least ``margin * length`` from both edges."""
        d = margin * self.length
        x = self.nodes
        eps = 1e-9 * self.h
        return (x >= self.x_min + d - eps) & (x <= self.x_max - d + eps)

    def mask_between(self, lo: float, hi: float) -> np.ndarray:
        eps = 1e-9 * self.h
        return (self.nodes >= lo - eps) & (self.nodes <= hi + eps)

    def enlarged(self, factor: float = 1.5) -> "Grid":
        """Grid with the same spacing and centre covering ``factor`` times the length."""
        cells = int(round((self.n - 1) * factor))
        extra = cells - (self.n - 1)
        left = extra // 2
        right = extra - left
        return Grid(self.x_min - left * self.h, self.x_max + right * self.h, cells + 1)

    def embed_indices(self, inner: "Grid") -> np.ndarray:
        """Indices of `inner`'s nodes inside this (same-spacing) grid."""
        offset = (inner.x_min - self.x_min) / self.h
        start = int(round(offset))
        if abs(offset - start) > 1e-6 or abs(inner.h - self.h) > 1e-9 * self.h:
            raise GridError("grids are not aligned")
        if start < 0 or start + inner.n > self.n:
            raise GridError("inner grid is not contained in this grid")
        return np.arange(start, start + inner.n)

    def index_of(self, x: float) -> int:
        i = int(round((x - self.x_min) / self.h))
        return min(max(i, 0), self.n - 1)


@dataclass(frozen=True)
class GridFn:
    """Values on a grid: point values (``kind='point'``) or cell densities."""

    grid: Grid
    values: np.ndarray
    kind: str = "point"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise GridError(f"expected {self.grid.n} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("grid function has non-finite entries")
        if self.kind not in ("point", "density"):
            raise GridError(f"unknown grid function kind {self.kind!r}")
        object.__setattr__(self, "values", v)

    def to_csv(self, path, header=("x", "value")):
        write_columns(path, header, [self.grid.nodes, self.values])


@dataclass(frozen=True)
class FracOrder:
    beta: float
    side: str = "plus"

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta <= 0:
            raise OrderNonPositive(f"fractional order must be positive, got {self.beta}")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {self.side!r}")


def fmt(v) -> str:
    return "%.12g" % v


def write_columns(path, header, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


# ---------------------------------------------------------------------------
# Grünwald–Letnikov


def gl_weights(order: float, m: int) -> np.ndarray:
    """First ``m`` coefficients of ``(1 - z)^order``."""
    w = np.empty(m)
    w[0] = 1.0
    for j in range(1, m):
        w[j] = w[j - 1] * (j - 1 - order) / j
    return w


def gl_matrix(order, n, h, side="plus", shift=0, closure="zero"):
    """Dense matrix of the Grünwald–Letnikov derivative of real `order`.

    Row ``i`` of the ``plus`` matrix is ``h^-order * sum_m w_m f_{i-m+shift}``;
    the ``minus`` matrix is its mirror image (reversed rows and columns),
    which is the transpose under zero extension.  With ``closure='zero'`` nodes
    beyond the grid are dropped (zero extension).  With ``closure='lump'``
    their weights are moved to the nearest edge node, i.e. the function is
    extended by its edge value, which keeps row sums exactly zero.
    """
    if side == "minus":
        return gl_matrix(order, n, h, "plus", shift, closure)[::-1, ::-1].copy()
    if side != "plus":
        raise ValueError(f"one-sided GL needs side plus/minus, got {side!r}")
    w = gl_weights(order, n + shift + 1)
    i = np.arange(n)[:, None]
    c = np.arange(n)[None, :]
    m = i + shift - c
    mat = np.where(m >= 0, w[np.clip(m, 0, None)], 0.0)
    if closure == "lump":
        # weights for nodes left of x_0 belong to m > i + shift
        total = np.cumsum(w)
        # sum over the whole infinite sequence is 0 for order > 0
        mat[:, 0] += -total[np.arange(n) + shift] if order > 0 else 0.0
        if shift > 0:
            # row i reaches i + shift; the overhang sits in the last rows
            for r in range(n - shift, n):
                over = np.arange(n, r + shift + 1)
                mat[r, -1] += w[r + shift - over].sum()
    elif closure != "zero":
        raise ValueError(f"unknown closure {closure!r}")
    return mat * h ** (-order)


def centered_weights(order: float, m: int) -> np.ndarray:
    """Weights ``g_0..g_{m-1}`` of the fractional centred difference.

    ``g_j = (-1)^j Gamma(order+1) / (Gamma(order/2-j+1) Gamma(order/2+j+1))``,
    symmetric in ``j``; they sum to zero over all integers.
    """
    g = np.empty(m)
    g[0] = math.exp(gammaln(order + 1) - 2 * gammaln(order / 2 + 1))
    for j in range(m - 1):
        g[j + 1] = g[j] * (j - order / 2) / (order / 2 + j + 1)
    return g


def riesz_centered_matrix(order, n, h, closure="zero"):
    """Fractional centred difference approximating ``|d/dx|^order``, order in (0, 2]."""
    g = centered_weights(order, n + 1)
    idx = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :])
    mat = g[idx]
    if closure == "lump":
        # sum_{j>=1} g_j = -g_0/2, so the tail from s on is -g_0/2 - sum_{1<=j<s} g_j
        head = np.concatenate(([0.0], np.cumsum(g[1:])))
        tail = -g[0] / 2 - head  # tail[s] = sum_{j >= s+1}... shifted below
        rows = np.arange(n)
        mat[:, 0] += tail[rows]  # nodes i - j < 0  <=>  j >= i + 1
        mat[:, -1] += tail[n - 1 - rows]
    elif closure != "zero":
        raise ValueError(f"unknown closure {closure!r}")
    return mat * h ** (-order)


def derivative_matrix(order: FracOrder, n: int, h: float, closure: str = "zero") -> np.ndarray:
    """Matrix of ``d^b/dx^b``, ``d^b/d(-x)^b`` or ``|d/dx|^b`` on `n` nodes.

    One-sided orders in (0, 1] use plain GL weights, orders in (1, 2] the
    GL weights shifted by one node (second-order difference at 2).  The
    symmetric operator is ``(D_+ + D_-) / (2 cos(pi b / 2))``; at ``b = 1``
    where that formula degenerates the fractional centred difference is used.
    """
    b = order.beta
    if not 0 < b <= 2:
        raise OrderOutOfRange(f"derivative order must lie in (0, 2], got {b}")
    if order.side == "symmetric":
        if abs(b - 1.0) < 1e-12:
            return riesz_centered_matrix(1.0, n, h, closure)
        plus = derivative_matrix(FracOrder(b, "plus"), n, h, closure)
        minus = derivative_matrix(FracOrder(b, "minus"), n, h, closure)
        return (plus + minus) / (2.0 * math.cos(math.pi * b / 2))
    shift = 1 if b > 1 else 0
    return gl_matrix(b, n, h, order.side, shift, closure)


def frac_derivative(order: FracOrder, f: GridFn) -> GridFn:
    """Apply `derivative_matrix` (zero extension) to the point values of `f`."""
    g = f.grid
    mat = derivative_matrix(order, g.n, g.h)
    return GridFn(g, mat @ f.values, "point")


def gl_apply(values, order, h, side="plus", axis=-1):
    """Unshifted GL derivative of any real order along `axis`, zero-extended.

    Negative orders give the Grünwald fractional integral.  Used for
    diagnostics where the order is not restricted to (0, 2].
    """
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    n = v.shape[-1]
    if order == 0:
        return np.moveaxis(v.copy(), -1, axis)
    mat = gl_matrix(order, n, h, side)
    return np.moveaxis(v @ mat.T, -1, axis)


def integral_matrix(k: float, n: int, h: float, side: str = "plus", truncate_to_grid=False):
    """Product-integration matrix of ``I_k^side`` acting on cell densities.

    Entry ``(i, j)`` integrates ``(x - y_i)_+^{k-1} / Gamma(k)`` exactly over
    cell ``j``.  With ``truncate_to_grid`` the cell that sticks out of the
    grid (the last one for ``plus``, the first for ``minus``) is dropped.
    """
    if not k > 0:
        raise OrderNonPositive(f"integration order must be positive, got {k}")
    if side not in ("plus", "minus"):
        raise ValueError(f"fractional integrals are one-sided, got {side!r}")
    d = np.arange(n)
    # G(u) = u_+^k / Gamma(k+1); weights depend on j - i only
    big = np.exp(k * np.log(np.maximum(d, 1)) - gammaln(k + 1)) * (d > 0)
    big_next = np.exp(k * np.log(d + 1.0) - gammaln(k + 1))
    band = (big_next - big) * h**k
    diff = d[None, :] - d[:, None]
    mat = np.where(diff >= 0, band[np.clip(diff, 0, None)], 0.0)
    if truncate_to_grid:
        mat[:, -1] = 0.0
    if side == "minus":
        mat = mat.T.copy()
    return mat


def frac_integral(order: FracOrder, q: GridFn, truncate_to_grid: bool = False) -> GridFn:
    """``(I_k^side q)(x_i)`` for a density `q` given cell by cell."""
    if q.kind != "density":
        raise ValueError("frac_integral expects a density grid function")
    g = q.grid
    mat = integral_matrix(order.beta, g.n, g.h, order.side, truncate_to_grid)
    return GridFn(g, mat @ q.values, "point")


def power_kernel(k: float, x) -> np.ndarray:
    """``x_+^{k-1} / Gamma(k)``, with ``x_+^0`` the right-continuous step."""
    x = np.asarray(x, dtype=float)
    if k == 1:
        return (x >= 0).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, np.power(np.where(x > 0, x, 1.0), k - 1) / gamma(k), 0.0)
    return out


def stable_gamma_range(beta: float) -> float:
    if 0 < beta < 1:
        return beta
    if 1 < beta < 2:
        return 2 - beta
    raise OrderOutOfRange(f"stable index must lie in (0,1) or (1,2), got {beta}")


def fundamental_solution(beta: float, gamma_: float, sigma: float, grid: Grid) -> GridFn:
    """Sampled fundamental solution of the stable generator ``L_{beta,gamma,sigma}``.

    ``f(x) = -Gamma(1-beta)/(sigma*pi) * [sin(pi(beta+gamma)/2) x_+^{beta-1}
    + sin(pi(beta-gamma)/2) x_-^{beta-1}]``.  For ``beta < 1`` the value at a
    node sitting on 0 is replaced by the average over its cell.
    """
    lim = stable_gamma_range(beta)
    if abs(gamma_) > lim + 1e-12:
        raise SkewnessOutOfRange(f"|gamma| must be <= {lim} for beta={beta}, got {gamma_}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = grid.nodes
    c = -gamma(1 - beta) / (sigma * math.pi)
    cp = c * math.sin(math.pi * (beta + gamma_) / 2)
    cm = c * math.sin(math.pi * (beta - gamma_) / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        xp = np.where(x > 0, np.abs(x), 1.0) ** (beta - 1)
        xm = np.where(x < 0, np.abs(x), 1.0) ** (beta - 1)
    vals = np.where(x > 0, cp * xp, 0.0) + np.where(x < 0, cm * xm, 0.0)
    if beta < 1:
        zero = np.abs(x) < 1e-9 * grid.h
        half = grid.h / 2
        vals[zero] = (cp + cm) * half**beta / (beta * grid.h)
    return GridFn(grid, vals, "point")


def integration_by_parts_residual(phi_plus: GridFn, phi_minus: GridFn, k: float) -> float:
    """``|int phi_+ d^k phi_-/dy^k - int phi_- d^k phi_+/d(-x)^k|`` on the grid.

    `phi_plus` should lie in the image of ``I_k^+`` and `phi_minus` in that of
    ``I_k^-``; integrals are ``h``-weighted sums.
    """
    g = phi_plus.grid
    if phi_minus.grid != g:
        raise GridError("both functions must share a grid")
    dp = derivative_matrix(FracOrder(k, "plus"), g.n, g.h) if k <= 2 else gl_matrix(k, g.n, g.h, "plus")
    dm = derivative_matrix(FracOrder(k, "minus"), g.n, g.h) if k <= 2 else gl_matrix(k, g.n, g.h, "minus")
    lhs = g.h * phi_plus.values @ (dp @ phi_minus.values)
    rhs = g.h * phi_minus.values @ (dm @ phi_plus.values)
    return float(abs(lhs - rhs))
