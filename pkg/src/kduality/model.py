"""Generator specifications and their discretisation on a grid.

The diffusion convention is ``L g = a g'' + b g'`` (no factor 1/2).  Jump
parts are given by a density ``nu(x, z)`` or as stable-like fractional
operators ``-+ a(x) d^beta/d(+-x)^beta`` and ``-a(x) |d/dx|^beta``.

Boundary treatment: diffusion and drift stencils drop neighbours outside the
grid (functions are zero-extended, which kills mass at the edges).  Density
jumps only count on-grid targets, with the diagonal set so rows sum to zero.
Fractional stencils are zero-extended too by default; ``closure='lump'``
instead moves the weight of off-grid nodes onto the edge nodes, which makes
their rows exactly conservative but piles mass on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as ex
from .errors import BetaOutOfRange, NegativeDiffusion, NegativeKernel, PositivityViolation
from .fractional import FracOrder, Grid, GridFn, derivative_matrix, write_columns


@dataclass(frozen=True)
class NoJump:
    pass


@dataclass(frozen=True)
class DensityJump:
    """Jumps with intensity ``nu(x, z) dz``; `compensated` subtracts ``g'(x)(z - x)``."""

    nu: ex.Expr
    compensated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "nu", ex.as_expr(self.nu))


@dataclass(frozen=True)
class StableLike:
    """``-+ scale(x) d^beta/d(+-x)^beta``: minus sign for beta <= 1, plus above."""

    beta: float
    side: str = "plus"
    scale: ex.Expr = ex.ONE

    def __post_init__(self):
        if not 0 < self.beta <= 2:
            raise BetaOutOfRange(f"stable-like index must lie in (0, 2], got {self.beta}")
        if self.side not in ("plus", "minus"):
            raise ValueError(f"side must be plus or minus, got {self.side!r}")
        object.__setattr__(self, "scale", ex.as_expr(self.scale))

    @property
    def sign(self) -> float:
        return 1.0 if self.beta > 1 else -1.0


@dataclass(frozen=True)
class SymmetricStable:
    """``-scale(x) |d/dx|^beta``."""

    beta: float
    scale: ex.Expr = ex.ONE

    def __post_init__(self):
        if not 0 < self.beta <= 2:
            raise BetaOutOfRange(f"stable index must lie in (0, 2], got {self.beta}")
        object.__setattr__(self, "scale", ex.as_expr(self.scale))


JumpSpec = NoJump | DensityJump | StableLike | SymmetricStable


@dataclass(frozen=True)
class GeneratorSpec:
    """``L g = a g'' + b g' + jump part``.  Coefficients may use ``t`` when
    `time_dependent` is set."""

    a: ex.Expr = ex.ZERO
    b: ex.Expr = ex.ZERO
    jump: object = field(default_factory=NoJump)
    time_dependent: bool = False

    def __post_init__(self):
        object.__setattr__(self, "a", ex.as_expr(self.a))
        object.__setattr__(self, "b", ex.as_expr(self.b))
        allowed = {"x", "t"} if self.time_dependent else {"x"}
        for name in ("a", "b"):
            extra = ex.free_vars(getattr(self, name)) - allowed
            if extra:
                raise ValueError(f"coefficient {name} uses unsupported variables {sorted(extra)}")

    @property
    def has_jumps(self) -> bool:
        return not isinstance(self.jump, NoJump)

    def with_jump(self, jump) -> "GeneratorSpec":
        return replace(self, jump=jump)


@dataclass(frozen=True)
class GeneratorMatrix:
    grid: Grid
    m: np.ndarray
    conservative_interior: bool = False

    @property
    def scale(self) -> float:
        return float(np.abs(self.m).max()) or 1.0

    def row_sums(self) -> np.ndarray:
        return self.m.sum(axis=1)

    def interior_rows(self, margin=0.1) -> np.ndarray:
        return self.grid.window(margin)

    def off_diagonal_min(self, margin=0.1) -> float:
        off = self.m.copy()
        np.fill_diagonal(off, np.inf)
        return float(off[self.interior_rows(margin)].min())

    def is_conditionally_positive(self, rel_tol=1e-10, margin=0.1) -> bool:
        return self.off_diagonal_min(margin) >= -rel_tol * self.scale

    def is_conservative(self, rel_tol=1e-8, margin=0.1) -> bool:
        sums = self.row_sums()[self.interior_rows(margin)]
        return bool(np.abs(sums).max() <= rel_tol * self.scale)

    def apply(self, g) -> np.ndarray:
        return self.m @ np.asarray(g, dtype=float)

    def __add__(self, other: "GeneratorMatrix") -> "GeneratorMatrix":
        if other.grid != self.grid:
            raise ValueError("generator matrices live on different grids")
        m = GeneratorMatrix(self.grid, self.m + other.m)
        return replace(m, conservative_interior=m.is_conservative())

    def to_csv(self, path):
        x = self.grid.nodes
        header = ["x"] + ["%.12g" % v for v in x]
        write_columns(path, header, [x] + [self.m[:, j] for j in range(self.grid.n)])


def _coef(e, grid, t, name):
    env = {"x": grid.nodes}
    if t is not None:
        env["t"] = t
    return ex.evaluate_on(e, shape_like=grid.nodes, **env)


def diffusion_drift_matrix(a, b, grid: Grid, upwind=True) -> np.ndarray:
    """Tridiagonal stencil of ``a g'' + b g'`` from nodal coefficient arrays.

    Central differences for the drift, switched to upwind on rows where the
    central stencil would produce a negative off-diagonal entry.
    """
    n, h = grid.n, grid.h
    a = np.broadcast_to(np.asarray(a, dtype=float), (n,))
    b = np.broadcast_to(np.asarray(b, dtype=float), (n,))
    lo = a / h**2 - b / (2 * h)
    hi = a / h**2 + b / (2 * h)
    if upwind:
        bad = (lo < 0) | (hi < 0)
        lo = np.where(bad, a / h**2 + np.maximum(-b, 0) / h, lo)
        hi = np.where(bad, a / h**2 + np.maximum(b, 0) / h, hi)
    diag = -(lo + hi)
    m = np.diag(diag)
    idx = np.arange(n - 1)
    m[idx + 1, idx] = lo[1:]
    m[idx, idx + 1] = hi[:-1]
    return m


def density_rows(nu, grid: Grid, t=None) -> np.ndarray:
    """``nu(x_i, x_j)`` on the grid, validated nonnegative."""
    x = grid.nodes
    env = {"x": x[:, None], "z": x[None, :]}
    if t is not None:
        env["t"] = t
    vals = ex.evaluate_on(nu, **env)
    if vals.shape != (grid.n, grid.n):
        vals = np.broadcast_to(vals, (grid.n, grid.n)).copy()
    if vals.min() < -1e-12 * max(1.0, np.abs(vals).max()):
        raise NegativeKernel("jump density takes negative values on the grid")
    return np.maximum(vals, 0.0)


def jump_matrix(nu_vals: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_j h nu_ij (g_j - g_i)`` for on-grid targets."""
    k = grid.h * nu_vals.copy()
    np.fill_diagonal(k, 0.0)
    k[np.diag_indices_from(k)] = -k.sum(axis=1)
    return k


def jump_mean(nu_vals: np.ndarray, grid: Grid) -> np.ndarray:
    x = grid.nodes
    return grid.h * (nu_vals * (x[None, :] - x[:, None])).sum(axis=1)


def discretize(spec: GeneratorSpec, grid: Grid, t: float | None = None, closure: str = "zero") -> GeneratorMatrix:
    """Dense generator matrix of `spec` on `grid` (at time `t` if time dependent).

    `closure` selects the edge treatment of fractional stencils, 'zero' or 'lump'.
    """
    if spec.time_dependent and t is None:
        raise ValueError("time-dependent spec needs a time t")
    a = _coef(spec.a, grid, t if spec.time_dependent else None, "a")
    if a.min() < 0:
        raise NegativeDiffusion(f"diffusion coefficient is negative (min {a.min():.3g})")
    b = _coef(spec.b, grid, t if spec.time_dependent else None, "b")
    jump = spec.jump
    extra = np.zeros((grid.n, grid.n))
    if isinstance(jump, DensityJump):
        nu = density_rows(jump.nu, grid, t if spec.time_dependent else None)
        extra = jump_matrix(nu, grid)
        if jump.compensated:
            b = b - jump_mean(nu, grid)
    elif isinstance(jump, StableLike):
        s = _coef(jump.scale, grid, None, "scale")
        if s.min() < 0:
            raise NegativeDiffusion("stable-like scale is negative")
        d = derivative_matrix(FracOrder(jump.beta, jump.side), grid.n, grid.h, closure=closure)
        extra = jump.sign * s[:, None] * d
    elif isinstance(jump, SymmetricStable):
        s = _coef(jump.scale, grid, None, "scale")
        if s.min() < 0:
            raise NegativeDiffusion("stable scale is negative")
        d = derivative_matrix(FracOrder(jump.beta, "symmetric"), grid.n, grid.h, closure=closure)
        extra = -s[:, None] * d
    m = diffusion_drift_matrix(a, b, grid) + extra
    gm = GeneratorMatrix(grid, m)
    if not gm.is_conditionally_positive():
        raise PositivityViolation(
            f"discretised generator has negative off-diagonal entries (min {gm.off_diagonal_min():.3g})"
        )
    return replace(gm, conservative_interior=gm.is_conservative())


def martingale_residual(spec: GeneratorSpec, grid: Grid, t: float | None = None) -> GridFn:
    """Mean drift ``b(x) + PV int (z - x) nu(x, z) dz`` at each node.

    The principal value uses the largest window symmetric about the node.
    Compensated densities contribute nothing.  Zero means martingale.
    """
    tt = t if spec.time_dependent else None
    res = _coef(spec.b, grid, tt, "b").copy()
    jump = spec.jump
    if isinstance(jump, DensityJump) and not jump.compensated:
        nu = density_rows(jump.nu, grid, tt)
        n, h = grid.n, grid.h
        i = np.arange(n)
        half = np.minimum(i, n - 1 - i)
        j = np.arange(n)
        offs = j[None, :] - i[:, None]
        inside = np.abs(offs) <= half[:, None]
        res += h * (nu * offs * h * inside).sum(axis=1)
    elif isinstance(jump, (StableLike, SymmetricStable)):
        raise ValueError("martingale residual is defined for density jumps only")
    return GridFn(grid, res, "point")


def moments(m: np.ndarray, grid: Grid):
    """Row moments of a generator matrix: killing, drift and diffusion rates.

    ``sum_j m_ij``, ``sum_j m_ij (x_j - x_i)`` and
    ``1/2 sum_j m_ij (x_j - x_i)^2``; for a local operator ``a d^2 + b d + c``
    these recover ``c``, ``b`` and ``a``.
    """
    x = grid.nodes
    dx = x[None, :] - x[:, None]
    return m.sum(axis=1), (m * dx).sum(axis=1), 0.5 * (m * dx**2).sum(axis=1)
