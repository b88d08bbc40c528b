"""Path simulation and powered-moment estimators.

Generator convention ``L = a d^2 + b d``: an Euler step adds ``b dt +
sqrt(2 a dt) N(0, 1)``.  Paths are simulated in fixed-size blocks, each with
its own Philox stream keyed by ``(seed, stream, block)``, so results depend
only on the configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import levy_stable

from . import expr as ex
from .errors import BetaOutOfRange, UnboundedRate
from .model import DensityJump, GeneratorSpec, NoJump, StableLike, SymmetricStable

BLOCK = 8192
SCHEMES = ("auto", "euler", "euler_jump_thinning", "euler_stable")


@dataclass(frozen=True)
class PathConfig:
    """Monte Carlo settings.

    `box` is the region on which jump-rate bounds are computed; it is
    enlarged threefold about its centre and paths leaving the enlarged box
    are dropped.  ``None`` centres a box of half-width 5 on the start point.
    """

    dt: float = 1e-3
    n_paths: int = 10_000
    seed: int = 0
    scheme: str = "auto"
    box: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")


@dataclass(frozen=True)
class MomentEstimate:
    mean: float
    stderr: float
    n_effective: int
    heavy_tail_warning: bool = False


def _scheme_for(spec: GeneratorSpec) -> str:
    if isinstance(spec.jump, NoJump):
        return "euler"
    if isinstance(spec.jump, DensityJump):
        return "euler_jump_thinning"
    return "euler_stable"


def _field(e, x, t):
    return ex.evaluate_on(e, shape_like=x, x=x, t=t)


class _Thinning:
    """Jump proposals at rate ``M |box|`` with uniform targets, kept with
    probability ``nu(x, z) / M``."""

    def __init__(self, jump: DensityJump, box, time_dependent):
        lo, hi = box
        c, w = 0.5 * (lo + hi), 1.5 * (hi - lo)
        self.lo, self.hi = c - w, c + w
        zs = np.linspace(self.lo, self.hi, 601)
        self.nu = jump.nu
        self.time_dependent = time_dependent
        try:
            vals = ex.evaluate_on(jump.nu, x=zs[:, None], z=zs[None, :], t=0.0)
        except Exception as err:  # noqa: BLE001 - any evaluation failure means no bound
            raise UnboundedRate(f"jump density not evaluable on the box: {err}") from err
        vals = np.broadcast_to(vals, (zs.size, zs.size))
        bound = float(np.max(vals)) if vals.size else 0.0
        if not math.isfinite(bound):
            raise UnboundedRate("jump density is unbounded on the box")
        self.bound = 1.05 * bound
        self.rate = self.bound * (self.hi - self.lo)
        self.compensator = None
        if jump.compensated:
            h = zs[1] - zs[0]
            mean = h * (vals * (zs[None, :] - zs[:, None])).sum(axis=1)
            self.compensator = (zs, mean)

    def drift_correction(self, x):
        if self.compensator is None:
            return 0.0
        zs, mean = self.compensator
        return -np.interp(x, zs, mean)

    def step(self, x, t, dt, rng):
        if self.rate == 0:
            return x
        counts = rng.poisson(self.rate * dt, size=x.size)
        for r in range(1, int(counts.max(initial=0)) + 1):
            idx = np.flatnonzero(counts >= r)
            z = rng.uniform(self.lo, self.hi, size=idx.size)
            u = rng.uniform(size=idx.size)
            dens = ex.evaluate_on(self.nu, shape_like=z, x=x[idx], z=z, t=t)
            keep = u * self.bound < dens
            x[idx[keep]] = z[keep]
        return x


def _stable_params(jump):
    """Stable index, skewness and scale factor of one time unit of the jump part."""
    b = jump.beta
    if isinstance(jump, SymmetricStable):
        return b, 0.0, 1.0
    skew = -1.0 if jump.side == "plus" else 1.0
    return b, skew, abs(math.cos(math.pi * b / 2))


def _simulate_block(spec, x0, t, steps, dt, rng, m, thin):
    x = np.full(m, float(x0))
    jump = spec.jump
    stable = isinstance(jump, (StableLike, SymmetricStable))
    has_diff = spec.a != ex.ZERO
    for j in range(steps):
        tt = j * dt
        drift = _field(spec.b, x, tt)
        if thin is not None:
            drift = drift + thin.drift_correction(x)
        inc = drift * dt
        if has_diff:
            a = np.maximum(_field(spec.a, x, tt), 0.0)
            inc = inc + np.sqrt(2 * a * dt) * rng.standard_normal(m)
        if stable:
            s = np.maximum(_field(jump.scale, x, tt), 0.0)
            beta, skew, c = _stable_params(jump)
            if beta == 2:
                inc = inc + np.sqrt(2 * s * dt) * rng.standard_normal(m)
            elif beta == 1 and skew != 0:
                # one-sided first derivative: deterministic drift -+scale
                inc = inc + (-s if jump.side == "plus" else s) * dt
            else:
                z = levy_stable.rvs(beta, skew, size=m, random_state=rng)
                inc = inc + (c * s * dt) ** (1 / beta) * z
        x = x + inc
        if thin is not None:
            x = thin.step(x, tt, dt, rng)
            x[(x < thin.lo) | (x > thin.hi)] = np.nan
    return x


def simulate(spec: GeneratorSpec, x0: float, t: float, cfg: PathConfig, stream: int = 0) -> np.ndarray:
    """Terminal values of ``cfg.n_paths`` paths started at `x0`.

    Dropped paths (left the thinning box) are returned as NaN.
    """
    scheme = _scheme_for(spec) if cfg.scheme == "auto" else cfg.scheme
    if scheme != _scheme_for(spec):
        raise ValueError(f"scheme {scheme!r} does not match the jump part of the spec")
    jump = spec.jump
    if isinstance(jump, (StableLike, SymmetricStable)) and not 0 < jump.beta <= 2:
        raise BetaOutOfRange(f"stable index must lie in (0, 2], got {jump.beta}")
    if t < 0:
        raise ValueError("time must be nonnegative")
    steps = max(1, int(round(t / cfg.dt))) if t > 0 else 0
    dt = t / steps if steps else 0.0
    thin = None
    if isinstance(jump, DensityJump):
        box = cfg.box if cfg.box is not None else (x0 - 5.0, x0 + 5.0)
        thin = _Thinning(jump, box, spec.time_dependent)
    out = np.empty(cfg.n_paths)
    for start in range(0, cfg.n_paths, BLOCK):
        m = min(BLOCK, cfg.n_paths - start)
        seq = np.random.SeedSequence([cfg.seed, stream, start // BLOCK])
        rng = np.random.Generator(np.random.Philox(seq))
        out[start:start + m] = _simulate_block(spec, x0, t, steps, dt, rng, m, thin)
    return out


def _stable_index(spec: GeneratorSpec | None):
    if spec is not None and isinstance(spec.jump, (StableLike, SymmetricStable)) and spec.jump.beta < 2:
        return spec.jump.beta
    return None


def powered_moment(sample, y: float, k: float, beta: float | None = None) -> MomentEstimate:
    """Mean and standard error of ``(s - y)_+^{k-1}`` with ``x_+^0 = 1{x >= 0}``.

    `beta` is the stable index of the law behind the sample, if any; the
    estimate is flagged when ``k - 1 >= beta`` since the moment need not exist.
    """
    if not k > 0:
        raise ValueError("order must be positive")
    s = np.asarray(sample, dtype=float)
    s = s[np.isfinite(s)]
    u = s - y
    if k == 1:
        vals = (u >= 0).astype(float)
    else:
        pos = u > 0
        with np.errstate(divide="ignore"):
            vals = np.where(pos, np.power(np.where(pos, u, 1.0), k - 1), 0.0)
    n = vals.size
    heavy = beta is not None and k - 1 >= beta
    if n == 0:
        return MomentEstimate(float("nan"), float("nan"), 0, True)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if not (math.isfinite(mean) and math.isfinite(stderr)):
        heavy = True
    return MomentEstimate(mean, stderr, n, heavy)


@dataclass(frozen=True)
class DualityReport:
    """Both sides of ``E (X_t^x - y)_+^{k-1} = E (x - Y_t^y)_+^{k-1}``."""

    k: float
    x: float
    y: float
    t: float
    call: MomentEstimate
    put: MomentEstimate
    z_score: float
    passed: bool | None
    heavy_tail_warning: bool

    @property
    def abstained(self) -> bool:
        return self.passed is None


def duality_mc_report(spec_X: GeneratorSpec, spec_Y: GeneratorSpec, k: float, x: float, y: float,
                      t: float, cfg: PathConfig, z_max: float = 3.0) -> DualityReport:
    """Independent Monte Carlo estimates of both sides and their z-score."""
    bx, by = _stable_index(spec_X), _stable_index(spec_Y)
    if (bx is not None and k - 1 >= bx) or (by is not None and k - 1 >= by):
        nan = MomentEstimate(float("nan"), float("nan"), 0, True)
        return DualityReport(k, x, y, t, nan, nan, float("nan"), None, True)
    xs = simulate(spec_X, x, t, cfg, stream=0)
    ys = simulate(spec_Y, y, t, cfg, stream=1)
    call = powered_moment(xs, y, k, bx)
    put = powered_moment(-ys, -x, k, by)
    se = math.hypot(call.stderr, put.stderr)
    diff = call.mean - put.mean
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    heavy = call.heavy_tail_warning or put.heavy_tail_warning
    return DualityReport(k, x, y, t, call, put, float(z), None if heavy else bool(abs(z) < z_max), heavy)


def with_seed(cfg: PathConfig, seed: int) -> PathConfig:
    return replace(cfg, seed=seed)
