"""Semigroups ``exp(tL)``, backward propagators and their order-k duals."""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm, lu_factor, lu_solve, solve_triangular

from .errors import BadInterval, StepTooLarge
from .model import GeneratorMatrix, GeneratorSpec, discretize


def _mat(L) -> np.ndarray:
    return L.m if isinstance(L, GeneratorMatrix) else np.asarray(L, dtype=float)


def transition(L, t: float, method: str = "pade") -> np.ndarray:
    """Transition matrix ``exp(tL)``.

    Parameters
    ----------
    L : GeneratorMatrix or ndarray
    t : float
        Nonnegative time; ``t = 0`` returns the identity exactly.
    method : {'pade', 'implicit_euler'}
        Scaling-and-squaring Padé (scipy) or a composition of implicit Euler
        steps with ``dt = t / ceil(t * max|L|)``.
    """
    m = _mat(L)
    if t < 0:
        raise ValueError("time must be nonnegative")
    n = m.shape[0]
    if t == 0:
        return np.eye(n)
    if method == "pade":
        return expm(t * m)
    if method != "implicit_euler":
        raise ValueError(f"unknown method {method!r}")
    steps = max(1, math.ceil(t * np.abs(m).max()))
    dt = t / steps
    try:
        lu = lu_factor(np.eye(n) - dt * m, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise StepTooLarge(f"implicit Euler step dt={dt:.3g} failed: {err}") from err
    p = np.eye(n)
    for _ in range(steps):
        p = lu_solve(lu, p)
    if not np.all(np.isfinite(p)):
        raise StepTooLarge(f"implicit Euler step dt={dt:.3g} produced non-finite values")
    return p


def _conj(K: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``K m K^{-1}`` for triangular ``K`` (upper or lower)."""
    upper = np.allclose(K, np.triu(K))
    return solve_triangular(K.T, (K @ m).T, lower=upper).T


def dual_semigroup_check(L, F, t: float) -> float:
    """``max |exp(t L^D) - F exp(tL)' F^{-1}|`` with ``L^D = F L' F^{-1}``."""
    from .duality import dual_matrix

    if not isinstance(L, GeneratorMatrix):
        L = GeneratorMatrix(F.grid, np.asarray(L, dtype=float))
    LD = dual_matrix(L, F)
    lhs = transition(LD, t)
    rhs = F.conjugate(transition(L, t).T)
    return float(np.abs(lhs - rhs).max())


class Propagator:
    """Backward propagator ``U^{s,t}`` of a time-dependent generator family.

    Time is cut into steps of length `dt` on ``[0, T]``; each step uses the
    generator at its midpoint, and ``U^{s,t}`` is the product of the step
    exponentials with the earliest step on the left.

    Parameters
    ----------
    A : callable
        ``t -> GeneratorMatrix`` (or ndarray).
    T : float
        Horizon.
    dt : float
        Step; ``T / dt`` is rounded to an integer number of steps.
    """

    def __init__(self, A, T: float, dt: float):
        if not T > 0 or not dt > 0:
            raise ValueError("horizon and step must be positive")
        self.A = A
        self.T = float(T)
        self.steps = max(1, int(round(T / dt)))
        self.dt = self.T / self.steps
        self._cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_spec(cls, spec: GeneratorSpec, grid, T, dt):
        if spec.time_dependent:
            return cls(lambda t: discretize(spec, grid, t), T, dt)
        fixed = discretize(spec, grid)
        return cls(lambda t: fixed, T, dt)

    def generator(self, t: float) -> np.ndarray:
        return _mat(self.A(t))

    def step_matrix(self, j: int) -> np.ndarray:
        if j not in self._cache:
            mid = (j + 0.5) * self.dt
            self._cache[j] = expm(self.dt * self.generator(mid))
        return self._cache[j]

    def _index(self, s: float) -> int:
        j = s / self.dt
        r = int(round(j))
        if abs(j - r) > 1e-9 * max(1.0, abs(j)):
            raise BadInterval(f"time {s} is not on the step grid (dt={self.dt})")
        return r

    def evolve(self, s: float, t: float) -> np.ndarray:
        if not (0 <= s <= t <= self.T + 1e-12):
            raise BadInterval(f"need 0 <= s <= t <= T, got s={s}, t={t}, T={self.T}")
        i, j = self._index(s), self._index(t)
        n = self.generator(0.0).shape[0]
        u = np.eye(n)
        for step in range(i, j):
            u = u @ self.step_matrix(step)
        return u


def propagator_evolve(P: Propagator, s: float, t: float) -> np.ndarray:
    return P.evolve(s, t)


class DualPropagator:
    """``U^D_{s,t} = K (U_{T-t,T-s})' K^{-1}`` for a base propagator.

    `K` is the F matrix, or its transpose when the roles of the two
    arguments of the pairing are swapped (reflecting a dual back).
    """

    def __init__(self, base, K: np.ndarray, T: float):
        self.base = base
        self.K = K
        self.T = float(T)
        self.dt = base.dt
        self.steps = base.steps
        self._cache: dict[int, np.ndarray] = {}

    def generator(self, s: float) -> np.ndarray:
        return _conj(self.K, self.base.generator(self.T - s).T)

    def evolve(self, s: float, t: float) -> np.ndarray:
        if not (0 <= s <= t <= self.T + 1e-12):
            raise BadInterval(f"need 0 <= s <= t <= T, got s={s}, t={t}, T={self.T}")
        return _conj(self.K, self.base.evolve(self.T - t, self.T - s).T)

    def step_matrix(self, j: int) -> np.ndarray:
        """Step exponential built from the dual generator at the step midpoint."""
        if j not in self._cache:
            mid = (j + 0.5) * self.dt
            self._cache[j] = expm(self.dt * self.generator(mid))
        return self._cache[j]

    def evolve_by_generator(self, s: float, t: float) -> np.ndarray:
        """Dual family evolved with its own generators instead of conjugation."""
        if not (0 <= s <= t <= self.T + 1e-12):
            raise BadInterval(f"need 0 <= s <= t <= T, got s={s}, t={t}, T={self.T}")
        i, j = int(round(s / self.dt)), int(round(t / self.dt))
        u = np.eye(self.K.shape[0])
        for step in range(i, j):
            u = u @ self.step_matrix(step)
        return u


def dual_propagator(P, F, T: float | None = None, transpose_kernel: bool = False) -> DualPropagator:
    """(f, T)-dual of `P` with respect to the F operator `F`."""
    T = P.T if T is None else T
    if T > P.T + 1e-12:
        raise BadInterval(f"dual horizon {T} exceeds the propagator horizon {P.T}")
    K = F.f_matrix.T if transpose_kernel else F.f_matrix
    return DualPropagator(P, K, T)


def chain_rule_residual(P, s: float, r: float, t: float) -> float:
    """``max |U^{s,r} U^{r,t} - U^{s,t}|``."""
    return float(np.abs(P.evolve(s, r) @ P.evolve(r, t) - P.evolve(s, t)).max())


def ft_duality_residual(P: Propagator, D: DualPropagator, s: float, t: float) -> float:
    """Relative gap in ``E f(x, Y_t^{y,s}) = E f(X_{T-s}^{x,T-t}, y)`` on the grid.

    The left side uses the dual evolved by its own generators, the right
    side the original propagator over the reflected interval.
    """
    K = D.K
    lhs = D.evolve_by_generator(s, t) @ K  # rows y, columns x
    rhs = (P.evolve(D.T - t, D.T - s) @ K.T).T
    return float(np.abs(lhs - rhs).max() / max(np.abs(rhs).max(), 1e-300))
