"""Matrix exponentials, spectral abscissa and semigroup bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, StabilityError

MAX_DIM = 50
_TAYLOR_TERMS = 18


def _square(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix entries must be finite")
    return a


def spectral_abscissa(a) -> float:
    """Largest real part of the eigenvalues (LAPACK Hessenberg-QR)."""
    a = _square(a)
    if a.shape[0] > MAX_DIM:
        raise DomainError(f"dimension {a.shape[0]} exceeds the supported maximum {MAX_DIM}")
    return float(np.max(np.linalg.eigvals(a).real))


def op_norm(a) -> float:
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(np.atleast_2d(a), 2))


def matrix_exp(a, t: float = 1.0) -> np.ndarray:
    """``exp(a t)`` by scaling and squaring around a truncated Taylor series."""
    x = _square(a) * float(t)
    d = x.shape[0]
    norm = np.linalg.norm(x, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = x / 2.0**squarings
    result = np.eye(d)
    term = np.eye(d)
    for k in range(1, _TAYLOR_TERMS + 1):
        term = term @ x / k
        result = result + term
    for _ in range(squarings):
        result = result @ result
    return result


def phi_matrix(a, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """``exp(a δ)`` and ``∫_0^δ exp(a s) ds`` from one augmented exponential."""
    a = _square(a)
    d = a.shape[0]
    big = np.zeros((2 * d, 2 * d))
    big[:d, :d] = a
    big[:d, d:] = np.eye(d)
    e = matrix_exp(big, delta)
    return e[:d, :d].copy(), e[:d, d:].copy()


@dataclass(frozen=True)
class StableMatrix:
    a: np.ndarray
    lambda_margin: float

    def __post_init__(self):
        a = _square(self.a)
        if not self.lambda_margin > 0:
            raise StabilityError("decay margin lambda must be positive")
        abscissa = spectral_abscissa(a)
        if abscissa >= -self.lambda_margin:
            raise StabilityError(
                f"spectral abscissa {abscissa:.6g} is not below -lambda = {-self.lambda_margin:.6g}"
            )
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def norm(self) -> float:
        return op_norm(self.a)


@dataclass(frozen=True)
class SemigroupBound:
    """``|exp(A t)| <= M exp(-λ t)`` certified on ``grid``."""

    m_const: float
    lambda_: float
    grid: np.ndarray
    argmax_t: float = 0.0

    def bound(self, t) -> np.ndarray:
        return self.m_const * np.exp(-self.lambda_ * np.asarray(t, dtype=float))


def _weighted_norm(a: np.ndarray, lam: float, t: float) -> float:
    return op_norm(matrix_exp(a, t)) * math.exp(lam * t)


def estimate_M(sm: StableMatrix, grid_points: int = 100) -> SemigroupBound:
    """Smallest ``M >= 1`` with ``|exp(At)| e^{λt} <= M`` on a log-spaced sample of ``[0, 10/λ]``.

    The maximiser found on the grid is refined by a bounded scalar search, and
    the refined point is appended to the reported grid.
    """
    if not isinstance(sm, StableMatrix):
        raise StabilityError("estimate_M needs a StableMatrix")
    lam = sm.lambda_margin
    t_max = 10.0 / lam
    count = max(2, 10 * int(grid_points))
    grid = np.concatenate([[0.0], np.geomspace(t_max * 1e-6, t_max, count - 1)])
    vals = np.array([_weighted_norm(sm.a, lam, t) for t in grid])
    j = int(np.argmax(vals))
    best, best_t = float(vals[j]), float(grid[j])
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, grid.size - 1)]
    if hi > lo:
        res = minimize_scalar(lambda t: -_weighted_norm(sm.a, lam, t), bounds=(lo, hi),
                              method="bounded", options={"xatol": 1e-12 * max(hi, 1.0)})
        if -res.fun > best:
            best, best_t = float(-res.fun), float(res.x)
        grid = np.sort(np.append(grid, res.x))
    return SemigroupBound(max(1.0, best), lam, grid, best_t)


@dataclass(frozen=True)
class IncrementReport:
    """Worst-case slack (right side minus left side) for each semigroup inequality."""

    slack_increment: float
    slack_identity: float
    slack_holder: float
    slack_holder_difference: float
    decay_slack: float
    grid_size: int

    @property
    def increment_slack(self) -> float:
        return min(self.slack_increment, self.slack_identity, self.slack_holder,
                   self.slack_holder_difference)

    @property
    def min_slack(self) -> float:
        return min(self.increment_slack, self.decay_slack)

    @property
    def holds(self) -> bool:
        return self.min_slack >= -1e-9


def _seminorm_of_family(mats: np.ndarray, times: np.ndarray, beta: float) -> float:
    """Hoelder seminorm of a matrix-valued family sampled at ``times``."""
    n = mats.shape[0]
    if n < 2:
        return 0.0
    i, j = np.triu_indices(n, 1)
    diffs = mats[j] - mats[i]
    norms = np.linalg.norm(diffs, ord=2, axis=(1, 2))
    return float(np.max(norms / (times[j] - times[i]) ** beta))


def semigroup_increment_check(sm: StableMatrix, bound: SemigroupBound, beta: float,
                              points: int = 48, pair_points: int = 16) -> IncrementReport:
    """Check the three semigroup increment estimates on a uniform grid of ``(0, 1]``.

    With ``h = 1/points`` and ``E_k = exp(A k h)``:

    * ``|E_t - E_s| <= M |A| (t - s) e^{-λ s}`` and ``|E_{t-s} - I| <= M |A| (t - s)``,
    * ``seminorm_β(r -> E_{t-r}; [0, t]) <= M |A| t^{1-β}``,
    * ``seminorm_β(r -> E_{t-r} - E_{s-r}; [0, s]) <= M^2 |A|^2 (t - s) s^{1-β}``.

    The last family is checked for ``(s, t)`` on every ``points // pair_points``-th
    grid point, with the seminorm itself taken over the full grid.
    """
    if not 0.0 < beta < 1.0:
        raise DomainError("beta must lie in (0, 1)")
    a, m, lam = sm.a, bound.m_const, bound.lambda_
    an = op_norm(a)
    h = 1.0 / points
    times = h * np.arange(points + 1)
    step = matrix_exp(a, h)
    E = np.empty((points + 1,) + a.shape)
    E[0] = np.eye(a.shape[0])
    for k in range(1, points + 1):
        E[k] = E[k - 1] @ step
    norms_e = np.linalg.norm(E, ord=2, axis=(1, 2))
    decay = float(np.min(m * np.exp(-lam * times) - norms_e))

    si, ti = np.triu_indices(points + 1, 1)
    diff_norm = np.linalg.norm(E[ti] - E[si], ord=2, axis=(1, 2))
    gap = times[ti] - times[si]
    slack_inc = float(np.min(m * an * gap * np.exp(-lam * times[si]) - diff_norm))
    ident = np.linalg.norm(E - np.eye(a.shape[0]), ord=2, axis=(1, 2))
    slack_id = float(np.min(m * an * times[1:] - ident[1:]))

    slack_h = math.inf
    for k in range(1, points + 1):
        # r -> E_{t-r} for r = 0..t is E_k, E_{k-1}, ..., E_0
        fam = E[k::-1]
        semi = _seminorm_of_family(fam, times[: k + 1], beta)
        slack_h = min(slack_h, m * an * times[k] ** (1.0 - beta) - semi)

    slack_hd = math.inf
    stride = max(1, points // pair_points)
    for ks in range(stride, points + 1, stride):
        back = np.arange(ks + 1)
        for kt in range(ks + stride, points + 1, stride):
            fam = E[kt - back] - E[ks - back]
            semi = _seminorm_of_family(fam, times[: ks + 1], beta)
            rhs = m * m * an * an * (times[kt] - times[ks]) * times[ks] ** (1.0 - beta)
            slack_hd = min(slack_hd, rhs - semi)
    return IncrementReport(slack_inc, slack_id, float(slack_h), float(slack_hd), decay, points + 1)


def random_stable_matrix(rng: np.random.Generator, dim: int, lam: float = 0.5,
                         margin: float = 0.1) -> StableMatrix:
    """Random matrix shifted so its spectral abscissa equals ``-(lam + margin)``."""
    a = rng.standard_normal((dim, dim))
    a = a - (spectral_abscissa(a) + lam + margin) * np.eye(dim)
    return StableMatrix(a, lam)
