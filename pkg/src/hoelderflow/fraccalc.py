"""Young integrals: Riemann-Stieltjes sums and the fractional-derivative representation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn

from .errors import DomainError, RegularityError
from .paths import SampledPath, holder_norms_values, wiener_shift

INNER_NODES = 256
OUTER_NODES = 512
RS_STOP_TOL = 1e-8
_ALPHA_EDGE = 1e-3


@dataclass(frozen=True)
class MatrixPath:
    """Grid path of ``d x m`` matrices; ``values`` has shape ``(n+1, d, m)``."""

    t0: float
    dt: float
    values: np.ndarray
    beta: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None, None]
        elif v.ndim == 2:
            v = v[:, None, :]
        if v.ndim != 3 or v.shape[0] == 0:
            raise DomainError("matrix path values must have shape (n+1, d, m)")
        if not self.dt > 0:
            raise DomainError("grid step must be positive")
        if not np.all(np.isfinite(v)):
            raise DomainError("matrix path values must be finite")
        if not 0.0 < self.beta <= 1.0:
            raise DomainError(f"Hoelder exponent must lie in (0, 1], got {self.beta}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index(self, t: float) -> int:
        x = (t - self.t0) / self.dt
        i = int(round(x))
        if abs(x - i) > 1e-9 * max(1.0, abs(x)) or i < 0 or i > self.n_steps:
            raise DomainError(f"time {t} is not a grid point of the integrand")
        return i

    def shifted(self, tau: float) -> "MatrixPath":
        """``g(. + tau)`` on the remaining grid."""
        k = self.index(self.t0 + tau)
        return MatrixPath(self.t0, self.dt, self.values[k:], self.beta)

    @classmethod
    def from_path(cls, path: SampledPath, beta: float | None = None) -> "MatrixPath":
        """Use a driver path as a ``1 x m`` row-valued integrand."""
        return cls(path.t0, path.dt, path.values[:, None, :], path.beta_prime if beta is None else beta)

    @classmethod
    def from_function(cls, fn: Callable, t0: float, dt: float, n: int, beta: float = 1.0) -> "MatrixPath":
        times = t0 + dt * np.arange(n + 1)
        return cls(t0, dt, np.asarray([np.asarray(fn(t), dtype=float) for t in times]), beta)


@dataclass(frozen=True)
class FracOrder:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise RegularityError(f"fractional order must lie in (0, 1), got {self.alpha}")


def _order(alpha) -> float:
    return alpha.alpha if isinstance(alpha, FracOrder) else FracOrder(float(alpha)).alpha


def default_alpha(beta: float, beta_prime: float) -> float:
    """Centre of the admissible window ``1 - beta' < alpha < beta``."""
    lo, hi = 1.0 - beta_prime + _ALPHA_EDGE, beta - _ALPHA_EDGE
    if lo > hi:
        raise RegularityError(f"no admissible order for beta={beta}, beta'={beta_prime}")
    return min(max(0.5 * (1.0 - beta_prime + beta), lo), hi)


def check_alpha(alpha: float, beta: float, beta_prime: float) -> None:
    if not 1.0 - beta_prime < alpha < beta:
        raise RegularityError(
            f"order {alpha} outside the admissible window ({1 - beta_prime:.6g}, {beta:.6g})"
        )


# -- evaluation of grid paths between grid points ------------------------------

PathLike = Union[SampledPath, MatrixPath, Callable]


class _Sampler:
    """Vectorized piecewise-linear evaluation of a grid path (or a callable)."""

    def __init__(self, src: PathLike):
        if isinstance(src, (SampledPath, MatrixPath)):
            self.fn = None
            self.t0, self.dt = src.t0, src.dt
            self.shape = src.values.shape[1:]
            self.flat = src.values.reshape(src.values.shape[0], -1)
        elif callable(src):
            self.fn = src
            self.shape = None
        else:
            raise DomainError("expected a grid path or a callable")

    def __call__(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.fn is not None:
            # vectorized callables return shape (k,) or (k, ...) for k times
            out = np.asarray(self.fn(times.ravel()), dtype=float)
            if self.shape is None:
                self.shape = out.shape[1:] or (1,)
            out = out.reshape(times.size, -1)
            return out.reshape(times.shape + (out.shape[-1],))
        x = (times.ravel() - self.t0) / self.dt
        n = self.flat.shape[0] - 1
        i = np.clip(np.floor(x).astype(np.int64), 0, max(n - 1, 0))
        w = np.clip(x - i, 0.0, 1.0)[:, None]
        if n == 0:
            out = np.repeat(self.flat[:1], x.size, axis=0)
        else:
            out = (1.0 - w) * self.flat[i] + w * self.flat[i + 1]
        return out.reshape(times.shape + (self.flat.shape[1],))

    def matrix_shape(self) -> tuple[int, ...]:
        return tuple(self.shape)


def _graded(n: int, power: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint nodes ``y**power`` on (0, 1) with weights of the substitution."""
    y = (np.arange(n) + 0.5) / n
    return y**power, power * y ** (power - 1.0) / n


def _dplus_flat(g: _Sampler, s: float, r: np.ndarray, alpha: float, nodes: int) -> np.ndarray:
    length = r - s
    x, w = _graded(nodes, 1.0 / (1.0 - alpha))
    xs = length[:, None] * x[None, :]
    gr = g(r)
    gq = g(r[:, None] - xs)
    kern = (length[:, None] * w[None, :]) / xs ** (1.0 + alpha)
    integral = np.einsum("rj,rjk->rk", kern, gr[:, None, :] - gq)
    return (gr / length[:, None] ** alpha + alpha * integral) / gamma_fn(1.0 - alpha)


def _dminus_flat(om: _Sampler, t: float, r: np.ndarray, alpha: float, nodes: int) -> np.ndarray:
    length = t - r
    x, w = _graded(nodes, 1.0 / alpha)
    xs = length[:, None] * x[None, :]
    wr = om(r)
    wt = om(np.asarray([t]))[0]
    wq = om(r[:, None] + xs)
    kern = (length[:, None] * w[None, :]) / xs ** (2.0 - alpha)
    integral = np.einsum("rj,rjk->rk", kern, wr[:, None, :] - wq)
    return ((wr - wt) / length[:, None] ** (1.0 - alpha) + (1.0 - alpha) * integral) / gamma_fn(alpha)


def frac_derivative_plus(g: PathLike, s: float, alpha, r, nodes: int = INNER_NODES) -> np.ndarray:
    """Left-sided Weyl-Marchaud derivative of order ``alpha`` of ``g`` at ``r > s``.

    ``r`` may be a scalar or an array; the trailing axes carry the value shape
    of ``g``.
    """
    a = _order(alpha)
    rr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(rr <= s):
        raise DomainError("the left-sided derivative needs r > s")
    sampler = _Sampler(g)
    flat = _dplus_flat(sampler, float(s), rr, a, nodes)
    out = flat.reshape(rr.shape + sampler.matrix_shape())
    return out[0] if np.ndim(r) == 0 else out


def frac_derivative_minus(omega: PathLike, t: float, alpha, r, nodes: int = INNER_NODES) -> np.ndarray:
    """Right-sided derivative of order ``1 - alpha`` of ``omega - omega(t)`` at ``r < t``.

    The formal factor ``(-1)**(1 - alpha)`` is dropped.
    """
    a = _order(alpha)
    rr = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(rr >= t):
        raise DomainError("the right-sided derivative needs r < t")
    sampler = _Sampler(omega)
    flat = _dminus_flat(sampler, float(t), rr, a, nodes)
    out = flat.reshape(rr.shape + sampler.matrix_shape())
    return out[0] if np.ndim(r) == 0 else out


# -- Riemann-Stieltjes sums ------------------------------------------------------


@dataclass(frozen=True)
class RSIntegral:
    """Left-point sums on the finest grid and its dyadic coarsenings.

    ``levels`` runs from coarse to fine as ``(step, value)`` pairs.
    ``richardson`` combines the two finest levels, ``2 S_h - S_{2h}``.
    """

    value: np.ndarray
    levels: tuple[tuple[float, np.ndarray], ...]
    last_delta: float
    converged: bool
    stop_level: int
    span: float

    @property
    def richardson(self) -> np.ndarray:
        if len(self.levels) < 2:
            return self.value
        return 2.0 * self.levels[-1][1] - self.levels[-2][1]

    def convergence_order(self, min_points: int = 3, min_steps: int = 16) -> float:
        """Slope of ``log |S_h - S_finest|`` against ``log h`` over the coarser levels.

        Levels with fewer than ``min_steps`` summands are left out of the fit:
        their sums are dominated by the randomness of a handful of increments.
        """
        coarse = [lv for lv in self.levels[:-1] if round(self.span / lv[0]) >= min_steps]
        if len(coarse) + 1 < min_points:
            raise DomainError("too few refinement levels for an order estimate")
        steps = np.array([lv[0] for lv in coarse])
        err = np.array([np.linalg.norm(np.atleast_1d(lv[1] - self.value)) for lv in coarse])
        keep = err > 0
        if keep.sum() < 2:
            return math.inf
        return float(np.polyfit(np.log(steps[keep]), np.log(err[keep]), 1)[0])


def _check_grids(g: MatrixPath, omega: SampledPath) -> None:
    if abs(g.dt - omega.dt) > 1e-12 * omega.dt or abs(g.t0 - omega.t0) > 1e-12 * max(1.0, omega.dt):
        raise DomainError("integrand and driver must share one grid")
    if g.n_steps != omega.n_steps:
        raise DomainError("integrand and driver must have the same length")
    if g.shape[1] != omega.dim:
        raise DomainError(f"integrand has {g.shape[1]} columns but the driver is {omega.dim}-dimensional")


def _check_regularity(g: MatrixPath, omega: SampledPath) -> None:
    if g.beta + omega.beta_prime <= 1.0:
        raise RegularityError(
            f"Young integral needs beta + beta' > 1, got {g.beta} + {omega.beta_prime}"
        )


def _rs_sum(gv: np.ndarray, wv: np.ndarray) -> np.ndarray:
    return np.einsum("idm,im->d", gv[:-1], np.diff(wv, axis=0))


def young_integral_rs(g: MatrixPath, omega: SampledPath, s: float, t: float,
                      stop_tol: float = RS_STOP_TOL, min_steps: int = 2) -> RSIntegral:
    """Left-point sum of ``g dω`` over ``[s, t]`` together with its refinement sequence."""
    _check_regularity(g, omega)
    _check_grids(g, omega)
    i0, i1 = omega.index(s), omega.index(t)
    if i1 <= i0:
        raise DomainError("integration needs s < t")
    gv, wv = g.values[i0 : i1 + 1], omega.values[i0 : i1 + 1]
    span = i1 - i0
    strides = []
    stride = 1
    while span % stride == 0 and span // stride >= min_steps:
        strides.append(stride)
        stride *= 2
    if not strides:
        strides = [1]
    levels = tuple(
        (omega.dt * k, _rs_sum(gv[::k], wv[::k])) for k in reversed(strides)
    )
    deltas = [float(np.linalg.norm(b[1] - a[1])) for a, b in zip(levels[:-1], levels[1:])]
    stop = len(levels) - 1
    for j, d in enumerate(deltas):
        if d < stop_tol:
            stop = j + 1
            break
    last = deltas[-1] if deltas else math.inf
    return RSIntegral(levels[-1][1], levels, last, bool(deltas) and min(deltas) < stop_tol, stop,
                      span * omega.dt)


# -- fractional representation -------------------------------------------------


def _outer_nodes(s: float, t: float, alpha: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    half = nodes // 2
    mid = 0.5 * (s + t)
    yl, wl = _graded(half, 1.0 / (1.0 - alpha))
    yr, wr = _graded(nodes - half, 2.0)
    r = np.concatenate([s + (mid - s) * yl, t - (t - mid) * yr])
    w = np.concatenate([(mid - s) * wl, (t - mid) * wr])
    return r, w


def fracrep_callables(g: Callable | PathLike, omega: Callable | PathLike, s: float, t: float,
                      alpha: float, inner: int = INNER_NODES, outer: int = OUTER_NODES) -> np.ndarray:
    """Fractional-derivative form of ``∫ g dω`` without regularity bookkeeping."""
    if not t > s:
        raise DomainError("integration needs s < t")
    gs, ws = _Sampler(g), _Sampler(omega)
    r, w = _outer_nodes(float(s), float(t), alpha, outer)
    dp = _dplus_flat(gs, float(s), r, alpha, inner)
    dm = _dminus_flat(ws, float(t), r, alpha, inner)
    m = dm.shape[1]
    dp = dp.reshape(r.size, -1, m)
    # the dropped complex prefactors combine to -1 (pinned by g = const)
    return -np.einsum("r,rdm,rm->d", w, dp, dm)


def young_integral_fracrep(g: MatrixPath, omega: SampledPath, s: float, t: float, alpha=None,
                           inner: int = INNER_NODES, outer: int = OUTER_NODES) -> np.ndarray:
    """``∫_s^t D^α_{s+} g · D^{1-α}_{t-} ω dr`` by graded midpoint quadrature."""
    _check_regularity(g, omega)
    a = default_alpha(g.beta, omega.beta_prime) if alpha is None else _order(alpha)
    check_alpha(a, g.beta, omega.beta_prime)
    omega.index(s), omega.index(t)
    return fracrep_callables(g, omega, s, t, a, inner, outer)


# -- a priori bound ------------------------------------------------------------


def young_constant(alpha: float, beta: float, beta_prime: float) -> float:
    """Dominating constant for the Young estimate on windows of length at most one."""
    check_alpha(alpha, beta, beta_prime)
    a, b, bp = alpha, beta, beta_prime
    pre = 1.0 / (gamma_fn(a) * gamma_fn(1.0 - a))
    minus = 1.0 + (1.0 - a) / (bp + a - 1.0)
    plus = max(beta_fn(1.0 - a, bp + a), a * beta_fn(1.0 + b - a, bp + a) / (b - a))
    return float(pre * minus * plus)


def _unit_windows(i0: int, i1: int, dt: float) -> list[tuple[int, int]]:
    per = max(1, int(math.floor(1.0 / dt + 1e-9)))
    cuts = list(range(i0, i1, per)) + [i1]
    return list(zip(cuts[:-1], cuts[1:]))


def young_bound(g: MatrixPath, omega: SampledPath, s: float, t: float, alpha=None) -> float:
    """Upper bound for ``|∫_s^t g dω|``, summed over consecutive windows of length ≤ 1."""
    _check_regularity(g, omega)
    _check_grids(g, omega)
    a = default_alpha(g.beta, omega.beta_prime) if alpha is None else _order(alpha)
    const = young_constant(a, g.beta, omega.beta_prime)
    i0, i1 = omega.index(s), omega.index(t)
    if i1 <= i0:
        raise DomainError("integration needs s < t")
    total = 0.0
    flat = g.values.reshape(g.values.shape[0], -1)
    for j0, j1 in _unit_windows(i0, i1, omega.dt):
        length = (j1 - j0) * omega.dt
        wn = holder_norms_values(omega.values[j0 : j1 + 1], omega.dt, omega.beta_prime)
        gn = holder_norms_values(flat[j0 : j1 + 1], g.dt, g.beta)
        total += const * wn.seminorm * (gn.sup + length**g.beta * gn.seminorm) * length**omega.beta_prime
    return float(total)


# -- shift property ------------------------------------------------------------


def verify_shift_property(g: MatrixPath, omega: SampledPath, s: float, t: float, tau: float,
                          method: str = "rs", alpha=None) -> float:
    """``|∫_{s+τ}^{t+τ} g dω − ∫_s^t g(·+τ) dθ_τω|``."""
    shifted_w = wiener_shift(omega, tau) if tau != 0 else omega
    shifted_g = g.shifted(tau) if tau != 0 else g
    if method == "rs":
        lhs = young_integral_rs(g, omega, s + tau, t + tau).value
        rhs = young_integral_rs(shifted_g, shifted_w, s, t).value
    elif method == "fracrep":
        lhs = young_integral_fracrep(g, omega, s + tau, t + tau, alpha)
        rhs = young_integral_fracrep(shifted_g, shifted_w, s, t, alpha)
    else:
        raise DomainError(f"unknown integration method {method!r}")
    return float(np.linalg.norm(lhs - rhs))


# -- named integrands for batch runs -------------------------------------------


def integrand_by_name(name: str, omega: SampledPath) -> MatrixPath:
    """``constant`` (ones), ``driver`` (g = ω as a row), ``time`` (g(r) = r), ``sin-driver``."""
    n, m = omega.n_steps, omega.dim
    if name == "constant":
        return MatrixPath(omega.t0, omega.dt, np.ones((n + 1, 1, m)), 1.0)
    if name == "driver":
        return MatrixPath.from_path(omega)
    if name == "sin-driver":
        return MatrixPath(omega.t0, omega.dt, np.sin(omega.values)[:, None, :], omega.beta_prime)
    if name == "time":
        return MatrixPath(omega.t0, omega.dt, np.repeat(omega.times[:, None, None], m, axis=2), 1.0)
    raise KeyError(name)


INTEGRANDS = ("constant", "driver", "sin-driver", "time")
