"""Drift/diffusion pairs, linearization, C² cut-off and the localization radius."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm, qmc

from . import _kernels
from .errors import ConfigurationError, DomainError, HypothesisError, ValidationError
from .paths import SampledPath, holder_seminorm

ZERO_TOL = 1e-12
FD_STEP = 1e-5
FD_RTOL = 1e-5
_FD_ATOL = 1e-7


def _as_vec(u) -> np.ndarray:
    return np.atleast_1d(np.asarray(u, dtype=float))


@dataclass(frozen=True, eq=False)
class FieldPair:
    """Drift ``f`` and diffusion ``g`` on the ball of radius ``rho`` with derivative oracles.

    Shapes: ``f(u)`` is ``(d,)``, ``df(u)`` is ``(d, d)``, ``g(u)`` is ``(d, m)``,
    ``dg(u)[i, j, k] = ∂_k g_ij`` and ``d2g(u)[i, j, k, l] = ∂_k ∂_l g_ij``.
    Catalog fields may carry ``f_hat``/``df_hat`` directly and an exact
    ``bound_closed_form`` for the derivative bound map.
    """

    f: Callable
    df: Callable
    g: Callable
    dg: Callable
    d2g: Callable
    rho: float
    dim: int
    noise_dim: int
    name: str = "custom"
    f_hat: Optional[Callable] = None
    df_hat: Optional[Callable] = None
    bound_closed_form: Optional[Callable[[float], float]] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigurationError("domain radius rho must be positive")
        if self.dim < 1 or self.noise_dim < 1:
            raise ConfigurationError("field dimensions must be positive")

    def check_local_assumptions(self) -> None:
        """Raise unless ``f(0) = 0``, ``g(0) = 0`` and ``Dg(0) = 0``."""
        z = np.zeros(self.dim)
        if np.linalg.norm(_as_vec(self.f(z))) > ZERO_TOL:
            raise HypothesisError("drift does not vanish at the origin")
        if np.linalg.norm(np.asarray(self.g(z))) > ZERO_TOL:
            raise HypothesisError("diffusion does not vanish at the origin")
        if np.linalg.norm(np.asarray(self.dg(z))) > ZERO_TOL:
            raise HypothesisError("diffusion derivative does not vanish at the origin")

    def sample_ball(self, count: int, seed: int = 0, radius: float | None = None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        r = self.rho if radius is None else radius
        if not math.isfinite(r):
            r = 1.0
        x = rng.standard_normal((count, self.dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x * (r * rng.random((count, 1)) ** (1.0 / self.dim))

    def validate(self, points: int = 100, seed: int = 0) -> None:
        """Compare every derivative oracle with central differences at random points."""
        for u in self.sample_ball(points, seed):
            _fd_compare("df", lambda x: _as_vec(self.f(x)), self.df(u), u)
            _fd_compare("dg", lambda x: np.asarray(self.g(x), dtype=float), self.dg(u), u)
            _fd_compare("d2g", lambda x: np.asarray(self.dg(x), dtype=float), self.d2g(u), u)
            if self.f_hat is not None and self.df_hat is not None:
                _fd_compare("df_hat", lambda x: _as_vec(self.f_hat(x)), self.df_hat(u), u)


def _fd_jacobian(fn: Callable, u: np.ndarray) -> np.ndarray:
    h = FD_STEP * max(1.0, float(np.linalg.norm(u)))
    cols = []
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = h
        cols.append((np.asarray(fn(u + e), dtype=float) - np.asarray(fn(u - e), dtype=float)) / (2 * h))
    return np.stack(cols, axis=-1)


def _fd_compare(label: str, fn: Callable, exact, u: np.ndarray) -> None:
    exact = np.asarray(exact, dtype=float)
    approx = _fd_jacobian(fn, u)
    if approx.shape != exact.shape:
        approx = approx.reshape(exact.shape)
    err = float(np.max(np.abs(approx - exact)))
    scale = float(np.max(np.abs(exact))) if exact.size else 0.0
    if err > FD_RTOL * scale + _FD_ATOL:
        raise ValidationError(f"{label} oracle disagrees with finite differences at u={u}: error {err:.3g}")


@dataclass(frozen=True, eq=False)
class Linearization:
    a: np.ndarray
    f_hat: Callable
    df_hat: Callable

    @property
    def dim(self) -> int:
        return self.a.shape[0]


def split_linearization(pair: FieldPair, validate: bool = True) -> Linearization:
    """``A = DF(0)`` and ``F̂(x) = F(x) − Ax``."""
    if validate:
        pair.validate()
    a = np.atleast_2d(np.asarray(pair.df(np.zeros(pair.dim)), dtype=float)).copy()
    a.setflags(write=False)
    if pair.f_hat is not None and pair.df_hat is not None:
        fh, dfh = pair.f_hat, pair.df_hat
        for u in pair.sample_ball(8, seed=1):
            if not np.allclose(_as_vec(fh(u)), _as_vec(pair.f(u)) - a @ u, rtol=1e-10, atol=1e-14):
                raise ValidationError("supplied F_hat is inconsistent with F - A x")
    else:
        f, df = pair.f, pair.df

        def fh(x):
            x = _as_vec(x)
            return _as_vec(f(x)) - a @ x

        def dfh(x):
            return np.atleast_2d(df(_as_vec(x))) - a

    if np.linalg.norm(np.asarray(dfh(np.zeros(pair.dim)))) > ZERO_TOL:
        raise ValidationError("derivative of F_hat does not vanish at the origin")
    return Linearization(a, fh, dfh)


# -- cut-off -----------------------------------------------------------------------


def quintic_profile(r: float) -> float:
    return _kernels.quintic_profile(float(r))


def _profile_arrays(r: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x = np.clip(2.0 * r - 1.0, 0.0, 1.0)
    phi = 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x * x)
    inside = (r > 0.5) & (r < 1.0)
    dphi = np.where(inside, -2.0 * 30.0 * x * x * (1.0 - x) ** 2, 0.0)
    d2phi = np.where(inside, -4.0 * 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x), 0.0)
    return phi, dphi, d2phi


@lru_cache(maxsize=1)
def _quintic_constants(samples: int = 200001, headroom: float = 1.01) -> tuple[float, float]:
    r = np.linspace(0.0, 1.5, samples)
    phi, dphi, d2phi = _profile_arrays(r)
    # eigenvalues of Dχ are φ (transverse) and φ + rφ' (radial)
    l1 = float(np.max(np.maximum(np.abs(phi), np.abs(phi + r * dphi))))
    # |D²χ[h,k]| <= 4|φ'| + r|φ''| for unit h, k
    l2 = float(np.max(4.0 * np.abs(dphi) + r * np.abs(d2phi)))
    return l1 * headroom, l2 * headroom


@dataclass(frozen=True)
class CutoffKit:
    """Radial cut-off ``χ(u) = φ(|u|) u`` with a quintic smoothstep profile."""

    l_dchi: float
    l_d2chi: float

    @classmethod
    def quintic(cls) -> "CutoffKit":
        l1, l2 = _quintic_constants()
        return cls(l1, l2)

    def profile(self, r: float) -> float:
        return quintic_profile(r)

    def chi(self, u) -> np.ndarray:
        u = _as_vec(u)
        return self.profile(float(np.linalg.norm(u))) * u


def cutoff(kit: CutoffKit, u, r_hat: float) -> np.ndarray:
    """``χ_R̂(u) = R̂ χ(u / R̂)``."""
    if not r_hat > 0:
        raise DomainError(f"cut-off radius must be positive, got {r_hat}")
    u = _as_vec(u)
    return kit.profile(float(np.linalg.norm(u)) / r_hat) * u


@dataclass(frozen=True, eq=False)
class LocalizedPair:
    f_hat: Callable
    g: Callable
    r_hat: float
    kit: CutoffKit
    base_f_hat: Callable
    base_g: Callable
    dim: int


def localized_fields(lin: Linearization, pair: FieldPair, kit: CutoffKit, r_hat: float) -> LocalizedPair:
    """``F̂ ∘ χ_R̂`` and ``G ∘ χ_R̂``."""
    if not 0 < r_hat <= pair.rho * (1 + 1e-12):
        raise DomainError(f"localization radius {r_hat} must lie in (0, rho={pair.rho}]")
    fh, g = lin.f_hat, pair.g

    def f_loc(u):
        return _as_vec(fh(cutoff(kit, u, r_hat)))

    def g_loc(u):
        return np.asarray(g(cutoff(kit, u, r_hat)), dtype=float)

    return LocalizedPair(f_loc, g_loc, float(r_hat), kit, fh, g, pair.dim)


@dataclass(frozen=True)
class Lemma6Report:
    drift_violation: float
    diffusion_violation: float
    lipschitz_violation: float
    samples: int

    @property
    def max_violation(self) -> float:
        return max(self.drift_violation, self.diffusion_violation, self.lipschitz_violation)

    @property
    def holds(self) -> bool:
        return self.max_violation <= 1e-9


def lemma6_check(loc: LocalizedPair, r_target: float, kit: CutoffKit | None = None,
                 samples: int = 10_000, seed: int = 0) -> Lemma6Report:
    """Largest violations of the linear-growth and Lipschitz bounds ``R L_Dχ |·|``.

    Points ``u, z`` are drawn from the ball of radius ``2 R̂`` so that both the
    identity region and the region cut to zero are exercised.
    """
    kit = loc.kit if kit is None else kit
    rng = np.random.default_rng(seed)
    d = loc.dim
    c = r_target * kit.l_dchi
    worst = [0.0, 0.0, 0.0]
    for _ in range(samples):
        u = rng.standard_normal(d) * (2.0 * loc.r_hat / math.sqrt(d)) * rng.random()
        z = rng.standard_normal(d) * (2.0 * loc.r_hat / math.sqrt(d)) * rng.random()
        nu = float(np.linalg.norm(u))
        worst[0] = max(worst[0], float(np.linalg.norm(loc.f_hat(u))) - c * nu)
        gu = loc.g(u)
        worst[1] = max(worst[1], float(np.linalg.norm(gu)) - c * nu)
        worst[2] = max(worst[2], float(np.linalg.norm(gu - loc.g(z))) - c * float(np.linalg.norm(u - z)))
    return Lemma6Report(worst[0], worst[1], worst[2], samples)


# -- derivative bound map and its inverse ----------------------------------------


def _derivative_size(lin: Linearization, pair: FieldPair, v: np.ndarray) -> float:
    dg = np.asarray(pair.dg(v), dtype=float)
    dfh = np.atleast_2d(np.asarray(lin.df_hat(v), dtype=float))
    return float(np.linalg.norm(dg)) + float(np.linalg.norm(dfh, 2))


def _directions(dim: int, count: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    # seeded scrambling keeps the set deterministic and avoids the centre point
    pts = qmc.Sobol(dim, scramble=True, seed=0).random_base2(max(1, math.ceil(math.log2(count))))
    x = norm.ppf(pts)
    x = x[np.linalg.norm(x, axis=1) > 1e-8]
    x = np.concatenate([x, np.eye(dim), -np.eye(dim)])
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class BoundMap:
    """Monotone estimate of ``h(r) = sup_{|v| <= r} (|DG(v)| + |DF̂(v)|)``.

    Derivative sizes are tabulated on geometric shells times a fixed set of
    directions; ``h(r)`` is the running maximum up to the first shell at or
    beyond ``r``, so it is non-decreasing and never below the sampled values.
    A closed form, when given, replaces the table.
    """

    def __init__(self, lin: Linearization, pair: FieldPair, closed_form: Callable | None = None,
                 shells: int | None = None, directions: int = 32, inner: float = 1e-9):
        self.rho = float(pair.rho)
        self.closed_form = closed_form if closed_form is not None else pair.bound_closed_form
        self.radii = None
        self.table = None
        if self.closed_form is None:
            if shells is None:
                shells = 4096 if pair.dim == 1 else 256
            radii = np.concatenate([[0.0], np.geomspace(self.rho * inner, self.rho, shells)])
            dirs = _directions(pair.dim, directions)
            vals = np.array([
                max(_derivative_size(lin, pair, r * e) for e in dirs) for r in radii
            ])
            self.radii = radii
            self.table = np.maximum.accumulate(vals)

    def __call__(self, r: float) -> float:
        if r < 0 or r > self.rho * (1 + 1e-12):
            raise DomainError(f"radius {r} outside [0, rho={self.rho}]")
        if self.closed_form is not None:
            return float(self.closed_form(float(r)))
        j = int(np.searchsorted(self.radii, r, side="left"))
        return float(self.table[min(j, self.table.size - 1)])


def bound_h(lin: Linearization, pair: FieldPair, r: float, closed_form: Callable | None = None) -> float:
    """One evaluation of the derivative bound map; build a :class:`BoundMap` for repeated use."""
    if r < 0 or r > pair.rho * (1 + 1e-12):
        raise DomainError(f"radius {r} outside [0, rho={pair.rho}]")
    return _bound_map_cached(lin, pair, closed_form)(r)


@lru_cache(maxsize=32)
def _bound_map_cached(lin, pair, closed_form) -> BoundMap:
    return BoundMap(lin, pair, closed_form)


def inverse_j(h: Callable[[float], float], x: float, rho: float, rel_tol: float = 1e-10) -> float:
    """Largest ``r`` in ``[0, rho]`` with ``h(r) <= x``, by bisection."""
    if x < 0:
        raise DomainError(f"inverse map needs x >= 0, got {x}")
    if h(rho) <= x:
        return float(rho)
    lo, hi = 0.0, float(rho)
    tol = rel_tol * rho
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) <= x:
            lo = mid
        else:
            hi = mid
    return lo


def _check_eps_hat(eps_hat: float) -> None:
    if not 0.0 < eps_hat < 1.0:
        raise ConfigurationError(f"eps_hat must lie in (0, 1), got {eps_hat}")


def r_of_omega(eps_hat: float, k_const: float, omega: SampledPath, beta_prime: float | None = None) -> float:
    """``ε̂ / (2K(1 + seminorm of ω on [0, 1]))``."""
    _check_eps_hat(eps_hat)
    if not k_const > 0:
        raise ConfigurationError("K must be positive")
    bp = omega.beta_prime if beta_prime is None else beta_prime
    semi = holder_seminorm(omega, bp, omega.t0, omega.t0 + 1.0)
    return eps_hat / (2.0 * k_const * (1.0 + semi))


def rhat_of_omega(lin: Linearization, pair: FieldPair, eps_hat: float, k_const: float,
                  omega: SampledPath, bound: Callable | None = None) -> float:
    h = bound if bound is not None else _bound_map_cached(lin, pair, None)
    r = r_of_omega(eps_hat, k_const, omega)
    return min(inverse_j(h, r, pair.rho), pair.rho)


def k_constant(m_const: float, a_norm: float, l_dchi: float, c_ybb: float) -> float:
    """``max(1, C) M² L_Dχ (2 + 3|A| + |A|²)``."""
    if m_const < 1:
        raise DomainError(f"M must be >= 1, got {m_const}")
    if a_norm < 0 or l_dchi <= 0 or c_ybb <= 0:
        raise DomainError("norm and constants must be positive")
    return max(1.0, c_ybb) * m_const**2 * l_dchi * (2.0 + 3.0 * a_norm + a_norm**2)


@dataclass(frozen=True)
class KappaReport:
    r_values: np.ndarray
    ratios: np.ndarray
    running_min: np.ndarray


def kappa_diagnostic(h: Callable[[float], float], rho: float, r_sweep: Sequence[float]) -> KappaReport:
    """``R̂(R) / R`` along a sweep, ordered from large to small ``R``."""
    rs = np.sort(np.asarray(r_sweep, dtype=float))[::-1]
    if np.any(rs <= 0):
        raise DomainError("sweep values must be positive")
    ratios = np.array([inverse_j(h, r, rho) / r for r in rs])
    return KappaReport(rs, ratios, np.minimum.accumulate(ratios))


@dataclass(frozen=True)
class TemperednessReport:
    tail: np.ndarray
    estimate: float


def temperedness_diagnostic(values: Sequence[float]) -> TemperednessReport:
    """``log⁺(values[n]) / n`` for ``n >= 1`` and its maximum over the last quartile."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise DomainError("need at least two values")
    if np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise DomainError("values must be positive and finite")
    n = np.arange(1, v.size)
    tail = np.maximum(np.log(v[1:]), 0.0) / n
    start = int(math.floor(0.75 * tail.size))
    return TemperednessReport(tail, float(np.max(tail[start:])))
