"""Unit-interval iteration with per-interval localization, Gronwall and comparison checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError, HypothesisError
from .fields import (
    BoundMap,
    CutoffKit,
    FieldPair,
    Linearization,
    inverse_j,
    k_constant,
    localized_fields,
    r_of_omega,
)
from .fraccalc import young_constant
from .linops import StableMatrix, estimate_M, op_norm, phi_matrix
from .paths import SampledPath, holder_norms_values, wiener_shift

EQ_TOL = 1e-12


def eps_hat_max(lam: float, eps: float, below_one: bool = True) -> float:
    """Largest ε̂ with ``e^{-λ} + ε̂ <= (1 + ε̂) e^{-(λ-ε)}``."""
    if not 0.0 < eps < lam:
        raise DomainError(f"need 0 < eps < lambda, got eps={eps}, lambda={lam}")
    q = math.exp(-(lam - eps))
    val = q * (-math.expm1(-eps)) / (1.0 - q)
    if below_one:
        val = min(val, math.nextafter(1.0, 0.0))
    return val


def decay_condition_gap(lam: float, eps: float, eps_hat: float) -> float:
    """``(1 + ε̂) e^{-(λ-ε)} - e^{-λ} - ε̂``; non-negative when admissible."""
    return (1.0 + eps_hat) * math.exp(-(lam - eps)) - math.exp(-lam) - eps_hat


def theorem_rate(lam: float, eps: float, eps_hat: float) -> float:
    return (lam - eps) - math.log1p(eps_hat)


@dataclass(frozen=True)
class StabilityParams:
    lam: float
    eps: float
    eps_hat: float
    beta: float
    beta_prime: float
    alpha: float | None = None
    n_intervals: int = 30
    u0: tuple = (1e-4,)
    steps_per_unit: int = 1024

    def __post_init__(self):
        if not 0.0 < self.eps < self.lam:
            raise ConfigurationError(f"need 0 < eps < lambda, got {self.eps}, {self.lam}")
        if not 0.0 < self.eps_hat < 1.0:
            raise ConfigurationError(f"eps_hat must lie in (0, 1), got {self.eps_hat}")
        if decay_condition_gap(self.lam, self.eps, self.eps_hat) < -EQ_TOL:
            raise ConfigurationError("eps_hat violates e^-lam + eps_hat <= (1 + eps_hat) e^-(lam - eps)")
        if math.log1p(self.eps_hat) > self.lam - self.eps + EQ_TOL:
            raise ConfigurationError("eps_hat violates log(1 + eps_hat) <= lam - eps")
        if not 0.5 < self.beta < self.beta_prime < 1.0:
            raise ConfigurationError("exponents must satisfy 1/2 < beta < beta' < 1")
        alpha = 0.5 * (1.0 - self.beta_prime + self.beta) if self.alpha is None else float(self.alpha)
        if not 1.0 - self.beta_prime < alpha < self.beta:
            raise ConfigurationError(f"alpha {alpha} outside (1 - beta', beta)")
        if self.n_intervals < 1 or self.steps_per_unit < 2:
            raise ConfigurationError("need at least one interval and two steps per interval")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "u0", tuple(float(x) for x in np.atleast_1d(self.u0)))

    @property
    def rate(self) -> float:
        return theorem_rate(self.lam, self.eps, self.eps_hat)

    def with_u0(self, u0) -> "StabilityParams":
        return StabilityParams(self.lam, self.eps, self.eps_hat, self.beta, self.beta_prime, self.alpha,
                               self.n_intervals, tuple(np.atleast_1d(u0)), self.steps_per_unit)


# -- Gronwall and comparison -------------------------------------------------------------


@dataclass(frozen=True)
class GronwallVerdict:
    hypothesis_violations: tuple[int, ...]
    conclusion_violations: tuple[int, ...]
    min_conclusion_slack: float

    @property
    def hypothesis_holds(self) -> bool:
        return not self.hypothesis_violations

    @property
    def conclusion_holds(self) -> bool:
        return not self.conclusion_violations


def gronwall_rhs(v: Sequence[float], zeta0: float, k: float, lam: float, eps_hat: float) -> np.ndarray:
    """``Z_n = kζ₀e^{-λn} + ε̂ Σ_{j<n} v_j e^{-λ(n-j-1)}`` via ``Z_{n+1} = e^{-λ}Z_n + ε̂ v_n``."""
    v = np.asarray(v, dtype=float)
    z = np.empty(v.size)
    decay = math.exp(-lam)
    cur = k * zeta0
    for n in range(v.size):
        z[n] = cur
        cur = decay * cur + eps_hat * v[n]
    return z


def gronwall_bound(n: np.ndarray, zeta0: float, k: float, lam: float, eps: float, eps_hat: float) -> np.ndarray:
    return k * zeta0 * np.exp(n * (math.log1p(eps_hat) - (lam - eps)))


def gronwall_check(v: Sequence[float], zeta0: float, k: float, lam: float, eps: float, eps_hat: float,
                   tol: float = EQ_TOL) -> GronwallVerdict:
    """Check the recursive hypothesis term by term and the geometric conclusion."""
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise DomainError("sequence must be non-negative")
    scale = max(k * zeta0, 1e-300)
    z = gronwall_rhs(v, zeta0, k, lam, eps_hat)
    hyp = tuple(int(i) for i in np.nonzero(v > z + tol * scale)[0])
    bound = gronwall_bound(np.arange(v.size), zeta0, k, lam, eps, eps_hat)
    slack = (bound - v) / scale
    concl = tuple(int(i) for i in np.nonzero(slack < -tol)[0])
    return GronwallVerdict(hyp, concl, float(np.min(slack)) if v.size else math.inf)


@dataclass(frozen=True)
class ComparisonVerdict:
    holds: bool
    violations: tuple[int, ...]
    threshold: float
    hypotheses_hold: bool


def comparison_check(r: Sequence[float], v: Sequence[float], c_eps: float, eps: float, mu: float,
                     v0: float | None = None) -> ComparisonVerdict:
    """``v_i <= R_i`` given ``R_i >= C_ε e^{-εi}`` and ``v_i <= v₀ e^{-μi}``.

    The sharp threshold on ``v₀`` is ``C_ε`` since ``μ > ε`` puts the worst case at ``i = 0``.
    """
    if not 0.0 < eps < mu:
        raise HypothesisError(f"need 0 < eps < mu, got eps={eps}, mu={mu}")
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    i = np.arange(r.size)
    hyp = bool(np.all(r >= c_eps * np.exp(-eps * i) * (1 - EQ_TOL)))
    if v0 is not None:
        hyp = hyp and bool(np.all(v <= v0 * np.exp(-mu * i) * (1 + EQ_TOL)))
    bad = tuple(int(j) for j in np.nonzero(v > r)[0])
    return ComparisonVerdict(not bad, bad, float(c_eps), hyp)


def rate_search(lam: float, target: float, max_halvings: int = 60) -> tuple[float, float, float]:
    """Admissible ``(ε, ε̂)`` whose guaranteed rate exceeds ``target < λ``."""
    if not target < lam:
        raise DomainError("target rate must lie below lambda")
    eps = 0.5 * lam
    for _ in range(max_halvings):
        eh = eps_hat_max(lam, eps)
        if math.log1p(eh) <= lam - eps:
            rate = theorem_rate(lam, eps, eh)
            if rate > target:
                return eps, eh, rate
        eps *= 0.5
    raise DomainError(f"no admissible pair found for target {target}")


# -- the unit-interval iteration ----------------------------------------------------------


@dataclass(frozen=True)
class StabilityConstants:
    m_const: float
    a_norm: float
    c_young: float
    k_const: float
    k_prefactor: float


def stability_constants(lin: Linearization, kit: CutoffKit, params: StabilityParams) -> StabilityConstants:
    sm = StableMatrix(lin.a, params.lam)
    m = estimate_M(sm).m_const
    an = op_norm(lin.a)
    c = young_constant(params.alpha, params.beta, params.beta_prime)
    k = k_constant(m, an, kit.l_dchi, c)
    return StabilityConstants(m, an, c, k, 2.0 * m * (1.0 + an))


@dataclass(frozen=True)
class StabilityReport:
    norms: np.ndarray
    rhat_seq: np.ndarray
    cutoff_active: np.ndarray
    fitted_rate: float
    fit_residual: float
    theorem_rate: float
    k_used: float
    m_used: float
    k_prefactor: float
    u0: np.ndarray
    blowup: bool = False
    endpoints: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    trajectory: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def escaped(self) -> bool:
        return self.blowup or bool(np.any(self.cutoff_active))

    @property
    def theorem_applicable(self) -> bool:
        return not self.escaped

    def to_dict(self) -> dict:
        def fl(x):
            # JSON has no non-finite numbers
            x = float(x)
            return x if math.isfinite(x) else str(x)

        return {
            "norms": [float(x) for x in self.norms],
            "rhat_seq": [float(x) for x in self.rhat_seq],
            "cutoff_active": [bool(x) for x in self.cutoff_active],
            "fitted_rate": fl(self.fitted_rate),
            "fit_residual": fl(self.fit_residual),
            "theorem_rate": float(self.theorem_rate),
            "k_used": float(self.k_used),
            "m_used": float(self.m_used),
            "k_prefactor": float(self.k_prefactor),
            "u0": [float(x) for x in self.u0],
            "blowup": self.blowup,
            "escaped": self.escaped,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    def save_csv(self, path: str | Path) -> None:
        lines = ["n,norm,rhat,flag"]
        for n, (a, b, c) in enumerate(zip(self.norms, self.rhat_seq, self.cutoff_active)):
            lines.append(f"{n},{a:.17g},{b:.17g},{int(bool(c))}")
        Path(path).write_text("\n".join(lines) + "\n")


def fit_decay_rate(norms: Sequence[float], fraction: float = 0.8) -> tuple[float, float]:
    """Least-squares slope of ``-log |u^n|`` against ``n`` over the last ``fraction`` of intervals.

    Returns ``(rate, rms residual)``; ``(inf, 0)`` when every norm is zero.
    """
    v = np.asarray(norms, dtype=float)
    n = np.arange(v.size)
    start = int(math.floor((1.0 - fraction) * v.size))
    n, v = n[start:], v[start:]
    keep = v > 0
    if keep.sum() == 0:
        return math.inf, 0.0
    if keep.sum() == 1:
        return math.nan, math.nan
    y = -np.log(v[keep])
    x = n[keep].astype(float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def _is_nonlinearity_free(bound: Callable[[float], float], rho: float) -> bool:
    return bound(rho) == 0.0


def rhat_sequence(lin: Linearization, pair: FieldPair, params: StabilityParams, omega: SampledPath,
                  k_const: float, bound: Callable[[float], float]) -> np.ndarray:
    """``R̂(θ_n ω)`` for ``n = 0 .. N-1``."""
    out = np.empty(params.n_intervals)
    for n in range(params.n_intervals):
        shifted = wiener_shift(omega, float(n)) if n else omega
        r = r_of_omega(params.eps_hat, k_const, shifted, params.beta_prime)
        out[n] = min(inverse_j(bound, r, pair.rho), pair.rho)
    return out


def _check_driver(omega: SampledPath, params: StabilityParams) -> None:
    if omega.t0 != 0.0:
        raise DomainError("the driver must start at t = 0")
    if abs(omega.dt * params.steps_per_unit - 1.0) > 1e-12:
        raise DomainError(f"driver step must be 1/{params.steps_per_unit}")
    if omega.horizon < params.n_intervals + 1 - 1e-9:
        raise DomainError(f"driver horizon {omega.horizon} shorter than N + 1 = {params.n_intervals + 1}")


@dataclass
class _Context:
    lin: Linearization
    pair: FieldPair
    kit: CutoffKit
    params: StabilityParams
    omega: SampledPath
    consts: StabilityConstants
    bound: Callable[[float], float]
    rhat: np.ndarray
    linear_only: bool
    E: np.ndarray
    Phi: np.ndarray


def _context(lin, pair, kit, params, omega, consts=None, bound=None) -> _Context:
    _check_driver(omega, params)
    consts = consts or stability_constants(lin, kit, params)
    bound = bound or BoundMap(lin, pair)
    rhat = rhat_sequence(lin, pair, params, omega, consts.k_const, bound)
    E, Phi = phi_matrix(lin.a, omega.dt)
    return _Context(lin, pair, kit, params, omega, consts, bound, rhat,
                    _is_nonlinearity_free(bound, pair.rho), E, Phi)


def _iterate(ctx: _Context, u0: np.ndarray, keep_trajectory: bool = False) -> StabilityReport:
    p, per = ctx.params, ctx.params.steps_per_unit
    fhat, g = ctx.lin.f_hat, ctx.pair.g
    if not _kernels.is_jitted(fhat, g):
        from .solver import _wrap_mat, _wrap_vec

        fhat, g = _wrap_vec(fhat), _wrap_mat(g, ctx.pair.dim)
    norms = np.zeros(p.n_intervals)
    flags = np.zeros(p.n_intervals, dtype=bool)
    ends = [u0.copy()]
    pieces = []
    u = u0.copy()
    blowup = False
    done = 0
    for n in range(p.n_intervals):
        shifted = wiener_shift(ctx.omega, float(n)) if n else ctx.omega
        dw = np.diff(shifted.values[: per + 1], axis=0)
        loc = localized_fields(ctx.lin, ctx.pair, ctx.kit, ctx.rhat[n])
        out, last = _kernels.run_mild(fhat, g, _kernels.quintic_chi, ctx.E, ctx.Phi, u, dw,
                                      r_hat=loc.r_hat, localize=True)
        if last < per:
            blowup = True
            break
        norms[n] = holder_norms_values(out, shifted.dt, p.beta).norm
        flags[n] = (not ctx.linear_only) and norms[n] > 0.5 * ctx.rhat[n]
        u = out[-1].copy()
        ends.append(u.copy())
        if keep_trajectory:
            pieces.append(out if n == 0 else out[1:])
        done = n + 1
    if blowup:
        norms = norms[:done]
        flags = np.append(flags[:done], True)
    rate, resid = fit_decay_rate(norms)
    traj = np.concatenate(pieces) if keep_trajectory and pieces else None
    c = ctx.consts
    return StabilityReport(norms, ctx.rhat.copy(), flags, rate, resid, p.rate, c.k_const, c.m_const,
                           c.k_prefactor, u0.copy(), blowup, np.asarray(ends), traj)


def iterate_unit_intervals(lin: Linearization, pair: FieldPair, kit: CutoffKit, params: StabilityParams,
                           omega: SampledPath, consts: StabilityConstants | None = None,
                           bound: Callable[[float], float] | None = None,
                           keep_trajectory: bool = False) -> StabilityReport:
    """Chain localized mild solves over ``[n, n+1]`` driven by ``θ_n ω``.

    Interval ``n`` uses the cut-off radius ``R̂(θ_n ω)``; it is flagged when the
    Hoelder norm of the piece exceeds half that radius (unless the fields have no
    nonlinear part at all, in which case the cut-off is inert).
    """
    ctx = _context(lin, pair, kit, params, omega, consts, bound)
    return _iterate(ctx, np.asarray(params.u0, dtype=float), keep_trajectory)


def admissible_neighborhood(lin: Linearization, pair: FieldPair, kit: CutoffKit, params: StabilityParams,
                            omega: SampledPath, consts: StabilityConstants | None = None,
                            bound: Callable[[float], float] | None = None, steps: int = 12,
                            lower: float = 1e-10) -> float:
    """Largest ``|u0|`` along the direction of ``params.u0`` with no cut-off activity.

    Bisection is geometric on ``[lower, rho]`` because the admissible radii span
    many decades.
    """
    ctx = _context(lin, pair, kit, params, omega, consts, bound)
    direction = np.asarray(params.u0, dtype=float)
    norm = float(np.linalg.norm(direction))
    if norm == 0:
        direction = np.eye(pair.dim)[0]
    else:
        direction = direction / norm

    def ok(r: float) -> bool:
        return not _iterate(ctx, r * direction).escaped

    top = float(pair.rho)
    if ok(top):
        return top
    if not ok(lower):
        raise ConfigurationError(f"even |u0| = {lower:g} leaves the localized regime")
    lo, hi = lower, top
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class UncutResult:
    consistent: bool
    distance: float

    def __bool__(self) -> bool:
        return self.consistent


def uncut_consistency(report: StabilityReport, lin: Linearization | None = None,
                      pair: FieldPair | None = None, omega: SampledPath | None = None,
                      tol: float = 1e-6) -> UncutResult:
    """True iff no interval was flagged; with the problem data, also re-solve the
    unlocalized mild equation over ``[0, N]`` and compare with the chained pieces."""
    if report.escaped:
        return UncutResult(False, math.nan)
    if lin is None or pair is None or omega is None or report.trajectory is None:
        return UncutResult(True, math.nan)
    from .solver import YoungProblem, solve_mild

    n = report.norms.size
    steps = report.trajectory.shape[0] - 1
    horizon = steps * omega.dt
    prob = YoungProblem(pair, omega, report.u0, horizon=horizon, beta=None)
    full = solve_mild(lin, prob, record_norms=False).values
    m = min(full.shape[0], report.trajectory.shape[0])
    dist = float(np.max(np.linalg.norm(full[:m] - report.trajectory[:m], axis=1))) if n else 0.0
    return UncutResult(dist <= tol, dist)


def rate_dominance(report: StabilityReport, params: StabilityParams) -> tuple[bool, bool]:
    """``(hypothesis holds, conclusion bound holds)`` for the measured norms with
    ``k = 2M(1 + |A|)`` and ``ζ₀ = |u0|``."""
    zeta0 = float(np.linalg.norm(report.u0))
    v = gronwall_check(report.norms, zeta0, report.k_prefactor, params.lam, params.eps, params.eps_hat)
    bound = gronwall_bound(np.arange(report.norms.size), zeta0, report.k_prefactor,
                           params.lam, params.eps, params.eps_hat)
    return v.hypothesis_holds, bool(np.all(report.norms <= bound * (1 + EQ_TOL)))
