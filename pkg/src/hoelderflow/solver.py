"""Young ODE solvers: left-point Euler, exponential Euler (mild form), Doss-Sussmann."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from numba import njit

from . import _kernels
from .errors import ConfigurationError, DomainError, HypothesisError
from .fields import FieldPair, Linearization, LocalizedPair
from .linops import phi_matrix
from .paths import SampledPath, holder_norms_values


@dataclass(frozen=True)
class YoungProblem:
    fields: FieldPair
    omega: SampledPath
    u0: np.ndarray
    horizon: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        u0 = np.atleast_1d(np.asarray(self.u0, dtype=float)).copy()
        if not np.all(np.isfinite(u0)):
            raise DomainError("initial value must be finite")
        if u0.shape != (self.fields.dim,):
            raise DomainError(f"initial value must have shape ({self.fields.dim},)")
        if self.omega.dim != self.fields.noise_dim:
            raise DomainError("driver dimension does not match the diffusion's noise dimension")
        bp = self.omega.beta_prime
        beta = bp - 0.05 if self.beta is None else float(self.beta)
        if not 0.5 < beta < bp:
            raise ConfigurationError(f"solution exponent must satisfy 1/2 < beta < beta' = {bp}, got {beta}")
        horizon = self.omega.horizon - self.omega.t0 if self.horizon is None else float(self.horizon)
        self.omega.index(self.omega.t0 + horizon)
        u0.setflags(write=False)
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "horizon", horizon)

    @property
    def steps(self) -> int:
        return self.omega.index(self.omega.t0 + self.horizon)

    def increments(self) -> np.ndarray:
        return np.diff(self.omega.values[: self.steps + 1], axis=0)


@dataclass(frozen=True)
class Trajectory:
    """Solution on the driver grid; ``norms`` rows are ``(n, holder_norm, sup_norm)``."""

    t0: float
    dt: float
    values: np.ndarray
    scheme: str
    blowup: bool = False
    last_index: int = -1
    norms: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.shape[0])

    @property
    def per_unit_norms(self) -> np.ndarray:
        return self.norms[:, 1]

    def save_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"u{i + 1}" for i in range(self.values.shape[1])])
            for t, row in zip(self.times, self.values):
                w.writerow([format(t, ".17g")] + [format(x, ".17g") for x in row])

    def save_norms_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "holder_norm", "sup_norm"])
            for n, hn, sn in self.norms:
                w.writerow([int(n), format(hn, ".17g"), format(sn, ".17g")])


def unit_interval_norms(values: np.ndarray, dt: float, beta: float) -> np.ndarray:
    """``(n, |u|_{β,n,n+1}, |u|_{∞,n,n+1})`` for every complete unit interval."""
    per = int(round(1.0 / dt))
    if abs(per * dt - 1.0) > 1e-9:
        raise DomainError("unit intervals must contain a whole number of grid steps")
    rows = []
    for n in range((values.shape[0] - 1) // per):
        hn = holder_norms_values(values[n * per : (n + 1) * per + 1], dt, beta)
        rows.append((n, hn.norm, hn.sup))
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def _wrap_vec(fn: Callable) -> Callable:
    def out(u):
        return np.atleast_1d(np.asarray(fn(u), dtype=float))
    return out


def _wrap_mat(fn: Callable, d: int) -> Callable:
    def out(u):
        return np.asarray(fn(u), dtype=float).reshape(d, -1)
    return out


def _finish(problem: YoungProblem, out: np.ndarray, last: int, scheme: str, record_norms: bool) -> Trajectory:
    n = problem.steps
    blowup = last < n
    norms = (unit_interval_norms(out, problem.omega.dt, problem.beta)
             if record_norms and out.shape[0] > 1 else np.zeros((0, 3)))
    out.setflags(write=False)
    return Trajectory(problem.omega.t0, problem.omega.dt, out, scheme, blowup, last, norms)


def solve_euler(problem: YoungProblem, record_norms: bool = True) -> Trajectory:
    """Left-point scheme ``u + F(u) δ + G(u) Δω``; stops with a blow-up marker above 1e12."""
    fp = problem.fields
    f, g = fp.f, fp.g
    if not _kernels.is_jitted(f, g):
        f, g = _wrap_vec(f), _wrap_mat(g, fp.dim)
    out, last = _kernels.run_euler(f, g, problem.u0, problem.increments(), problem.omega.dt)
    return _finish(problem, out, last, "euler", record_norms)


def solve_mild(lin: Linearization, problem: YoungProblem, localized: LocalizedPair | None = None,
               record_norms: bool = True) -> Trajectory:
    """Exponential Euler: ``e^{Aδ}u + Φ(δ) F̂(u) + e^{Aδ} G(u) Δω`` with ``Φ(δ) = ∫_0^δ e^{As} ds``.

    With ``localized`` both fields are evaluated at ``χ_R̂(u)``.
    """
    E, Phi = phi_matrix(lin.a, problem.omega.dt)
    fhat, g = lin.f_hat, problem.fields.g
    chi = _kernels.quintic_chi
    if not _kernels.is_jitted(fhat, g):
        fhat, g = _wrap_vec(fhat), _wrap_mat(g, problem.fields.dim)
    r_hat = 1.0 if localized is None else localized.r_hat
    out, last = _kernels.run_mild(fhat, g, chi, E, Phi, problem.u0, problem.increments(),
                                  r_hat=r_hat, localize=localized is not None)
    return _finish(problem, out, last, "mild", record_norms)


# -- piecewise-linear drivers ----------------------------------------------------------


def interpolated_driver(omega: SampledPath, stride: int) -> SampledPath:
    """Piecewise-linear interpolation of ``omega`` through every ``stride``-th grid value."""
    n = omega.n_steps
    if stride < 1 or n % stride:
        raise DomainError(f"stride {stride} must divide the number of steps {n}")
    idx = np.arange(0, n + 1, stride)
    knots = omega.values[idx]
    w = (np.arange(n + 1) % stride) / stride
    left = np.minimum(np.arange(n + 1) // stride, idx.size - 1)
    right = np.minimum(left + 1, idx.size - 1)
    vals = (1.0 - w)[:, None] * knots[left] + w[:, None] * knots[right]
    return omega.with_values(vals)


@dataclass(frozen=True)
class WongZakaiReport:
    steps: np.ndarray
    distances: np.ndarray

    @property
    def order(self) -> float:
        keep = self.distances > 0
        if keep.sum() < 2:
            return math.inf
        return float(np.polyfit(np.log(self.steps[keep]), np.log(self.distances[keep]), 1)[0])

    def tail_monotone(self, tail: int | None = None) -> bool:
        d = self.distances if tail is None else self.distances[-tail:]
        return bool(np.all(np.diff(d) <= 0))


def wong_zakai_check(problem: YoungProblem, levels: int, coarsest: int = 1,
                     solve: Callable[[YoungProblem], Trajectory] | None = None) -> WongZakaiReport:
    """Sup-distance between solutions driven by piecewise-linear drivers with step ``T 2^-k``
    (``k = coarsest .. coarsest + levels - 1``) and the solution driven by the full grid path."""
    if levels < 2:
        raise DomainError("need at least two levels")
    solve = solve or (lambda p: solve_euler(p, record_norms=False))
    n = problem.steps
    ref = solve(problem).values
    steps, dists = [], []
    omega = problem.omega
    if omega.n_steps != n:
        omega = omega.restrict(omega.t0, omega.t0 + problem.horizon)
    for k in range(coarsest, coarsest + levels):
        if n % (1 << k):
            raise DomainError(f"level {k} does not divide the grid of {n} steps")
        stride = n >> k
        drv = interpolated_driver(omega, stride)
        sub = YoungProblem(problem.fields, drv, problem.u0, problem.horizon, problem.beta)
        vals = solve(sub).values
        m = min(vals.shape[0], ref.shape[0])
        steps.append(problem.horizon / (1 << k))
        dists.append(float(np.max(np.linalg.norm(vals[:m] - ref[:m], axis=1))))
    return WongZakaiReport(np.asarray(steps), np.asarray(dists))


# -- Doss-Sussmann ------------------------------------------------------------------


def make_sine_drift(mu: float) -> Callable:
    """Compiled scalar map ``x -> μ sin x``."""
    mu = float(mu)

    @njit
    def fhat(x):
        return mu * np.sin(x)

    return fhat


@dataclass(frozen=True)
class DossProblem:
    """Scalar ``du = (-λu + F̂(u)) dt + γu dω`` with ``|F̂(x)| <= μ|x|``, ``0 <= μ < λ``."""

    lam: float
    gamma: float
    mu: float
    f_hat: Callable[[float], float]
    omega: SampledPath
    u0: float
    check_radius: float = 100.0
    check_points: int = 20001

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError("lambda must be positive")
        if not 0.0 <= self.mu < self.lam:
            raise HypothesisError(f"need 0 <= mu < lambda, got mu={self.mu}, lambda={self.lam}")
        if self.omega.dim != 1:
            raise DomainError("the transformation needs a scalar driver")
        if not math.isfinite(self.u0):
            raise DomainError("initial value must be finite")
        xs = np.linspace(-self.check_radius, self.check_radius, self.check_points)
        vals = np.array([self.f_hat(float(x)) for x in xs])
        if np.any(np.abs(vals) > self.mu * np.abs(xs) * (1 + 1e-12) + 1e-300):
            raise HypothesisError("drift remainder violates |F_hat(x)| <= mu |x|")

    def field_pair(self) -> FieldPair:
        """Same equation as a field pair, for the direct solver."""
        lam, gamma, fh = float(self.lam), float(self.gamma), self.f_hat
        jit = _kernels.is_jitted(fh)
        deco = njit if jit else (lambda fn: fn)

        @deco
        def f(u):
            out = np.empty(1)
            out[0] = -lam * u[0] + fh(u[0])
            return out

        @deco
        def g(u):
            out = np.empty((1, 1))
            out[0, 0] = gamma * u[0]
            return out

        def df(u):
            h = 1e-6 * max(1.0, abs(float(u[0])))
            return np.array([[-lam + (fh(float(u[0]) + h) - fh(float(u[0]) - h)) / (2 * h)]])

        def dg(u):
            return np.full((1, 1, 1), gamma)

        def d2g(u):
            return np.zeros((1, 1, 1, 1))

        return FieldPair(f, df, g, dg, d2g, math.inf, 1, 1, "doss")


def doss_solve(problem: DossProblem) -> Trajectory:
    """RK4 for ``D' = e^{-γω+λt} F̂(e^{γω-λt} D)`` and ``u = sign(D) exp(log|D| + γω - λt)``."""
    om = problem.omega
    w = om.values[:, 0]
    d = _kernels.run_doss(problem.f_hat, problem.lam, problem.gamma, w, om.t0, om.dt, problem.u0)
    t = om.times
    with np.errstate(divide="ignore"):
        logmag = np.log(np.abs(d)) + problem.gamma * w - problem.lam * t
    u = np.sign(d) * np.exp(logmag)
    u[d == 0] = 0.0
    u[0] = problem.u0
    finite = np.isfinite(u)
    last = om.n_steps if finite.all() else int(np.argmin(finite)) - 1
    vals = u[: last + 1, None]
    vals.setflags(write=False)
    return Trajectory(om.t0, om.dt, vals, "doss", last < om.n_steps, last)


@dataclass(frozen=True)
class DossBoundReport:
    slack: np.ndarray
    tol: float

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slack))

    @property
    def holds(self) -> bool:
        return self.min_slack >= -self.tol


def doss_bound_check(traj: Trajectory, problem: DossProblem, tol: float | None = None) -> DossBoundReport:
    """Slack of ``|u(t)| <= e^{γ|ω(t)|} e^{(μ-λ)t} |u0|`` at each grid point."""
    n = traj.values.shape[0]
    w = problem.omega.values[:n, 0]
    t = traj.times
    bound = np.exp(abs(problem.gamma) * np.abs(w) + (problem.mu - problem.lam) * (t - t[0])) * abs(problem.u0)
    slack = bound - np.abs(traj.values[:, 0])
    return DossBoundReport(slack, 1e-6 * abs(problem.u0) if tol is None else tol)


# -- batches ------------------------------------------------------------------------


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, in order, over a process pool when ``jobs > 1``.

    ``fn`` must be a module-level function; each item carries its own seed.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
