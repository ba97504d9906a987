"""Driver paths: exact fBm sampling, Wiener shift, Hoelder norms, growth diagnostics."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError

FULL_LAG_LIMIT = 2**13
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class SampledPath:
    """A path on the uniform grid ``t0 + i*dt``, ``i = 0..n``.

    ``values`` always has shape ``(n + 1, m)``.
    """

    t0: float
    dt: float
    values: np.ndarray
    beta_prime: float
    metadata: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] == 0:
            raise DomainError("path values must be a non-empty (n+1, m) array")
        if not self.dt > 0:
            raise DomainError(f"grid step must be positive, got {self.dt}")
        if not np.all(np.isfinite(values)):
            raise DomainError("path values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return self.t0 + self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is off-grid or outside the path."""
        x = (t - self.t0) / self.dt
        i = int(round(x))
        if abs(x - i) > _GRID_TOL * max(1.0, abs(x)) or i < 0 or i > self.n_steps:
            raise DomainError(f"time {t} is not a grid point of the path")
        return i

    def window(self, a: float | None = None, b: float | None = None) -> np.ndarray:
        ia = 0 if a is None else self.index(a)
        ib = self.n_steps if b is None else self.index(b)
        if ib <= ia:
            raise DomainError(f"empty window [{a}, {b}]")
        return self.values[ia : ib + 1]

    def restrict(self, a: float, b: float) -> "SampledPath":
        ia = self.index(a)
        return SampledPath(self.t0 + ia * self.dt, self.dt, self.window(a, b), self.beta_prime)

    def with_values(self, values) -> "SampledPath":
        return SampledPath(self.t0, self.dt, values, self.beta_prime, dict(self.metadata))


@dataclass(frozen=True)
class FbmConfig:
    hurst: float
    q_matrix: Any = 1.0
    horizon: float = 1.0
    steps: int = 1024
    seed: int = 0
    method: str = "circulant"

    def __post_init__(self):
        if not 0.5 < self.hurst < 1.0:
            raise ConfigurationError(f"Hurst parameter must lie in (1/2, 1), got {self.hurst}")
        if not self.horizon > 0:
            raise ConfigurationError("horizon must be positive")
        if int(self.steps) < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.method not in ("cholesky", "circulant"):
            raise ConfigurationError(f"unknown sampling method {self.method!r}")
        q = check_covariance_matrix(self.q_matrix)
        object.__setattr__(self, "q_matrix", q)
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dim(self) -> int:
        return self.q_matrix.shape[0]


def check_covariance_matrix(q) -> np.ndarray:
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[0] != q.shape[1]:
        raise ConfigurationError("Q must be square")
    if not np.allclose(q, q.T, rtol=0, atol=1e-12):
        raise ConfigurationError("Q must be symmetric")
    if np.linalg.eigvalsh(q).min() < -1e-10:
        raise ConfigurationError("Q must be positive semidefinite")
    return q


def fbm_covariance(s: float, t: float, hurst: float, q=1.0):
    """Covariance ``E[B(s) B(t)^T] = Q (|t|^2H + |s|^2H - |t-s|^2H) / 2``.

    Returns a float when ``q`` is a scalar, a matrix otherwise.
    """
    if not 0.0 < hurst < 1.0:
        raise ConfigurationError(f"Hurst parameter must lie in (0, 1), got {hurst}")
    scalar = np.ndim(q) == 0
    qm = check_covariance_matrix(q)
    h2 = 2.0 * hurst
    r = 0.5 * (abs(t) ** h2 + abs(s) ** h2 - abs(t - s) ** h2)
    if scalar:
        return float(qm[0, 0] * r)
    return qm * r


def _fgn_autocov(n: int, hurst: float) -> np.ndarray:
    k = np.arange(n, dtype=float)
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 + np.abs(k - 1) ** h2 - 2.0 * k**h2)


def _circulant_eigenvalues(n: int, hurst: float) -> np.ndarray:
    gam = _fgn_autocov(n + 1, hurst)
    row = np.concatenate([gam[: n + 1], gam[n - 1 : 0 : -1]])
    return np.fft.fft(row).real


def _fgn_circulant(n: int, hurst: float, rng: np.random.Generator, count: int):
    """Davies-Harte sampling of ``count`` independent unit-step fGn sequences.

    Returns ``None`` when the circulant embedding is not positive semidefinite.
    """
    lam = _circulant_eigenvalues(n, hurst)
    if lam.min() < -1e-10 * lam.max():
        return None
    lam = np.clip(lam, 0.0, None)
    size = lam.shape[0]
    scale = np.sqrt(lam / size)
    out = np.empty((n, count))
    for j in range(0, count, 2):
        z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
        w = np.fft.fft(scale * z)[:n]
        out[:, j] = w.real
        if j + 1 < count:
            out[:, j + 1] = w.imag
    return out


def _fgn_cholesky(n: int, hurst: float, rng: np.random.Generator, count: int):
    from scipy.linalg import toeplitz

    cov = toeplitz(_fgn_autocov(n, hurst))
    chol = np.linalg.cholesky(cov)
    return chol @ rng.standard_normal((n, count))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def _sqrtm_psd(q: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(q)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fbm_sample(config: FbmConfig, beta_prime: float | None = None) -> SampledPath:
    """Exact-in-distribution fBm sample on ``[0, T]`` with ``steps`` increments.

    ``beta_prime`` is the Hoelder exponent declared on the returned path; it
    defaults to ``H - 0.02``.
    """
    n, hurst, m = config.steps, config.hurst, config.dim
    rng = _rng(config.seed)
    method = config.method
    fallback = False
    incr = None
    if method == "circulant":
        incr = _fgn_circulant(n, hurst, rng, m)
        if incr is None:
            warnings.warn(
                f"circulant embedding not PSD for H={hurst}, n={n}; using Cholesky",
                RuntimeWarning,
                stacklevel=2,
            )
            fallback = True
            method = "cholesky"
    if incr is None:
        incr = _fgn_cholesky(n, hurst, rng, m)
    dt = config.horizon / n
    incr = incr * dt**hurst
    values = np.zeros((n + 1, m))
    np.cumsum(incr, axis=0, out=values[1:])
    values = values @ _sqrtm_psd(config.q_matrix).T
    values[0] = 0.0
    if beta_prime is None:
        beta_prime = hurst - 0.02
    meta = {
        "hurst": hurst,
        "q_matrix": config.q_matrix.tolist(),
        "seed": int(config.seed),
        "method": method,
        "requested_method": config.method,
        "fallback": fallback,
        "dt": dt,
    }
    return SampledPath(0.0, dt, values, beta_prime, meta)


def wiener_shift(path: SampledPath, tau: float) -> SampledPath:
    """``theta_tau omega (s) = omega(s + tau) - omega(tau)`` on the remaining grid."""
    x = tau / path.dt
    k = int(round(x))
    if abs(x - k) > _GRID_TOL * max(1.0, abs(x)):
        raise DomainError(f"shift {tau} is not a multiple of the grid step {path.dt}")
    if k < 0 or k >= path.n_steps:
        raise DomainError(f"shift {tau} leaves no room inside the sampled horizon")
    if k == 0:
        return path
    vals = path.values[k:] - path.values[k]
    meta = dict(path.metadata, shift=path.metadata.get("shift", 0.0) + k * path.dt)
    return SampledPath(path.t0, path.dt, vals, path.beta_prime, meta)


def holder_lags(n_points: int, max_lag: int = FULL_LAG_LIMIT) -> tuple[np.ndarray, bool]:
    """Lags used by the discrete seminorm; all lags unless the grid is longer than ``max_lag``."""
    top = n_points - 1
    if top <= max_lag:
        return np.arange(1, top + 1, dtype=np.int64), False
    long = [1 << k for k in range(max_lag.bit_length(), top.bit_length()) if (1 << k) < top]
    lags = np.concatenate([np.arange(1, max_lag + 1), long, [top]]).astype(np.int64)
    return np.unique(lags), True


def seminorm_values(values: np.ndarray, dt: float, beta: float, max_lag: int = FULL_LAG_LIMIT):
    """Discrete Hoelder seminorm of an ``(n+1, k)`` array; returns ``(value, capped)``."""
    v = np.ascontiguousarray(values, dtype=float).reshape(values.shape[0], -1)
    if v.shape[0] < 2:
        raise DomainError("seminorm needs at least two grid points")
    lags, capped = holder_lags(v.shape[0], max_lag)
    return math.sqrt(_kernels.holder_sup_sq(v, float(dt), float(beta), lags)), capped


@dataclass(frozen=True)
class HolderNorms:
    seminorm: float
    sup: float
    lag_capped: bool = False

    @property
    def norm(self) -> float:
        return self.sup + self.seminorm


def holder_norms_values(values: np.ndarray, dt: float, beta: float, max_lag: int = FULL_LAG_LIMIT) -> HolderNorms:
    v = np.asarray(values, dtype=float).reshape(values.shape[0], -1)
    semi, capped = seminorm_values(v, dt, beta, max_lag)
    sup = float(np.sqrt(np.max(np.sum(v * v, axis=1))))
    return HolderNorms(semi, sup, capped)


def _check_beta(beta: float) -> None:
    if not 0.0 < beta < 1.0 + 1e-12:
        raise DomainError(f"Hoelder exponent must lie in (0, 1], got {beta}")


def holder_seminorm(path: SampledPath, beta: float, a: float | None = None, b: float | None = None,
                    *, max_lag: int = FULL_LAG_LIMIT) -> float:
    """Grid supremum of ``|w(r) - w(q)| / (r - q)^beta`` over ``a <= q < r <= b``."""
    _check_beta(beta)
    return seminorm_values(path.window(a, b), path.dt, beta, max_lag)[0]


def holder_norms(path: SampledPath, beta: float, a: float | None = None, b: float | None = None,
                 *, max_lag: int = FULL_LAG_LIMIT) -> HolderNorms:
    """Seminorm, sup norm and their sum on ``[a, b]``; ``lag_capped`` records the stride cap."""
    _check_beta(beta)
    return holder_norms_values(path.window(a, b), path.dt, beta, max_lag)


def sup_norm(path: SampledPath, a: float | None = None, b: float | None = None) -> float:
    v = path.window(a, b)
    return float(np.sqrt(np.max(np.sum(v * v, axis=1))))


@dataclass(frozen=True)
class GrrEstimate:
    value: float
    seminorm: float
    ratio: float
    levels: tuple[tuple[float, float], ...]
    diverging: bool


def grr_bound(path: SampledPath, gamma: float, p: float, levels: int = 3,
              growth_threshold: float = 0.05) -> GrrEstimate:
    """Garsia-Rodemich-Rumsey right-hand side with unit constant.

    The double integral is a grid quadrature excluding the diagonal. It is
    evaluated on the path and on ``levels - 1`` dyadic coarsenings; the
    estimate is flagged ``diverging`` when every refinement increases it by
    more than ``2**growth_threshold``.
    """
    if not 0.0 < gamma < 1.0:
        raise DomainError("gamma must lie in (0, 1)")
    if p < 1:
        raise DomainError("p must be >= 1")
    vals = np.ascontiguousarray(path.values)
    seq = []
    for lev in range(levels - 1, -1, -1):
        stride = 1 << lev
        sub = vals[::stride]
        if sub.shape[0] < 3:
            continue
        total = _kernels.grr_double_sum(np.ascontiguousarray(sub), path.dt * stride, float(gamma), float(p))
        seq.append((path.dt * stride, total ** (1.0 / (2.0 * p))))
    value = seq[-1][1]
    semi = holder_seminorm(path, gamma)
    ratio = value / semi if semi > 0 else (0.0 if value == 0 else math.inf)
    growth = [
        math.log2(b[1] / a[1]) if a[1] > 0 and b[1] > 0 else 0.0
        for a, b in zip(seq[:-1], seq[1:])
    ]
    diverging = bool(growth) and all(g > growth_threshold for g in growth)
    return GrrEstimate(value, semi, ratio, tuple(seq), diverging)


def growth_ratio(path: SampledPath) -> tuple[np.ndarray, np.ndarray]:
    """Times ``t_i >= 1`` and the ratios ``|w(t_i)| / t_i``."""
    if path.t0 != 0.0:
        raise DomainError("growth ratio requires a path starting at t = 0")
    if path.horizon <= 1.0:
        raise DomainError("growth ratio requires a horizon beyond 1")
    t = path.times
    mask = t >= 1.0 - 1e-12
    norms = np.sqrt(np.sum(path.values[mask] ** 2, axis=1))
    return t[mask], norms / t[mask]


# -- serialization ---------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_path(path: SampledPath, csv_file: str | Path, meta_file: str | Path | None = None) -> None:
    """Write ``t,x1,...,xm`` CSV plus a JSON sidecar (H, Q, seed, method, dt)."""
    csv_file = Path(csv_file)
    with csv_file.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(path.dim)])
        for t, row in zip(path.times, path.values):
            w.writerow([_fmt(t)] + [_fmt(x) for x in row])
    if meta_file is None:
        meta_file = csv_file.with_suffix(".json")
    meta = {
        "H": path.metadata.get("hurst"),
        "Q": path.metadata.get("q_matrix"),
        "seed": path.metadata.get("seed"),
        "method": path.metadata.get("method"),
        "dt": path.dt,
        "t0": path.t0,
        "beta_prime": path.beta_prime,
    }
    Path(meta_file).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_path(csv_file: str | Path, meta_file: str | Path | None = None) -> SampledPath:
    csv_file = Path(csv_file)
    if meta_file is None:
        meta_file = csv_file.with_suffix(".json")
    meta = json.loads(Path(meta_file).read_text())
    data = np.loadtxt(csv_file, delimiter=",", skiprows=1, ndmin=2)
    extra = {"hurst": meta.get("H"), "q_matrix": meta.get("Q"), "seed": meta.get("seed"),
             "method": meta.get("method")}
    return SampledPath(meta.get("t0", data[0, 0]), meta["dt"], data[:, 1:], meta["beta_prime"], extra)
