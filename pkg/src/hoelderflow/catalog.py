"""Named field pairs whose callables are compiled, so solvers take the fast path."""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import ConfigurationError
from .fields import FieldPair


def _mat(x, shape=None) -> np.ndarray:
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
    if shape is not None and a.shape != shape:
        raise ConfigurationError(f"expected shape {shape}, got {a.shape}")
    return a


def linear(a, gamma, rho: float = 1.0) -> FieldPair:
    """``F(x) = A x``, ``G(x) = Γ x`` (one noise channel)."""
    a = _mat(a)
    d = a.shape[0]
    gm = _mat(gamma, (d, d))
    zeros_d = np.zeros(d)

    @njit
    def f(u):
        return a @ u

    @njit
    def df(u):
        return a.copy()

    @njit
    def g(u):
        out = np.empty((d, 1))
        out[:, 0] = gm @ u
        return out

    @njit
    def dg(u):
        out = np.empty((d, 1, d))
        out[:, 0, :] = gm
        return out

    @njit
    def d2g(u):
        return np.zeros((d, 1, d, d))

    @njit
    def f_hat(u):
        return zeros_d.copy()

    @njit
    def df_hat(u):
        return np.zeros((d, d))

    level = float(np.linalg.norm(gm))
    return FieldPair(f, df, g, dg, d2g, rho, d, 1, "linear", f_hat, df_hat,
                     lambda r: level, {"a": a.tolist(), "gamma": gm.tolist()})


def quadratic(a, b, c, rho: float = 1.0) -> FieldPair:
    """``F(x) = A x + q(x)`` with ``q_i = Σ b[i,j,k] x_j x_k`` and ``G_il = Σ c[i,l,j,k] x_j x_k``."""
    a = _mat(a)
    d = a.shape[0]
    b = np.ascontiguousarray(np.asarray(b, dtype=float))
    c = np.ascontiguousarray(np.asarray(c, dtype=float))
    if b.shape != (d, d, d):
        raise ConfigurationError(f"drift tensor must have shape {(d, d, d)}, got {b.shape}")
    if c.ndim != 4 or c.shape[0] != d or c.shape[2:] != (d, d):
        raise ConfigurationError(f"diffusion tensor must have shape (d, m, d, d), got {c.shape}")
    m = c.shape[1]
    bs = np.ascontiguousarray(b + b.transpose(0, 2, 1))
    cs = np.ascontiguousarray(c + c.transpose(0, 1, 3, 2))

    @njit
    def f_hat(u):
        out = np.zeros(d)
        for i in range(d):
            s = 0.0
            for j in range(d):
                for k in range(d):
                    s += b[i, j, k] * u[j] * u[k]
            out[i] = s
        return out

    @njit
    def df_hat(u):
        out = np.zeros((d, d))
        for i in range(d):
            for k in range(d):
                s = 0.0
                for j in range(d):
                    s += bs[i, j, k] * u[j]
                out[i, k] = s
        return out

    @njit
    def f(u):
        return a @ u + f_hat(u)

    @njit
    def df(u):
        return a + df_hat(u)

    @njit
    def g(u):
        out = np.zeros((d, m))
        for i in range(d):
            for l in range(m):
                s = 0.0
                for j in range(d):
                    for k in range(d):
                        s += c[i, l, j, k] * u[j] * u[k]
                out[i, l] = s
        return out

    @njit
    def dg(u):
        out = np.zeros((d, m, d))
        for i in range(d):
            for l in range(m):
                for k in range(d):
                    s = 0.0
                    for j in range(d):
                        s += cs[i, l, j, k] * u[j]
                    out[i, l, k] = s
        return out

    @njit
    def d2g(u):
        return cs.copy()

    # |DG(v)|_F <= |cs as (d m d) x d| |v|,  |DF̂(v)|_2 <= |bs as (d d) x d| |v|
    lip_g = float(np.linalg.norm(cs.transpose(0, 1, 3, 2).reshape(-1, d), 2))
    lip_f = float(np.linalg.norm(bs.transpose(0, 2, 1).reshape(-1, d), 2))
    slope = lip_g + lip_f
    return FieldPair(f, df, g, dg, d2g, rho, d, m, "quadratic", f_hat, df_hat,
                     lambda r: slope * r, {"a": a.tolist(), "b": b.tolist(), "c": c.tolist()})


def sine(lam: float, mu: float, gamma: float, rho: float = 1.0) -> FieldPair:
    """Scalar ``F(x) = -λx + μ sin x`` with linear noise ``G(x) = γx``.

    The split at the origin gives ``A = μ - λ`` and ``F̂(x) = μ (sin x - x)``.
    """
    lam, mu, gamma = float(lam), float(mu), float(gamma)
    a0 = mu - lam

    @njit
    def f(u):
        return -lam * u + mu * np.sin(u)

    @njit
    def df(u):
        out = np.empty((1, 1))
        out[0, 0] = -lam + mu * np.cos(u[0])
        return out

    @njit
    def g(u):
        out = np.empty((1, 1))
        out[0, 0] = gamma * u[0]
        return out

    @njit
    def dg(u):
        out = np.empty((1, 1, 1))
        out[0, 0, 0] = gamma
        return out

    @njit
    def d2g(u):
        return np.zeros((1, 1, 1, 1))

    @njit
    def f_hat(u):
        return mu * (np.sin(u) - u)

    @njit
    def df_hat(u):
        out = np.empty((1, 1))
        out[0, 0] = mu * (np.cos(u[0]) - 1.0)
        return out

    def closed(r):
        return abs(gamma) + abs(mu) * (1.0 - np.cos(min(r, np.pi)))

    return FieldPair(f, df, g, dg, d2g, rho, 1, 1, "sine", f_hat, df_hat, closed,
                     {"lambda": lam, "mu": mu, "gamma": gamma, "a": a0})


def polynomial(a: float, drift, diffusion, rho: float = 1.0) -> FieldPair:
    """Scalar ``F(x) = a x + Σ p_k x^k`` and ``G(x) = Σ q_k x^k`` (powers ``k >= 2``).

    ``drift`` and ``diffusion`` list the coefficients of ``x^2, x^3, ...``.
    """
    a = float(a)
    p = np.concatenate([[0.0, 0.0], np.asarray(drift, dtype=float)])
    q = np.concatenate([[0.0, 0.0], np.asarray(diffusion, dtype=float)])

    @njit
    def _poly(coef, x, order):
        # order-th derivative of Σ coef[k] x^k
        s = 0.0
        for k in range(order, coef.shape[0]):
            fac = 1.0
            for j in range(order):
                fac *= k - j
            s += fac * coef[k] * x ** (k - order)
        return s

    @njit
    def f_hat(u):
        out = np.empty(1)
        out[0] = _poly(p, u[0], 0)
        return out

    @njit
    def df_hat(u):
        out = np.empty((1, 1))
        out[0, 0] = _poly(p, u[0], 1)
        return out

    @njit
    def f(u):
        out = np.empty(1)
        out[0] = a * u[0] + _poly(p, u[0], 0)
        return out

    @njit
    def df(u):
        out = np.empty((1, 1))
        out[0, 0] = a + _poly(p, u[0], 1)
        return out

    @njit
    def g(u):
        out = np.empty((1, 1))
        out[0, 0] = _poly(q, u[0], 0)
        return out

    @njit
    def dg(u):
        out = np.empty((1, 1, 1))
        out[0, 0, 0] = _poly(q, u[0], 1)
        return out

    @njit
    def d2g(u):
        out = np.empty((1, 1, 1, 1))
        out[0, 0, 0, 0] = _poly(q, u[0], 2)
        return out

    def _slope(coef, r):
        ks = np.arange(1, coef.size)
        return float(np.sum(ks * np.abs(coef[1:]) * r ** (ks - 1)))

    def closed(r):
        return _slope(p, r) + _slope(q, r)

    return FieldPair(f, df, g, dg, d2g, rho, 1, 1, "polynomial", f_hat, df_hat, closed,
                     {"a": a, "drift": list(map(float, drift)), "diffusion": list(map(float, diffusion))})


CATALOG = {
    "linear": linear,
    "quadratic": quadratic,
    "sine": sine,
    "polynomial": polynomial,
}


def build(name: str, **params) -> FieldPair:
    """Catalog lookup used by configuration files; raises ``KeyError`` for unknown names."""
    if name not in CATALOG:
        raise KeyError(name)
    try:
        return CATALOG[name](**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for field {name!r}: {exc}") from exc
