"""Compiled inner loops.

Every stepping kernel exists twice: the plain Python function (used when the
field callables are ordinary Python) and its ``numba`` compilation (used when
all callables are ``numba`` dispatchers).  Both run the same code.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from numba.core.dispatcher import Dispatcher

BLOWUP_NORM = 1e12


def is_jitted(*fns) -> bool:
    return all(isinstance(fn, Dispatcher) for fn in fns)


# -- Hoelder / GRR sums ------------------------------------------------------


@njit(cache=True)
def holder_sup_sq(values, dt, beta, lags):
    n = values.shape[0]
    m = values.shape[1]
    best = 0.0
    for li in range(lags.shape[0]):
        lag = lags[li]
        scale = (lag * dt) ** (2.0 * beta)
        for i in range(n - lag):
            s = 0.0
            for c in range(m):
                d = values[i + lag, c] - values[i, c]
                s += d * d
            q = s / scale
            if q > best:
                best = q
    return best


@njit(cache=True)
def grr_double_sum(values, dt, gamma, p):
    n = values.shape[0]
    m = values.shape[1]
    total = 0.0
    expo = 2.0 * gamma * p + 2.0
    for lag in range(1, n):
        w = (lag * dt) ** expo
        acc = 0.0
        for i in range(n - lag):
            s = 0.0
            for c in range(m):
                d = values[i + lag, c] - values[i, c]
                s += d * d
            acc += s**p
        total += acc / w
    # ordered pairs (u, v) and (v, u) both contribute
    return 2.0 * total * dt * dt


# -- cut-off ------------------------------------------------------------------


@njit(cache=True)
def quintic_profile(r):
    if r <= 0.5:
        return 1.0
    if r >= 1.0:
        return 0.0
    x = 2.0 * r - 1.0
    return 1.0 - x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


@njit(cache=True)
def quintic_chi(u, r_hat):
    s = 0.0
    for c in range(u.shape[0]):
        s += u[c] * u[c]
    ph = quintic_profile(np.sqrt(s) / r_hat)
    return u * ph


# -- stepping kernels -----------------------------------------------------------


def _euler_impl(f, g, u0, dw, dt, blowup):
    n = dw.shape[0]
    d = u0.shape[0]
    out = np.empty((n + 1, d))
    out[0, :] = u0
    u = u0.copy()
    last = n
    for i in range(n):
        u = u + f(u) * dt + g(u) @ dw[i]
        s = 0.0
        finite = True
        for c in range(d):
            if not np.isfinite(u[c]):
                finite = False
            s += u[c] * u[c]
        if not finite or s > blowup * blowup:
            last = i
            break
        out[i + 1, :] = u
    return out, last


def _mild_impl(fhat, g, chi, E, Phi, u0, dw, r_hat, localize, blowup):
    n = dw.shape[0]
    d = u0.shape[0]
    out = np.empty((n + 1, d))
    out[0, :] = u0
    u = u0.copy()
    last = n
    for i in range(n):
        if localize:
            x = chi(u, r_hat)
        else:
            x = u
        u = E @ u + Phi @ fhat(x) + E @ (g(x) @ dw[i])
        s = 0.0
        finite = True
        for c in range(d):
            if not np.isfinite(u[c]):
                finite = False
            s += u[c] * u[c]
        if not finite or s > blowup * blowup:
            last = i
            break
        out[i + 1, :] = u
    return out, last


def _doss_rhs(fhat, lam, gamma, t, w, D):
    if D == 0.0:
        return 0.0
    x = D * np.exp(gamma * w - lam * t)
    if abs(x) < 1e-250:
        # F_hat(x)/x at the origin, probed away from denormals
        tiny = 1e-150 if D > 0 else -1e-150
        return D * fhat(tiny) / tiny
    return D * fhat(x) / x


def _doss_impl(fhat, lam, gamma, w, t0, dt, d0):
    n = w.shape[0] - 1
    D = np.empty(n + 1)
    D[0] = d0
    y = d0
    h = dt
    for i in range(n):
        t = t0 + i * h
        wm = 0.5 * (w[i] + w[i + 1])
        k1 = _doss_rhs_c(fhat, lam, gamma, t, w[i], y)
        k2 = _doss_rhs_c(fhat, lam, gamma, t + 0.5 * h, wm, y + 0.5 * h * k1)
        k3 = _doss_rhs_c(fhat, lam, gamma, t + 0.5 * h, wm, y + 0.5 * h * k2)
        k4 = _doss_rhs_c(fhat, lam, gamma, t + h, w[i + 1], y + h * k3)
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        D[i + 1] = y
    return D


_doss_rhs_c = njit(_doss_rhs)
euler_jit = njit(_euler_impl)
mild_jit = njit(_mild_impl)
doss_jit = njit(_doss_impl)


def run_euler(f, g, u0, dw, dt, blowup=BLOWUP_NORM):
    u0 = np.ascontiguousarray(u0, dtype=float)
    dw = np.ascontiguousarray(dw, dtype=float)
    kernel = euler_jit if is_jitted(f, g) else _euler_impl
    out, last = kernel(f, g, u0, dw, float(dt), float(blowup))
    return out[: last + 1], last


def run_mild(fhat, g, chi, E, Phi, u0, dw, r_hat=1.0, localize=False, blowup=BLOWUP_NORM):
    args = (
        np.ascontiguousarray(E, dtype=float),
        np.ascontiguousarray(Phi, dtype=float),
        np.ascontiguousarray(u0, dtype=float),
        np.ascontiguousarray(dw, dtype=float),
        float(r_hat),
        bool(localize),
        float(blowup),
    )
    kernel = mild_jit if is_jitted(fhat, g, chi) else _mild_impl
    out, last = kernel(fhat, g, chi, *args)
    return out[: last + 1], last


def run_doss(fhat, lam, gamma, w, t0, dt, d0):
    w = np.ascontiguousarray(w, dtype=float)
    if is_jitted(fhat):
        return doss_jit(fhat, float(lam), float(gamma), w, float(t0), float(dt), float(d0))
    return _doss_py(fhat, float(lam), float(gamma), w, float(t0), float(dt), float(d0))


def _doss_py(fhat, lam, gamma, w, t0, dt, d0):
    # same scheme as _doss_impl, bound to the Python right-hand side
    n = w.shape[0] - 1
    D = np.empty(n + 1)
    D[0] = d0
    y = d0
    h = dt
    for i in range(n):
        t = t0 + i * h
        wm = 0.5 * (w[i] + w[i + 1])
        k1 = _doss_rhs(fhat, lam, gamma, t, w[i], y)
        k2 = _doss_rhs(fhat, lam, gamma, t + 0.5 * h, wm, y + 0.5 * h * k1)
        k3 = _doss_rhs(fhat, lam, gamma, t + 0.5 * h, wm, y + 0.5 * h * k2)
        k4 = _doss_rhs(fhat, lam, gamma, t + h, w[i + 1], y + h * k3)
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        D[i + 1] = y
    return D
