from __future__ import annotations

import numpy as np
import pytest

from hoelderflow.paths import SampledPath


def smooth_path(fn, n: int, horizon: float = 1.0, beta_prime: float = 0.99) -> SampledPath:
    t = np.linspace(0.0, horizon, n + 1)
    return SampledPath(0.0, horizon / n, fn(t), beta_prime)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


QUADRATIC_A = [[-1.5, 0.5], [0.0, -1.2]]


def quadratic_system(rho: float = 1.0):
    """Two-dimensional drift ``Au + q(u)`` with quadratic diffusion (two noise channels)."""
    from hoelderflow import catalog

    b = np.random.default_rng(7).normal(size=(2, 2, 2)) * 0.5
    c = np.random.default_rng(8).normal(size=(2, 2, 2, 2)) * 0.5
    return catalog.quadratic(QUADRATIC_A, b, c, rho=rho)


def stability_setup(n_intervals: int = 30, u0=(1e-4, 0.0)):
    from hoelderflow.fields import CutoffKit, split_linearization
    from hoelderflow.stability import StabilityParams, eps_hat_max

    pair = quadratic_system()
    lin = split_linearization(pair)
    params = StabilityParams(1.0, 0.5, eps_hat_max(1.0, 0.5), 0.6, 0.73,
                             n_intervals=n_intervals, u0=u0)
    return lin, pair, CutoffKit.quintic(), params


def stability_driver(seed: int, params, dim: int = 2):
    from hoelderflow.paths import FbmConfig, fbm_sample

    horizon = params.n_intervals + 1
    cfg = FbmConfig(0.75, np.eye(dim), horizon=float(horizon),
                    steps=horizon * params.steps_per_unit, seed=seed)
    return fbm_sample(cfg, beta_prime=params.beta_prime)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
