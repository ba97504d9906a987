from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoelderflow import catalog
from hoelderflow import fields as FL
from hoelderflow.errors import ConfigurationError, DomainError, HypothesisError, ValidationError

from conftest import smooth_path


def scalar_pair(f, df, g=None, dg=None, d2g=None, rho=1.0) -> FL.FieldPair:
    g = g or (lambda u: np.zeros((1, 1)))
    dg = dg or (lambda u: np.zeros((1, 1, 1)))
    d2g = d2g or (lambda u: np.zeros((1, 1, 1, 1)))
    return FL.FieldPair(
        lambda u: np.atleast_1d(f(np.atleast_1d(u)[0])),
        lambda u: np.array([[df(np.atleast_1d(u)[0])]]),
        lambda u: np.reshape(g(np.atleast_1d(u)[0]), (1, 1)),
        lambda u: np.reshape(dg(np.atleast_1d(u)[0]), (1, 1, 1)),
        lambda u: np.reshape(d2g(np.atleast_1d(u)[0]), (1, 1, 1, 1)),
        rho, 1, 1,
    )


@pytest.fixture(scope="module")
def kit():
    return FL.CutoffKit.quintic()


def square_drift(rho=1.0) -> FL.FieldPair:
    return scalar_pair(lambda x: -x + x * x, lambda x: -1 + 2 * x, rho=rho)


def test_split_scalar_quadratic():
    lin = FL.split_linearization(square_drift())
    assert lin.a[0, 0] == -1.0
    for x in (-0.5, 0.2, 0.9):
        assert lin.f_hat(np.array([x]))[0] == pytest.approx(x * x, abs=1e-15)


def test_split_linear_field_has_no_remainder():
    pair = catalog.linear([[-1.0, 0.2], [0.0, -2.0]], np.zeros((2, 2)))
    lin = FL.split_linearization(pair)
    for u in pair.sample_ball(10):
        assert np.all(lin.f_hat(u) == 0.0)


def test_split_cubic():
    pair = scalar_pair(lambda x: -2 * x + x**3, lambda x: -2 + 3 * x * x)
    lin = FL.split_linearization(pair)
    assert lin.a[0, 0] == -2.0
    u = np.array([0.7])
    assert lin.f_hat(u)[0] == pytest.approx(0.343, rel=1e-14)
    assert lin.df_hat(u)[0, 0] == pytest.approx(3 * 0.49, rel=1e-14)


def test_split_rejects_wrong_oracle():
    pair = scalar_pair(lambda x: -x + x * x, lambda x: -1 + 3 * x)
    with pytest.raises(ValidationError):
        FL.split_linearization(pair)


def test_local_assumptions():
    square_drift().check_local_assumptions()
    with pytest.raises(HypothesisError):
        scalar_pair(lambda x: 1 + x, lambda x: 1.0).check_local_assumptions()
    with pytest.raises(HypothesisError):
        scalar_pair(lambda x: -x, lambda x: -1.0, g=lambda x: 0.5 * x, dg=lambda x: 0.5).check_local_assumptions()


def test_field_pair_rejects_bad_radius():
    with pytest.raises(ConfigurationError):
        scalar_pair(lambda x: -x, lambda x: -1.0, rho=0.0)


@pytest.mark.parametrize("name,params", [
    ("quadratic", dict(a=[[-1.5, 0.5], [0.0, -1.2]], b=np.full((2, 2, 2), 0.3), c=np.full((2, 2, 2, 2), 0.2))),
    ("sine", dict(lam=1.0, mu=0.5, gamma=0.5)),
    ("polynomial", dict(a=-1.0, drift=[0.5, -0.2], diffusion=[0.3])),
    ("linear", dict(a=[[-1.0]], gamma=[[0.4]])),
])
def test_catalog_oracles_validate(name, params):
    catalog.build(name, **params).validate()


def test_catalog_unknown_name():
    with pytest.raises(KeyError):
        catalog.build("cubic")


def test_quintic_profile_shape(kit):
    assert kit.profile(0.0) == 1.0 and kit.profile(0.5) == 1.0
    assert kit.profile(1.0) == 0.0 and kit.profile(3.0) == 0.0
    r = np.linspace(0.5, 1.0, 1001)
    vals = np.array([kit.profile(x) for x in r])
    assert np.all(np.diff(vals) <= 0)


def test_quintic_constants_dominate_finite_differences(kit):
    rng = np.random.default_rng(0)
    h = 1e-5
    for _ in range(400):
        u = rng.standard_normal(3) * rng.uniform(0, 0.7)
        jac = np.stack([(kit.chi(u + h * e) - kit.chi(u - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
        assert np.linalg.norm(jac, 2) <= kit.l_dchi
        for e in np.eye(3):
            second = (kit.chi(u + h * e) - 2 * kit.chi(u) + kit.chi(u - h * e)) / h**2
            assert np.linalg.norm(second) <= kit.l_d2chi
    assert kit.l_dchi == pytest.approx(2.485, abs=0.01)


def test_cutoff_examples(kit):
    u = np.array([0.3, -0.4])  # norm 0.5
    assert np.array_equal(FL.cutoff(kit, u, 2.0), u)
    assert np.array_equal(FL.cutoff(kit, u, 0.25), np.zeros(2))
    for scale in (0.1, 0.6, 0.9, 1.5):
        v = u * scale / 0.5
        np.testing.assert_allclose(FL.cutoff(kit, v, 0.7), 0.7 * FL.cutoff(kit, v / 0.7, 1.0), rtol=1e-14)
    with pytest.raises(DomainError):
        FL.cutoff(kit, u, 0.0)


@settings(max_examples=60, deadline=None)
@given(x=st.lists(st.floats(-5, 5), min_size=2, max_size=2), r=st.floats(1e-3, 10))
def test_cutoff_stays_in_ball(kit, x, r):
    out = FL.cutoff(kit, np.array(x), r)
    assert np.linalg.norm(out) <= r * (1 + 1e-12)
    if np.linalg.norm(x) <= r / 2:
        assert np.array_equal(FL.cutoff(kit, out, r), out)


def test_localized_fields_examples(kit):
    pair = square_drift()
    lin = FL.split_linearization(pair)
    loc = FL.localized_fields(lin, pair, kit, 0.4)
    assert loc.f_hat(np.array([0.1]))[0] == pytest.approx(0.01, rel=1e-14)
    assert loc.f_hat(np.array([0.5]))[0] == 0.0
    with pytest.raises(DomainError):
        FL.localized_fields(lin, pair, kit, 1.5)


def test_lemma6_scalar_squares(kit):
    pair = scalar_pair(lambda x: -x + x * x, lambda x: -1 + 2 * x,
                       g=lambda x: x * x, dg=lambda x: 2 * x, d2g=lambda x: 2.0)
    lin = FL.split_linearization(pair)
    r_target = 0.1
    r_hat = FL.inverse_j(FL.BoundMap(lin, pair), r_target, pair.rho)
    rep = FL.lemma6_check(FL.localized_fields(lin, pair, kit, r_hat), r_target, samples=10_000)
    assert rep.holds
    assert rep.samples == 10_000


def test_lemma6_origin_and_far_field(kit):
    pair = catalog.quadratic([[-1.0, 0.0], [0.0, -1.0]], np.full((2, 2, 2), 0.5), np.full((2, 1, 2, 2), 0.5))
    lin = FL.split_linearization(pair)
    loc = FL.localized_fields(lin, pair, kit, 0.2)
    assert np.all(loc.f_hat(np.zeros(2)) == 0) and np.all(loc.g(np.zeros(2)) == 0)
    far1, far2 = np.array([0.5, 0.0]), np.array([0.0, -0.3])
    assert np.array_equal(loc.g(far1), loc.g(far2))


def test_bound_map_scalar_square():
    pair = square_drift()
    lin = FL.split_linearization(pair)
    h = FL.BoundMap(lin, pair)
    assert h(0.0) == 0.0
    for r in (0.01, 0.2, 0.75, 1.0):
        assert h(r) == pytest.approx(2 * r, rel=0.01)
        assert h(r) >= 2 * r * (1 - 1e-12)
    rs = np.linspace(0, 1, 200)
    vals = [h(r) for r in rs]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        h(1.5)


def test_bound_h_closed_form_overrides():
    pair = square_drift()
    lin = FL.split_linearization(pair)
    assert FL.bound_h(lin, pair, 0.3, closed_form=lambda r: 7 * r) == pytest.approx(2.1)


def test_bound_map_multidimensional_monotone():
    rng = np.random.default_rng(7)
    pair = catalog.quadratic([[-1.5, 0.5], [0.0, -1.2]], rng.normal(size=(2, 2, 2)) * 0.5,
                             rng.normal(size=(2, 2, 2, 2)) * 0.5)
    lin = FL.split_linearization(pair)
    assert FL.BoundMap(lin, pair, closed_form=lambda r: 0.0)(0.5) == 0.0
    table = FL.BoundMap(lin, dataclasses.replace(pair, bound_closed_form=None))
    assert table.table is not None
    vals = [table(r) for r in np.linspace(0, 1, 50)]
    assert vals[0] == 0.0 and all(a <= b for a, b in zip(vals, vals[1:]))


def test_inverse_j_examples():
    assert FL.inverse_j(lambda r: r, 0.3, 1.0) == pytest.approx(0.3, abs=1e-10)
    assert FL.inverse_j(lambda r: r, 5.0, 1.0) == 1.0
    assert FL.inverse_j(lambda r: 2 * r, 0.1, 1.0) == pytest.approx(0.05, abs=1e-10)
    with pytest.raises(DomainError):
        FL.inverse_j(lambda r: r, -0.1, 1.0)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(0.0, 3.0))
def test_inverse_j_lower_bound(x):
    h = lambda r: r**2 + math.sin(r) ** 2  # noqa: E731
    assert h(FL.inverse_j(h, x, 1.0)) <= x + 1e-8


def test_r_of_omega_examples():
    const = smooth_path(lambda t: 0 * t, 64, beta_prime=0.5)
    assert FL.r_of_omega(0.5, 10.0, const) == pytest.approx(0.025)
    lin_path = smooth_path(lambda t: t, 64, beta_prime=0.5)
    assert FL.r_of_omega(0.5, 10.0, lin_path) == pytest.approx(0.0125, rel=1e-12)
    assert FL.r_of_omega(0.5, 20.0, lin_path) == pytest.approx(0.00625, rel=1e-12)
    with pytest.raises(ConfigurationError):
        FL.r_of_omega(1.0, 10.0, lin_path)


def test_rhat_examples():
    lin_path = smooth_path(lambda t: t, 64, beta_prime=0.5)
    pair = square_drift()
    lin = FL.split_linearization(pair)
    r_hat = FL.rhat_of_omega(lin, pair, 0.5, 10.0, lin_path, bound=lambda r: 2 * r)
    assert r_hat == pytest.approx(0.00625, abs=1e-9)
    linear = catalog.linear([[-1.0]], [[0.0]], rho=0.8)
    assert FL.rhat_of_omega(FL.split_linearization(linear), linear, 0.5, 10.0, lin_path) == 0.8


def test_k_constant_examples():
    assert FL.k_constant(1, 0, 1, 1) == 2
    assert FL.k_constant(1, 1, 1, 1) == 6
    assert FL.k_constant(1, 1, 1, 0.5) == FL.k_constant(1, 1, 1, 1)
    with pytest.raises(DomainError):
        FL.k_constant(0.5, 1, 1, 1)


@settings(max_examples=40, deadline=None)
@given(m=st.floats(1, 5), a=st.floats(0, 5), ell=st.floats(0.1, 5), c=st.floats(0.1, 5), bump=st.floats(0, 1))
def test_k_constant_monotone(m, a, ell, c, bump):
    base = FL.k_constant(m, a, ell, c)
    assert FL.k_constant(m + bump, a, ell, c) >= base
    assert FL.k_constant(m, a + bump, ell, c) >= base
    assert FL.k_constant(m, a, ell + bump, c) >= base
    assert FL.k_constant(m, a, ell, c + bump) >= base


def test_kappa_examples():
    sweep = np.geomspace(1e-4, 0.5, 12)
    rep = FL.kappa_diagnostic(lambda r: 3 * r, 1.0, sweep)
    np.testing.assert_allclose(rep.ratios * sweep[::-1], sweep[::-1] / 3, rtol=0, atol=1e-10)
    pair = square_drift()
    rep = FL.kappa_diagnostic(FL.BoundMap(FL.split_linearization(pair), pair), 1.0, sweep)
    np.testing.assert_allclose(rep.ratios, 0.5, rtol=0.01)
    assert np.all(rep.ratios > 0)


def test_temperedness_examples():
    assert FL.temperedness_diagnostic(np.full(50, 0.7)).estimate == 0.0
    n = np.arange(400)
    assert FL.temperedness_diagnostic(np.exp(0.1 * n)).estimate == pytest.approx(0.1, rel=1e-12)
    est = FL.temperedness_diagnostic(np.maximum(n, 1)).estimate
    assert est < math.log(400) / 300 + 1e-12
    with pytest.raises(DomainError):
        FL.temperedness_diagnostic([1.0, 0.0, 2.0])
