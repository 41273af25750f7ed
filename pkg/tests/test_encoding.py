import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from scipy.special import ive, sph_harm_y

from refdvgo.encoding import (
    DirectionalEncodingConfig, attenuation, ide, ide_backward, ide_from_roughness, ide_from_roughness_backward,
    reflect, reflect_backward, roughness_from_raw, sh_basis, sh_basis_jacobian,
)

LEVELS = (1, 2, 4)


def unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def real_sh_oracle(d, levels):
    """Real SH built from scipy's complex harmonics with the Condon-Shortley phase removed."""
    theta = np.arccos(np.clip(d[:, 2], -1, 1))
    phi = np.arctan2(d[:, 1], d[:, 0])
    cols = []
    for l in levels:
        for m in range(-l, l + 1):
            y = sph_harm_y(l, abs(m), theta, phi)
            sign = (-1) ** abs(m)
            if m > 0:
                cols.append(np.sqrt(2) * sign * y.real)
            elif m < 0:
                cols.append(np.sqrt(2) * sign * y.imag)
            else:
                cols.append(y.real)
    return np.stack(cols, -1)


def test_config_dims():
    assert DirectionalEncodingConfig().output_dim == 17
    assert DirectionalEncodingConfig((1,)).output_dim == 3
    with pytest.raises(ValueError):
        DirectionalEncodingConfig((2, 1))


def test_sh_matches_scipy(rng):
    d = unit(rng, 50)
    np.testing.assert_allclose(sh_basis(d, LEVELS), real_sh_oracle(d, LEVELS), atol=1e-12)


def test_sh_degree_one_is_scaled_yzx():
    d = np.array([[0.6, 0.0, 0.8]])
    c = np.sqrt(3 / (4 * np.pi))
    np.testing.assert_allclose(sh_basis(d, (1,))[0], [0.0, 0.8 * c, 0.6 * c], atol=1e-14)


def test_sh_orthonormal_by_quadrature():
    # Gauss-Legendre in cos(theta) times uniform phi integrates degree <= 8 products exactly
    zs, wz = np.polynomial.legendre.leggauss(12)
    phis = np.arange(24) * 2 * np.pi / 24
    z, p = np.meshgrid(zs, phis, indexing="ij")
    s = np.sqrt(1 - z**2)
    d = np.stack([s * np.cos(p), s * np.sin(p), z], -1).reshape(-1, 3)
    w = (wz[:, None] * np.full(24, 2 * np.pi / 24)).reshape(-1)
    y = sh_basis(d, LEVELS)
    gram = (y * w[:, None]).T @ y
    np.testing.assert_allclose(gram, np.eye(17), atol=1e-12)


def test_sh_jacobian_matches_finite_differences(rng):
    d = unit(rng, 10)
    _, jac = sh_basis_jacobian(d, LEVELS)
    h = 1e-6
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd = (sh_basis(d + e, LEVELS) - sh_basis(d - e, LEVELS)) / (2 * h)
        np.testing.assert_allclose(jac[..., axis], fd, atol=1e-7)


def test_attenuation_frozen_values():
    assert attenuation(1, 1.0) == pytest.approx(np.exp(-1.0))
    assert attenuation(2, 3.0) == pytest.approx(np.exp(-1.0))
    assert attenuation(4, 10.0) == pytest.approx(np.exp(-1.0))
    assert attenuation(1, 0.0) == 0.0
    assert attenuation(4, np.inf) == 1.0


def test_attenuation_approaches_exact_vmf_ratio():
    # the exact vMF mean of Y_l is I_{l+1/2}(k) / I_{1/2}(k) times Y_l(mean direction)
    for kappa in (100.0, 1000.0):
        for l in LEVELS:
            exact = ive(l + 0.5, kappa) / ive(0.5, kappa)
            assert attenuation(l, kappa) == pytest.approx(exact, rel=1e-3)


def test_ide_matches_vmf_quadrature_at_high_concentration():
    # Monte Carlo free check: integrate Y_l * vMF density on a fine product grid around +z
    kappa = 200.0
    zs, wz = np.polynomial.legendre.leggauss(400)
    phis = np.arange(64) * 2 * np.pi / 64
    z, p = np.meshgrid(zs, phis, indexing="ij")
    s = np.sqrt(1 - z**2)
    d = np.stack([s * np.cos(p), s * np.sin(p), z], -1).reshape(-1, 3)
    w = (wz[:, None] * np.full(64, 2 * np.pi / 64)).reshape(-1)
    dens = kappa / (2 * np.pi * (1 - np.exp(-2 * kappa))) * np.exp(kappa * (d[:, 2] - 1))
    mean = (sh_basis(d, LEVELS) * (w * dens)[:, None]).sum(0)
    enc = ide(np.array([0.0, 0.0, 1.0]), np.array(kappa), LEVELS)
    np.testing.assert_allclose(enc, mean, rtol=2e-3, atol=1e-9)


def test_ide_limits(rng):
    d = unit(rng, 5)
    np.testing.assert_allclose(ide(d, np.full(5, np.inf)), sh_basis(d))
    assert np.all(ide(d, np.zeros(5)) == 0)


def test_ide_rejects_bad_kappa(rng):
    d = unit(rng, 2)
    with pytest.raises(ValueError):
        ide(d, np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        ide(d, np.array([1.0, np.nan]))


@settings(deadline=None, max_examples=50)
@given(st.floats(0.01, 1e4), st.floats(0.01, 1e4))
def test_ide_magnitude_monotone_in_kappa(k1, k2):
    d = np.array([[0.3, -0.5, 0.81]])
    lo, hi = sorted((k1, k2))
    a = np.abs(ide(d, np.array([lo])))
    b = np.abs(ide(d, np.array([hi])))
    assert np.all(a <= b + 1e-15)


def test_ide_backward_matches_finite_differences(rng):
    d = unit(rng, 4)
    kappa = rng.uniform(0.5, 20, size=4)
    g = rng.normal(size=(4, 17))
    gd, gk = ide_backward(d, kappa, g)
    h = 1e-6
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd = (np.sum(ide(d + e, kappa) * g, -1) - np.sum(ide(d - e, kappa) * g, -1)) / (2 * h)
        np.testing.assert_allclose(gd[:, axis], fd, rtol=1e-6, atol=1e-8)
    fd = (np.sum(ide(d, kappa + h) * g, -1) - np.sum(ide(d, kappa - h) * g, -1)) / (2 * h)
    np.testing.assert_allclose(gk, fd, rtol=1e-6, atol=1e-8)


def test_ide_from_roughness_is_ide_of_reciprocal(rng):
    d = unit(rng, 6)
    rough = rng.uniform(0.01, 3, size=6)
    feat, *_ = ide_from_roughness(d, rough)
    np.testing.assert_allclose(feat, ide(d, 1 / rough), rtol=1e-12)


def test_ide_from_roughness_backward(rng):
    d = unit(rng, 4)
    rough = rng.uniform(0.05, 2, size=4)
    g = rng.normal(size=(4, 17))
    _, basis, jac, att, ell = ide_from_roughness(d, rough)
    gd, gr = ide_from_roughness_backward(g, basis, jac, att, ell)
    h = 1e-6
    f = lambda dd, rr: np.sum(ide_from_roughness(dd, rr)[0] * g, -1)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        np.testing.assert_allclose(gd[:, axis], (f(d + e, rough) - f(d - e, rough)) / (2 * h), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gr, (f(d, rough + h) - f(d, rough - h)) / (2 * h), rtol=1e-6, atol=1e-8)


def test_reflect_known_case():
    # looking straight down onto an upward normal bounces straight back up
    np.testing.assert_allclose(reflect(np.array([0, 0, 1.0]), np.array([0, 0, 1.0])), [0, 0, 1])
    r = reflect(np.array([1.0, 0, 1.0]), np.array([0, 0, 2.0]))
    np.testing.assert_allclose(r, np.array([-1, 0, 1]) / np.sqrt(2), atol=1e-15)


@settings(deadline=None, max_examples=100)
@given(st.integers(0, 2**31 - 1))
def test_reflect_properties(seed):
    rng = np.random.default_rng(seed)
    w, n = unit(rng, 1)[0], unit(rng, 1)[0]
    r = reflect(w, n)
    assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)
    # angle with the normal is preserved and the result is an involution
    assert np.dot(r, n) == pytest.approx(np.dot(w, n), abs=1e-12)
    np.testing.assert_allclose(reflect(r, n), w, atol=1e-12)


def test_reflect_rejects_zero_normal():
    with pytest.raises(ValueError):
        reflect(np.array([0, 0, 1.0]), np.zeros(3))


def test_reflect_backward_matches_finite_differences(rng):
    w = rng.normal(size=(5, 3))
    n = rng.normal(size=(5, 3))
    g = rng.normal(size=(5, 3))
    gw, gn = reflect_backward(w, n, g)
    h = 1e-6
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        fd_w = (np.sum(reflect(w + e, n) * g, -1) - np.sum(reflect(w - e, n) * g, -1)) / (2 * h)
        fd_n = (np.sum(reflect(w, n + e) * g, -1) - np.sum(reflect(w, n - e) * g, -1)) / (2 * h)
        np.testing.assert_allclose(gw[:, axis], fd_w, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(gn[:, axis], fd_n, rtol=1e-5, atol=1e-8)


def test_roughness_activation_range_and_derivative():
    raw = np.array([-50.0, -1.0, 0.0, 1.0, 2.0, 2000.0])
    rough, d = roughness_from_raw(raw)
    assert np.all(rough >= 1e-3) and np.all(rough <= 1e3)
    assert rough[3] == pytest.approx(np.log(2))
    assert d[0] == 0 and d[-1] == 0
    h = 1e-6
    fd = (roughness_from_raw(raw[1:5] + h)[0] - roughness_from_raw(raw[1:5] - h)[0]) / (2 * h)
    np.testing.assert_allclose(d[1:5], fd, rtol=1e-6)
