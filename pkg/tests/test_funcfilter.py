import numpy as np
import pytest

from ethrelax.engine import SpectralBounds, random_haar_state, rng_stream, spectral_bounds
from ethrelax.funcfilter import (
    ChebyshevDivergenceError,
    EnergyWindow,
    ModWeightOperator,
    OrderCapError,
    apply_function,
    apply_mod_root,
    gaussian_filter_state,
    plan_function,
)
from ethrelax.model import ModelSpec, build_model
from ethrelax.oracle import dense_matrix

from reference import expm_herm

SIX = ModelSpec("ladder", 2, 4, delta=0.3, j_c=0.3)


def test_window_defaults_and_validation():
    w = EnergyWindow()
    assert (w.e_center, w.sigma) == (0.0, 0.6)
    with pytest.raises(ValueError):
        EnergyWindow(0.0, 0.0)


def test_constant_plan_single_coefficient():
    p = plan_function("constant", (-3.0, 5.0), value=1.0)
    assert p.order == 0
    assert p.coeffs[0] == pytest.approx(1.0, abs=1e-15)


def test_identity_plan_two_coefficients():
    p = plan_function("identity", (-2.0, 4.0))
    assert p.order == 1
    xs = np.linspace(-2, 4, 101)
    np.testing.assert_allclose(p(xs), xs, atol=1e-13)


def test_gaussian_plan_grid_error():
    p = plan_function("gaussian", (-10.0, 10.0), 1e-10, sigma=0.6)
    xs = np.linspace(-10, 10, 20001)
    assert np.max(np.abs(p(xs) - np.exp(-xs**2 / 0.72))) < 1e-10


def test_order_cap_reports_estimate():
    with pytest.raises(OrderCapError) as info:
        plan_function("gaussian", (-100.0, 100.0), 1e-10, max_order=50, sigma=0.1)
    assert info.value.required_order is None or info.value.required_order > 50


def test_identity_plan_equals_operator():
    m = build_model(SIX)
    psi = random_haar_state(m.dim, 1)
    p = plan_function("identity", spectral_bounds(m.H))
    np.testing.assert_allclose(apply_function(p, m.H, psi), m.H.apply(psi), atol=1e-13)


def test_gaussian_filter_matches_dense():
    m = build_model(SIX)
    H = dense_matrix(m.H)
    r = random_haar_state(m.dim, 2, k=3)
    for w in (EnergyWindow(), EnergyWindow(-1.0, 0.4)):
        phi, n2 = gaussian_filter_state(m.H, w, r=r)
        ref = expm_herm(H, lambda e: np.exp(-((e - w.e_center) ** 2) / (4 * w.sigma**2))) @ r
        assert np.max(np.abs(phi - ref)) < 1e-8
        np.testing.assert_allclose(n2, np.linalg.norm(ref, axis=0) ** 2, rtol=1e-9)
        assert np.all(n2 > 0)


def test_eigenstate_input():
    m = build_model(SIX)
    up = np.zeros(m.dim, complex)
    up[-1] = 1
    phi, n2 = gaussian_filter_state(m.H, EnergyWindow(0.0, 0.6), r=up)
    assert n2 == pytest.approx(np.exp(-0.345**2 / 0.72), rel=1e-10)
    np.testing.assert_allclose(phi, np.exp(-0.345**2 / 1.44) * up, atol=1e-11)


def test_wide_window_is_identity():
    m = build_model(SIX)
    _, n2 = gaussian_filter_state(m.H, EnergyWindow(0.0, 1e4), seed=3)
    assert n2 == pytest.approx(1.0, abs=1e-6)


def test_deff_trace_from_filter():
    m = build_model(SIX)
    E = np.linalg.eigvalsh(dense_matrix(m.H))
    exact = np.exp(-E**2 / 0.72).sum()
    r = np.stack([random_haar_state(m.dim, rng_stream(4, 1, i)) for i in range(50)], axis=1)
    _, n2 = gaussian_filter_state(m.H, EnergyWindow(), r=np.ascontiguousarray(r))
    est = m.dim * n2
    assert abs(est.mean() - exact) < 3 * est.std(ddof=1) / np.sqrt(50)


def test_filter_twice_composes():
    m = build_model(SIX)
    H = dense_matrix(m.H)
    psi = random_haar_state(m.dim, 5)
    once, _ = gaussian_filter_state(m.H, EnergyWindow(0.2, 0.6), r=psi)
    twice, _ = gaussian_filter_state(m.H, EnergyWindow(0.2, 0.6), r=once)
    ref = expm_herm(H, lambda e: np.exp(-((e - 0.2) ** 2) / (2 * 0.36))) @ psi
    assert np.max(np.abs(twice - ref)) < 1e-8


def test_bad_bounds_detected():
    m = build_model(ModelSpec("ladder", 3, 3, W=1.0))
    p = plan_function("gaussian_root", SpectralBounds(-0.1, 0.1, 0.0, "wrong"), center=0.0, sigma=0.02)
    with pytest.raises(ChebyshevDivergenceError):
        apply_function(p, m.H, random_haar_state(m.dim, 0))


def test_input_not_modified():
    m = build_model(SIX)
    psi = random_haar_state(m.dim, 7, k=2)
    keep = psi.copy()
    gaussian_filter_state(m.H, EnergyWindow(), r=psi)
    np.testing.assert_array_equal(psi, keep)


def test_mod_root_matches_dense():
    m = build_model(ModelSpec("single_contact", 2, 4, delta=0.6, j_c=1.0))
    H, D = dense_matrix(m.H), dense_matrix(m.D)
    psi = random_haar_state(m.dim, 8, k=2)
    for beta, d0 in ((0.5, 2.0), (0.5, -2.0), (1.3, 0.7)):
        K = H @ H + beta**2 * (D - d0 * np.eye(m.dim)) @ (D - d0 * np.eye(m.dim))
        ref = expm_herm(K, lambda k: np.exp(-k / 1.44)) @ psi
        out = apply_mod_root(m.H, m.D, 0.6, beta, d0, psi)
        assert np.max(np.abs(out - ref)) < 1e-8


def test_mod_root_beta_zero_is_gaussian_filter():
    m = build_model(SIX)
    psi = random_haar_state(m.dim, 9)
    a = apply_mod_root(m.H, m.D, 0.6, 0.0, 3.0, psi)
    b, _ = gaussian_filter_state(m.H, EnergyWindow(0.0, 0.6), r=psi)
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_mod_root_symmetric_zero_displacement():
    m = build_model(ModelSpec("ladder", 3, 3))
    vals = []
    for s in range(12):
        phi = apply_mod_root(m.H, m.D, 0.6, 0.5, 0.0, random_haar_state(m.dim, s))
        vals.append(np.vdot(phi, m.D.apply(phi)).real / np.vdot(phi, phi).real)
    vals = np.array(vals)
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_mod_root_order_cap_falls_back():
    m = build_model(SIX)
    H, D = dense_matrix(m.H), dense_matrix(m.D)
    psi = random_haar_state(m.dim, 10)
    out = apply_mod_root(m.H, m.D, 0.6, 0.5, 2.0, psi, max_order=5)
    K = H @ H + 0.25 * (D - 2 * np.eye(m.dim)) @ (D - 2 * np.eye(m.dim))
    assert np.max(np.abs(out - expm_herm(K, lambda k: np.exp(-k / 1.44)) @ psi)) < 1e-8


def test_mod_weight_operator_hermitian():
    m = build_model(SIX)
    K = ModWeightOperator(m.H, m.D, 0.5, 1.0)
    a, b = random_haar_state(m.dim, 1), random_haar_state(m.dim, 2)
    assert abs(np.vdot(a, K.apply(b)) - np.conj(np.vdot(b, K.apply(a)))) < 1e-12
