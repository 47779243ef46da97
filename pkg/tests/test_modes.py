import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import eval_genlaguerre

from cavitrack.modes import (CavityGeometry, ModeIndex, ModeSet, QuadratureError, compute_norms, evaluate_mode,
                             laguerre, mode_values, mode_vector, sector_overlap_matrices)


def polar_oracle(p, m, norm, c, rho, theta):
    """Mode function written directly in polar form with scipy's Laguerre polynomials."""
    return (norm * np.exp(-rho**2 + 1j * m * theta) * (-1) ** p * (rho * math.sqrt(2)) ** abs(m)
            * eval_genlaguerre(p, abs(m), c * rho**2))


def exact_norm(p, m, c):
    """C from the exact integral of |u|^2 over the plane set equal to pi/2."""
    q = sp.symbols("q", positive=True)
    am = abs(m)
    lag = sp.assoc_laguerre(p, am, c * q)
    # |u|^2 dA with dA = pi dq (q = rho^2) after the angular integral
    power = sp.integrate(sp.pi * sp.exp(-2 * q) * 2**am * q**am * lag**2, (q, 0, sp.oo))
    return float(sp.sqrt(sp.pi / 2 / power))


@pytest.mark.parametrize("n,alpha", [(0, 0), (1, 0), (2, 1), (3, 2), (5, 0.5), (7, 3)])
def test_laguerre_recurrence_matches_scipy(n, alpha):
    x = np.linspace(0, 12, 41)
    assert np.allclose(laguerre(n, alpha, x), eval_genlaguerre(n, alpha, x), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("convention,c", [("sqrt2", sp.sqrt(2)), ("standard", sp.Integer(2))])
@pytest.mark.parametrize("p,m", [(0, 0), (1, 0), (0, 2), (0, -2), (2, 1), (1, -3)])
def test_norms_match_exact_integrals(convention, c, p, m):
    got = compute_norms([ModeIndex(p, m)], convention=convention)[0]
    assert got == pytest.approx(exact_norm(p, m, c), rel=1e-9)


def test_reference_norm_values(modeset):
    assert modeset.norms[modeset.index(ModeIndex(1, 0))] == pytest.approx(1 / math.sqrt(2 - math.sqrt(2)), rel=1e-12)
    assert modeset.norms[modeset.index(ModeIndex(0, 2))] == pytest.approx(1 / math.sqrt(2), rel=1e-12)


@pytest.mark.parametrize("convention", ["sqrt2", "standard"])
def test_values_match_polar_oracle(convention, rng):
    ms = ModeSet.build(convention=convention)
    c = math.sqrt(2) if convention == "sqrt2" else 2.0
    rho = rng.uniform(0, 2.5, 200)
    theta = rng.uniform(-np.pi, np.pi, 200)
    u, _, _ = mode_values(ms, rho * np.cos(theta), rho * np.sin(theta))
    for a, mode in enumerate(ms.modes):
        ref = polar_oracle(mode.p, mode.m, ms.norms[a], c, rho, theta)
        assert np.allclose(u[:, a], ref, rtol=1e-12, atol=1e-14)


def test_normalization_and_orthogonality_by_quadrature(modeset):
    # |u|^2 is exp(-2 rho^2) times a polynomial in rho^2 and a trigonometric
    # polynomial in theta: Gauss-Laguerre in x = 2 rho^2 plus the uniform
    # angular rule are exact for it, independently of the package's quadrature.
    x, w = np.polynomial.laguerre.laggauss(40)
    theta = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    rho = np.sqrt(x / 2)
    R, T = np.meshgrid(rho, theta, indexing="ij")
    u, _, _ = mode_values(modeset, R * np.cos(T), R * np.sin(T))
    # dA = rho d rho d theta = dx d theta / 4, and the weight e^{-x} is divided out
    wx = w * np.exp(x) / 4
    gram = np.einsum("r,rta,rtb->ab", wx, np.conj(u), u) * (2 * np.pi / len(theta))
    assert np.allclose(np.diag(gram).real, np.pi / 2, rtol=1e-6)
    off = gram - np.diag(np.diag(gram))
    assert np.abs(off).max() < 1e-8


def test_gradients_match_finite_differences(modeset, rng):
    h = 1e-6
    for _ in range(50):
        x, y = rng.uniform(-2, 2, 2)
        u, grad = mode_vector(modeset, (x, y))
        fx = (mode_vector(modeset, (x + h, y))[0] - mode_vector(modeset, (x - h, y))[0]) / (2 * h)
        fy = (mode_vector(modeset, (x, y + h))[0] - mode_vector(modeset, (x, y - h))[0]) / (2 * h)
        scale = np.abs(grad).max() + 1e-3
        assert np.abs(grad[0] - fx).max() / scale < 1e-6
        assert np.abs(grad[1] - fy).max() / scale < 1e-6


def test_point_reflection_symmetry_is_exact(modeset, rng):
    x, y = rng.uniform(-2, 2, (2, 500))
    u1, _, _ = mode_values(modeset, x, y)
    u2, _, _ = mode_values(modeset, -x, -y)
    assert np.array_equal(u1, u2)  # all modes have even |m|


def test_axis_is_regular(modeset):
    u, grad = mode_vector(modeset, (0.0, 0.0))
    assert np.all(np.isfinite(u)) and np.all(np.isfinite(grad))
    assert u[modeset.index(ModeIndex(0, 2))] == 0


def test_dark_ring_radius_sqrt2_convention(modeset):
    a = modeset.index(ModeIndex(1, 0))
    r0 = 2 ** -0.25
    assert abs(evaluate_mode(ModeIndex(1, 0), modeset, (r0, 0.3, 0.0)).value) < 1e-15
    inside = abs(mode_vector(modeset, (r0 - 0.01, 0))[0][a])
    outside = abs(mode_vector(modeset, (r0 + 0.01, 0))[0][a])
    assert inside > 0 and outside > 0


def test_dark_ring_radius_standard_convention():
    ms = ModeSet.build(convention="standard")
    assert abs(evaluate_mode(ModeIndex(1, 0), ms, (2 ** -0.5, 1.0, 0.0)).value) < 1e-15


def test_longitudinal_factor(modeset):
    geo = modeset.geometry
    z_node = math.pi / 2 / geo.kw0
    assert abs(evaluate_mode(ModeIndex(1, 0), modeset, (0.2, 0.0, z_node)).value) < 1e-12
    full = evaluate_mode(ModeIndex(1, 0), modeset, (0.2, 0.0, 0.0)).value
    shifted = evaluate_mode(ModeIndex(1, 0), modeset, (0.2, 0.0, 2 * math.pi / geo.kw0)).value
    assert shifted == pytest.approx(full, rel=1e-9)


def test_geometry_derived_values():
    geo = CavityGeometry()
    assert geo.kw0 == pytest.approx(2 * math.pi * 29e-6 / 780e-9, rel=1e-12)
    assert geo.kw0 == pytest.approx(233.6, abs=0.05)
    assert geo.mode_volume == pytest.approx(100e-6 * math.pi * (29e-6) ** 2 / 4, rel=1e-12)
    with pytest.raises(ValueError):
        CavityGeometry(w0=0)


def test_sector_overlaps_complete_and_hermitian(modeset):
    o = sector_overlap_matrices(modeset, 16, 5.0)
    assert o.shape == (16, 3, 3)
    assert np.allclose(o, np.conj(np.transpose(o, (0, 2, 1))), atol=0)
    assert np.abs(o.sum(axis=0) - np.eye(3)).max() < 1e-6
    # opposite sectors see identical light for even-|m| modes
    assert np.array_equal(o[:8], o[8:])
    for j in range(16):
        assert np.linalg.eigvalsh(o[j]).min() > -1e-12


def test_sector_overlap_against_direct_integration(modeset):
    o = sector_overlap_matrices(modeset, 16, 5.0)
    j = 3
    theta = np.linspace(j * 2 * np.pi / 16, (j + 1) * 2 * np.pi / 16, 201)
    rho = np.linspace(0, 5, 2001)
    R, T = np.meshgrid(rho, theta, indexing="ij")
    u, _, _ = mode_values(modeset, R * np.cos(T), R * np.sin(T))
    integrand = np.einsum("rta,rtb->rtab", u, np.conj(u)) * R[..., None, None]
    ref = np.trapezoid(np.trapezoid(integrand, theta, axis=1), rho, axis=0) / (np.pi / 2)
    assert np.allclose(o[j], ref, atol=1e-6)


def test_overlap_rejects_small_aperture(modeset):
    with pytest.raises(ValueError):
        sector_overlap_matrices(modeset, 16, 2.0)


def test_nondegenerate_set_warns():
    with pytest.warns(UserWarning, match="degenerate"):
        ModeSet.build([ModeIndex(0, 0), ModeIndex(1, 0)])


def test_invalid_modes():
    with pytest.raises(ValueError):
        ModeIndex(-1, 0)
    with pytest.raises(ValueError):
        ModeSet.build([ModeIndex(1, 0), ModeIndex(1, 0)])
    with pytest.raises(ValueError):
        ModeSet.build(convention="other")


def test_quadrature_error_type():
    assert issubclass(QuadratureError, RuntimeError)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(-4, 4)), min_size=1, max_size=4, unique=True),
       st.sampled_from(["sqrt2", "standard"]))
def test_modeset_text_round_trip(pairs, convention):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ms = ModeSet.build([ModeIndex(p, m) for p, m in pairs], convention=convention)
        back = ModeSet.from_text(ms.to_text())
    assert back == ms


@given(st.integers(0, 20), st.integers(-20, 20))
def test_mode_index_parse_round_trip(p, m):
    assert ModeIndex.parse(str(ModeIndex(p, m))) == ModeIndex(p, m)
