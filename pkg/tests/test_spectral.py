import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anisns.spectral import (
    Grid,
    SpectralField,
    aniso_norm,
    chi_profile,
    derivative,
    dyadic_partition,
    field_from_json,
    field_to_json,
    from_physical,
    load_fields,
    lp_block,
    lp_equivalence_constants,
    lp_norm,
    mode_field,
    project_leray,
    random_field,
    save_fields,
    theta_profile,
    to_physical,
)


def dense_synthesis(grid, c):
    """u(x) = sum_k c_k exp(i k.x) by direct summation on the physical grid."""
    n1, n2 = grid.physical_shape
    x1 = 2 * np.pi * np.arange(n1) / n1
    x2 = 2 * np.pi * np.arange(n2) / n2
    out = np.zeros((2, n1, n2), dtype=complex)
    for a in range(-grid.m_h, grid.m_h + 1):
        for b in range(-grid.m_v, grid.m_v + 1):
            ph = np.exp(1j * (a * x1[:, None] + b * x2[None, :]))
            out += c[:, grid.m_h + a, grid.m_v + b, None, None] * ph
    return out


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(7, 8)
    with pytest.raises(ValueError):
        Grid(2, 8)
    with pytest.raises(ValueError):
        Grid(8, 8, dealias_fraction=0.0)
    g = Grid(16, 8)
    assert g.shape == (17, 9)
    assert g.field_shape == (2, 17, 9)


def test_physical_grid_is_padded_enough(grid16):
    # quadratic products of modes up to M alias-free needs N >= 3M + 1
    n1, n2 = grid16.physical_shape
    assert n1 >= 3 * grid16.m_h + 1 and n2 >= 3 * grid16.m_v + 1


def test_synthesis_matches_direct_sum(grid8, rng):
    u = random_field(grid8, rng, slope=0.5)
    ref = dense_synthesis(grid8, u.coeffs)
    assert np.max(np.abs(ref.imag)) < 1e-12
    np.testing.assert_allclose(to_physical(grid8, u.coeffs), ref.real, atol=1e-12)


def test_roundtrip(grid16, rng):
    u = random_field(grid16, rng, slope=0.0, divergence_free=False)
    back = from_physical(grid16, to_physical(grid16, u.coeffs))
    np.testing.assert_allclose(back, u.coeffs, atol=1e-13)
    assert u.reality_error() < 1e-15


def test_from_physical_single_mode(grid8):
    n1, n2 = grid8.physical_shape
    x1 = 2 * np.pi * np.arange(n1)[:, None] / n1
    x2 = 2 * np.pi * np.arange(n2)[None, :] / n2
    f = np.stack([np.cos(2 * x1 + 3 * x2), np.zeros((n1, n2))])
    c = SpectralField.from_physical(grid8, f)
    assert c.coeff(2, 3)[0] == pytest.approx(0.5)
    assert c.coeff(-2, -3)[0] == pytest.approx(0.5)
    assert np.sum(np.abs(c.coeffs)) == pytest.approx(1.0)


def test_leray_removes_gradient(grid16, rng):
    # gradient field grad(phi) has coefficients i k phi_k
    phi = rng.standard_normal(grid16.shape) + 1j * rng.standard_normal(grid16.shape)
    phi = 0.5 * (phi + np.conj(phi[::-1, ::-1]))
    grad = np.stack([1j * grid16.k1 * phi, 1j * grid16.k2 * phi + 0 * grid16.k1])
    p = project_leray(SpectralField(grid16, grad))
    assert np.max(np.abs(p.coeffs)) < 1e-13


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([4, 8, 12]))
def test_leray_properties(seed, n):
    g = Grid(n, n + 4)
    rng = np.random.default_rng(seed)
    f = random_field(g, rng, slope=0.0, divergence_free=False)
    p = project_leray(f)
    assert p.divergence_error() <= 1e-12 * max(f.norm(), 1)
    np.testing.assert_allclose(project_leray(p).coeffs, p.coeffs, atol=1e-14)
    assert abs(p.dot(f - p)) <= 1e-12 * f.norm() ** 2
    assert p.norm() <= f.norm() * (1 + 1e-14)


def test_derivative_of_mode(grid8):
    u = mode_field(grid8, (1, 2), 0.5)
    d1 = derivative(u, 1)
    np.testing.assert_allclose(d1.coeff(1, 2), 1j * u.coeff(1, 2))
    d22 = derivative(u, 2, 2)
    np.testing.assert_allclose(d22.coeff(-1, -2), -4 * u.coeff(-1, -2))
    with pytest.raises(ValueError):
        derivative(u, 3)


def test_aniso_norm_of_mode(grid8):
    u = mode_field(grid8, (2, 1), 1.0)  # unit vector, coefficient 1 at +-k
    assert aniso_norm(u) == pytest.approx(math.sqrt(2))
    assert aniso_norm(u, 1, 0) == pytest.approx(math.sqrt(2 * 5))
    assert aniso_norm(u, 1, 2) == pytest.approx(math.sqrt(2 * 5 * 4))
    assert aniso_norm(u, 1, isotropic=True) == pytest.approx(math.sqrt(2 * 6))


def test_chi_closed_form():
    # chi(1): smooth step at t = (1 - 3/4) / (4/3 - 3/4)
    t = 0.25 / (4 / 3 - 0.75)
    a, b = math.exp(-1 / t), math.exp(-1 / (1 - t))
    assert chi_profile(1.0) == pytest.approx(1 - a / (a + b), rel=1e-14)
    assert chi_profile(0.75) == 1.0 and chi_profile(4 / 3) == 0.0
    assert theta_profile(0.7) == 0.0 and theta_profile(8 / 3 + 1e-9) == 0.0


@settings(max_examples=50, deadline=None)
@given(z=st.floats(0, 1e4))
def test_partition_of_unity_profiles(z):
    total = chi_profile(z) + sum(theta_profile(z / 2**j) for j in range(20))
    assert total == pytest.approx(1.0, abs=1e-14)
    assert 0 <= chi_profile(z) <= 1


def test_dyadic_partition(grid16, rng):
    part = dyadic_partition(grid16)
    assert part.j_max == 3
    np.testing.assert_allclose(part.total(), 1.0, atol=1e-15)
    f = random_field(grid16, rng)
    recon = sum(lp_block(f, j, part).coeffs for j in range(-1, part.j_max + 1))
    np.testing.assert_allclose(recon, f.coeffs, atol=1e-15)
    with pytest.raises(IndexError):
        part.block_weights(part.j_max + 1)


def test_lp_constants_frozen(grid16):
    part = dyadic_partition(grid16)
    c, C = lp_equivalence_constants(part, 1.0)
    assert c == pytest.approx(0.34005189796282714, rel=1e-12)
    assert C == pytest.approx(0.7821749387597787, rel=1e-12)


@pytest.mark.parametrize("sp", [0.0, 0.5, 1.0, 2.0])
def test_lp_norm_equivalence(grid16, rng, sp):
    part = dyadic_partition(grid16)
    c, C = lp_equivalence_constants(part, sp)
    for _ in range(10):
        f = random_field(grid16, rng, slope=float(rng.uniform(0, 3)))
        r = lp_norm(f, 0.5, sp, part) / aniso_norm(f, 0.5, sp)
        assert c * (1 - 1e-12) <= r <= C * (1 + 1e-12)


def test_random_field_properties(grid16, rng):
    u = random_field(grid16, rng, amplitude=3.0, k_max=4)
    assert u.norm() == pytest.approx(3.0)
    assert u.divergence_error() < 1e-13
    assert np.all(u.coeffs[:, grid16.ksq > 16] == 0)
    assert np.all(u.coeff(0, 0) == 0)


def test_field_arithmetic(grid8, rng):
    u, v = random_field(grid8, rng), random_field(grid8, rng)
    w = 2 * u - v
    np.testing.assert_allclose(w.coeffs, 2 * u.coeffs - v.coeffs)
    assert w.divergence_free
    with pytest.raises(ValueError):
        u + SpectralField.zeros(Grid(8, 4))
    with pytest.raises(ValueError):
        SpectralField(grid8, np.zeros((2, 3, 3)))


def test_binary_roundtrip(tmp_path, grid8, rng):
    fields = np.stack([random_field(grid8, rng).coeffs for _ in range(3)])
    path = tmp_path / "f.bin"
    save_fields(path, grid8, fields)
    g, back = load_fields(path)
    assert (g.n_h, g.n_v) == (8, 8)
    assert np.array_equal(back, fields)
    raw = path.read_bytes()
    assert raw[:4] == b"ANSF"
    assert len(raw) == 4 + 16 + fields.size * 16


def test_binary_rejects_garbage(tmp_path, grid8):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ValueError):
        load_fields(p)
    save_fields(p, grid8, grid8.zeros())
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_fields(p)


def test_json_roundtrip(grid8, rng):
    u = random_field(grid8, rng)
    back = field_from_json(field_to_json(u))
    assert np.array_equal(back.coeffs, u.coeffs)
