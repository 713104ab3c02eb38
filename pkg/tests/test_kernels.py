import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinbie import clifford as cl
from spinbie import kernels as kn

from conftest import random_mv

away = st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3).map(np.array).filter(
    lambda v: 0.2 < np.linalg.norm(v) < 3
)
wavenumber = st.tuples(st.floats(0.1, 5), st.floats(0, 1)).map(lambda t: complex(*t))


def fd_laplacian(f, x, h=1e-3):
    out = -6 * f(x)
    for i in range(3):
        d = np.zeros(3)
        d[i] = h
        out = out + f(x + d) + f(x - d)
    return out / h**2


def test_wavenumber_validation():
    assert kn.check_wavenumber(2) == 2
    for bad in (0, 1 - 0.1j, float("nan")):
        with pytest.raises(ValueError):
            kn.check_wavenumber(bad)
    assert kn.check_wavenumber(0, allow_zero=True) == 0


def test_phi_static_unit_distance():
    # [DERIVED] closed form at k = 0, |x| = 1
    assert kn.phi(0.0, np.array([0.0, 1.0, 0.0])) == pytest.approx(-1 / (4 * np.pi))
    assert kn.phi(0.0, np.array([0.0, 1.0, 0.0])) == pytest.approx(-0.0795775, abs=1e-7)


@given(wavenumber, away)
def test_phi_even(k, x):
    assert kn.phi(k, x) == pytest.approx(kn.phi(k, -x), rel=1e-14)


def test_phi_helmholtz_fd():
    # [DERIVED] finite-difference Laplacian
    k = 2 + 0.3j
    x = np.array([0.7, 0.2, -0.4])
    f = lambda y: kn.phi(k, y)  # noqa: E731
    res = abs(fd_laplacian(f, x) + k**2 * f(x))
    assert res <= 1e-5 * abs(f(x))


def test_phi_rejects_origin():
    with pytest.raises(ValueError):
        kn.phi(1.0, np.zeros(3))


def test_grad_phi_static():
    np.testing.assert_allclose(kn.grad_phi(0.0, np.array([1.0, 0, 0])), [1 / (4 * np.pi), 0, 0], rtol=1e-15)


@given(wavenumber, away)
def test_grad_phi_odd(k, x):
    np.testing.assert_allclose(kn.grad_phi(k, -x), -kn.grad_phi(k, x), rtol=1e-14)


def test_grad_phi_fd(rng):
    # [DERIVED] central differences at 20 random points
    k = 1.3 + 0.2j
    x = rng.standard_normal((20, 3))
    x *= (0.5 + rng.random((20, 1))) / np.linalg.norm(x, axis=1, keepdims=True)
    fd = np.moveaxis(kn.fd_gradient(lambda y: kn.phi(k, y), x, 1e-5), 0, -1)
    g = kn.grad_phi(k, x)
    assert np.abs(fd - g).max() <= 1e-6 * np.abs(g).max()


def test_hessian_fd(rng):
    k = 2.0
    x = np.array([[0.4, -0.3, 0.9]])
    fd = np.moveaxis(kn.fd_gradient(lambda y: kn.grad_phi(k, y), x, 1e-5), 0, -2)
    np.testing.assert_allclose(kn.hessian_phi(k, x), fd, rtol=1e-6, atol=1e-9)


def test_psi_static_example():
    p = kn.psi(0.0, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(p, cl.basis(1) / (4 * np.pi), atol=1e-17)


@given(wavenumber, away)
def test_psi_parts(k, x):
    p, pt = kn.psi(k, x), kn.psi_tilde(k, x)
    ph = kn.phi(k, x)
    assert p[0] == pytest.approx(-1j * k * ph, rel=1e-13)
    assert pt[0] == pytest.approx(1j * k * ph, rel=1e-13)
    np.testing.assert_allclose(p[1:4], kn.grad_phi(k, x), rtol=1e-14)
    np.testing.assert_array_equal(p[1:4], pt[1:4])
    assert not np.any(p[4:]) and not np.any(pt[4:])


def test_psi_solves_dirac_with_minus_ik(rng):
    # [DERIVED] (D + ik) Psi_k = 0 away from the origin
    k = 2.0 + 0.1j
    x = rng.standard_normal((10, 3)) + 1.5
    c = random_mv(rng)
    F = lambda y: cl.clifford_mul(kn.psi(k, y), c)  # noqa: E731
    res = np.linalg.norm(kn.fd_dirac(F, x) + 1j * k * F(x), axis=1) / np.linalg.norm(F(x), axis=1)
    assert res.max() <= 1e-5


def test_psi_tilde_solves_dirac(rng):
    k = 2.0 + 0.1j
    x = rng.standard_normal((10, 3)) + 1.5
    c = random_mv(rng)
    F = lambda y: cl.clifford_mul(kn.psi_tilde(k, y), c)  # noqa: E731
    assert kn.dirac_residual(F, k, x).max() <= 1e-5


def test_psi_difference_is_weakly_singular():
    k = 2.0 + 0.5j
    r = np.logspace(-4, 0, 40)
    x = r[:, None] * np.array([0.6, 0.0, 0.8])
    d = kn.psi_difference(k, x)
    bound = np.linalg.norm(d, axis=1) / (1 + 1 / r)
    assert bound.max() < 1.0
    # and matches the plain difference where that is accurate
    far = r > 1e-2
    ref = kn.psi(k, x[far]) - kn.psi(0.0, x[far])
    np.testing.assert_allclose(d[far], ref, rtol=1e-8, atol=1e-12)


def test_helmholtz_source_field(rng):
    k, z0 = 2.0, np.array([0.2, 0.1, -0.3])
    x = rng.standard_normal((10, 3)) * 0.3 + 2.0
    F = kn.helmholtz_source_field(k, z0, x)
    np.testing.assert_allclose(F[:, 0] / (1j * k), kn.phi(k, x - z0), rtol=1e-15)
    grad = np.moveaxis(kn.fd_gradient(lambda y: kn.helmholtz_source_field(k, z0, y)[:, 0] / (1j * k), x, 1e-4), 0, -1)
    assert np.abs(grad - F[:, 1:4]).max() <= 1e-5 * np.abs(F[:, 1:4]).max()
    for variant in ("dirichlet", "neumann"):
        f = lambda y: kn.helmholtz_source_field(k, z0, y, variant)  # noqa: E731
        assert kn.dirac_residual(f, k, x).max() <= 1e-4
    with pytest.raises(ValueError):
        kn.helmholtz_source_field(k, z0, z0[None])
    with pytest.raises(ValueError):
        kn.helmholtz_source_field(k, z0, x, "robin")


def test_neumann_source_is_the_hodge_dual():
    k, z0, x = 1.5, np.zeros(3), np.array([[1.0, 2.0, 0.5]])
    np.testing.assert_allclose(
        kn.helmholtz_source_field(k, z0, x, "neumann"), cl.hodge_star(kn.helmholtz_source_field(k, z0, x)), rtol=1e-15
    )


def test_dipole_field(rng):
    k, z0, p = 2.0, np.array([0.2, 0.1, -0.3]), np.array([1.0, 0.5j, 0.0])
    x = rng.standard_normal((10, 3)) * 0.3 + 1.8
    F = kn.maxwell_dipole_field(k, z0, p, x)
    assert not np.any(F[:, [0, 7]])
    # [DERIVED] curl E = ik H by finite differences
    J = kn.fd_gradient(lambda y: kn.maxwell_dipole_field(k, z0, p, y)[:, 1:4], x, 1e-4)  # (3, P, 3): d_i E_j
    curl = np.stack([J[1, :, 2] - J[2, :, 1], J[2, :, 0] - J[0, :, 2], J[0, :, 1] - J[1, :, 0]], axis=1)
    H = F[:, 4:7]
    assert np.linalg.norm(curl - 1j * k * H, axis=1).max() <= 1e-4 * np.linalg.norm(H, axis=1).max()
    f = lambda y: kn.maxwell_dipole_field(k, z0, p, y)  # noqa: E731
    assert kn.dirac_residual(f, k, x).max() <= 1e-4
    with pytest.raises(ValueError):
        kn.maxwell_dipole_field(0.0, z0, p, x)


def test_plane_waves(rng):
    k, d = 2.0, np.array([0.0, 0.0, 1.0])
    x = rng.standard_normal((10, 3))
    F = kn.plane_wave_field("maxwell", k, d, x, (1.0, 0, 0))
    assert not np.any(F[:, [0, 7]])
    np.testing.assert_allclose(np.linalg.norm(F[:, 1:4], axis=1), 1.0, rtol=1e-14)
    origin = kn.plane_wave_field("maxwell", k, d, np.zeros((1, 3)), (1.0, 0, 0))[0]
    np.testing.assert_allclose(origin, cl.basis(1) + cl.basis(5))
    for kind in ("dirichlet", "neumann", "maxwell"):
        f = lambda y: kn.plane_wave_field(kind, k, d, y, (1.0, 0, 0))  # noqa: E731, B023
        assert kn.dirac_residual(f, k, x).max() <= 1e-4
    with pytest.raises(ValueError):
        kn.plane_wave_field("maxwell", k, d, x, (0, 0, 1.0))
    with pytest.raises(ValueError):
        kn.plane_wave_field("dirichlet", k, (0, 0, 2.0), x)


def test_radiation_defect_contrast(rng):
    k = 2.0
    c = random_mv(rng)
    good = lambda y: cl.clifford_mul(kn.psi_tilde(k, y), c)  # noqa: E731
    bad = lambda y: cl.clifford_mul(kn.psi(k, y), c)  # noqa: E731
    g5, g50 = kn.radiation_defect(good, k, 5.0), kn.radiation_defect(good, k, 50.0)
    b5, b50 = kn.radiation_defect(bad, k, 5.0), kn.radiation_defect(bad, k, 50.0)
    # the outgoing kernel loses at least one power of R beyond the scaling
    assert g50 <= 0.1 * 2 * g5
    assert b50 > 0.5 * b5
    assert kn.radiation_defect(lambda y: np.zeros((len(y), 8)), k, 5.0) == 0.0


@settings(max_examples=25)
@given(st.integers(1, 300), st.floats(0.1, 10))
def test_fibonacci_sphere(m, radius):
    pts = kn.fibonacci_sphere(m, radius)
    assert pts.shape == (m, 3)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), radius, rtol=1e-13)
