"""Charge profile invariants: normalization, support, Fourier side, mollification.

Expected values come from independent 1-D radial Gauss quadrature done
inline (np.polynomial.legendre.leggauss), never from the module under test.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from abraham.errors import InvalidParameterError
from abraham.profiles import PhysicalConstants, make_profile, mollify_at


def radial_integral(f, a, b, n=200):
    """Gauss-Legendre oracle for int_a^b f(r) dr, independent of the package."""
    x, w = np.polynomial.legendre.leggauss(n)
    r = 0.5 * (b - a) * x + 0.5 * (b + a)
    return 0.5 * (b - a) * float(np.sum(w * f(r)))


def random_rotation(rng):
    A = rng.normal(size=(3, 3))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diag(R))


@pytest.mark.parametrize("shape", ["bump", "poly4"])
def test_total_charge_is_one(shape):
    prof = make_profile(shape, 1.0)
    total = radial_integral(lambda r: 4.0 * np.pi * r**2 * prof.density(r),
                            0.0, 1.0)
    assert_allclose(total, 1.0, atol=1e-10)


def test_compact_support(bump):
    assert bump.density(1.5) == 0.0
    val, grad = bump.eval_density(np.array([[1.5, 0.0, 0.0], [0.0, 2.0, 0.0]]))
    assert np.all(val == 0.0)
    assert np.all(grad == 0.0)
    assert np.all(bump.density_d1(np.array([1.0, 1.2, 7.0])) == 0.0)


def test_dilation_family(bump):
    # rho_{R=2}(x) = 2^-3 rho_{R=1}(x/2) pointwise: same shape, unit charge
    prof2 = make_profile("bump", 2.0)
    r = np.linspace(0.0, 1.9, 40)
    assert_allclose(prof2.density(r), 0.125 * bump.density(0.5 * r),
                    rtol=1e-13, atol=1e-300)


def test_bad_radius_rejected():
    with pytest.raises(InvalidParameterError):
        make_profile("bump", 0.0)
    with pytest.raises(InvalidParameterError):
        make_profile("bump", -1.0)
    with pytest.raises(InvalidParameterError):
        make_profile("cauchy", 1.0)


def test_density_gradient_center_and_finite_difference(bump, rng):
    # radial smooth function: gradient at the center is zero
    _, g = bump.eval_density(np.zeros((1, 3)))
    assert_allclose(g, 0.0, atol=1e-14)

    pts = rng.uniform(-0.9, 0.9, size=(20, 3))
    pts = pts[np.linalg.norm(pts, axis=1) < 0.95]
    _, grad = bump.eval_density(pts)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (bump.eval_density(pts + e)[0]
              - bump.eval_density(pts - e)[0]) / (2 * h)
        scale = np.maximum(np.abs(grad[:, i]), 1e-3 * np.abs(grad).max())
        assert np.max(np.abs(fd - grad[:, i]) / scale) < 1e-6
    # gradient is radial: parallel to x
    crossed = np.cross(pts, grad)
    assert np.max(np.abs(crossed)) < 1e-12 * np.abs(grad).max()


def test_fourier_radial_normalization_and_decay(bump):
    assert_allclose(bump.fourier_radial(0.0), 1.0, atol=1e-10)
    # smooth compact support: super-polynomial decay
    assert abs(bump.fourier_radial(100.0)) <= abs(bump.fourier_radial(1.0)) / 1e3


def test_wiener_scan_reports_dense_minimum(bump):
    min_abs, argmin_k, satisfied = bump.wiener_scan(50.0, samples=10_000)
    k = np.linspace(0.0, 50.0, 10_000)
    dense = np.abs(bump.fourier_radial(k))
    assert_allclose(min_abs, dense.min(), rtol=1e-12)
    assert 0.0 <= argmin_k <= 50.0
    assert satisfied == (min_abs > 0.0)


def test_mollify_constant_and_linear(bump):
    pt = np.array([0.3, -0.1, 0.2])
    assert_allclose(mollify_at(lambda x: np.full(len(x), 2.5), bump, pt),
                    2.5, atol=1e-10)
    a = np.array([1.0, -2.0, 0.5])
    assert_allclose(mollify_at(lambda x: x @ a, bump, pt), a @ pt, atol=1e-10)


def test_mollify_quadratic_second_moment(bump):
    # f = |x|^2 at 0 -> second moment, against the 1-D radial oracle
    m2 = radial_integral(lambda r: 4.0 * np.pi * r**4 * bump.density(r),
                         0.0, 1.0)
    got = mollify_at(lambda x: np.sum(x**2, axis=1), bump, np.zeros(3))
    assert_allclose(got, m2, atol=1e-8)
    assert_allclose(bump.second_moment(), m2, atol=1e-8)


def test_mollify_degree_two_exactness(bump, rng):
    # general quadratic: c + a.x + x^T M x has closed-form mollification
    M = rng.normal(size=(3, 3))
    a = rng.normal(size=3)
    c = 0.7
    x0 = np.array([0.2, 0.4, -0.3])
    m2 = bump.second_moment()

    def f(x):
        return c + x @ a + np.einsum("mi,ij,mj->m", x, M, x)

    exact = c + a @ x0 + x0 @ M @ x0 + np.trace(M) * m2 / 3.0
    assert_allclose(mollify_at(f, bump, x0), exact, rtol=1e-9)


def test_rotation_invariance(bump, rng):
    x = rng.uniform(-1.0, 1.0, size=(100, 3))
    base = bump.eval_density(x)[0]
    for _ in range(100):
        Q = random_rotation(rng)
        assert np.max(np.abs(bump.eval_density(x @ Q.T)[0] - base)) < 1e-12


def test_self_convolution_against_2d_oracle(bump):
    chi = bump.self_convolution()
    assert chi.support == 2.0

    # chi(r) = 2 pi int r'^2 rho(r') int rho(sqrt(r^2+r'^2-2 r r' mu)) dmu dr'
    xg, wg = np.polynomial.legendre.leggauss(120)
    rp = 0.5 * (xg + 1.0)          # [0, 1]
    wrp = 0.5 * wg
    mu = xg                        # [-1, 1]
    wmu = wg

    def chi_oracle(r):
        rr = np.sqrt(np.maximum(r**2 + rp[:, None]**2
                                - 2.0 * r * np.outer(rp, mu), 0.0))
        inner = (bump.density(rr) * wmu).sum(axis=1)
        return 2.0 * np.pi * float(np.sum(wrp * rp**2 * bump.density(rp) * inner))

    for r in (0.0, 0.35, 0.8, 1.3, 1.9):
        assert_allclose(chi.val(np.array([r]))[0], chi_oracle(r), atol=1e-8)
    # unit total mass: int chi = (int rho)^2 = 1
    total = radial_integral(lambda r: 4.0 * np.pi * r**2 * chi.val(r), 0.0, 2.0)
    assert_allclose(total, 1.0, atol=1e-7)
    assert np.all(chi.val(np.array([2.0, 2.5])) == 0.0)


def test_physical_constants():
    c = PhysicalConstants(e=0.5, m=2.0)
    assert_allclose(c.e2_over_m, 0.125)
    with pytest.raises(InvalidParameterError):
        PhysicalConstants(e=1.0, m=0.0)
