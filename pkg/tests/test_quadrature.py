"""Quadrature building blocks: radial Gauss rules, sphere product rules, ball rules.

Monomial exactness on the sphere is checked against the closed form
    (1/4pi) mean of x1^a x2^b x3^c = Gamma terms / surface area
for even exponents (odd ones vanish by symmetry).
"""

from math import gamma

import numpy as np
from numpy.testing import assert_allclose

from abraham.quadrature import SphereRule, ball_rule, gauss_panels, gauss_radial


def sphere_monomial(a, b, c):
    """Integral of x1^a x2^b x3^c over the unit sphere (surface measure)."""
    if a % 2 or b % 2 or c % 2:
        return 0.0
    g = [gamma((e + 1) / 2.0) for e in (a, b, c)]
    return 2.0 * g[0] * g[1] * g[2] / gamma((a + b + c + 3) / 2.0)


def test_gauss_radial_polynomial_exactness():
    r, w = gauss_radial(8, 0.5, 2.0)
    for deg in range(16):       # 8-point Gauss exact through degree 15
        exact = (2.0 ** (deg + 1) - 0.5 ** (deg + 1)) / (deg + 1)
        assert_allclose(np.sum(w * r**deg), exact, rtol=1e-13)


def test_gauss_panels_additivity():
    r, w = gauss_panels(8, [0.0, 0.7, 1.0])
    f = lambda x: np.cos(3.0 * x)
    exact = np.sin(3.0) / 3.0
    assert_allclose(np.sum(w * f(r)), exact, rtol=1e-12)
    # degenerate panel edges are skipped, weights unchanged
    r2, w2 = gauss_panels(8, [0.0, 0.7, 0.7, 1.0])
    assert_allclose(np.sum(w2 * f(r2)), exact, rtol=1e-12)


def test_sphere_rule_weight_sum_and_monomials():
    rule = SphereRule(12, 24)
    assert_allclose(rule.weights.sum(), 4.0 * np.pi, rtol=1e-13)
    assert_allclose(np.linalg.norm(rule.dirs, axis=1), 1.0, rtol=1e-14)
    for (a, b, c) in [(0, 0, 0), (2, 0, 0), (0, 2, 0), (0, 0, 2), (2, 2, 0),
                      (4, 0, 0), (2, 2, 2), (6, 2, 0), (1, 0, 0), (3, 1, 1),
                      (0, 5, 0)]:
        mono = (rule.dirs[:, 0] ** a * rule.dirs[:, 1] ** b
                * rule.dirs[:, 2] ** c)
        assert_allclose(np.sum(rule.weights * mono), sphere_monomial(a, b, c),
                        atol=1e-12)


def test_sphere_rule_exactness_degree():
    # stated polynomial exactness: min(2 n_polar - 1, n_azimuth - 1)
    rule = SphereRule(8, 16)
    deg = min(2 * 8 - 1, 16 - 1)
    mono = rule.dirs[:, 2] ** deg
    assert_allclose(np.sum(rule.weights * mono), sphere_monomial(0, 0, deg),
                    atol=1e-12)


def test_ball_rule_moments():
    rule = SphereRule(10, 20)
    pts, w = ball_rule(24, 2.0, rule)
    assert_allclose(np.sum(w), 4.0 * np.pi * 2.0**3 / 3.0, rtol=1e-12)
    # int |x|^2 over ball radius R = 4 pi R^5 / 5
    assert_allclose(np.sum(w * np.sum(pts**2, axis=1)),
                    4.0 * np.pi * 2.0**5 / 5.0, rtol=1e-12)


def test_ball_rule_radial_weight():
    # radial_weight bakes an extra factor into the weights
    rule = SphereRule(10, 20)
    dens = lambda r: np.exp(-r)
    pts, w = ball_rule(40, 1.5, rule, radial_weight=dens)
    # oracle: 4 pi int_0^1.5 r^2 e^-r dr, integrated by parts
    R = 1.5
    exact = 4.0 * np.pi * (2.0 - np.exp(-R) * (R * R + 2.0 * R + 2.0))
    assert_allclose(np.sum(w), exact, rtol=1e-12)
