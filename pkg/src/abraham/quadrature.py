"""Quadrature rules shared by the mollification and propagation code.

Everything here is a plain product construction:

* radial Gauss-Legendre nodes on an interval (optionally split into panels),
* spherical product rules (Gauss-Legendre in cos(theta) x uniform azimuth),
* solid-ball rules as the product of the two.

A product rule with ``n_polar`` Gauss nodes and ``n_azimuth`` uniform azimuth
nodes integrates spherical polynomials of degree min(2*n_polar - 1,
n_azimuth - 1) exactly, so (12, 24) gives exactness 23 and (18, 36) gives 35.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "gauss_radial",
    "gauss_panels",
    "SphereRule",
    "ball_rule",
]

_leggauss_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _leggauss_cache:
        _leggauss_cache[n] = np.polynomial.legendre.leggauss(n)
    return _leggauss_cache[n]


def gauss_radial(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [a, b]."""
    x, w = _leggauss(n)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def gauss_panels(n: int, edges) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule with ``n`` nodes per panel between ``edges``."""
    edges = np.asarray(edges, dtype=float)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        if b <= a:
            continue
        r, w = gauss_radial(n, a, b)
        nodes.append(r)
        weights.append(w)
    if not nodes:
        return np.empty(0), np.empty(0)
    return np.concatenate(nodes), np.concatenate(weights)


class SphereRule:
    """Product quadrature on the unit sphere.

    Attributes
    ----------
    dirs : (M, 3) unit vectors.
    weights : (M,) weights summing to 4*pi.
    exactness : polynomial degree integrated exactly.
    """

    def __init__(self, n_polar: int = 12, n_azimuth: int = 24):
        ct, wt = _leggauss(n_polar)
        st = np.sqrt(1.0 - ct**2)
        phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
        dirs = np.empty((n_polar, n_azimuth, 3))
        dirs[..., 0] = st[:, None] * np.cos(phi)[None, :]
        dirs[..., 1] = st[:, None] * np.sin(phi)[None, :]
        dirs[..., 2] = ct[:, None]
        self.n_polar = n_polar
        self.n_azimuth = n_azimuth
        self.dirs = dirs.reshape(-1, 3)
        self.weights = np.repeat(wt, n_azimuth) * (2.0 * np.pi / n_azimuth)
        self.exactness = min(2 * n_polar - 1, n_azimuth - 1)

    def __len__(self) -> int:
        return self.dirs.shape[0]

    def average(self, values: np.ndarray) -> np.ndarray:
        """Spherical mean of sampled values (first axis runs over nodes)."""
        w = self.weights / (4.0 * np.pi)
        return np.tensordot(w, values, axes=(0, 0))


def ball_rule(
    n_radial: int,
    radius: float,
    sphere: SphereRule,
    radial_weight=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Product rule over a solid ball of given radius centered at the origin.

    Returns points (M, 3) and weights (M,) including the r^2 Jacobian and, if
    given, a radial weight function evaluated at the nodes (so the weights
    integrate f against radial_weight(|x|) d^3x).
    """
    r, wr = gauss_radial(n_radial, 0.0, radius)
    if radial_weight is not None:
        wr = wr * radial_weight(r)
    pts = r[:, None, None] * sphere.dirs[None, :, :]
    w = (wr * r**2)[:, None] * sphere.weights[None, :]
    return pts.reshape(-1, 3), w.reshape(-1)
