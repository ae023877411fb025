"""Rigid charge profiles and mollification.

A profile is a nonnegative, radial, compactly supported density with unit
total charge; the physical charge enters only through the signed coupling e.
Two shapes are provided:

* ``bump``  : Z * exp(-1 / (1 - (r/R)^2)), smooth with all derivatives
              vanishing at the support boundary;
* ``poly4`` : Z * (1 - (r/R)^2)^4, a C^3 polynomial alternative (documented
              lower regularity, useful for cross-checks).

The module also carries the two radial transforms the rest of the package
needs: the radial Fourier transform rhohat(k) = 4 pi int r^2 rho sinc(kr) dr
and the self-convolution chi = rho * rho (support 2R), tabulated once
per profile and reused by the soliton-source quadratures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AccuracyError, InvalidParameterError
from .quadrature import SphereRule, ball_rule, gauss_panels, gauss_radial

__all__ = [
    "PhysicalConstants",
    "ChargeProfile",
    "RadialTable",
    "make_profile",
    "mollify_at",
]

PROFILE_SHAPES = ("bump", "poly4")


@dataclass(frozen=True)
class PhysicalConstants:
    """Signed coupling e and bare mass m; the strength e^2/m is derived."""

    e: float = 1.0
    m: float = 1.0

    def __post_init__(self):
        if not (self.m > 0.0):
            raise InvalidParameterError(f"mass must be positive, got m={self.m}")

    @property
    def e2_over_m(self) -> float:
        return self.e * self.e / self.m


class RadialTable:
    """Spline table of a smooth radial function with compact support."""

    def __init__(self, r: np.ndarray, values: np.ndarray, support: float,
                 clamp_origin: bool = True):
        bc = ((1, 0.0), "not-a-knot") if clamp_origin else "not-a-knot"
        self.support = float(support)
        self._s = CubicSpline(r, values, bc_type=bc)
        self._d1 = self._s.derivative(1)
        self._d2 = self._s.derivative(2)

    def _masked(self, spline, r):
        r = np.asarray(r, dtype=float)
        inside = r < self.support
        out = np.zeros_like(r)
        if np.any(inside):
            out[inside] = spline(r[inside])
        return out

    def val(self, r):
        return self._masked(self._s, r)

    def d1(self, r):
        return self._masked(self._d1, r)

    def d2(self, r):
        return self._masked(self._d2, r)


class ChargeProfile:
    """Immutable unit-charge radial density with support radius R.

    Construct through :func:`make_profile`. Instances cache their derived
    tables (normalization, Fourier transform, self-convolution); mutating
    attributes after construction is not supported.
    """

    def __init__(self, shape: str, support_radius: float):
        if shape not in PROFILE_SHAPES:
            raise InvalidParameterError(
                f"unknown profile shape {shape!r}, expected one of {PROFILE_SHAPES}")
        if not (support_radius > 0.0) or not np.isfinite(support_radius):
            raise InvalidParameterError(
                f"support radius must be positive and finite, got {support_radius}")
        self.shape = shape
        self.radius = float(support_radius)
        if shape == "poly4":
            # int_0^1 u^2 (1-u^2)^4 du = 128/3465, so Z = 3465 / (512 pi R^3)
            self.norm = 3465.0 / (512.0 * np.pi * self.radius**3)
        else:
            r, w = gauss_radial(128, 0.0, self.radius)
            self.norm = 1.0 / (4.0 * np.pi * np.sum(w * r**2 * self._unnorm(r)))
        self._fourier_spline = None
        self._chi = None

    # -- real-space density -------------------------------------------------

    def _unnorm(self, r):
        u = np.asarray(r, dtype=float) / self.radius
        out = np.zeros_like(u)
        if self.shape == "bump":
            m = u < 1.0
            with np.errstate(divide="ignore", over="ignore"):
                out[m] = np.exp(-1.0 / (1.0 - u[m] ** 2))
        else:
            m = u < 1.0
            out[m] = (1.0 - u[m] ** 2) ** 4
        return out

    def density(self, r):
        """rho(|x|) for radii r (vectorized)."""
        return self.norm * self._unnorm(r)

    def density_d1(self, r):
        """d rho / dr (vectorized)."""
        u = np.asarray(r, dtype=float) / self.radius
        out = np.zeros_like(u)
        m = u < 1.0 - 1e-14
        um = u[m]
        if self.shape == "bump":
            with np.errstate(divide="ignore", over="ignore"):
                out[m] = (self.norm * np.exp(-1.0 / (1.0 - um**2))
                          * (-2.0 * um / (1.0 - um**2) ** 2) / self.radius)
        else:
            out[m] = self.norm * (-8.0 * um * (1.0 - um**2) ** 3) / self.radius
        return out

    def eval_density(self, x):
        """Density value and Cartesian gradient at points x (..., 3)."""
        x = np.asarray(x, dtype=float)
        r = np.sqrt(np.sum(x * x, axis=-1))
        val = self.density(r)
        d1 = self.density_d1(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(r > 0.0, d1 / np.where(r > 0.0, r, 1.0), 0.0)
        grad = scale[..., None] * x
        return val, grad

    # -- radial transforms --------------------------------------------------

    def fourier_radial(self, k):
        """rhohat(k) = 4 pi int_0^R r^2 rho(r) sinc(kr) dr, rhohat(0) = 1."""
        k = np.asarray(k, dtype=float)
        scalar = k.ndim == 0
        kf = np.atleast_1d(k)
        kmax = float(np.max(np.abs(kf), initial=0.0))
        npan = max(6, int(kmax * self.radius / np.pi) + 4)
        r, w = gauss_panels(16, np.linspace(0.0, self.radius, npan + 1))
        kr = np.abs(kf)[..., None] * r[None, :]
        snc = np.where(kr > 0.0, np.sin(kr) / np.where(kr > 0.0, kr, 1.0), 1.0)
        out = 4.0 * np.pi * np.sum((w * r**2 * self.density(r))[None, :] * snc, axis=-1)
        return out[0] if scalar else out.reshape(k.shape)

    def fourier_table(self, kmax: float) -> CubicSpline:
        """Cached spline of rhohat on [0, kmax] (rebuilt if kmax grows)."""
        if self._fourier_spline is None or self._fourier_spline.x[-1] < kmax:
            ks = np.linspace(0.0, kmax * 1.01 + 1e-12, 4000)
            self._fourier_spline = CubicSpline(ks, self.fourier_radial(ks))
        return self._fourier_spline

    def wiener_scan(self, k_max: float | None = None, samples: int = 10_000):
        """Scan |rhohat| on [0, k_max] (default 50/R).

        Returns (min |rhohat|, argmin k, satisfied) where satisfied records
        whether the minimum stays positive at this scan resolution.
        """
        if k_max is None:
            k_max = 50.0 / self.radius
        ks = np.linspace(0.0, k_max, samples)
        vals = np.abs(self.fourier_radial(ks))
        i = int(np.argmin(vals))
        return float(vals[i]), float(ks[i]), bool(vals[i] > 0.0)

    def second_moment(self) -> float:
        """mu2 = int |x|^2 rho(x) d^3x."""
        r, w = gauss_radial(128, 0.0, self.radius)
        return float(4.0 * np.pi * np.sum(w * r**4 * self.density(r)))

    def self_convolution(self) -> RadialTable:
        """chi = rho * rho as a radial table with support 2R (unit mass).

        Radial convolution reduction: for s > 0,
        chi(s) = (2 pi / s) int_0^R r rho(r) int_{|s-r|}^{min(s+r,R)} u rho(u) du dr
        and chi(0) = 4 pi int r^2 rho(r)^2 dr.
        """
        if self._chi is not None:
            return self._chi
        R = self.radius
        s = np.linspace(0.0, 2.0 * R, 801)[1:]
        r, wr = gauss_radial(96, 0.0, R)
        lo = np.abs(s[:, None] - r[None, :])
        hi = np.minimum(s[:, None] + r[None, :], R)
        width = np.clip(hi - lo, 0.0, None)
        xg, wg = np.polynomial.legendre.leggauss(48)
        u = lo[..., None] + 0.5 * width[..., None] * (xg + 1.0)
        wu = 0.5 * width[..., None] * wg
        inner = np.sum(wu * u * self.density(u), axis=-1)
        vals = (2.0 * np.pi / s) * np.sum((wr * r * self.density(r))[None, :] * inner, axis=-1)
        r0, w0 = gauss_radial(128, 0.0, R)
        chi0 = 4.0 * np.pi * np.sum(w0 * r0**2 * self.density(r0) ** 2)
        self._chi = RadialTable(np.concatenate(([0.0], s)),
                                np.concatenate(([chi0], vals)), 2.0 * R)
        return self._chi


def make_profile(shape: str, support_radius: float) -> ChargeProfile:
    """Factory for charge profiles; rejects nonpositive radii and bad shapes."""
    return ChargeProfile(shape, support_radius)


def mollify_at(
    field_sampler,
    profile: ChargeProfile,
    point,
    n_radial: int = 64,
    sphere: SphereRule | None = None,
    tol: float | None = None,
):
    """Evaluate (f * rho)(point) = int f(point - z) rho(z) d^3z by quadrature.

    ``field_sampler`` maps an (M, 3) array of points to (M,) or (M, d)
    values. With ``tol`` set, the result is compared against an embedded
    lower-order rule and an :class:`AccuracyError` is raised when the
    difference exceeds ``tol`` (absolute, per component, relative to
    max(1, |result|)).
    """
    if sphere is None:
        sphere = SphereRule(12, 24)
    point = np.asarray(point, dtype=float).reshape(3)

    def run(n_rad, sph):
        pts, w = ball_rule(n_rad, profile.radius, sph, radial_weight=profile.density)
        vals = np.asarray(field_sampler(point[None, :] - pts))
        return np.tensordot(w, vals, axes=(0, 0))

    result = run(n_radial, sphere)
    if tol is not None:
        coarse = run(max(4, n_radial // 2),
                     SphereRule(max(4, sphere.n_polar - 4), max(8, sphere.n_azimuth - 8)))
        err = np.max(np.abs(result - coarse))
        scale = max(1.0, float(np.max(np.abs(result))))
        if err > tol * scale:
            raise AccuracyError(
                f"mollification quadrature error estimate {err:.3e} exceeds "
                f"tolerance {tol:.3e} (scale {scale:.3e})")
    return result
