"""Comoving traveling-wave fields, their derivatives, and decay diagnostics.

The unit-charge soliton moving at velocity v is built from the anisotropic
kernel

    k_v(x) = 1 / (4 pi sqrt((1 - |v|^2)|x|^2 + (v.x)^2)),

via phi_v = rho * k_v and

    E_v = -grad phi_v + v (v . grad phi_v),    B_v = -v x grad phi_v.

All derivative fields are obtained by differentiating the kernel under the
convolution integral; finite differences appear only in the tests.
"""

from __future__ import annotations

import numpy as np

from . import backend
from ._ref import WeightDesc, fields_from_stack
from .errors import InvalidParameterError, SingularityError
from .profiles import ChargeProfile
from .quadrature import SphereRule

V_MAX = 0.99

# (far_nrad, far_npolar, far_nazimuth, near_nrad, near_npolar, near_nazimuth,
#  far_margin): "fast" targets ~1e-3 relative accuracy for the memory-kernel
# inner loop; "accurate" targets ~1e-6 for residual and decay diagnostics.
QUAD_FAST = (14, 12, 24, 10, 10, 20, 0.5)
QUAD_ACCURATE = (22, 16, 32, 18, 14, 28, 0.5)

_ORDER_FLAGS = ("values", "space_gradient", "velocity_gradient",
                "space_velocity_gradient")


def profile_weight(profile: ChargeProfile) -> WeightDesc:
    """Quadrature weight descriptor for the charge density itself."""
    kind = 0 if profile.shape == "bump" else 1
    return WeightDesc(kind, profile.norm, profile.radius, profile.radius)


def chi_weight(profile: ChargeProfile) -> WeightDesc:
    """Weight descriptor for chi = rho * rho (support 2R, spline table)."""
    chi = profile.self_convolution()
    sp = chi._s
    return WeightDesc(2, 0.0, profile.radius, chi.support,
                      ppx=np.ascontiguousarray(sp.x),
                      ppc=np.ascontiguousarray(sp.c))


def _check_velocity(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    speed = float(np.linalg.norm(v))
    if not np.isfinite(speed) or speed > V_MAX:
        raise InvalidParameterError(
            f"|v| = {speed:.6g} exceeds v_max = {V_MAX}")
    return v


def anisotropic_kernel(v, x):
    """Bare kernel value with space and velocity gradients at points x.

    Returns (value, space_gradient, velocity_gradient); for a single point
    the value is a scalar and the gradients are 3-vectors, for (M, 3) input
    the leading axis is preserved. x = 0 is rejected: callers that need the
    convolution through the singularity go through potential_phi.
    """
    v = _check_velocity(v)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if np.any(np.sum(pts * pts, axis=1) == 0.0):
        raise SingularityError("anisotropic kernel evaluated at x = 0")
    st = backend.aniso_stack(pts, v, ("f", "fx", "fv"))
    if single:
        return float(st["f"][0]), st["fx"][0], st["fv"][0]
    return st["f"], st["fx"], st["fv"]


class FieldPack:
    """Bundle of soliton field values and requested derivatives.

    Attributes are None unless the corresponding order flag was requested.
    Jacobian layout: dE[m, i, j] = d_j E_i, dvE[m, i, j] = d_{v_j} E_i and
    dxdvE[m, i, k, l] = d_k d_{v_l} E_i.
    """

    __slots__ = ("E", "B", "dE", "dB", "dvE", "dvB", "dxdvE", "dxdvB")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


def _stack_keys(order):
    if isinstance(order, str):
        order = (order,)
    order = set(order) | {"values"}
    bad = order.difference(_ORDER_FLAGS)
    if bad:
        raise InvalidParameterError(
            f"unknown order flags {sorted(bad)}, expected subset of {_ORDER_FLAGS}")
    keys = {"fx"}
    if "space_gradient" in order:
        keys.add("fxx")
    if "velocity_gradient" in order:
        keys.add("fxv")
    if "space_velocity_gradient" in order:
        keys.update(("fxx", "fxv", "fxxv"))
    return sorted(keys)


class SolitonField:
    """Unit-charge traveling-wave solution at fixed velocity.

    Immutable; evaluations are pure. ``quality`` selects the cached
    quadrature configuration ("accurate" for diagnostics, "fast" for bulk
    kernel work).
    """

    def __init__(self, profile: ChargeProfile, velocity, quality: str = "accurate"):
        self.velocity = _check_velocity(velocity)
        self.profile = profile
        if quality not in ("fast", "accurate"):
            raise InvalidParameterError(f"unknown quadrature quality {quality!r}")
        self.quality = quality
        self.quad = QUAD_ACCURATE if quality == "accurate" else QUAD_FAST
        self._wrho = profile_weight(profile)
        self._wchi = None

    # -- evaluation ---------------------------------------------------------

    def potential(self, x):
        """phi_v = rho * k_v at points x (scalar for a single point)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        st = backend.potential_stack(np.atleast_2d(x), self.velocity,
                                     self._wrho, ("f",), self.quad)
        return float(st["f"][0]) if single else st["f"]

    def fields(self, x, order="values") -> FieldPack:
        """E_v, B_v and requested derivatives at points x (M, 3)."""
        return self._fields(x, order, self._wrho)

    def mollified_fields(self, x, order="values") -> FieldPack:
        """The rho-mollified fields E_v^rho = rho * E_v (chi-weighted)."""
        return self._fields(x, order, self._chi())

    def _fields(self, x, order, weight) -> FieldPack:
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        st = backend.potential_stack(pts, self.velocity, weight,
                                     _stack_keys(order), self.quad)
        return FieldPack(**fields_from_stack(self.velocity, st))

    def _chi(self) -> WeightDesc:
        if self._wchi is None:
            self._wchi = chi_weight(self.profile)
        return self._wchi

    # -- verification -------------------------------------------------------

    def residual(self, x):
        """Elliptic-system residuals (force_balance, faraday, ampere) at x.

        ampere = -(v.grad)E - curl B + rho(x) v and
        faraday = -(v.grad)B + curl E vanish identically for the exact
        soliton; the returned values measure quadrature error. force_balance
        = E_v^rho(0) + v x B_v^rho(0) is position-independent.
        """
        v = self.velocity
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        f = self.fields(pts, order="space_gradient")
        rho = self.profile.density(np.linalg.norm(pts, axis=1))
        curlE = _curl_of_jacobian(f.dE)
        curlB = _curl_of_jacobian(f.dB)
        ampere = (-np.einsum("a,mia->mi", v, f.dE) - curlB
                  + rho[:, None] * v[None, :])
        faraday = -np.einsum("a,mia->mi", v, f.dB) + curlE
        fm = self.mollified_fields(np.zeros((1, 3)))
        force_balance = fm.E[0] + np.cross(v, fm.B[0])
        return force_balance, faraday, ampere

    def decay_scan(self, radii, which="field", n_directions=26):
        """Sup of the selected quantity on shells plus a log-log slope fit.

        which: "field" (E, B values), "space_gradient" (space Jacobians) or
        "velocity_gradient" (velocity Jacobians). Radii must be increasing,
        at least 3 of them, all beyond the mollified support 2R.
        """
        radii = np.asarray(radii, dtype=float)
        if radii.ndim != 1 or len(radii) < 3:
            raise InvalidParameterError("decay scan needs at least 3 radii")
        if np.any(np.diff(radii) <= 0.0):
            raise InvalidParameterError("decay scan radii must be increasing")
        if radii[0] <= 2.0 * self.profile.radius:
            raise InvalidParameterError(
                "decay scan radii must exceed twice the support radius")
        order = {"field": "values", "space_gradient": "space_gradient",
                 "velocity_gradient": "velocity_gradient"}.get(which)
        if order is None:
            raise InvalidParameterError(
                f"unknown decay quantity {which!r}")
        dirs = _scan_directions(self.velocity, n_directions)
        sup = np.empty(len(radii))
        for i, r in enumerate(radii):
            f = self.fields(r * dirs, order=order)
            if which == "field":
                sup[i] = max(np.max(np.abs(f.E)), np.max(np.abs(f.B)))
            elif which == "space_gradient":
                sup[i] = max(np.max(np.abs(f.dE)), np.max(np.abs(f.dB)))
            else:
                sup[i] = max(np.max(np.abs(f.dvE)), np.max(np.abs(f.dvB)))
        slope = np.polyfit(np.log(radii), np.log(sup), 1)[0]
        return DecayScan(radii=radii, sup=sup, slope=float(slope), which=which)


class DecayScan:
    """Shell suprema of a soliton-derived quantity and their log-log slope."""

    __slots__ = ("radii", "sup", "slope", "which")

    def __init__(self, radii, sup, slope, which):
        self.radii = radii
        self.sup = sup
        self.slope = slope
        self.which = which


class SolitonDerivativeSource:
    """Velocity-gradient source pair S = (grad_v E_v, grad_v B_v).

    Sampler bound to a velocity; calling it on points (M, 3) returns the two
    (M, 3, 3) Jacobians with [i, j] = d_{v_j} component_i. With
    ``mollified=True`` the fields carry one extra rho-mollification (weight
    chi), which is the form entering the memory kernel.
    """

    def __init__(self, profile: ChargeProfile, velocity, mollified=False,
                 quality="fast"):
        self.velocity = _check_velocity(velocity)
        self.profile = profile
        self.mollified = bool(mollified)
        self.quad = QUAD_ACCURATE if quality == "accurate" else QUAD_FAST
        self._w = chi_weight(profile) if mollified else profile_weight(profile)

    @property
    def support_radius(self):
        return self._w.support

    def __call__(self, x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        st = backend.potential_stack(pts, self.velocity, self._w,
                                     ("fx", "fxv"), self.quad)
        f = fields_from_stack(self.velocity, st)
        return f["dvE"], f["dvB"]


# -- function forms -----------------------------------------------------------


def potential_phi(soliton: SolitonField, x):
    return soliton.potential(x)


def soliton_fields(soliton: SolitonField, x, order="values") -> FieldPack:
    return soliton.fields(x, order)


def soliton_residual(soliton: SolitonField, x):
    return soliton.residual(x)


def decay_scan(soliton: SolitonField, radii, which="field"):
    return soliton.decay_scan(radii, which)


# -- helpers ------------------------------------------------------------------

_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k, _s in ((0, 1, 2, 1), (1, 2, 0, 1), (2, 0, 1, 1),
                       (0, 2, 1, -1), (2, 1, 0, -1), (1, 0, 2, -1)):
    _EPS3[_i, _j, _k] = _s


def _curl_of_jacobian(dF):
    # (curl F)_i = eps_{iab} d_a F_b with dF[m, b, a] = d_a F_b
    return np.einsum("iab,mba->mi", _EPS3, dF)


def _scan_directions(v, n):
    """Deterministic direction set including v-aligned and transverse axes."""
    sph = SphereRule(4, 6)
    dirs = [d for d in sph.dirs]
    speed = np.linalg.norm(v)
    if speed > 0.0:
        vh = v / speed
        t = np.array([1.0, 0.0, 0.0])
        if abs(vh[0]) > 0.9:
            t = np.array([0.0, 1.0, 0.0])
        perp = np.cross(vh, t)
        perp /= np.linalg.norm(perp)
        dirs += [vh, -vh, perp, (vh + perp) / np.sqrt(2.0)]
    dirs = np.array(dirs)
    return dirs[: max(n, 8)]
