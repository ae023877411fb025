"""Free Maxwell evolution: spectral mode rotation and Kirchhoff means.

Two independent representations of the same group U(t):

* ``spectral_evolve`` rotates Fourier modes on a periodic grid,
* ``kirchhoff_eval`` computes the spherical-mean solution formula pointwise
  from initial-data samplers.

Their cross-agreement is the module's correctness oracle; everything else
(conserved norms, group law, constraint preservation) is tested on top.

Grid conventions: lattice x_j = -L/2 + j h, h = L/N; spectral data are
continuum-normalized, f_hat(k) = h^3 sum_j f(x_j) exp(-i k x_j), so Parseval
reads ||f||_2^2 = (1/L^3) sum_k |f_hat(k)|^2. The k = 0 mode is always
propagated by the identity.
"""

from __future__ import annotations

import io
import os
import struct

import numpy as np

from . import backend
from .errors import AccuracyError, InvalidParameterError
from .quadrature import SphereRule

_MAGIC = b"ABFG"
_VERSION = 1


class FieldGrid:
    """E, B sampled on an N^3 periodic lattice of side L.

    representation is "physical" (real arrays) or "spectral"
    (continuum-normalized complex arrays); shape (3, N, N, N) either way,
    axes ordered (component, x, y, z).
    """

    def __init__(self, L, N, E, B, representation="physical", time=0.0):
        if representation not in ("physical", "spectral"):
            raise InvalidParameterError(
                f"unknown representation {representation!r}")
        self.L = float(L)
        self.N = int(N)
        shape = (3, self.N, self.N, self.N)
        dtype = np.float64 if representation == "physical" else np.complex128
        self.E = np.ascontiguousarray(E, dtype=dtype)
        self.B = np.ascontiguousarray(B, dtype=dtype)
        if self.E.shape != shape or self.B.shape != shape:
            raise InvalidParameterError(
                f"field arrays must have shape {shape}")
        self.representation = representation
        self.time = float(time)

    # -- geometry -------------------------------------------------------------

    @property
    def spacing(self):
        return self.L / self.N

    def axis(self):
        """Physical lattice coordinates along one axis."""
        return -0.5 * self.L + self.spacing * np.arange(self.N)

    def kaxis(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.spacing)

    def kgrids(self):
        k = self.kaxis()
        return np.meshgrid(k, k, k, indexing="ij", sparse=True)

    def _origin_phase(self):
        # exp(-i k x0) factor per axis turning the DFT into the transform
        # anchored at the physical origin (x0 = -L/2)
        k = self.kaxis()
        return np.exp(1j * k * (0.5 * self.L))

    # -- representation changes -------------------------------------------------

    def to_spectral(self) -> "FieldGrid":
        if self.representation == "spectral":
            return self
        ph = self._origin_phase()
        scale = self.spacing**3
        out = []
        for f in (self.E, self.B):
            fh = np.fft.fftn(f, axes=(1, 2, 3)) * scale
            fh *= ph[None, :, None, None]
            fh *= ph[None, None, :, None]
            fh *= ph[None, None, None, :]
            out.append(fh)
        return FieldGrid(self.L, self.N, out[0], out[1], "spectral", self.time)

    def to_physical(self) -> "FieldGrid":
        if self.representation == "physical":
            return self
        ph = np.conj(self._origin_phase())
        scale = 1.0 / self.spacing**3
        out = []
        for f in (self.E, self.B):
            g = f * ph[None, :, None, None]
            g *= ph[None, None, :, None]
            g *= ph[None, None, None, :]
            out.append(np.real(np.fft.ifftn(g, axes=(1, 2, 3))) * scale)
        return FieldGrid(self.L, self.N, out[0], out[1], "physical", self.time)

    # -- integrals --------------------------------------------------------------

    def l2_norms(self):
        """(||E||_2, ||B||_2); representation-independent by Parseval."""
        if self.representation == "physical":
            w = self.spacing**3
            return (float(np.sqrt(w * np.sum(self.E**2))),
                    float(np.sqrt(w * np.sum(self.B**2))))
        w = 1.0 / self.L**3
        return (float(np.sqrt(w * np.sum(np.abs(self.E) ** 2))),
                float(np.sqrt(w * np.sum(np.abs(self.B) ** 2))))

    def field_energy(self):
        nE, nB = self.l2_norms()
        return 0.5 * (nE**2 + nB**2)

    def field_momentum(self):
        """int E x B over the box."""
        if self.representation == "physical":
            cross = np.cross(self.E, self.B, axisa=0, axisb=0, axisc=0)
            return self.spacing**3 * np.sum(cross, axis=(1, 2, 3))
        cross = np.cross(self.E, np.conj(self.B), axisa=0, axisb=0, axisc=0)
        return np.real(np.sum(cross, axis=(1, 2, 3))) / self.L**3

    def copy(self) -> "FieldGrid":
        return FieldGrid(self.L, self.N, self.E.copy(), self.B.copy(),
                         self.representation, self.time)


# -- spectral evolution ---------------------------------------------------------


def paired_mode_mask(N):
    """True on modes whose negation is also on the lattice.

    For even N the plane n = N/2 carries the unpaired Nyquist frequency;
    real-representable states built by this package are truncated to the
    paired set so that spectral manipulations that are odd in k preserve
    Hermitian symmetry exactly.
    """
    n = np.fft.fftfreq(N) * N
    ok = n != -(N // 2) if N % 2 == 0 else np.ones(N, bool)
    return ok[:, None, None] & ok[None, :, None] & ok[None, None, :]


def _mode_geometry(grid: FieldGrid):
    kx, ky, kz = grid.kgrids()
    kk = np.sqrt(kx**2 + ky**2 + kz**2)
    khat = np.zeros((3, grid.N, grid.N, grid.N))
    nz = kk > 0.0
    for c, kc in enumerate((kx, ky, kz)):
        khat[c][nz] = (np.broadcast_to(kc, kk.shape)[nz] / kk[nz])
    return kk, khat


def spectral_evolve(state: FieldGrid, t) -> FieldGrid:
    """Apply the free group U(t) mode-wise; returns the evolved grid.

    The output carries the input's representation; t may be negative
    (the free equation generates a group).
    """
    sp = state.to_spectral()
    kk, khat = _mode_geometry(sp)
    c = np.cos(t * kk)
    s = np.sin(t * kk)
    Eh, Bh = backend.mode_rotate(sp.E, sp.B, c, s, khat)
    out = FieldGrid(sp.L, sp.N, Eh, Bh, "spectral", sp.time + t)
    return out if state.representation == "spectral" else out.to_physical()


# -- Kirchhoff spherical means ---------------------------------------------------


def kirchhoff_eval(E0_sampler, B0_sampler, grad_samplers, x, t,
                   rule: SphereRule | None = None, tol: float | None = None,
                   t_floor: float = 1e-10):
    """Spherical-mean solution of the free equations at (x, t), t >= 0.

    E(x,t) = mean E0 + t mean(n . grad E0) + t mean(curl B0)
    B(x,t) = mean B0 + t mean(n . grad B0) - t mean(curl E0)

    with means over the sphere |y - x| = t. Samplers take (M, 3) points;
    value samplers return (M, 3), gradient samplers return (M, 3, 3)
    Jacobians d[m, i, j] = d_j F_i. grad_samplers = (gradE, gradB).
    x may be a single 3-vector or a batch (P, 3). When ``tol`` is given the
    result is compared against an embedded lower-order rule and an accuracy
    error raised if the estimated error exceeds it.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if t < 0.0:
        raise InvalidParameterError("kirchhoff_eval needs t >= 0")
    if t <= t_floor:
        E = np.asarray(E0_sampler(pts), dtype=float)
        B = np.asarray(B0_sampler(pts), dtype=float)
        return (E[0], B[0]) if single else (E, B)
    if rule is None:
        rule = SphereRule(18, 36)
    E, B = _kirchhoff_rule(E0_sampler, B0_sampler, grad_samplers, pts, t, rule)
    if tol is not None:
        coarse = SphereRule(max(6, (2 * rule.n_polar) // 3),
                            max(12, (2 * rule.n_azimuth) // 3))
        E2, B2 = _kirchhoff_rule(E0_sampler, B0_sampler, grad_samplers,
                                 pts, t, coarse)
        est = max(np.max(np.abs(E - E2)), np.max(np.abs(B - B2)))
        if est > tol:
            raise AccuracyError(
                f"kirchhoff quadrature estimate {est:.3e} exceeds {tol:.3e}")
    return (E[0], B[0]) if single else (E, B)


def _kirchhoff_rule(E0_sampler, B0_sampler, grad_samplers, pts, t, rule):
    P = len(pts)
    n = rule.dirs                               # (Q, 3)
    w = rule.weights / (4.0 * np.pi)            # mean weights
    nodes = (pts[:, None, :] + t * n[None, :, :]).reshape(-1, 3)
    E0 = np.asarray(E0_sampler(nodes), dtype=float).reshape(P, -1, 3)
    B0 = np.asarray(B0_sampler(nodes), dtype=float).reshape(P, -1, 3)
    gradE, gradB = grad_samplers
    dE = np.asarray(gradE(nodes), dtype=float).reshape(P, -1, 3, 3)
    dB = np.asarray(gradB(nodes), dtype=float).reshape(P, -1, 3, 3)
    ndE = np.einsum("qj,pqij->pqi", n, dE)
    ndB = np.einsum("qj,pqij->pqi", n, dB)
    curlE = np.stack([dE[:, :, 2, 1] - dE[:, :, 1, 2],
                      dE[:, :, 0, 2] - dE[:, :, 2, 0],
                      dE[:, :, 1, 0] - dE[:, :, 0, 1]], axis=-1)
    curlB = np.stack([dB[:, :, 2, 1] - dB[:, :, 1, 2],
                      dB[:, :, 0, 2] - dB[:, :, 2, 0],
                      dB[:, :, 1, 0] - dB[:, :, 0, 1]], axis=-1)
    mean = lambda f: np.einsum("q,pqi->pi", w, f)
    E = mean(E0) + t * (mean(ndE) + mean(curlB))
    B = mean(B0) + t * (mean(ndB) - mean(curlE))
    return E, B


# -- constraints ------------------------------------------------------------------


def charge_modes(grid_like, profile, charge, position):
    """Spectral coefficients of e*rho(. - q) on the lattice of `grid_like`.

    Uses the radial transform of the profile directly, so the result matches
    states assembled in k-space (no sampling aliasing).  Truncated to paired
    modes like the canonical builders.
    """
    kx, ky, kz = grid_like.kgrids()
    kk = np.sqrt(kx**2 + ky**2 + kz**2)
    tab = profile.fourier_table(float(np.max(kk)))
    q = np.asarray(position, dtype=float)
    out = charge * tab(kk) * np.exp(-1j * (kx * q[0] + ky * q[1] + kz * q[2]))
    return out * paired_mode_mask(grid_like.N)


def constraint_residual(state: FieldGrid, charge_density_sampler=None):
    """(||div B||_2, ||div E - charge||_2) with exact lattice derivatives.

    The charge term is either a plain density sampler evaluated on the lattice
    (honest, but limited by sampling aliasing of the profile) or a
    (profile, charge, position) triple resolved through the radial transform,
    which is the right comparison for states built in k-space.  On the torus
    div E has zero mean identically, so the k=0 component of the charge is
    dropped: a net charge is screened by a uniform background.
    """
    sp = state.to_spectral()
    kx, ky, kz = sp.kgrids()
    divE = 1j * (kx * sp.E[0] + ky * sp.E[1] + kz * sp.E[2])
    divB = 1j * (kx * sp.B[0] + ky * sp.B[1] + kz * sp.B[2])
    if charge_density_sampler is not None:
        if callable(charge_density_sampler):
            ax = sp.axis()
            X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
            pts = np.stack([X, Y, Z], axis=-1).reshape(-1, 3)
            rho = np.asarray(charge_density_sampler(pts), dtype=float)
            rho = rho.reshape(sp.N, sp.N, sp.N)
            ph = sp._origin_phase()
            rho_h = np.fft.fftn(rho) * sp.spacing**3
            rho_h *= ph[:, None, None] * ph[None, :, None] * ph[None, None, :]
        else:
            profile, charge, position = charge_density_sampler
            rho_h = charge_modes(sp, profile, charge, position)
        rho_h = rho_h.copy()
        rho_h[0, 0, 0] = 0.0  # div E integrates to zero on the torus
        divE -= rho_h
    w = 1.0 / sp.L**3
    return (float(np.sqrt(w * np.sum(np.abs(divB) ** 2))),
            float(np.sqrt(w * np.sum(np.abs(divE) ** 2))))


# -- off-lattice sampling ----------------------------------------------------------


def point_sample(state: FieldGrid, pts, gradients=False):
    """Trigonometric interpolation of E, B (and Jacobians) at points (M, 3).

    Exact for band-limited data; used to feed Kirchhoff sphere nodes from
    grid-backed states.
    """
    sp = state.to_spectral()
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    k = sp.kaxis()
    px = np.exp(1j * np.outer(pts[:, 0], k))
    py = np.exp(1j * np.outer(pts[:, 1], k))
    pz = np.exp(1j * np.outer(pts[:, 2], k))
    vol = sp.L**3

    def ev(fh):
        t1 = np.einsum("cxyz,mz->cxym", fh, pz)
        t2 = np.einsum("cxym,my->cxm", t1, py)
        return np.real(np.einsum("cxm,mx->mc", t2, px)) / vol

    E = ev(sp.E)
    B = ev(sp.B)
    if not gradients:
        return E, B
    KX, KY, KZ = sp.kgrids()
    dE = np.empty((len(pts), 3, 3))
    dB = np.empty((len(pts), 3, 3))
    for j, kj in enumerate((KX, KY, KZ)):
        dEj = ev(1j * kj[None] * sp.E)
        dBj = ev(1j * kj[None] * sp.B)
        dE[:, :, j] = dEj
        dB[:, :, j] = dBj
    return E, B, dE, dB


def grid_samplers(state: FieldGrid):
    """(E0, B0, gradE, gradB) samplers backed by trig interpolation."""
    spectral = state.to_spectral()

    def E0(pts):
        return point_sample(spectral, pts)[0]

    def B0(pts):
        return point_sample(spectral, pts)[1]

    def gE(pts):
        return point_sample(spectral, pts, gradients=True)[2]

    def gB(pts):
        return point_sample(spectral, pts, gradients=True)[3]

    return E0, B0, gE, gB


# -- snapshot files ------------------------------------------------------------------

# Header: magic "ABFG", uint32 version, uint32 N, float64 L, float64 time,
# uint8 representation (0 = physical), 7 pad bytes. Data: little-endian
# float64, E then B, each stored z-major so the x index varies fastest,
# components interleaved per lattice point.


def save_snapshot(state: FieldGrid, path):
    phys = state.to_physical()
    head = _MAGIC + struct.pack("<II d d B 7x", _VERSION, phys.N, phys.L,
                                phys.time, 0)
    buf = io.BytesIO()
    buf.write(head)
    for f in (phys.E, phys.B):
        buf.write(np.ascontiguousarray(
            f.transpose(3, 2, 1, 0)).astype("<f8").tobytes())
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_snapshot(path) -> FieldGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise InvalidParameterError(f"{path}: not a field snapshot")
    version, N, L, time, rep = struct.unpack_from("<II d d B", raw, 4)
    if version != _VERSION or rep != 0:
        raise InvalidParameterError(
            f"{path}: unsupported snapshot version {version}/{rep}")
    off = 4 + struct.calcsize("<II d d B 7x")
    count = 3 * N**3
    data = np.frombuffer(raw, dtype="<f8", count=2 * count, offset=off)
    E = data[:count].reshape(N, N, N, 3).transpose(3, 2, 1, 0)
    B = data[count:].reshape(N, N, N, 3).transpose(3, 2, 1, 0)
    return FieldGrid(L, N, E, B, "physical", time)
