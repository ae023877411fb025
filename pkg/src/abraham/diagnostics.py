"""Post-processing: scattering decomposition, asymptotics, lightcone Jacobian.

Everything here consumes immutable run outputs (trajectory records, field
snapshots) and produces scalars and small grids; nothing feeds back into
the solvers.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from . import backend
from .errors import InvalidParameterError
from .initial_data import soliton_on_grid
from .profiles import ChargeProfile, PhysicalConstants
from .propagator import FieldGrid, paired_mode_mask, spectral_evolve
from .volterra import TrajectoryRecord


# -- free-field scattering candidate ------------------------------------------------


def _dv_soliton_modes(kx, ky, kz, rho_hat, mask, v, qddot, position):
    """Spectral columns of qddot . grad_v (E_v, B_v)(. - q) for unit charge.

    From E_hat = -i (k - v w) rho_hat G and B_hat = -i (v x k) rho_hat G
    with w = v.k and G = 1/(k^2 - w^2):

        d_{v_l} E_hat_i = -i rho_hat [ -(d_il w + v_i k_l) G
                                       + (k_i - v_i w) 2 w k_l G^2 ]
        d_{v_l} B_hat_i = -i rho_hat [ (e_l x k)_i G + (v x k)_i 2 w k_l G^2 ]
    """
    v = np.asarray(v, dtype=float)
    a = np.asarray(qddot, dtype=float)
    q = np.asarray(position, dtype=float)
    k2 = kx**2 + ky**2 + kz**2
    w = v[0] * kx + v[1] * ky + v[2] * kz
    denom = k2 - w**2
    pos = denom > 0.0
    G = np.where(pos, 1.0 / np.where(pos, denom, 1.0), 0.0) * mask
    phase = np.exp(-1j * (kx * q[0] + ky * q[1] + kz * q[2]))
    amp = -1j * rho_hat * phase
    ka = a[0] * kx + a[1] * ky + a[2] * kz          # k . qddot
    twoG2 = 2.0 * w * ka * G * G                    # 2 w (k.a) G^2
    va = float(v @ a)
    kvec = (kx, ky, kz)
    SE = np.empty((3,) + G.shape, dtype=np.complex128)
    for i in range(3):
        SE[i] = amp * (-(a[i] * w + v[i] * ka) * G
                       + (kvec[i] - v[i] * w) * twoG2)
    axk = (a[1] * kz - a[2] * ky, a[2] * kx - a[0] * kz, a[0] * ky - a[1] * kx)
    vxk = (v[1] * kz - v[2] * ky, v[2] * kx - v[0] * kz, v[0] * ky - v[1] * kx)
    SB = np.empty_like(SE)
    for i in range(3):
        SB[i] = amp * (axk[i] * G + vxk[i] * twoG2)
    return SE, SB


def free_field_candidate(record: TrajectoryRecord, modified_grid: FieldGrid,
                         T_max=None, *, constants: PhysicalConstants,
                         profile: ChargeProfile, ds=0.2) -> FieldGrid:
    """Scattered-field data at t = 0: the grid of (E0bar, B0bar) minus the
    time quadrature of e U(-s) qddot(s) . grad_v(E, B)_{qdot(s)}(. - q(s)).

    Free-evolving the result approximates the radiation part of the run;
    the source integrand is the same velocity-gradient soliton column the
    memory kernel propagates, here assembled in k-space.  ``ds`` is rounded
    to a multiple of the record step; the trapezoid is truncated at T_max
    (default: the record's extent), which the caller can vary to estimate
    the tail.
    """
    T = record.t[-1] if T_max is None else float(T_max)
    if T > record.t[-1] + 1e-9:
        raise InvalidParameterError(
            f"T_max = {T:g} exceeds the trajectory extent {record.t[-1]:g}")
    sp = modified_grid.to_spectral()
    accE = sp.E.copy()
    accB = sp.B.copy()
    e = constants.e
    if e != 0.0 and T > 0.0:
        n_end = record.index_of(T)
        stride = max(1, int(round(ds / record.dt)))
        idx = list(range(0, n_end + 1, stride))
        if idx[-1] != n_end:
            idx.append(n_end)
        kx, ky, kz = sp.kgrids()
        kk = np.sqrt(kx**2 + ky**2 + kz**2)
        kmax = float(np.sqrt(3.0)) * np.pi * sp.N / sp.L
        rho_hat = profile.fourier_table(kmax)(kk)
        mask = paired_mode_mask(sp.N)
        khat = np.zeros((3, sp.N, sp.N, sp.N))
        nz = kk > 0.0
        for c, kc in enumerate(np.broadcast_arrays(kx, ky, kz)):
            khat[c][nz] = kc[nz] / kk[nz]
        for j, i in enumerate(idx):
            a = record.qddot[i]
            if not a.any():
                continue
            s = record.t[i]
            left = record.t[idx[j - 1]] if j > 0 else s
            right = record.t[idx[j + 1]] if j + 1 < len(idx) else s
            coef = -e * 0.5 * (right - left)
            SE, SB = _dv_soliton_modes(kx, ky, kz, rho_hat, mask,
                                       record.qdot[i], a, record.q[i])
            cs, ss = np.cos(s * kk), np.sin(s * kk)
            backend.candidate_add(accE, accB, SE, SB, cs, ss, khat, coef)
    out = FieldGrid(sp.L, sp.N, accE, accB, "spectral", 0.0)
    return out if modified_grid.representation == "spectral" else out.to_physical()


class ScatteringDecomposition:
    """v_infinity, the free-field candidate at t = 0, and residual series."""

    def __init__(self, v_infinity, candidate: FieldGrid, times=(),
                 residuals=()):
        self.v_infinity = np.asarray(v_infinity, dtype=float).reshape(3)
        self.candidate = candidate
        self.times = np.asarray(times, dtype=float)
        self.residuals = np.asarray(residuals, dtype=float).reshape(-1, 2)

    def residual_norm(self, i):
        """r(t_i) = E-part + B-part."""
        return float(self.residuals[i].sum())


def scattering_residual(snapshot: FieldGrid, record: TrajectoryRecord,
                        decomposition: ScatteringDecomposition | FieldGrid,
                        t, *, constants: PhysicalConstants,
                        profile: ChargeProfile):
    """(||E - e E_soliton - E_L||_2, same for B) at snapshot time t.

    The comoving soliton is sampled at the recorded (q(t), qdot(t)); the
    candidate is free-evolved to t on the snapshot's own lattice, so wrapped
    radiation cancels between the two fields.
    """
    if abs(snapshot.time - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidParameterError(
            f"snapshot is at t = {snapshot.time:g}, requested {t:g}")
    candidate = (decomposition.candidate
                 if isinstance(decomposition, ScatteringDecomposition)
                 else decomposition)
    if candidate.N != snapshot.N or candidate.L != snapshot.L:
        raise InvalidParameterError("candidate and snapshot lattices differ")
    i = record.index_of(t)
    sp = snapshot.to_spectral()
    dE = sp.E.copy()
    dB = sp.B.copy()
    if constants.e != 0.0:
        sol = soliton_on_grid(sp.L, sp.N, profile, record.qdot[i],
                              constants.e, record.q[i])
        dE -= sol.E
        dB -= sol.B
    free = spectral_evolve(candidate.to_spectral(), t)
    dE -= free.E
    dB -= free.B
    return FieldGrid(sp.L, sp.N, dE, dB, "spectral", t).l2_norms()


def decompose_run(record: TrajectoryRecord, modified_grid: FieldGrid,
                  snapshots, *, constants: PhysicalConstants,
                  profile: ChargeProfile, T_max=None,
                  ds=0.2) -> ScatteringDecomposition:
    """Candidate + v_infinity + residuals at every snapshot time."""
    cand = free_field_candidate(record, modified_grid, T_max,
                                constants=constants, profile=profile, ds=ds)
    report = asymptotics_report(record)
    times, residuals = [], []
    for snap in snapshots:
        times.append(snap.time)
        residuals.append(scattering_residual(snap, record, cand, snap.time,
                                             constants=constants,
                                             profile=profile))
    return ScatteringDecomposition(report.v_infinity, cand, times, residuals)


# -- asymptotics ---------------------------------------------------------------------


class AsymptoticsReport:
    """Windowed decay diagnostics and the terminal-velocity estimate."""

    def __init__(self, window_times, pdot_means, qddot_means, accel_square,
                 tail_fraction, v_infinity, v_error):
        self.window_times = np.asarray(window_times, dtype=float)
        self.pdot_means = np.asarray(pdot_means, dtype=float)
        self.qddot_means = np.asarray(qddot_means, dtype=float)
        self.accel_square = float(accel_square)
        self.tail_fraction = float(tail_fraction)
        self.v_infinity = np.asarray(v_infinity, dtype=float).reshape(3)
        self.v_error = float(v_error)

    def as_dict(self):
        return {
            "window_times": self.window_times.tolist(),
            "pdot_means": self.pdot_means.tolist(),
            "qddot_means": self.qddot_means.tolist(),
            "accel_square": self.accel_square,
            "tail_fraction": self.tail_fraction,
            "v_infinity": self.v_infinity.tolist(),
            "v_error": self.v_error,
        }


def asymptotics_report(record: TrajectoryRecord,
                       n_windows: int = 4) -> AsymptoticsReport:
    """Windowed |pdot| / |qddot| means, the L^2 acceleration budget with its
    tail fraction over [T/2, T], and v_infinity by Richardson extrapolation
    of final-window velocity means (2 m_w - m_2w cancels the linear bias)."""
    if len(record) < max(4, n_windows) or n_windows < 1:
        raise InvalidParameterError(
            f"need at least {max(4, n_windows)} samples in {n_windows} windows")
    T = record.t[-1]
    edges = np.linspace(0.0, T, n_windows + 1)
    pmag = np.linalg.norm(record.pdot, axis=1)
    amag = np.linalg.norm(record.qddot, axis=1)
    wt, pm, am = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (record.t >= a - 1e-12) & (record.t <= b + 1e-12)
        wt.append(0.5 * (a + b))
        pm.append(float(np.mean(pmag[sel])))
        am.append(float(np.mean(amag[sel])))

    total = record.accel_square_integral()
    a2 = np.sum(record.qddot**2, axis=1)
    half = len(record) // 2
    tail = float(np.trapezoid(a2[half:], dx=record.dt))
    frac = tail / total if total > 0.0 else 0.0

    def window_mean(w):
        sel = record.t >= T - w - 1e-12
        return record.qdot[sel].mean(axis=0)

    w = T / n_windows
    m1, m2 = window_mean(w), window_mean(2.0 * w)
    v_inf = 2.0 * m1 - m2
    v_err = float(np.linalg.norm(v_inf - m1))
    return AsymptoticsReport(wt, pm, am, total, frac, v_inf, v_err)


# -- lightcone Jacobian ----------------------------------------------------------------


def jacobian_check(record: TrajectoryRecord, n_samples: int = 20, *,
                   rng=None, h: float = 1e-3, newton_tol: float = 1e-12):
    """Max relative error of the finite-difference lightcone Jacobian.

    For sampled (s, omega), z = q(s) + s omega; the inverse map
    z -> y = z - q(s(z)) with |z - q(s)| = s has |dy/dz| =
    1 / (1 + qdot(s).omega).  Returns (max relative error, skipped), where
    samples whose stencil leaves the record's time range are skipped.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    T = record.t[-1]
    spline = CubicSpline(record.t, record.q, axis=0)
    dspline = spline.derivative()

    def s_of(z, s0):
        s = s0
        for _ in range(60):
            d = z - spline(s)
            r = np.linalg.norm(d)
            g = r - s
            if abs(g) <= newton_tol:
                return s
            # g'(s) = -d.qdot/r - 1
            gp = -float(d @ dspline(s)) / r - 1.0
            s = s - g / gp
            if not (0.0 <= s <= T):
                return None
        return s

    worst = 0.0
    skipped = 0
    eye = np.eye(3)
    for _ in range(n_samples):
        s = float(rng.uniform(0.1 * T, 0.9 * T))
        u = rng.normal(size=3)
        omega = u / np.linalg.norm(u)
        z = spline(s) + s * omega
        J = np.zeros((3, 3))
        ok = True
        for j in range(3):
            cols = []
            for sign in (+1.0, -1.0):
                zp = z + sign * h * eye[j]
                sp = s_of(zp, s)
                if sp is None or not (0.0 < sp < T):
                    ok = False
                    break
                cols.append(zp - spline(sp))
            if not ok:
                break
            J[:, j] = (cols[0] - cols[1]) / (2.0 * h)
        if not ok:
            skipped += 1
            continue
        det = np.linalg.det(J)
        qdot = dspline(s)
        expect = 1.0 / (1.0 + float(qdot @ omega))
        worst = max(worst, abs(det - expect) / abs(expect))
    return worst, skipped
