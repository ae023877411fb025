"""Coupled particle-field reference solver: pseudo-spectral Strang splitting.

The unknowns are (E, B) on a periodic lattice plus the particle (q, p).
One step is: half particle step with frozen fields (one midpoint stage of
the mollified Lorentz force, fields evaluated by multiplying the spectrum
by rhohat and trig interpolation at q), exact mode-wise
variation-of-constants field step with the current -e rho(x - q) qdot
frozen at the half-step geometry, second half particle step against the
new fields.  The longitudinal electric part is then re-slaved to the
charge (i k.E := e rhohat e^{-ik q}), which is exactly the component the
continuum flow keeps slaved, so the Gauss residual stays at
representation level instead of accumulating splitting error.

This solver shares nothing with the memory-kernel reduction in
``volterra`` beyond the particle kinematics and the trajectory record, so
agreement between the two on identical data is a genuine cross-check.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .errors import HorizonError, InvalidParameterError, StabilityError
from .initial_data import PulseSpec, initial_grid
from .profiles import ChargeProfile, PhysicalConstants, make_profile
from .propagator import FieldGrid, constraint_residual, paired_mode_mask
from .soliton import V_MAX
from .volterra import ParticleState, TrajectoryRecord, momentum_of, velocity_of


class CoupledState:
    """Field grid + particle + the physics needed to advance them."""

    __slots__ = ("grid", "particle", "constants", "profile")

    def __init__(self, grid: FieldGrid, particle: ParticleState,
                 constants: PhysicalConstants, profile: ChargeProfile):
        if np.dot(particle.qdot, particle.qdot) >= 1.0:
            raise InvalidParameterError("particle speed must be below 1")
        self.grid = grid
        self.particle = particle
        self.constants = constants
        self.profile = profile

    @property
    def time(self):
        return self.particle.t

    def gauss_residual(self):
        """(||div B||, ||div E - e rho(.-q)||), resolved through the profile
        transform so a projected state measures at representation level."""
        return constraint_residual(
            self.grid, (self.profile, self.constants.e, self.particle.q))


class ConservedQuantities:
    """Energy m/sqrt(1-qdot^2) + field half-norm, momentum m p + int E x B."""

    __slots__ = ("energy", "momentum", "particle_energy", "field_energy",
                 "particle_momentum", "field_momentum")

    def __init__(self, state: CoupledState):
        m = state.constants.m
        p = state.particle.p
        self.particle_energy = m * float(np.sqrt(1.0 + np.dot(p, p)))
        self.field_energy = state.grid.field_energy()
        self.energy = self.particle_energy + self.field_energy
        self.particle_momentum = m * p
        self.field_momentum = state.grid.field_momentum()
        self.momentum = self.particle_momentum + self.field_momentum


def conserved_quantities(state: CoupledState) -> ConservedQuantities:
    return ConservedQuantities(state)


def contamination_horizon(L, profile_radius):
    """Time of one full torus crossing minus mollification smearing.

    Past this, wrapped signals can in principle re-enter the charge support;
    conservation statements are unaffected (the torus system is closed), but
    comparisons against free-space formulas lose their guarantee.
    """
    return float(L) - 4.0 * float(profile_radius)


def initial_coupled_state(L, N, profile: ChargeProfile,
                          constants: PhysicalConstants, position, velocity,
                          pulse: PulseSpec | None = None) -> CoupledState:
    """Soliton-plus-optional-pulse data assembled in k-space."""
    grid = initial_grid(L, N, profile, constants, position, velocity, pulse)
    particle = ParticleState(0.0, position, momentum_of(velocity))
    return CoupledState(grid, particle, constants, profile)


# -- one step ---------------------------------------------------------------------


class StepCoefficients:
    """Mode-wise factors reused across steps: rotation angles, the
    variation-of-constants weights sin(w dt)/w and (1-cos(w dt))/w^2-free
    form (1-cos)/w, and the charge transform on the lattice modes."""

    def __init__(self, L, N, dt, profile: ChargeProfile):
        self.L = float(L)
        self.N = int(N)
        self.dt = float(dt)
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.L / self.N)
        kx, ky, kz = np.meshgrid(k, k, k, indexing="ij", sparse=True)
        kk = np.sqrt(kx**2 + ky**2 + kz**2)
        self.kaxis = k
        self.kvec = np.empty((3, self.N, self.N, self.N))
        self.kvec[0], self.kvec[1], self.kvec[2] = np.broadcast_arrays(
            kx, ky, kz)
        self.k2 = kk**2
        self.khat = np.zeros_like(self.kvec)
        nz = kk > 0.0
        for c in range(3):
            self.khat[c][nz] = self.kvec[c][nz] / kk[nz]
        self.c = np.cos(self.dt * kk)
        self.s = np.sin(self.dt * kk)
        self.s1 = np.where(nz, self.s / np.where(nz, kk, 1.0), self.dt)
        self.s2 = np.where(nz, (1.0 - self.c) / np.where(nz, kk, 1.0), 0.0)
        kmax = float(np.sqrt(3.0)) * np.pi * self.N / self.L
        self.rhohat = profile.fourier_table(kmax)(kk) * paired_mode_mask(self.N)

    def matches(self, grid: FieldGrid, dt):
        return (grid.N == self.N and grid.L == self.L
                and abs(dt - self.dt) <= 1e-12 * max(1.0, self.dt))

    def charge_phase(self, q, sign):
        """exp(sign * i k.q) as separable per-axis factors combined to N^3."""
        px = np.exp(sign * 1j * q[0] * self.kaxis)
        py = np.exp(sign * 1j * q[1] * self.kaxis)
        pz = np.exp(sign * 1j * q[2] * self.kaxis)
        return px, py, pz


def mollified_fields_at(grid: FieldGrid, profile: ChargeProfile, q,
                        coeffs: StepCoefficients | None = None):
    """(E^rho, B^rho)(q): spectrum times rhohat, trig-interpolated at q."""
    sp = grid.to_spectral()
    if coeffs is None or not (coeffs.N == sp.N and coeffs.L == sp.L):
        coeffs = StepCoefficients(sp.L, sp.N, 1.0, profile)
    px, py, pz = coeffs.charge_phase(np.asarray(q, dtype=float), +1.0)
    return backend.point_eval(sp.E, sp.B, coeffs.rhohat, px, py, pz, sp.L**3)


def _half_particle(Eh, Bh, q, p, h, coeffs, constants):
    """Midpoint step of dq = F(p) dt, m dp = e(E^rho + F(p) x B^rho) dt
    over h, with the field spectra frozen."""
    em = constants.e / constants.m

    def rhs(qq, pp):
        px, py, pz = coeffs.charge_phase(qq, +1.0)
        Em, Bm = backend.point_eval(Eh, Bh, coeffs.rhohat, px, py, pz,
                                    coeffs.L**3)
        v = velocity_of(pp)
        return v, em * (Em + np.cross(v, Bm))

    k1v, k1a = rhs(q, p)
    k2v, k2a = rhs(q + 0.5 * h * k1v, p + 0.5 * h * k1a)
    return q + h * k2v, p + h * k2a


def step_coupled(state: CoupledState, dt, *, coeffs: StepCoefficients | None
                 = None, project_gauss=True, allow_wraparound=False
                 ) -> CoupledState:
    """One Strang step; returns the advanced state (spectral representation).

    Refuses to run past the no-contamination horizon L - 4R unless
    ``allow_wraparound``; raises the stability error when the particle speed
    reaches the velocity cap.
    """
    if not (dt > 0.0):
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    grid = state.grid.to_spectral()
    horizon = contamination_horizon(grid.L, state.profile.radius)
    if not allow_wraparound and state.time + dt > horizon * (1.0 + 1e-12):
        raise HorizonError(
            f"step to t = {state.time + dt:g} exceeds the no-contamination "
            f"horizon {horizon:g} of the L = {grid.L:g} box; pass "
            f"allow_wraparound=True to continue on the torus anyway")
    if coeffs is None or not coeffs.matches(grid, dt):
        coeffs = StepCoefficients(grid.L, grid.N, dt, state.profile)
    e = state.constants.e
    q0, p0 = state.particle.q, state.particle.p

    if e == 0.0:
        # decoupled: exact free rotation, straight-line particle
        Eh, Bh = backend.mode_rotate(grid.E, grid.B, coeffs.c, coeffs.s,
                                     coeffs.khat)
        v = velocity_of(p0)
        q2, p2 = q0 + dt * v, p0
    else:
        q1, p1 = _half_particle(grid.E, grid.B, q0, p0, 0.5 * dt, coeffs,
                                state.constants)
        v_half = velocity_of(p1)
        px, py, pz = coeffs.charge_phase(q1, -1.0)
        jamp = (-e * coeffs.rhohat) * (
            (px[:, None, None] * py[None, :, None]) * pz[None, None, :])
        jamp[0, 0, 0] = 0.0  # mean current dropped (neutralized torus)
        Eh, Bh = backend.coupled_field_step(
            grid.E, grid.B, coeffs.c, coeffs.s, coeffs.s1, coeffs.s2,
            coeffs.khat, jamp, v_half)
        q2, p2 = _half_particle(Eh, Bh, q1, p1, 0.5 * dt, coeffs,
                                state.constants)
        if project_gauss:
            px, py, pz = coeffs.charge_phase(q2, -1.0)
            target = (e * coeffs.rhohat) * (
                (px[:, None, None] * py[None, :, None]) * pz[None, None, :])
            target[0, 0, 0] = 0.0
            Eh = backend.gauss_project(Eh, coeffs.kvec, coeffs.k2, target)

    v2 = velocity_of(p2)
    if np.dot(v2, v2) >= V_MAX**2:
        raise StabilityError(
            f"particle speed {np.linalg.norm(v2):.6f} reached the cap "
            f"{V_MAX} at t = {state.time + dt:g}")
    new_grid = FieldGrid(grid.L, grid.N, Eh, Bh, "spectral",
                         grid.time + dt)
    if state.grid.representation == "physical":
        new_grid = new_grid.to_physical()
    particle = ParticleState(state.time + dt, q2, p2)
    return CoupledState(new_grid, particle, state.constants, state.profile)


# -- drivers ----------------------------------------------------------------------


_SERIES_COLUMNS = ["t", "energy", "Px", "Py", "Pz", "divB_residual",
                   "gauss_residual"]


class ConservedSeries:
    """Sampled energy / momentum / constraint residuals along a run."""

    def __init__(self, t, energy, momentum, divB, gauss):
        self.t = np.asarray(t, dtype=float)
        self.energy = np.asarray(energy, dtype=float)
        self.momentum = np.asarray(momentum, dtype=float)
        self.divB = np.asarray(divB, dtype=float)
        self.gauss = np.asarray(gauss, dtype=float)

    def __len__(self):
        return len(self.t)

    def relative_drift(self):
        """(energy drift, momentum drift) relative to the t = 0 values."""
        de = np.max(np.abs(self.energy - self.energy[0]))
        dp = np.max(np.linalg.norm(self.momentum - self.momentum[0], axis=1))
        p0 = np.linalg.norm(self.momentum[0])
        return (float(de / abs(self.energy[0])),
                float(dp / p0) if p0 > 0.0 else float(dp))

    def write_csv(self, path):
        import os
        rows = np.column_stack([self.t, self.energy, self.momentum,
                                self.divB, self.gauss])
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(",".join(_SERIES_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != _SERIES_COLUMNS:
                raise InvalidParameterError(
                    f"{path}: unexpected conserved-series header {header}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2:5], data[:, 5],
                   data[:, 6])


def run_simulation(state: CoupledState, t_final, dt, *, project_gauss=True,
                   allow_wraparound=False, sample_every=1, snapshot_times=(),
                   callback=None):
    """March to t_final, recording every step; returns
    (TrajectoryRecord, ConservedSeries, snapshots).

    The trajectory uses the same schema as the Volterra solver: alpha/beta
    hold the full mollified force e E^rho(q) / e B^rho(q) (not just the
    free part), memory and contraction are zero.  Snapshots are physical
    copies at the requested times, which must lie on the step grid.
    """
    if not (dt > 0.0):
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    n_steps = int(round(t_final / dt))
    if not (t_final >= 0.0) or abs(n_steps * dt - t_final) > 1e-9 * max(1.0, dt):
        raise InvalidParameterError(
            f"t_final = {t_final!r} is not a multiple of dt = {dt!r}")
    snap_idx = {}
    for ts in snapshot_times:
        i = int(round(ts / dt))
        if not (0 <= i <= n_steps) or abs(i * dt - ts) > 1e-9 * max(1.0, dt):
            raise InvalidParameterError(
                f"snapshot time {ts!r} is not on the step grid")
        snap_idx.setdefault(i, ts)

    state = CoupledState(state.grid.to_spectral(), state.particle,
                         state.constants, state.profile)
    coeffs = StepCoefficients(state.grid.L, state.grid.N, dt, state.profile)
    e, m = state.constants.e, state.constants.m

    nrec = n_steps + 1
    t = np.arange(nrec) * dt
    q = np.zeros((nrec, 3))
    p = np.zeros((nrec, 3))
    pdot = np.zeros((nrec, 3))
    alpha = np.zeros((nrec, 3))
    beta = np.zeros((nrec, 3))
    zeros = np.zeros((nrec, 3))
    sample_idx = []
    energies, momenta, divBs, gausses = [], [], [], []
    snapshots = []

    def record(i, st):
        q[i], p[i] = st.particle.q, st.particle.p
        if e != 0.0:
            Em, Bm = mollified_fields_at(st.grid, st.profile, st.particle.q,
                                         coeffs)
            alpha[i], beta[i] = e * Em, e * Bm
        pdot[i] = (alpha[i] + np.cross(st.particle.qdot, beta[i])) / m
        if i % sample_every == 0 or i == n_steps:
            cq = ConservedQuantities(st)
            db, dg = st.gauss_residual()
            sample_idx.append(i)
            energies.append(cq.energy)
            momenta.append(cq.momentum)
            divBs.append(db)
            gausses.append(dg)
        if i in snap_idx:
            snap = st.grid.to_physical().copy()
            snap.time = t[i]
            snapshots.append(snap)
        if callback is not None:
            callback(i, st)

    record(0, state)
    for i in range(1, nrec):
        state = step_coupled(state, dt, coeffs=coeffs,
                             project_gauss=project_gauss,
                             allow_wraparound=allow_wraparound)
        record(i, state)

    traj = TrajectoryRecord(dt, t, q, p, pdot, alpha, beta, zeros,
                            np.zeros(nrec), constants=state.constants)
    series = ConservedSeries(t[sample_idx], energies, momenta, divBs, gausses)
    return traj, series, snapshots


def scaled_parameters(lam, *, profile: ChargeProfile,
                      constants: PhysicalConstants, L, dt, t_final,
                      position=(0.0, 0.0, 0.0), pulse: PulseSpec | None = None):
    """Parameters of the rescaled experiment x -> lam x, t -> lam t.

    Fields scale as lam^{3/2} E(lam x, lam t) and the charge density as
    lam^{5/2} rho(lam x); with unit-charge profiles this is realized as
    (R -> R/lam, e -> e/sqrt(lam)), the mass unchanged.  Velocities are
    invariant, so the scaled trajectory satisfies qdot_lam(t) =
    qdot(lam t).
    """
    if not (lam > 0.0):
        raise InvalidParameterError(f"scaling factor must be positive: {lam}")
    rt = np.sqrt(lam)
    out = {
        "profile": make_profile(profile.shape, profile.radius / lam),
        "constants": PhysicalConstants(constants.e / rt, constants.m),
        "L": L / lam,
        "dt": dt / lam,
        "t_final": t_final / lam,
        "position": np.asarray(position, dtype=float) / lam,
    }
    if pulse is not None:
        out["pulse"] = PulseSpec(np.asarray(pulse.center) / lam,
                                 pulse.width / lam,
                                 pulse.amplitude * lam**1.5,
                                 pulse.polarization)
    return out
