"""Particle dynamics by reduction to a memory-kernel (Volterra) equation.

Subtracting the comoving soliton from the fields leaves a free pair driven
only by the particle's acceleration, so the coupled system collapses to

    m pdot(t) = alpha(t) + qdot(t) x beta(t) + e^2 (A pdot)(t)

where alpha/beta are the rho-mollified free evolution of the modified
initial fields evaluated along the trajectory and A is a Volterra operator
whose 3x3 kernel a(t,s) propagates the soliton velocity-gradient source
from (s, q(s)) to (t, q(t)).  The march solves for pdot(t_n) by fixed-point
iteration at each step and records enough per-step data that the discrete
equation can be re-checked from the output alone.
"""

from __future__ import annotations

import os

import numpy as np

from . import backend
from .errors import DivergenceError, InvalidParameterError, StabilityError
from .initial_data import ModifiedFields
from .profiles import ChargeProfile, PhysicalConstants
from .propagator import kirchhoff_eval
from .quadrature import SphereRule, ball_rule
from .soliton import QUAD_ACCURATE, QUAD_FAST, V_MAX, chi_weight

__all__ = [
    "ParticleState", "TrajectoryRecord", "KernelSample", "DrivingForces",
    "FreeFieldForce", "MemoryKernel", "momentum_maps", "velocity_of",
    "momentum_of", "driving_forces", "kernel_sample", "apply_memory",
    "solve_trajectory",
]


# -- momentum maps -----------------------------------------------------------------


def velocity_of(p):
    """qdot = F(p) = p / sqrt(1 + p^2); |F| < 1 for every finite p."""
    p = np.asarray(p, dtype=float)
    return p / np.sqrt(1.0 + p @ p)


def momentum_of(qdot):
    """Inverse map p = qdot / sqrt(1 - qdot^2)."""
    qdot = np.asarray(qdot, dtype=float)
    s = qdot @ qdot
    if s >= 1.0:
        raise InvalidParameterError(f"|qdot| = {np.sqrt(s):.6g} >= 1")
    return qdot / np.sqrt(1.0 - s)


def momentum_maps(p):
    """(F, F', F'') at p: velocity, its Jacobian, and the second derivative.

    F'' has axes [i, j, k] = d^2 F_i / dp_j dp_k.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    g = 1.0 / np.sqrt(1.0 + p @ p)
    g3, g5 = g**3, g**5
    F = g * p
    Fp = g * np.eye(3) - g3 * np.outer(p, p)
    Fpp = (3.0 * g5 * np.einsum("i,j,k->ijk", p, p, p)
           - g3 * (np.einsum("ij,k->ijk", np.eye(3), p)
                   + np.einsum("ik,j->ijk", np.eye(3), p)
                   + np.einsum("jk,i->ijk", np.eye(3), p)))
    return F, Fp, Fpp


def _jacobian(p):
    p = np.asarray(p, dtype=float)
    g = 1.0 / np.sqrt(1.0 + p @ p)
    return g * np.eye(3) - g**3 * np.outer(p, p)


# -- records -----------------------------------------------------------------------


class ParticleState:
    """Snapshot (t, q, p) with the derived velocity and stored acceleration."""

    __slots__ = ("t", "q", "p", "qddot")

    def __init__(self, t, q, p, qddot=None):
        self.t = float(t)
        self.q = np.asarray(q, dtype=float).reshape(3)
        self.p = np.asarray(p, dtype=float).reshape(3)
        self.qddot = None if qddot is None else np.asarray(qddot, float).reshape(3)

    @property
    def qdot(self):
        return velocity_of(self.p)


class DrivingForces:
    """alpha(t), beta(t): the mollified free-field forces at the particle."""

    __slots__ = ("alpha", "beta")

    def __init__(self, alpha, beta):
        self.alpha = np.asarray(alpha, dtype=float).reshape(3)
        self.beta = np.asarray(beta, dtype=float).reshape(3)


class KernelSample:
    """One memory-kernel entry: the 3x3 matrix applied to pdot(s)."""

    __slots__ = ("t", "s", "a")

    def __init__(self, t, s, a):
        self.t = float(t)
        self.s = float(s)
        self.a = np.asarray(a, dtype=float).reshape(3, 3)


_CSV_COLUMNS = ["t"]
for _base in ("q", "p", "qdot", "qddot", "alpha", "beta", "memory"):
    _CSV_COLUMNS += [f"{_base}_{c}" for c in "xyz"]
_CSV_COLUMNS.append("contraction_factor")


class TrajectoryRecord:
    """Uniform-step particle history plus the per-step force decomposition.

    ``memory`` holds (A pdot)(t_n) as used by the solver (the e^2 factor is
    applied in the equation, not stored), so the discrete update can be
    re-verified from the record: m pdot = alpha + qdot x beta + e^2 memory.
    """

    def __init__(self, dt, t, q, p, pdot, alpha, beta, memory, contraction,
                 constants: PhysicalConstants | None = None):
        self.dt = float(dt)
        self.t = np.asarray(t, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.p = np.asarray(p, dtype=float)
        self.pdot = np.asarray(pdot, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.memory = np.asarray(memory, dtype=float)
        self.contraction = np.asarray(contraction, dtype=float)
        self.constants = constants
        g = 1.0 / np.sqrt(1.0 + np.sum(self.p**2, axis=1))
        self.qdot = self.p * g[:, None]
        # qddot = F'(p) pdot
        pp = np.einsum("ni,nj->nij", self.p, self.p)
        Fp = g[:, None, None] * np.eye(3)[None] - g[:, None, None] ** 3 * pp
        self.qddot = np.einsum("nij,nj->ni", Fp, self.pdot)

    def __len__(self):
        return len(self.t)

    def state(self, i) -> ParticleState:
        return ParticleState(self.t[i], self.q[i], self.p[i], self.qddot[i])

    def index_of(self, t):
        i = int(round(t / self.dt))
        if not (0 <= i < len(self.t)) or abs(self.t[i] - t) > 1e-9 * max(1.0, self.dt):
            raise InvalidParameterError(
                f"t = {t!r} is not on the record's time grid (dt = {self.dt})")
        return i

    def accel_square_integral(self, upto=None):
        """Trapezoid of int_0^T |qddot|^2 dt; nondecreasing in T."""
        a2 = np.sum(self.qddot**2, axis=1)
        n = len(a2) if upto is None else self.index_of(upto) + 1
        if n < 2:
            return 0.0
        return float(np.trapezoid(a2[:n], dx=self.dt))

    def equation_residual(self):
        """Per-step sup-norm of m pdot - alpha - qdot x beta - e^2 memory."""
        if self.constants is None:
            raise InvalidParameterError("record carries no constants")
        e, m = self.constants.e, self.constants.m
        r = (m * self.pdot - self.alpha - np.cross(self.qdot, self.beta)
             - e * e * self.memory)
        return np.max(np.abs(r), axis=1)

    # -- CSV ------------------------------------------------------------------

    def write_csv(self, path):
        rows = np.column_stack([
            self.t, self.q, self.p, self.qdot, self.qddot,
            self.alpha, self.beta, self.memory, self.contraction])
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w") as fh:
            fh.write(",".join(_CSV_COLUMNS) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        os.replace(tmp, path)

    @classmethod
    def read_csv(cls, path, constants: PhysicalConstants | None = None):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header != _CSV_COLUMNS:
                raise InvalidParameterError(f"unexpected trajectory header in {path}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        t = data[:, 0]
        dt = t[1] - t[0] if len(t) > 1 else 1.0
        cols = {}
        for j, base in enumerate(("q", "p", "qdot", "qddot", "alpha", "beta",
                                  "memory")):
            cols[base] = data[:, 1 + 3 * j: 4 + 3 * j]
        rec = cls(dt, t, cols["q"], cols["p"], np.zeros_like(cols["q"]),
                  cols["alpha"], cols["beta"], cols["memory"], data[:, -1],
                  constants)
        # pdot is not a CSV column; recover it from qddot = F'(p) pdot
        g = 1.0 / np.sqrt(1.0 + np.sum(rec.p**2, axis=1))
        pp = np.einsum("ni,nj->nij", rec.p, rec.p)
        Fp = g[:, None, None] * np.eye(3)[None] - g[:, None, None] ** 3 * pp
        rec.pdot = np.linalg.solve(Fp, cols["qddot"][:, :, None])[:, :, 0]
        rec.qddot = cols["qddot"]
        rec.qdot = cols["qdot"]
        return rec


# -- driving forces ----------------------------------------------------------------


class FreeFieldForce:
    """Evaluator of alpha(t), beta(t) = e (Ebar_L, Bbar_L)^rho (q(t)).

    The mollification ball around q(t) is sampled once; every node is pushed
    through one batched Kirchhoff evaluation of the modified initial data.
    When the data's support is known, nodes whose sphere of radius t misses
    it are skipped (their contribution is exactly zero), which makes the
    forces vanish identically outside the light-cone window.
    """

    def __init__(self, modified: ModifiedFields | None,
                 profile: ChargeProfile, constants: PhysicalConstants,
                 n_radial: int = 10, sphere: SphereRule | None = None,
                 rule: SphereRule | None = None):
        self.e = float(constants.e)
        self._zero = (modified is None or modified.is_zero or self.e == 0.0)
        if self._zero:
            return
        self._samplers = modified.samplers()
        self.support = modified.support
        self.rule = rule if rule is not None else SphereRule(18, 36)
        if sphere is None:
            sphere = SphereRule(8, 16)
        self._z, self._w = ball_rule(n_radial, profile.radius, sphere,
                                     radial_weight=profile.density)

    def __call__(self, t, q) -> DrivingForces:
        if self._zero:
            z = np.zeros(3)
            return DrivingForces(z, z)
        q = np.asarray(q, dtype=float).reshape(3)
        nodes = q[None, :] - self._z
        w = self._w
        if self.support is not None:
            c, a = self.support
            d = np.linalg.norm(nodes - c[None, :], axis=1)
            live = np.abs(d - t) <= a
            if not live.any():
                z = np.zeros(3)
                return DrivingForces(z, z)
            nodes, w = nodes[live], w[live]
        E0s, B0s, gEs, gBs = self._samplers
        E, B = kirchhoff_eval(E0s, B0s, (gEs, gBs), nodes, t, rule=self.rule)
        return DrivingForces(self.e * (w @ E), self.e * (w @ B))


def driving_forces(t, q, modified, profile, constants,
                   **force_options) -> DrivingForces:
    """One-shot evaluation; build a FreeFieldForce for repeated calls."""
    return FreeFieldForce(modified, profile, constants, **force_options)(t, q)


# -- memory kernel -----------------------------------------------------------------


class MemoryKernel:
    """a(t,s) built from chi-weighted soliton velocity-gradient sources.

    chi = rho * rho: the source fields are already rho-smeared once and the
    force evaluation smears them again, and the free group commutes with
    convolution, so both mollifications ride on the kernel weight.
    """

    def __init__(self, profile: ChargeProfile, quality: str = "fast"):
        if quality not in ("fast", "accurate"):
            raise InvalidParameterError(f"unknown quadrature quality {quality!r}")
        self.weight = chi_weight(profile)
        self.quad = QUAD_ACCURATE if quality == "accurate" else QUAD_FAST
        self.accurate = quality == "accurate"

    def pair(self, x0, tau, v_source):
        """Propagated source columns (ME, MB) at x0, lag tau."""
        return backend.propagated_source_pair(x0, tau, np.asarray(v_source, float),
                                              self.weight, self.quad, self.accurate)

    def gradient_pair(self, x0, tau, v_source):
        """Space-gradient variant (GE, GB), axes [i, l, j]; decays one
        power faster than the plain pair."""
        return backend.propagated_gradient_source(
            x0, tau, np.asarray(v_source, float), self.weight, self.quad,
            self.accurate)

    def sample(self, t, s, q_t, qdot_t, q_s, p_s) -> KernelSample:
        x0 = np.asarray(q_t, float) - np.asarray(q_s, float)
        a = backend.kernel_row(x0[None, :], [t - s],
                               velocity_of(p_s)[None, :],
                               _jacobian(p_s)[None, :, :],
                               np.asarray(qdot_t, float),
                               self.weight, self.quad, self.accurate)
        return KernelSample(t, s, a[0])


def kernel_sample(t, s, record: TrajectoryRecord, profile: ChargeProfile,
                  quality: str = "fast") -> KernelSample:
    """a(t,s) for grid times of a recorded (or partially built) trajectory."""
    if not 0.0 <= s <= t:
        raise InvalidParameterError("kernel_sample needs 0 <= s <= t")
    kern = MemoryKernel(profile, quality)
    it, isrc = record.index_of(t), record.index_of(s)
    return kern.sample(t, s, record.q[it], record.qdot[it],
                       record.q[isrc], record.p[isrc])


def _memory_weights(n, dt, tau_cut):
    """History indices, their weights, and the diagonal weight at k = n.

    Plain composite trapezoid on [0, n dt]; with tau_cut set, nodes older
    than t - tau_cut are thinned fourfold and reweighted (nonuniform
    trapezoid), which the kernel's lag decay keeps accurate.
    """
    if n == 0:
        return np.empty(0, dtype=int), np.empty(0), 0.0
    if tau_cut is None:
        ks = np.arange(n)
        wts = np.full(n, dt)
        wts[0] = 0.5 * dt
        return ks, wts, 0.5 * dt
    near_lo = max(0, n - int(np.ceil(tau_cut / dt)))
    kept = sorted(set(range(0, near_lo, 4)) | set(range(near_lo, n + 1)))
    times = dt * np.asarray(kept, dtype=float)
    w = np.zeros(len(kept))
    w[0] = 0.5 * (times[1] - times[0]) if len(kept) > 1 else 0.0
    w[-1] = 0.5 * (times[-1] - times[-2]) if len(kept) > 1 else 0.0
    if len(kept) > 2:
        w[1:-1] = 0.5 * (times[2:] - times[:-2])
    return np.asarray(kept[:-1], dtype=int), w[:-1], w[-1]


def apply_memory(record: TrajectoryRecord, t, pdot_history=None, *,
                 profile: ChargeProfile | None = None,
                 kernel: MemoryKernel | None = None, cache: dict | None = None,
                 tau_cut=None):
    """(A pdot)(t): trapezoid of a(t,s) pdot(s) over the record's s-grid.

    ``cache`` (a dict) persists kernel matrices across calls keyed by the
    (t-index, s-index) pair, mirroring their reuse inside the solver.
    """
    if kernel is None:
        if profile is None:
            raise InvalidParameterError("apply_memory needs a profile or kernel")
        kernel = MemoryKernel(profile)
    n = record.index_of(t)
    if pdot_history is None:
        pdot_history = record.pdot
    pdot_history = np.asarray(pdot_history, dtype=float)
    if len(pdot_history) < n + 1:
        raise InvalidParameterError("pdot history does not cover [0, t]")
    ks, wts, w_diag = _memory_weights(n, record.dt, tau_cut)
    out = np.zeros(3)
    q_t, qdot_t = record.q[n], record.qdot[n]
    for k, wk in zip(ks, wts):
        key = (n, int(k))
        if cache is not None and key in cache:
            a = cache[key]
        else:
            a = kernel.sample(t, record.t[k], q_t, qdot_t,
                              record.q[k], record.p[k]).a
            if cache is not None:
                cache[key] = a
        out += wk * (a @ pdot_history[k])
    if n > 0:
        key = (n, n)
        if cache is not None and key in cache:
            a = cache[key]
        else:
            a = kernel.sample(t, t, q_t, qdot_t, record.q[n], record.p[n]).a
            if cache is not None:
                cache[key] = a
        out += w_diag * (a @ pdot_history[n])
    return out


# -- the march ---------------------------------------------------------------------


def solve_trajectory(modified: ModifiedFields | None, profile: ChargeProfile,
                     constants: PhysicalConstants, q0, qdot0, *,
                     dt: float = 0.05, t_final: float = 10.0,
                     fixed_point_tol: float = 1e-10, max_iters: int = 50,
                     tau_cut=None, quality: str = "fast",
                     force: FreeFieldForce | None = None,
                     callback=None) -> TrajectoryRecord:
    """March the reduced equation on a uniform grid and record everything.

    Each step: second-order predictor for (q, p); one batched kernel-row and
    force evaluation at the predicted geometry; damped (factor 1) fixed-point
    iteration for pdot(t_n) with the history part of the memory integral
    frozen and the diagonal + cross terms updated per iterate; trapezoid
    corrector for p and q.  Raises DivergenceError naming the step when the
    iteration stops contracting (e^2/m too large for this reduction).
    """
    if dt <= 0.0 or not np.isfinite(dt):
        raise InvalidParameterError(f"dt = {dt!r} must be positive")
    if t_final < 0.0:
        raise InvalidParameterError("t_final must be >= 0")
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise InvalidParameterError("t_final must be a multiple of dt")
    e, m = float(constants.e), float(constants.m)
    e2 = e * e
    q_init = np.asarray(q0, dtype=float).reshape(3)
    p_init = momentum_of(qdot0)
    if force is None:
        force = FreeFieldForce(modified, profile, constants)
    kern = MemoryKernel(profile, quality)

    T = n_steps + 1
    q = np.zeros((T, 3))
    p = np.zeros((T, 3))
    pdot = np.zeros((T, 3))
    alpha = np.zeros((T, 3))
    beta = np.zeros((T, 3))
    memory = np.zeros((T, 3))
    contraction = np.zeros(T)

    q[0], p[0] = q_init, p_init
    f0 = force(0.0, q[0])
    alpha[0], beta[0] = f0.alpha, f0.beta
    pdot[0] = (alpha[0] + np.cross(velocity_of(p[0]), beta[0])) / m

    qdot_prev = velocity_of(p[0])
    for n in range(1, T):
        t = n * dt
        # predictor (Euler momentum, trapezoid position)
        p_star = p[n - 1] + dt * pdot[n - 1]
        v_star = velocity_of(p_star)
        q_star = q[n - 1] + 0.5 * dt * (qdot_prev + v_star)

        fn = force(t, q_star)
        alpha[n], beta[n] = fn.alpha, fn.beta

        ks, wts, w_diag = _memory_weights(n, dt, tau_cut)
        # history contraction u_k = F'(p_k) pdot_k is fixed within the step;
        # zero pdot needs no kernel (and none at all when e = 0)
        hE = np.zeros(3)
        hB = np.zeros(3)
        if e2 != 0.0:
            for k, wk in zip(ks, wts):
                u_k = _jacobian(p[k]) @ pdot[k]
                if not u_k.any():
                    continue
                ME, MB = kern.pair(q_star - q[k], t - k * dt, velocity_of(p[k]))
                hE += wk * (ME @ u_k)
                hB += wk * (MB @ u_k)
        MEd = MBd = None

        x_prev = pdot[n - 1].copy()
        diffs = []
        converged = False
        for _ in range(max_iters):
            p_it = p[n - 1] + 0.5 * dt * (pdot[n - 1] + x_prev)
            v_it = velocity_of(p_it)
            u_d = _jacobian(p_it) @ x_prev
            if e2 != 0.0 and u_d.any():
                if MEd is None:
                    MEd, MBd = kern.pair(np.zeros(3), 0.0, v_star)
                dE, dB = MEd @ u_d, MBd @ u_d
            else:
                dE = dB = np.zeros(3)
            mem = -(hE + np.cross(v_it, hB) + w_diag * (dE + np.cross(v_it, dB)))
            x_new = (alpha[n] + np.cross(v_it, beta[n]) + e2 * mem) / m
            d = float(np.linalg.norm(x_new - x_prev))
            diffs.append(d)
            if d <= fixed_point_tol:
                x_prev = x_new
                converged = True
                break
            if (len(diffs) >= 3 and diffs[-1] >= diffs[-2] >= diffs[-3]
                    and diffs[-1] > fixed_point_tol):
                raise DivergenceError(
                    f"fixed point stopped contracting at step {n} (t = {t:.6g});"
                    f" last updates {diffs[-3]:.3e}, {diffs[-2]:.3e},"
                    f" {diffs[-1]:.3e} -- e^2/m = {e2 / m:.3g} too large")
            x_prev = x_new
        if not converged:
            raise DivergenceError(
                f"fixed point exceeded {max_iters} iterations at step {n}"
                f" (t = {t:.6g}); last update {diffs[-1]:.3e}")
        ratios = [diffs[i + 1] / diffs[i] for i in range(len(diffs) - 1)
                  if diffs[i] > 0.0]
        contraction[n] = ratios[-1] if ratios else 0.0

        pdot[n] = x_prev
        p[n] = p[n - 1] + 0.5 * dt * (pdot[n - 1] + pdot[n])
        qdot_n = velocity_of(p[n])
        q[n] = q[n - 1] + 0.5 * dt * (qdot_prev + qdot_n)
        sp = float(np.linalg.norm(qdot_n))
        if sp >= V_MAX:
            raise StabilityError(
                f"|qdot| = {sp:.6g} at step {n} exceeds the supported range"
                f" (< {V_MAX})")
        # store the memory term at the converged state
        u_d = _jacobian(p[n]) @ pdot[n]
        if e2 != 0.0 and u_d.any():
            if MEd is None:
                MEd, MBd = kern.pair(np.zeros(3), 0.0, v_star)
            dE, dB = MEd @ u_d, MBd @ u_d
        else:
            dE = dB = np.zeros(3)
        memory[n] = -(hE + np.cross(qdot_n, hB)
                      + w_diag * (dE + np.cross(qdot_n, dB)))
        qdot_prev = qdot_n
        if callback is not None:
            callback(n, n_steps)

    tgrid = dt * np.arange(T)
    return TrajectoryRecord(dt, tgrid, q, p, pdot, alpha, beta, memory,
                            contraction, constants)
