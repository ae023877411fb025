"""Free-evolution group: spectral mode rotation, Kirchhoff spherical means,
constraints, and the snapshot file format.

The two evolution routes (mode rotation on the lattice and spherical-mean
evaluation from samplers) are compared on shared band-limited data; that
cross-check is the module's main correctness oracle.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from abraham.initial_data import PulseSpec, pulse_on_grid, soliton_on_grid
from abraham.propagator import (FieldGrid, constraint_residual, grid_samplers,
                                kirchhoff_eval, load_snapshot,
                                paired_mode_mask, point_sample, save_snapshot,
                                spectral_evolve)


def random_grid(rng, L=10.0, N=16):
    # states are truncated to paired modes (the unpaired Nyquist planes
    # cannot be rotated while staying real), like every builder in the package
    E = rng.normal(size=(3, N, N, N))
    B = rng.normal(size=(3, N, N, N))
    sp = FieldGrid(L, N, E, B, "physical", 0.0).to_spectral()
    mask = paired_mode_mask(N)
    return FieldGrid(L, N, sp.E * mask, sp.B * mask, "spectral", 0.0).to_physical()


def divergence_free_grid(rng, L=10.0, N=16):
    sp = random_grid(rng, L, N).to_spectral()
    kx, ky, kz = sp.kgrids()
    k2 = kx**2 + ky**2 + kz**2
    k2s = np.where(k2 > 0.0, k2, 1.0)
    for F in (sp.E, sp.B):
        kdotF = kx * F[0] + ky * F[1] + kz * F[2]
        F[0] -= np.where(k2 > 0.0, kx * kdotF / k2s, 0.0)
        F[1] -= np.where(k2 > 0.0, ky * kdotF / k2s, 0.0)
        F[2] -= np.where(k2 > 0.0, kz * kdotF / k2s, 0.0)
    return sp


def test_evolve_zero_time_is_identity(rng):
    sp = random_grid(rng).to_spectral()
    out = spectral_evolve(sp, 0.0)
    assert_array_equal(out.E, sp.E)
    assert_array_equal(out.B, sp.B)


def test_single_mode_rotation():
    # one +k mode (and its conjugate partner) with B0 = 0:
    # E(t) = cos(t|k|) E0, B(t) = -i sin(t|k|) khat x E0
    L, N = 10.0, 16
    E = np.zeros((3, N, N, N), dtype=complex)
    amp = 0.7 - 0.2j
    E[1, 1, 0, 0] = amp             # polarization y, k along x
    E[1, N - 1, 0, 0] = np.conj(amp)
    B = np.zeros_like(E)
    sp = FieldGrid(L, N, E, B, "spectral", 0.0)
    k = 2.0 * np.pi / L
    t = 0.83
    out = spectral_evolve(sp, t)
    assert_allclose(out.E[1, 1, 0, 0], np.cos(t * k) * amp, rtol=1e-14)
    # khat x (0, amp, 0) = (0, 0, amp) for khat = ex
    assert_allclose(out.B[2, 1, 0, 0], -1j * np.sin(t * k) * amp, rtol=1e-14)
    assert abs(out.B[0, 1, 0, 0]) + abs(out.B[1, 1, 0, 0]) == 0.0
    # the state stays real in physical space
    assert np.isrealobj(out.to_physical().E)


def test_energy_isometry_and_parseval(rng):
    # the mode map is a rotation on the divergence-free subspace, where all
    # constrained Maxwell data lives (longitudinal parts are static charge
    # hair, not radiation)
    sp = divergence_free_grid(rng)
    e_phys = sp.to_physical().l2_norms()
    assert_allclose(sp.l2_norms(), e_phys, rtol=1e-12)
    out = spectral_evolve(sp, 3.7)
    # E and B trade energy mode-wise; the invariant is the joint norm
    assert_allclose(np.hypot(*out.l2_norms()), np.hypot(*e_phys), rtol=1e-12)


def test_group_law_and_time_reversal(rng):
    sp = divergence_free_grid(rng)
    two = spectral_evolve(spectral_evolve(sp, 1.3), 2.1)
    one = spectral_evolve(sp, 3.4)
    scale = np.abs(sp.E).max()
    assert np.max(np.abs(one.E - two.E)) < 1e-12 * scale
    assert np.max(np.abs(one.B - two.B)) < 1e-12 * scale
    back = spectral_evolve(spectral_evolve(sp, 2.5), -2.5)
    assert np.max(np.abs(back.E - sp.E)) < 1e-12 * scale
    assert np.max(np.abs(back.B - sp.B)) < 1e-12 * scale


def test_field_momentum_conserved_by_free_flow(rng):
    g = divergence_free_grid(rng)
    before = g.field_momentum()
    after = spectral_evolve(g, 2.2).field_momentum()
    assert np.max(np.abs(after - before)) < 1e-12 * max(1.0, np.abs(before).max())


def test_kirchhoff_constant_data():
    c = np.array([0.3, -1.1, 0.4])
    E0 = lambda pts: np.broadcast_to(c, (len(pts), 3))
    B0 = lambda pts: np.zeros((len(pts), 3))
    zero_grad = lambda pts: np.zeros((len(pts), 3, 3))
    E, B = kirchhoff_eval(E0, B0, (zero_grad, zero_grad),
                          np.array([0.5, 0.0, -2.0]), 3.0)
    assert_allclose(E, c, rtol=1e-14)
    assert_allclose(B, 0.0, atol=1e-16)


def test_kirchhoff_strong_huygens():
    # data supported in B(center, width): the sphere |y-x| = t misses the
    # support for t < |x - center| - width, so the value is exactly zero
    pulse = PulseSpec(center=(0.0, 0.0, 0.0), width=1.0, amplitude=1.0,
                      polarization=(0.0, 0.0, 1.0))
    E0 = lambda pts: pulse.fields(pts)[0]
    B0 = lambda pts: pulse.fields(pts)[1]
    gE = lambda pts: pulse.field_gradients(pts)[0]
    gB = lambda pts: pulse.field_gradients(pts)[1]
    x = np.array([5.0, 0.0, 0.0])
    for t in (0.5, 2.0, 3.9):
        E, B = kirchhoff_eval(E0, B0, (gE, gB), x, t)
        assert np.all(E == 0.0) and np.all(B == 0.0)
    # and it is nonzero once the sphere cuts the support
    E, B = kirchhoff_eval(E0, B0, (gE, gB), x, 4.7)
    assert np.abs(E).max() > 0.0


def test_kirchhoff_matches_spectral_on_shared_data(rng):
    # grid-backed samplers: both routes propagate the same band-limited
    # data, isolating propagator error from data-resolution error
    pulse = PulseSpec(center=(-3.0, 0.0, 0.0), width=2.0, amplitude=0.05,
                      polarization=(0.0, 1.0, 0.0))
    L, N, t = 12.0, 32, 2.0
    g0 = pulse_on_grid(L, N, pulse)
    gt = spectral_evolve(g0.to_spectral(), t)
    E0, B0, gE, gB = grid_samplers(g0)
    scale = float(np.sqrt(np.sum(g0.to_physical().E**2, axis=0)).max())
    pts = rng.uniform(-4.0, 4.0, size=(2, 3))
    KE, KB = kirchhoff_eval(E0, B0, (gE, gB), pts, t)
    SE, SB = point_sample(gt, pts)
    assert np.abs(KE - SE).max() / scale < 5e-5
    assert np.abs(KB - SB).max() / scale < 5e-5


def test_constraint_residual_soliton_data(bump):
    g = soliton_on_grid(16.0, 48, bump, np.zeros(3), 1.0, np.zeros(3))
    divB, gauss = constraint_residual(g, (bump, 1.0, np.zeros(3)))
    norms = g.l2_norms()
    assert gauss < 1e-4 * norms[0]
    assert divB < 1e-12


def test_constraint_residual_divergence_free(rng):
    sp = divergence_free_grid(rng)
    divB, gauss = constraint_residual(sp)
    scale = max(sp.l2_norms())
    assert divB < 1e-12 * scale
    assert gauss < 1e-12 * scale
    # preserved by the free flow
    out = spectral_evolve(sp, 4.0)
    divB2, gauss2 = constraint_residual(out)
    assert abs(divB2 - divB) < 1e-12 * scale
    assert abs(gauss2 - gauss) < 1e-12 * scale


def test_point_sample_matches_lattice(rng):
    g = random_grid(rng, L=8.0, N=8)
    ax = g.axis()
    # trig interpolation is exact at lattice points
    idx = [(0, 0, 0), (3, 5, 1), (7, 2, 4)]
    pts = np.array([[ax[i], ax[j], ax[k]] for i, j, k in idx])
    E, B = point_sample(g, pts)
    for row, (i, j, k) in enumerate(idx):
        assert_allclose(E[row], g.E[:, i, j, k], rtol=1e-12)
        assert_allclose(B[row], g.B[:, i, j, k], rtol=1e-12)


def test_point_sample_gradients(rng):
    g = random_grid(rng, L=8.0, N=8)
    pts = rng.uniform(-3.0, 3.0, size=(3, 3))
    E, B, dE, dB = point_sample(g, pts, gradients=True)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (point_sample(g, pts + e)[0] - point_sample(g, pts - e)[0]) / (2 * h)
        assert np.abs(dE[:, :, j] - fd).max() < 1e-5 * np.abs(dE).max()


def test_snapshot_roundtrip_bit_exact(rng, tmp_path):
    g = random_grid(rng, L=9.5, N=12)
    g = FieldGrid(g.L, g.N, g.E, g.B, "physical", 1.75)
    path = tmp_path / "state.fgrid"
    save_snapshot(g, path)
    back = load_snapshot(path)
    assert back.L == g.L and back.N == g.N and back.time == g.time
    assert_array_equal(back.E, g.E)
    assert_array_equal(back.B, g.B)
