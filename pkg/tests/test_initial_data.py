"""Initial data builders: pulse closed forms, grid assembly, modified fields."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from abraham.errors import InvalidParameterError
from abraham.initial_data import (ModifiedFields, PulseSpec, initial_grid,
                                  pulse_on_grid, soliton_on_grid)
from abraham.profiles import PhysicalConstants, make_profile
from abraham.propagator import constraint_residual
from abraham.soliton import SolitonField


def test_pulse_validation():
    with pytest.raises(InvalidParameterError):
        PulseSpec((0, 0, 0), -1.0, 1.0, (0, 0, 1))
    with pytest.raises(InvalidParameterError):
        PulseSpec((0, 0, 0), 1.0, 1.0, (0, 0, 0))


def test_pulse_support_and_divergence(rng):
    pulse = PulseSpec(center=(1.0, 0.0, 0.0), width=1.5, amplitude=0.3,
                      polarization=(0.0, 0.0, 1.0))
    far = rng.normal(size=(5, 3))
    far = pulse.center + 1.6 * far / np.linalg.norm(far, axis=1, keepdims=True)
    E, B = pulse.fields(far)
    assert np.all(E == 0.0) and np.all(B == 0.0)
    # curl-of-gradient structure: div E = 0 analytically
    inside = pulse.center + rng.uniform(-0.9, 0.9, size=(8, 3))
    gE, gB = pulse.field_gradients(inside)
    assert np.abs(np.trace(gE, axis1=1, axis2=2)).max() < 1e-12 * np.abs(gE).max()
    assert np.all(gB == 0.0)


def test_pulse_gradients_by_finite_difference(rng):
    pulse = PulseSpec(center=(0.0, 0.5, 0.0), width=2.0, amplitude=1.0,
                      polarization=(1.0, 1.0, 0.0))
    pts = rng.uniform(-1.2, 1.2, size=(6, 3))
    gE, _ = pulse.field_gradients(pts)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (pulse.fields(pts + e)[0] - pulse.fields(pts - e)[0]) / (2 * h)
        assert np.abs(gE[:, :, j] - fd).max() < 1e-6 * np.abs(gE).max()


def test_pulse_grid_matches_pointwise_fields(rng):
    # a pulse well inside the box: band-limited synthesis converges to the
    # closed form
    pulse = PulseSpec(center=(0.0, 0.0, 0.0), width=2.0, amplitude=0.1,
                      polarization=(0.0, 1.0, 0.0))
    g = pulse_on_grid(16.0, 64, pulse)
    pts = rng.uniform(-3.0, 3.0, size=(5, 3))
    from abraham.propagator import point_sample
    E, B = point_sample(g, pts)
    Ep, _ = pulse.fields(pts)
    scale = np.abs(g.to_physical().E).max()
    assert np.abs(E - Ep).max() < 1e-5 * scale
    assert np.abs(B).max() == 0.0


def test_pulse_l2_norm_against_grid(bump):
    pulse = PulseSpec(center=(2.0, -1.0, 0.5), width=1.5, amplitude=0.05,
                      polarization=(0.0, 0.0, 1.0))
    g = pulse_on_grid(18.0, 48, pulse)
    assert_allclose(g.l2_norms()[0], pulse.l2_norm(), rtol=1e-6)
    assert g.l2_norms()[1] == 0.0


def test_soliton_grid_matches_direct_samples(bump):
    v = np.array([0.3, 0.0, 0.0])
    g = soliton_on_grid(20.0, 64, bump, v, charge=1.0,
                        position=np.zeros(3)).to_physical()
    sol = SolitonField(bump, v)
    ax = g.axis()
    checks = [(i, j, k) for i, j, k in [(40, 32, 32), (32, 40, 36)]]
    pts = np.array([[ax[i], ax[j], ax[k]] for i, j, k in checks])
    pack = sol.fields(pts)
    scale = np.abs(g.E).max()
    for row, (i, j, k) in enumerate(checks):
        assert np.abs(g.E[:, i, j, k] - pack.E[row]).max() < 2e-4 * scale
        assert np.abs(g.B[:, i, j, k] - pack.B[row]).max() < 2e-4 * scale


def test_initial_grid_is_soliton_plus_pulse(bump):
    consts = PhysicalConstants(e=0.5, m=1.0)
    pulse = PulseSpec(center=(4.0, 0.0, 0.0), width=1.5, amplitude=0.1,
                      polarization=(0.0, 0.0, 1.0))
    v = np.array([0.2, 0.0, 0.0])
    both = initial_grid(16.0, 32, bump, consts, v, np.zeros(3), pulse)
    sol = soliton_on_grid(16.0, 32, bump, v, consts.e, np.zeros(3))
    pls = pulse_on_grid(16.0, 32, pulse)
    dE = both.to_physical().E - sol.to_physical().E - pls.to_physical().E
    assert np.abs(dE).max() < 1e-12 * np.abs(both.to_physical().E).max()
    # modified fields on the grid = the pulse: Pythagoras at the norm level
    assert_allclose(np.hypot(*pls.l2_norms()), pulse.l2_norm(), rtol=1e-6)


def test_modified_fields_pure_soliton_is_zero(bump, rng):
    mf = ModifiedFields.from_pulse(None, charge=1.0, position=np.zeros(3),
                                   velocity=np.array([0.3, 0.0, 0.0]),
                                   profile=bump)
    assert mf.is_zero()
    E, B = mf.values(rng.normal(size=(4, 3)))
    assert np.all(E == 0.0) and np.all(B == 0.0)


def test_modified_fields_decoupled_charge(bump, rng):
    # e = 0: the modified fields are exactly the pulse data
    pulse = PulseSpec(center=(3.0, 0.0, 0.0), width=1.0, amplitude=0.7,
                      polarization=(0.0, 1.0, 0.0))
    mf = ModifiedFields.from_pulse(pulse, charge=0.0, position=np.zeros(3),
                                   velocity=np.zeros(3), profile=bump)
    pts = rng.uniform(-5.0, 5.0, size=(10, 3))
    E, B = mf.values(pts)
    Ep, Bp = pulse.fields(pts)
    assert_allclose(E, Ep, rtol=1e-14)
    assert_allclose(B, Bp, rtol=1e-14)
    gE, gB = mf.gradients(pts)
    gEp, gBp = pulse.field_gradients(pts)
    assert_allclose(gE, gEp, rtol=1e-14)


def test_gauss_constraint_of_assembled_data(bump):
    consts = PhysicalConstants(e=0.8, m=1.0)
    pulse = PulseSpec(center=(4.0, 0.0, 0.0), width=1.5, amplitude=0.05,
                      polarization=(0.0, 0.0, 1.0))
    g = initial_grid(16.0, 48, bump, consts, np.zeros(3), np.zeros(3), pulse)
    divB, gauss = constraint_residual(g, (bump, consts.e, np.zeros(3)))
    scale = np.hypot(*g.l2_norms())
    assert divB < 1e-12 * scale
    assert gauss < 1e-6 * scale
