import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dirac_rls.errors import BoxEscapeError, ValidationError
from dirac_rls.grid import GridSpec, SpinorField, forward
from dirac_rls.potential import PotentialSpec
from dirac_rls.dynamics import (PropagationConfig, Propagator, WavePacketSpec, boundary_fraction,
                                free_propagate, full_propagate, make_packet, packet_amplitude,
                                s_operator, shell_overlap, theta, wave_operator_estimate)

GRID = GridSpec(32, 1.0)
PKT = WavePacketSpec((0, 0, 1.118), 0.2)
SPEC = PotentialSpec.gaussian(0.05)


@pytest.fixture(scope="module")
def psi():
    return make_packet(PKT, GRID, 1.0)


def test_packet_is_unit_norm_and_positive_energy(psi):
    assert psi.norm() == pytest.approx(1.0, abs=1e-14)
    # positive-energy packet: <H0> > m
    from dirac_rls.solver import dirac_operator
    e = psi.inner(SpinorField(dirac_operator(psi.samples, GRID, PotentialSpec.zero(), 1.0), GRID))
    assert e.real > 1.0 and abs(e.imag) < 1e-12


def test_packet_validation():
    with pytest.raises(ValidationError):
        WavePacketSpec((0, 0, 0.5), 0.2)
    with pytest.raises(ValidationError):
        WavePacketSpec((0, 0, 1.0), -0.1)
    with pytest.raises(ValidationError):
        PropagationConfig(dt=0.0)
    with pytest.raises(ValidationError):
        PropagationConfig(order=3)


def test_packet_window_is_annular():
    # window is 1 within 4 sigma_p of the shell |p| = |p0| and 0 beyond 6 sigma_p
    p0 = 1.118
    q = np.array([[0, 0, p0], [0, p0 + 0.7, 0], [p0 + 1.0, 0, 0], [0, 0, p0 + 1.21]])
    a = np.abs(packet_amplitude(PKT, q) / np.exp(-np.sum((q - [0, 0, p0]) ** 2, -1) / 0.16))
    assert a[0] == pytest.approx(1.0) and a[1] == pytest.approx(1.0)
    assert 0 < a[2] < 1 and a[3] == 0


@given(st.floats(-30, 30))
@settings(max_examples=10)
def test_free_propagation_is_unitary(t):
    u = free_propagate(make_packet(PKT, GRID, 1.0), t, 1.0)
    assert abs(u.norm() - 1.0) < 1e-12


def test_free_group_law(psi):
    a = free_propagate(free_propagate(psi, 2.0, 1.0), 3.0, 1.0)
    b = free_propagate(psi, 5.0, 1.0)
    assert np.abs(a.samples - b.samples).max() < 1e-13
    back = free_propagate(b, -5.0, 1.0)
    assert np.abs(back.samples - psi.samples).max() < 1e-13


def test_free_propagation_phase_of_momentum_eigenstates(psi):
    # in momentum space each positive-energy component picks up e^{-iEt}
    t = 1.7
    q = GRID.momenta()
    E = np.sqrt(1 + np.sum(q * q, axis=-1))
    a, b = forward(psi.samples, GRID), forward(free_propagate(psi, t, 1.0).samples, GRID)
    assert np.allclose(b, np.exp(-1j * E * t)[..., None] * a, atol=1e-12)


def test_strang_splitting_is_second_order(psi):
    cfg = lambda dt: PropagationConfig(dt, 1.0, grid=GRID)
    spec = PotentialSpec.gaussian(0.5)
    ref = full_propagate(psi, 1.0, cfg(0.0025), spec, 1.0)
    e1 = (full_propagate(psi, 1.0, cfg(0.04), spec, 1.0) - ref).norm()
    e2 = (full_propagate(psi, 1.0, cfg(0.02), spec, 1.0) - ref).norm()
    assert 3.5 < e1 / e2 < 4.5


def test_lie_splitting_is_first_order(psi):
    spec = PotentialSpec.gaussian(0.5)
    ref = full_propagate(psi, 1.0, PropagationConfig(0.0025, 1.0, grid=GRID), spec, 1.0)
    err = [(full_propagate(psi, 1.0, PropagationConfig(dt, 1.0, 1, GRID), spec, 1.0) - ref).norm()
           for dt in (0.04, 0.02)]
    assert 1.6 < err[0] / err[1] < 2.4


def test_full_propagation_unitary_and_reversible(psi):
    cfg = PropagationConfig(0.05, 2.0, grid=GRID)
    u = full_propagate(psi, 2.0, cfg, SPEC, 1.0)
    assert abs(u.norm() - 1.0) < 1e-12
    back = full_propagate(u, -2.0, cfg, SPEC, 1.0)
    assert (back - psi).norm() < 1e-12


def test_vector_potential_propagation_is_unitary(psi):
    from dirac_rls.potential import Profile
    spec = PotentialSpec(Profile("gaussian", 0.1), (Profile("gaussian", 0.2), Profile(),
                                                    Profile("gaussian", -0.1, 0.5)))
    u = full_propagate(psi, 1.0, PropagationConfig(0.05, 1.0, grid=GRID), spec, 1.0)
    assert abs(u.norm() - 1.0) < 1e-12


def test_large_step_warns():
    with pytest.warns(RuntimeWarning):
        Propagator(GRID, PotentialSpec.gaussian(20.0), 1.0, dt=0.1)


def test_theta_zero_potential_is_identity(psi):
    out = theta(3.0, psi, PropagationConfig(0.1, 3.0, grid=GRID), PotentialSpec.zero(), 1.0)
    assert np.array_equal(out.samples, psi.samples)


def test_boundary_fraction():
    u = np.zeros(GRID.shape + (4,))
    u[0, 5, 5, 0] = 1.0
    u[16, 16, 16, 1] = 1.0
    assert boundary_fraction(u, 4) == pytest.approx(0.5)


def test_box_escape_is_reported():
    cfg = PropagationConfig(0.1, 30.0, grid=GRID)
    with pytest.raises(BoxEscapeError):
        wave_operator_estimate(PKT, cfg, SPEC, 1.0, [10, 30])


FAST = WavePacketSpec((0, 0, 1.5), 0.3)
SMALL_BOX = GridSpec(32, 0.9)


def test_wave_operator_short_ladder():
    # the free packet only moves towards +z, so the box is shifted that way
    g = GridSpec(48, 0.9, origin=(-21.15, -21.15, -12.0))
    cfg = PropagationConfig(0.1, 8.0, grid=g, boundary_cells=2)
    est = wave_operator_estimate(FAST, cfg, PotentialSpec.gaussian(0.2), 1.0, [2.0, 4.0, 8.0])
    assert abs(est.norm_ratio - 1.0) < 1e-10
    d = est.cauchy_differences
    assert len(d) == 2 and d[1] < d[0]


def test_wave_operator_zero_potential():
    est = wave_operator_estimate(PKT, PropagationConfig(0.1, 8.0, grid=GRID), PotentialSpec.zero(),
                                 1.0, [2, 4])
    assert est.converged and est.cauchy_differences == [0.0]


def test_s_operator_conserves_norm_and_shell():
    cfg = PropagationConfig(0.05, 2.0, grid=SMALL_BOX, boundary_cells=2)
    res = s_operator(FAST, cfg, PotentialSpec.gaussian(0.2), 1.0)
    assert abs(res.norm_ratio - 1.0) < 1e-10
    assert shell_overlap(res.momentum, forward(res.psi.samples, SMALL_BOX), SMALL_BOX) > 0.999
    assert (res.field - res.psi).norm() > 1e-4
