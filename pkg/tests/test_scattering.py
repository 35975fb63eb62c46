import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dirac_rls.errors import SpecMismatchError, ValidationError
from dirac_rls.grid import GridSpec
from dirac_rls.potential import PotentialSpec, Profile
from dirac_rls.scattering import (DirectionSet, amplitude, born_amplitude_oracle,
                                  born_quadrature, far_field_check)
from dirac_rls.solver import ScatterChannel, incident_wave, recover_phi, solve_modified

CH = ScatterChannel.from_energy(1.5, (0, 0, 1), 1.0)


@pytest.mark.parametrize("dirs", [DirectionSet.lebedev(17), DirectionSet.latlong(8, 16),
                                  DirectionSet.fibonacci(20)])
def test_direction_weights_cover_sphere(dirs):
    assert dirs.weights.sum() == pytest.approx(4 * np.pi)
    assert np.allclose(np.linalg.norm(dirs.omega, axis=1), 1.0)


def test_lebedev_integrates_low_degree_polynomials():
    d = DirectionSet.lebedev(17)
    z2 = d.weights @ d.omega[:, 2] ** 2
    assert z2 == pytest.approx(4 * np.pi / 3, rel=1e-12)


def test_directions_must_be_unit():
    with pytest.raises(ValidationError):
        DirectionSet(np.array([[0, 0, 2.0]]), np.array([1.0]))


def test_zero_potential_has_zero_amplitude():
    g = GridSpec(8, 0.5)
    res = amplitude(incident_wave(CH, g), CH, PotentialSpec.zero(), dirs=DirectionSet.fibonacci(5))
    assert not res.amplitudes.any()


@given(st.floats(0.2, 3.0), st.floats(-1, 1), st.floats(-1, 1))
def test_born_oracle_is_linear_in_coupling(g, x, y):
    om = np.array([x, y, 1.0])
    a = born_amplitude_oracle(PotentialSpec.gaussian(g), CH, omega=om)
    b = born_amplitude_oracle(PotentialSpec.gaussian(1.0), CH, omega=om)
    assert np.allclose(a, g * b)


def test_born_quadrature_matches_oracle():
    grid = GridSpec(16, 0.5)
    spec = PotentialSpec.gaussian(1.0)
    for om in DirectionSet.fibonacci(6).omega:
        q = born_quadrature(spec, CH, grid, omega=om)[0]
        o = born_amplitude_oracle(spec, CH, omega=om)
        assert np.linalg.norm(q - o) < 1e-4 * np.linalg.norm(o)


def test_born_oracle_needs_scalar_gaussian():
    spec = PotentialSpec(Profile("smoothed-yukawa", 1.0))
    with pytest.raises(SpecMismatchError):
        born_amplitude_oracle(spec, CH, omega=[0, 0, 1.0])


def test_forward_outgoing_spinor_structure():
    # on the energy shell lambda + H0(kappa w) = 2 lambda x projector onto the outgoing spinor
    om = np.array([[0.0, 0.0, 1.0]])
    f = born_amplitude_oracle(PotentialSpec.gaussian(1.0), CH, omega=om)
    f_literal = born_amplitude_oracle(PotentialSpec.gaussian(1.0), CH, omega=om, projector=False)
    assert np.allclose(f, 2 * f_literal)


@pytest.fixture(scope="module")
def small_solution():
    grid = GridSpec(8, 0.5)
    spec = PotentialSpec.gaussian(0.05)
    psi, _ = solve_modified(CH, grid, spec)
    phi = recover_phi(psi, CH, grid, spec)
    return grid, spec, psi, phi


def test_far_field_form(small_solution):
    grid, spec, psi, phi = small_solution
    res = amplitude(phi, CH, spec, dirs=DirectionSet.fibonacci(6))
    ff = far_field_check(psi, res, spec, [20, 40, 80])
    assert ff.decreasing
    assert ff.fit_deviation.max() < 0.05


def test_result_serialization(small_solution, tmp_path):
    grid, spec, psi, phi = small_solution
    res = amplitude(phi, CH, spec, dirs=DirectionSet.latlong(4, 8))
    res.write_json(tmp_path / "a.json")
    res.write_csv(tmp_path / "a.csv")
    data = json.loads((tmp_path / "a.json").read_text())
    assert len(data["directions"]) == 32
    rows = (tmp_path / "a.csv").read_text().strip().splitlines()
    assert rows[0] == "theta,phi,strength" and len(rows) == 33
    assert res.integrated_strength() > 0
