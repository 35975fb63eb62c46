import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dirac_rls.algebra import alpha_matrices
from dirac_rls.errors import NonHermitianError, ValidationError
from dirac_rls.grid import QuadratureSpec
from dirac_rls.potential import (PotentialSpec, Profile, TablePotential, decay_check, eval_v,
                                 factor_field, factorize_v, rolnik_norm, spectral_norm, v_norm)

entries = st.floats(-10, 10, allow_nan=False)
cmat = arrays(np.float64, (2, 4, 4), elements=entries)


def _hermitian(x):
    z = x[0] + 1j * x[1]
    return z + z.conj().T


@given(cmat)
def test_factorization_identities(x):
    V = _hermitian(x)
    fp = factorize_v(V)
    tol = 1e-12 * max(1.0, spectral_norm(V))
    assert np.linalg.norm(fp.v1 @ fp.w1 @ fp.v1 - V) < 10 * tol
    assert np.allclose(fp.w1 @ fp.w1, np.eye(4), atol=1e-12)
    assert abs(spectral_norm(fp.v1) ** 2 - spectral_norm(V)) < 10 * tol
    # both factors are Hermitian and commute with V
    assert np.allclose(fp.v1, fp.v1.conj().T, atol=1e-12 * max(1, spectral_norm(V)))
    assert np.allclose(fp.w1 @ V, V @ fp.w1, atol=1e-10 * max(1, spectral_norm(V)))


def test_factorization_vectorized_batch(rng):
    X = rng.normal(size=(500, 4, 4)) + 1j * rng.normal(size=(500, 4, 4))
    V = X + np.conj(np.swapaxes(X, -1, -2))
    fp = factorize_v(V)
    assert np.abs(fp.v1 @ fp.w1 @ fp.v1 - V).max() < 1e-12 * np.abs(V).max() * 10


def test_zero_eigenvalue_gets_positive_sign():
    fp = factorize_v(np.diag([4.0, -9.0, 0.0, 1.0]))
    assert np.allclose(np.diag(fp.w1), [1, -1, 1, 1])
    assert np.allclose(np.diag(fp.v1), [2, 3, 0, 1])


def test_zero_matrix():
    fp = factorize_v(np.zeros((4, 4)))
    assert not fp.v1.any()
    assert np.allclose(fp.w1, np.eye(4))


def test_non_hermitian_rejected():
    M = np.zeros((4, 4), dtype=complex)
    M[0, 1] = 1.0
    with pytest.raises(NonHermitianError):
        factorize_v(M)


def test_potential_matrix_structure():
    A = (Profile("gaussian", 0.3), Profile("constant", -0.2), Profile("zero"))
    spec = PotentialSpec(Profile("smoothed-yukawa", 1.0, 0.5, 0.2), A, e_charge=2.0)
    r = np.array([0.3, -1.0, 0.4])
    rho = np.linalg.norm(r)
    V = eval_v(r, spec)
    nu = np.exp(-0.5 * rho) / (rho + 0.2)
    a = [0.3 * np.exp(-rho ** 2), -0.2, 0.0]
    expect = -2.0 * nu * np.eye(4) + 2.0 * sum(ak * al for ak, al in zip(a, alpha_matrices()))
    assert np.allclose(V, expect)
    assert np.allclose(V, V.conj().T)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_closed_form_norm(g, a1, a2, e):
    A = tuple(Profile("constant", x) for x in (a1, a2, 0.5))
    spec = PotentialSpec(Profile("constant", g), A, e_charge=e)
    r = np.array([[0.1, 0.2, 0.3]])
    assert v_norm(r, spec) == pytest.approx(spectral_norm(eval_v(r, spec)), abs=1e-12)


def test_profile_validation():
    with pytest.raises(ValidationError):
        Profile("coulomb", 1.0)
    with pytest.raises(ValidationError):
        Profile("smoothed-yukawa", 1.0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        PotentialSpec(Profile(), (Profile(),))


def test_zero_and_scaled():
    assert PotentialSpec.zero().is_zero
    assert PotentialSpec.gaussian(0.0).is_zero
    s = PotentialSpec.gaussian(0.1).scaled(3.0)
    assert s.nu.g == pytest.approx(0.3)
    assert s.is_scalar_gaussian


def test_factor_field_shape():
    pts = np.zeros((3, 5, 3))
    fp = factor_field(pts, PotentialSpec.gaussian(0.5))  # V = -e nu < 0 at r = 0
    assert fp.v1.shape == (3, 5, 4, 4)
    assert np.allclose(fp.w1, -np.eye(4))


def _write_table(path, pts, nu, A):
    rows = np.column_stack([pts, nu, A])
    np.savetxt(path, rows, delimiter=",", header="r1,r2,r3,nu,A1,A2,A3", comments="")


def test_regular_table_interpolates_linear_fields(tmp_path):
    ax = np.linspace(-2, 2, 5)
    P = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    nu = 1.0 + P[:, 0] - 0.5 * P[:, 2]
    A = np.column_stack([P[:, 1], np.zeros(len(P)), 2 * P[:, 0]])
    f = tmp_path / "v.csv"
    _write_table(f, P, nu, A)
    spec = PotentialSpec(table=TablePotential.from_csv(f))
    r = np.array([[0.3, -0.7, 1.1]])
    n, a = spec.fields(r)
    assert n[0] == pytest.approx(1.0 + 0.3 - 0.55)
    assert np.allclose(a[0], [-0.7, 0.0, 0.6])
    n_out, _ = spec.fields(np.array([[5.0, 0, 0]]))
    assert n_out[0] == 0.0
    assert spec.table.half_extent == pytest.approx(2.0)


def test_scattered_table_nearest(tmp_path):
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    f = tmp_path / "s.csv"
    _write_table(f, P, [1.0, 2.0, 3.0], np.zeros((3, 3)))
    spec = PotentialSpec(table=TablePotential.from_csv(f))
    n, _ = spec.fields(np.array([[0.9, 0.1, 0.0], [30.0, 0, 0]]))
    assert n[0] == 2.0 and n[1] == 0.0


def test_table_bad_columns(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1,2,3\n4,5,6\n")
    with pytest.raises(ValidationError):
        TablePotential.from_csv(f)


def test_rolnik_scales_quadratically():
    q = QuadratureSpec(12.0, 16)
    a = rolnik_norm(PotentialSpec.gaussian(1.0), q, levels=2, max_points=32)
    b = rolnik_norm(PotentialSpec.gaussian(2.0), q, levels=2, max_points=32)
    assert b.value == pytest.approx(4 * a.value, rel=1e-10)


def test_rolnik_gaussian_oracle():
    # for nu = exp(-r^2) the double integral is exactly pi^3
    est = rolnik_norm(PotentialSpec.gaussian(1.0))
    assert est.value == pytest.approx(np.pi ** 3, rel=0.05)
    assert est.converged


def test_decay_check_gaussian_is_super_polynomial():
    rep = decay_check(PotentialSpec.gaussian(1.0))
    assert rep.condition_4_18["super_polynomial"]
    assert rep.condition_4_18["flag"]
    assert rep.condition_4_3["converged"]
    assert rep.sup_norm == pytest.approx(1.0, rel=1e-3)
    assert rep.l1_norm_estimate == pytest.approx(np.pi ** 1.5, rel=1e-2)
