"""Nystrom solution of the symmetrized scattering equation.

With V = V1 W1 V1 and psi = V1 phi the unknown solves

    psi + P sum_s h^3 V1(r) B(r - s) V1(s) W1(s) psi(s) = V1(r) e^{ik.r} g_n(k),

P = (2 pi)^{-3/2}.  Unknowns are ordered point-major, spinor-minor: entry
4 i + a is component a at grid point i, with points in C order of
``GridSpec.points()``.  The diagonal kernel block uses the ball average of B
over a cell-sized ball (see ``kernels.LatticeKernel``); the dense and the FFT
(Born) paths use identical samples and therefore agree to solver tolerance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from .algebra import MassCharge, _mass, channel_sign, eigen_h0, h0
from .errors import (ConvergenceError, MemoryBudgetError, SingularSystemError, ThresholdError,
                     ValidationError)
from .grid import GridSpec, SpinorField, apply_symbol
from .kernels import RESOLVENT_PREFACTOR, LatticeKernel, b_radial, kappa, radial_to_matrix
from .potential import PotentialSpec, eval_v, factor_field

DEFAULT_MAX_POINTS = 12 ** 3
THRESHOLD_MARGIN = 1e-3      # |lambda| - m must exceed this fraction of m
SINGULAR_RELATIVE = 1e-6     # sigma_min < this * ||I + P B|| flags an exceptional value


@dataclass(frozen=True)
class ScatterChannel:
    """Incident momentum k, channel n (1..4) and branch; lambda follows from the channel sign."""

    k: tuple
    n: int = 3
    mc: object = 1.0
    branch: str = "+"

    def __post_init__(self):
        k = tuple(float(x) for x in np.asarray(self.k, dtype=float).reshape(3))
        if not np.all(np.isfinite(k)):
            raise ValidationError("incident momentum must be finite", module="rls_solver")
        object.__setattr__(self, "k", k)
        channel_sign(self.n)
        if self.branch not in ("+", "-"):
            raise ValidationError(f"branch must be '+' or '-', got {self.branch!r}",
                                  module="rls_solver")

    @property
    def m(self) -> float:
        return _mass(self.mc)

    @property
    def lam(self) -> float:
        return channel_sign(self.n) * float(np.sqrt(self.m ** 2 + np.dot(self.k, self.k)))

    @property
    def m1(self) -> float:
        return float(np.linalg.norm(self.k))

    @property
    def kappa(self) -> complex:
        """Wavenumber of the outgoing (branch +) or incoming (branch -) spherical wave."""
        return kappa(self.lam, self.m, self.branch)

    def check_scattering_energy(self):
        if abs(self.lam) - self.m < THRESHOLD_MARGIN * self.m:
            raise ThresholdError(
                f"|lambda| = {abs(self.lam):.6g} is within {THRESHOLD_MARGIN:g} m of the threshold",
                module="rls_solver")

    @classmethod
    def from_energy(cls, lam: float, direction=(0.0, 0.0, 1.0), mc=1.0, branch="+",
                    n: int = None) -> "ScatterChannel":
        m = _mass(mc)
        if abs(lam) <= m:
            raise ThresholdError(f"lambda = {lam} is not in the continuous spectrum",
                                 module="rls_solver")
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        if n is None:
            n = 3 if lam > 0 else 1
        if channel_sign(n) != np.sign(lam):
            raise ValidationError(f"channel {n} does not carry energies of sign {np.sign(lam)}",
                                  module="rls_solver")
        return cls(tuple(np.sqrt(lam * lam - m * m) * d), n, mc, branch)

    def to_dict(self):
        return {"k": list(self.k), "n": self.n, "lambda": self.lam, "branch": self.branch,
                "m": self.m}


def incident_wave(ch: ScatterChannel, grid: GridSpec, mc=None) -> SpinorField:
    """e^{i k.r} g_n(k) with g_n in its unnormalized explicit form."""
    g = eigen_h0(np.asarray(ch.k), ch.mc if mc is None else mc).g[ch.n - 1]
    phase = np.exp(1j * (grid.points() @ np.asarray(ch.k)))
    return SpinorField(phase[..., None] * g, grid)


def _matvec4(M, v):
    return np.einsum("...ij,...j->...i", M, v)


# ---------------------------------------------------------------- assembly

@dataclass
class DiscretizedOperator:
    """Dense matrix of the integral operator (without the prefactor P) on ``grid``."""

    matrix: np.ndarray
    grid: GridSpec
    lam: float
    branch: str
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def system(self) -> np.ndarray:
        """I + P B as a new array."""
        A = RESOLVENT_PREFACTOR * self.matrix
        A[np.diag_indices_from(A)] += 1.0
        return A


@dataclass
class SolveReport:
    residual: float
    sigma_min: float
    iterations: int
    wall_time: float
    grid: dict
    method: str
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {"residual": self.residual, "sigma_min": self.sigma_min,
             "iterations": self.iterations, "wall_time": self.wall_time,
             "grid": self.grid, "method": self.method}
        d.update(self.extra)
        return d


def _check_budget(grid: GridSpec, max_points: int):
    if grid.size > max_points:
        gb = (4 * grid.size) ** 2 * 16 / 1e9
        raise MemoryBudgetError(
            f"{grid.size} points need a {4 * grid.size}^2 dense matrix ({gb:.1f} GB); "
            f"the cap is {max_points} points")


def _factors(grid: GridSpec, spec: PotentialSpec):
    fp = factor_field(grid.points().reshape(-1, 3), spec)
    return fp.v1, fp.v1 @ fp.w1


def assemble_operator(ch: ScatterChannel, grid: GridSpec, spec: PotentialSpec, mc=None,
                      terms=(1, 2, 3), max_points: int = DEFAULT_MAX_POINTS,
                      chunk: int = 96) -> DiscretizedOperator:
    """Block (r, s) = h^3 V1(r) B(r - s) V1(s) W1(s); the r = s block uses the ball-averaged kernel.

    ``terms`` selects the kernel pieces lambda J (1), Q (2) and lambda^2 Q*J (3).
    """
    mc = ch.mc if mc is None else mc
    ch.check_scattering_energy()
    _check_budget(grid, max_points)
    N = grid.size
    K = np.zeros((4 * N, 4 * N), dtype=complex)
    meta = {"terms": list(terms), "diagonal": "ball average of B over a cell-volume ball",
            "ordering": "point-major, spinor-minor"}
    if spec.is_zero:
        return DiscretizedOperator(K, grid, ch.lam, ch.branch, meta)
    V1, VW = _factors(grid, spec)
    lk = LatticeKernel(grid.n, grid.h, ch.lam, ch.branch, mc, terms=terms)
    idx = np.indices(grid.shape).reshape(3, -1).T
    K4 = K.reshape(N, 4, N, 4)
    for i0 in range(0, N, chunk):
        i1 = min(N, i0 + chunk)
        blocks = lk.blocks(idx[i0:i1, None, :] - idx[None, :, :])
        blocks = V1[i0:i1, None] @ (blocks @ VW[None])
        K4[i0:i1] = blocks.transpose(0, 2, 1, 3)
    return DiscretizedOperator(K, grid, ch.lam, ch.branch, meta)


def term_norms(ch: ScatterChannel, grid: GridSpec, spec: PotentialSpec, mc=None, **kw) -> dict:
    """Frobenius norms of the three separately assembled kernel terms and of their sum."""
    out, total = {}, None
    for t in (1, 2, 3):
        K = assemble_operator(ch, grid, spec, mc, terms=(t,), **kw).matrix
        out[t] = float(np.linalg.norm(K))
        total = K if total is None else total + K
    out["sum"] = float(np.linalg.norm(total))
    return out


# ---------------------------------------------------------------- matrix-free operator

class BornOperator:
    """psi -> P V1 sum_s h^3 B(r - s) V1(s) W1(s) psi(s) via zero-padded FFTs."""

    def __init__(self, ch: ScatterChannel, grid: GridSpec, spec: PotentialSpec, mc=None,
                 terms=(1, 2, 3)):
        mc = ch.mc if mc is None else mc
        self.grid = grid
        self.zero = spec.is_zero
        shape = grid.shape + (4, 4)
        if not self.zero:
            V1, VW = _factors(grid, spec)
            self.V1, self.VW = V1.reshape(shape), VW.reshape(shape)
            self.kernel = LatticeKernel(grid.n, grid.h, ch.lam, ch.branch, mc, terms=terms)

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        if self.zero:
            return np.zeros_like(psi)
        u = _matvec4(self.VW, psi)
        return RESOLVENT_PREFACTOR * _matvec4(self.V1, self.kernel.convolve(u))

    def source(self, field_: np.ndarray) -> np.ndarray:
        """sum_s h^3 B(r - s) V1(s) W1(s) psi(s) without the left V1 (used by recover_phi)."""
        if self.zero:
            return np.zeros_like(field_)
        return self.kernel.convolve(_matvec4(self.VW, field_))


# ---------------------------------------------------------------- singular values

def _sigma_extremes(lu_piv, A_matvec, A_rmatvec, n: int, tol: float = 1e-10):
    """(sigma_min, sigma_max) of A from its LU factors and products."""
    inv = LinearOperator((n, n), dtype=complex,
                         matvec=lambda x: linalg.lu_solve(lu_piv, linalg.lu_solve(lu_piv, x, trans=2)))
    fwd = LinearOperator((n, n), dtype=complex, matvec=lambda x: A_rmatvec(A_matvec(x)))
    if n <= 8:
        raise ValidationError("system too small for the iterative estimate", module="rls_solver")
    # fixed start vector: ARPACK otherwise draws a random one and reruns differ in the last bits
    v0 = np.random.default_rng(0).normal(size=n) + 0j
    lmax_inv = eigsh(inv, k=1, which="LM", tol=tol, v0=v0, return_eigenvectors=False)[0]
    lmax = eigsh(fwd, k=1, which="LM", tol=tol, v0=v0, return_eigenvectors=False)[0]
    return 1.0 / np.sqrt(abs(lmax_inv)), np.sqrt(abs(lmax))


def _factor_system(op: DiscretizedOperator):
    A = op.system()
    lu_piv = linalg.lu_factor(A, overwrite_a=True, check_finite=False)
    return lu_piv


def sigma_min(op: DiscretizedOperator, return_max: bool = False):
    """Smallest singular value of I + P B (and optionally the largest)."""
    if not np.any(op.matrix):
        return (1.0, 1.0) if return_max else 1.0
    K = op.matrix
    P = RESOLVENT_PREFACTOR
    lu_piv = _factor_system(op)
    smin, smax = _sigma_extremes(lu_piv, lambda x: x + P * (K @ x),
                                 lambda y: y + P * (K.conj().T @ y), op.size)
    return (smin, smax) if return_max else smin


# ---------------------------------------------------------------- solves

def solve_modified(ch: ScatterChannel, grid: GridSpec, spec: PotentialSpec, mc=None,
                   method: str = "direct", tol: float = 1e-10, max_iter: int = 200,
                   max_points: int = DEFAULT_MAX_POINTS, estimate_sigma: bool = True,
                   operator: DiscretizedOperator = None):
    """Solve for psi = V1 phi.  Returns (psi, SolveReport).

    ``direct`` factors the dense system (LU with partial pivoting) and raises
    ``SingularSystemError`` when sigma_min < 1e-6 ||I + P B||.  ``born``
    iterates psi <- V1 u_in - P B psi with FFT products and raises
    ``ConvergenceError`` after ``max_iter`` sweeps.
    """
    mc = ch.mc if mc is None else mc
    t0 = time.perf_counter()
    ch.check_scattering_energy()
    rhs = _matvec4(factor_field(grid.points(), spec).v1, incident_wave(ch, grid, mc).samples)
    if spec.is_zero:
        rep = SolveReport(0.0, 1.0, 0, time.perf_counter() - t0, grid.to_dict(), method)
        return SpinorField.zeros(grid), rep
    if method == "direct":
        op = operator if operator is not None else assemble_operator(
            ch, grid, spec, mc, max_points=max_points)
        K = op.matrix
        P = RESOLVENT_PREFACTOR
        b = rhs.reshape(-1)
        lu_piv = _factor_system(op)
        x = linalg.lu_solve(lu_piv, b, check_finite=False)
        res = float(np.linalg.norm(x + P * (K @ x) - b) / max(np.linalg.norm(b), 1e-300))
        smin, smax = np.nan, np.nan
        if estimate_sigma:
            smin, smax = _sigma_extremes(lu_piv, lambda v: v + P * (K @ v),
                                         lambda y: y + P * (K.conj().T @ y), op.size)
            if smin < SINGULAR_RELATIVE * smax:
                raise SingularSystemError(
                    f"sigma_min = {smin:.3e} at lambda = {ch.lam}: exceptional value candidate")
        psi = x.reshape(grid.shape + (4,))
        rep = SolveReport(res, float(smin), 1, time.perf_counter() - t0, grid.to_dict(), method,
                          {"sigma_max": float(smax), "lambda": ch.lam})
        return SpinorField(psi, grid), rep
    if method == "born":
        B = BornOperator(ch, grid, spec, mc)
        psi = rhs.copy()
        nb = np.linalg.norm(rhs)
        for it in range(1, max_iter + 1):
            new = rhs - B(psi)
            step = np.linalg.norm(new - psi) / max(np.linalg.norm(new), 1e-300)
            psi = new
            if step < tol:
                break
        else:
            raise ConvergenceError(f"Born iteration did not reach {tol:g} in {max_iter} sweeps "
                                   f"(last change {step:.2e})")
        res = float(np.linalg.norm(psi + B(psi) - rhs) / max(nb, 1e-300))
        rep = SolveReport(res, float("nan"), it, time.perf_counter() - t0, grid.to_dict(), method,
                          {"lambda": ch.lam})
        return SpinorField(psi, grid), rep
    raise ValidationError(f"unknown method {method!r}", module="rls_solver")


def _offgrid_kernel(lk: LatticeKernel, disp: np.ndarray) -> np.ndarray:
    """h^3 B at arbitrary displacements (..., 3); zero displacement uses the centre weight."""
    rho = np.sqrt(np.sum(disp * disp, axis=-1))
    flat = rho.reshape(-1)
    at0 = flat < 1e-12 * lk.h
    bI = np.empty(flat.shape, complex)
    bB = np.empty(flat.shape, complex)
    bA = np.empty(flat.shape, complex)
    if np.any(~at0):
        bI[~at0], bB[~at0], bA[~at0] = b_radial(flat[~at0], lk.z, lk.kappa, lk.m, lk.terms)
    bI[at0], bB[at0], bA[at0] = lk.table[0]
    rhat = disp / np.where(rho > 0, rho, 1.0)[..., None]
    return lk.h ** 3 * radial_to_matrix(bI.reshape(rho.shape), bB.reshape(rho.shape),
                                        bA.reshape(rho.shape), rhat)


def recover_phi(psi: SpinorField, ch: ScatterChannel, grid: GridSpec, spec: PotentialSpec,
                mc=None, points=None):
    """phi = e^{ik.r} g_n - P sum_s h^3 B(r - s) V1(s) W1(s) psi(s).

    Without ``points`` the result is a SpinorField on ``grid``.  With
    ``points`` of shape (M, 3) the kernel is evaluated directly at r - s and a
    (M, 4) array is returned; this is how far-field samples are taken.
    """
    mc = ch.mc if mc is None else mc
    g_n = eigen_h0(np.asarray(ch.k), mc).g[ch.n - 1]
    if points is None:
        inc = incident_wave(ch, grid, mc)
        if spec.is_zero:
            return inc
        B = BornOperator(ch, grid, spec, mc)
        return SpinorField(inc.samples - RESOLVENT_PREFACTOR * B.source(psi.samples), grid)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    inc = np.exp(1j * (pts @ np.asarray(ch.k)))[:, None] * g_n
    if spec.is_zero:
        return inc
    fp = factor_field(grid.points().reshape(-1, 3), spec)
    u = _matvec4(fp.v1 @ fp.w1, psi.samples.reshape(-1, 4))
    lk = LatticeKernel(grid.n, grid.h, ch.lam, ch.branch, mc)
    src = grid.points().reshape(-1, 3)
    out = np.empty((len(pts), 4), dtype=complex)
    for i, r in enumerate(pts):
        Kr = _offgrid_kernel(lk, r[None, :] - src)
        out[i] = inc[i] - RESOLVENT_PREFACTOR * np.einsum("sij,sj->i", Kr, u)
    return out


# ---------------------------------------------------------------- scans

def sigma_min_scan(lambda_grid, grid: GridSpec, spec: PotentialSpec, mc=1.0, branch: str = "+",
                   direction=(0.0, 0.0, 1.0), max_points: int = DEFAULT_MAX_POINTS):
    """[(lambda, sigma_min of I + P B(lambda))] over ``lambda_grid``.

    The operator does not depend on the incident direction; ``direction`` only
    fixes the ScatterChannel used to carry lambda.
    """
    out = []
    for lam in lambda_grid:
        ch = ScatterChannel.from_energy(float(lam), direction, mc, branch)
        ch.check_scattering_energy()
        if spec.is_zero:
            out.append((float(lam), 1.0))
            continue
        op = assemble_operator(ch, grid, spec, mc, max_points=max_points)
        out.append((float(lam), float(sigma_min(op))))
    return out


def coupling_ramp(lambda_grid, couplings, grid: GridSpec, spec: PotentialSpec, mc=1.0,
                  branch: str = "+", **kw):
    """min over lambda of sigma_min for spec scaled by each coupling; also the full tables."""
    tables = {float(c): sigma_min_scan(lambda_grid, grid, spec.scaled(c), mc, branch, **kw)
              for c in couplings}
    minima = {c: min(s for _, s in t) for c, t in tables.items()}
    return minima, tables


# ---------------------------------------------------------------- weak residual

def dirac_operator(field_: np.ndarray, grid: GridSpec, spec: PotentialSpec, mc) -> np.ndarray:
    """L u = (m beta + alpha.p) u + V u with the free part applied spectrally."""
    out = apply_symbol(field_, h0(grid.momenta(), mc))
    if not spec.is_zero:
        out = out + _matvec4(eval_v(grid.points(), spec), field_)
    return out


def smooth_testers(grid: GridSpec, count: int = 10, seed: int = 0, width: float = None,
                   margin: float = 0.25):
    """Gaussian bumps times plane waves with random spinors, centred well inside the grid.

    Centres keep a distance ``margin * L`` from every face, so with the default
    width L/16 each bump is below e^{-8} of its peak on the faces.  Narrower
    bumps lose spectral accuracy faster than they gain on the faces.
    """
    rng = np.random.default_rng(seed)
    L = grid.length
    width = width or L / 16.0
    lo = np.asarray(grid.origin) + margin * L
    hi = np.asarray(grid.origin) + (1 - margin) * L - grid.h
    pts = grid.points()
    out = []
    for _ in range(count):
        c = rng.uniform(lo, hi)
        p = rng.normal(size=3) * 0.5
        s = rng.normal(size=4) + 1j * rng.normal(size=4)
        env = np.exp(-np.sum((pts - c) ** 2, axis=-1) / (2 * width ** 2) + 1j * (pts @ p))
        out.append(SpinorField(env[..., None] * s, grid))
    return out


def weak_residual(phi: SpinorField, ch: ScatterChannel, spec: PotentialSpec, mc=None,
                  testers=None) -> float:
    """max_f |<phi, (L - lambda) f>| / (||phi|| ||f||) over the testers."""
    mc = ch.mc if mc is None else mc
    grid = phi.grid
    testers = testers if testers is not None else smooth_testers(grid)
    nphi = phi.norm()
    if nphi == 0:
        return 0.0
    worst = 0.0
    for f in testers:
        Lf = dirac_operator(f.samples, grid, spec, mc) - ch.lam * f.samples
        val = abs(grid.cell_volume * np.vdot(phi.samples, Lf)) / (nphi * f.norm())
        worst = max(worst, val)
    return float(worst)


def random_control(grid: GridSpec, like: SpinorField, seed: int = 1, qmax: float = None):
    """Smooth random field with the norm of ``like`` (band-limited to |q| < qmax)."""
    rng = np.random.default_rng(seed)
    q = grid.momenta()
    qmax = qmax or 2.0
    noise = rng.normal(size=grid.shape + (4,)) + 1j * rng.normal(size=grid.shape + (4,))
    F = np.fft.fftn(noise, axes=(0, 1, 2)) * (np.sum(q * q, axis=-1) < qmax ** 2)[..., None]
    u = np.fft.ifftn(F, axes=(0, 1, 2))
    u *= like.norm() / SpinorField(u, grid).norm()
    return SpinorField(u, grid)
