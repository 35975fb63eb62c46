"""Free Dirac Green's kernels in position space.

All kernels are inverse Fourier transforms under the convention in
:mod:`dirac_rls.grid` (forward kernel e^{-iq.r}).  With c = sqrt(pi/2)::

    J1(r)   = c e^{-m r}/r                          = F^{-1}[1/(m^2+q^2)]
    J2_k(r) = i c e^{-m r}(m + 1/r) r_k/r^2         = F^{-1}[q_k/(m^2+q^2)]
    J(r,z)  = c e^{i kappa r}/r,  kappa^2 = z^2 - m^2
    Q(r)    = c e^{-m r}/r [m beta + i (m + 1/r) rhat.alpha]   = F^{-1}[H0^{-1}]
    B(r,z)  = Q + C z^2 (Q*J) + z J,   C = (2 pi)^{-3/2}

Every matrix kernel here has the form b_I(rho) I + b_beta(rho) beta +
b_alpha(rho) rhat.alpha, so the work is done on the three radial profiles.
The convolution Q*J is reduced to a one-dimensional radial integral (the
angular integral is done exactly) and evaluated by composite Gauss-Legendre
quadrature; ``conv_qj(method="direct")`` keeps the three-dimensional tensor
quadrature as an independent check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import grid as _grid
from .algebra import _ALPHA, _BETA, _mass, alpha_dot, h0, momentum_resolvent
from .errors import (BranchError, QuadratureBudgetError, SingularityError,
                     ThresholdError, ValidationError)
from .grid import GridSpec, QuadratureSpec, SpinorField

SQRT_PI_2 = float(np.sqrt(np.pi / 2.0))
# constant in front of Q*J in B; chosen by ``resolve_convolution_constant``
CONVOLUTION_CONSTANT = (2.0 * np.pi) ** -1.5
CONVOLUTION_CONSTANT_CANDIDATES = {"(2pi)^(-3/2)": (2.0 * np.pi) ** -1.5,
                                   "(2pi)^(+3/2)": (2.0 * np.pi) ** 1.5}
# prefactor of the resolvent as an integral operator and of the RLS equation
RESOLVENT_PREFACTOR = (2.0 * np.pi) ** -1.5

_GL_X, _GL_W = leggauss(16)
_GL_BALL_X, _GL_BALL_W = leggauss(24)
# radial integration cut-off in units of 1/m; e^{-40} is below double precision
_TAIL = 40.0
_ABS_BREAKS = np.array([0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 32.0])
_REL_BREAKS = 4.0 ** np.arange(1, 13)
_FRAC_BREAKS = np.array([0.125, 0.25, 0.5, 0.75])
_CHUNK = 2048


# ---------------------------------------------------------------- helpers

def _radius(r, allow_zero=False):
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != 3:
        raise ValidationError("positions must have a trailing axis of length 3",
                              module="green_kernel")
    rho = np.sqrt(np.sum(r * r, axis=-1))
    if not allow_zero and np.any(rho == 0.0):
        raise SingularityError("kernel evaluated at r = 0")
    return r, rho


def _positive_mass(mc) -> float:
    m = _mass(mc)
    if m <= 0:
        raise ValidationError("position-space kernels need m > 0", module="green_kernel")
    return m


def kappa(z, mc, branch: str = "+") -> complex:
    """Wavenumber of the outgoing/incoming spherical wave e^{i kappa r}/r.

    Real ``z`` with |z| > m: kappa = +m1 for (z > m, '+') and (z < -m, '-'),
    kappa = -m1 otherwise, with m1 = sqrt(z^2 - m^2) > 0.  Non-real ``z``:
    the root of kappa^2 = z^2 - m^2 with Im kappa > 0.
    """
    m = _mass(mc)
    z = complex(z)
    if branch not in ("+", "-"):
        raise BranchError(f"branch must be '+' or '-', got {branch!r}")
    if z.imag == 0.0:
        lam = z.real
        if abs(lam) <= m:
            raise ThresholdError(f"|lambda| = {abs(lam)} must exceed m = {m}")
        m1 = np.sqrt(lam * lam - m * m)
        s = 1.0 if (lam > 0) == (branch == "+") else -1.0
        return complex(s * m1)
    k = np.sqrt(z * z - m * m + 0j)
    if k.imag < 0:
        k = -k
    if not k.imag > 0:
        raise BranchError(f"no root with Im kappa > 0 for z = {z}")
    return complex(k)


def _moments(z):
    """M_k(z) = int_{-1}^{1} x^k e^{izx} dx for k = 0, 1, 2."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1.0
    zs = np.where(small, 1.0, z)
    s, c = np.sin(zs), np.cos(zs)
    m0 = 2.0 * s / zs
    m1 = 2j * (s / zs ** 2 - c / zs)
    m2 = 2.0 * (s / zs + 2.0 * c / zs ** 2 - 2.0 * s / zs ** 3)
    if np.any(small):
        zz = z[small]
        t = np.ones_like(zz)
        a0 = np.zeros_like(zz)
        a1 = np.zeros_like(zz)
        a2 = np.zeros_like(zz)
        for n in range(26):
            if n % 2 == 0:
                a0 += t * (2.0 / (n + 1))
                a2 += t * (2.0 / (n + 3))
            else:
                a1 += t * (2.0 / (n + 2))
            t = t * (1j * zz) / (n + 1)
        m0[small], m1[small], m2[small] = a0, a1, a2
    return m0, m1, m2


def _panels(bp):
    """Gauss-Legendre nodes and weights on consecutive breakpoints (rows)."""
    a, b = bp[:, :-1], bp[:, 1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    u = mid[..., None] + half[..., None] * _GL_X
    w = half[..., None] * _GL_W
    return u.reshape(len(bp), -1), w.reshape(len(bp), -1)


def _radial_conv_chunk(rho, kap, m):
    c = SQRT_PI_2
    U = _TAIL / m
    ph = np.exp(1j * kap * rho)[:, None]
    r = rho[:, None]

    # inner shell u < rho: the angular integral is centred on rho with half-width u;
    # the integrand decays like e^{-(m - Im kappa) u}
    rate = m - kap.imag
    rl = np.minimum(rho, _TAIL / rate if rate > 0.05 * m else np.inf)[:, None]
    bp = np.concatenate([np.zeros_like(rl), np.minimum(_ABS_BREAKS / m, rl),
                         rl * _FRAC_BREAKS, rl], axis=1)
    u, w = _panels(np.sort(bp, axis=1))
    m0, m1, m2 = _moments(kap * u)
    emu = np.exp(-m * u)
    f0 = (c * c) * u * emu * m0 * ph / r
    f1 = (0.5j * c * c) * emu * (m * u + 1.0) * ph / r ** 2 * (u * (m0 - m2) - 2.0 * r * m1)
    s0 = np.sum(w * f0, axis=1)
    s1 = np.sum(w * f1, axis=1)

    # outer shell u > rho: centred on u with half-width rho
    bp = np.concatenate([r, np.clip(r * _REL_BREAKS, r, r + U),
                         np.clip(r + _ABS_BREAKS / m, r, r + U), r + U], axis=1)
    u, w = _panels(np.sort(bp, axis=1))
    m0, m1, m2 = _moments(kap * rho)
    m0, m1, m2 = m0[:, None], m1[:, None], m2[:, None]
    e = np.exp((1j * kap - m) * u)
    f0 = (c * c) * e * m0
    f1 = (0.5j * c * c) * e * (m * u + 1.0) * (r * (m0 - m2) / u ** 2 - 2.0 * m1 / u)
    s0 += np.sum(w * f0, axis=1)
    s1 += np.sum(w * f1, axis=1)
    return 2.0 * np.pi * s0, 2.0 * np.pi * s1


def radial_conv(rho, kap, mc):
    """Radial profiles of Q*J: (Q*J)(x) = m beta S0(|x|) + (xhat.alpha) S1(|x|).

    ``kap`` is the wavenumber of J (see :func:`kappa`).  At rho = 0 the
    isotropic limits S0(0) = 4 pi c^2/(m - i kappa), S1 = 0 are returned.
    """
    m = _positive_mass(mc)
    rho = np.asarray(rho, dtype=float)
    flat = rho.ravel()
    s0 = np.empty(flat.shape, dtype=complex)
    s1 = np.empty(flat.shape, dtype=complex)
    zero = flat == 0.0
    idx = np.flatnonzero(~zero)
    for i in range(0, len(idx), _CHUNK):
        sl = idx[i:i + _CHUNK]
        s0[sl], s1[sl] = _radial_conv_chunk(flat[sl], complex(kap), m)
    s0[zero] = 4.0 * np.pi * SQRT_PI_2 ** 2 / (m - 1j * kap)
    s1[zero] = 0.0
    return s0.reshape(rho.shape), s1.reshape(rho.shape)


def b_radial(rho, z, kap, mc, terms=(1, 2, 3), conv_constant=None):
    """Radial profiles (b_I, b_beta, b_alpha) of B(x, z) at |x| = rho > 0.

    ``terms`` selects pieces of the splitting: 1 -> z J, 2 -> Q,
    3 -> C z^2 (Q*J).
    """
    m = _positive_mass(mc)
    C = CONVOLUTION_CONSTANT if conv_constant is None else conv_constant
    rho = np.asarray(rho, dtype=float)
    z = complex(z)
    c = SQRT_PI_2
    bI = np.zeros(rho.shape, dtype=complex)
    bB = np.zeros(rho.shape, dtype=complex)
    bA = np.zeros(rho.shape, dtype=complex)
    if 1 in terms:
        bI += z * c * np.exp(1j * kap * rho) / rho
    if 2 in terms:
        e = c * np.exp(-m * rho) / rho
        bB += m * e
        bA += 1j * e * (m + 1.0 / rho)
    if 3 in terms:
        s0, s1 = radial_conv(rho, kap, m)
        bB += C * z * z * m * s0
        bA += C * z * z * s1
    return bI, bB, bA


def radial_to_matrix(bI, bB, bA, rhat) -> np.ndarray:
    """Assemble b_I I + b_beta beta + b_alpha rhat.alpha into (..., 4, 4)."""
    out = alpha_dot(np.asarray(bA)[..., None] * rhat)
    out += np.asarray(bB)[..., None, None] * _BETA
    idx = np.arange(4)
    out[..., idx, idx] += np.asarray(bI)[..., None]
    return out


# ---------------------------------------------------------------- scalar kernels

def j1(r, mc):
    """sqrt(pi/2) e^{-m|r|}/|r|."""
    _, rho = _radius(r)
    return SQRT_PI_2 * np.exp(-_mass(mc) * rho) / rho


def j2(r, axis: int, mc):
    """F^{-1}[q_k/(m^2+q^2)] = -i dJ1/dr_k; ``axis`` is 1, 2 or 3."""
    if axis not in (1, 2, 3):
        raise ValidationError("axis must be 1, 2 or 3", module="green_kernel")
    r, rho = _radius(r)
    m = _mass(mc)
    return 1j * SQRT_PI_2 * np.exp(-m * rho) * (m + 1.0 / rho) * r[..., axis - 1] / rho ** 2


def j_pm(r, lam: float, branch: str, mc):
    """J_+/-(r, lambda) = sqrt(pi/2) e^{i kappa |r|}/|r| for real |lambda| > m."""
    if np.iscomplexobj(lam) and np.imag(lam) != 0:
        raise ValidationError("j_pm takes a real lambda; use j_plus_complex",
                              module="green_kernel")
    k = kappa(float(np.real(lam)), mc, branch)
    _, rho = _radius(r)
    return SQRT_PI_2 * np.exp(1j * k * rho) / rho


def j_plus_complex(r, mu: complex, mc):
    """sqrt(pi/2) e^{i m1(mu) |r|}/|r| with Im m1(mu) > 0; requires Im mu > 0."""
    mu = complex(mu)
    if not mu.imag > 0:
        raise BranchError(f"j_plus_complex needs Im mu > 0, got {mu}")
    k = kappa(mu, mc)
    _, rho = _radius(r)
    return SQRT_PI_2 * np.exp(1j * k * rho) / rho


def q_kernel(r, mc) -> np.ndarray:
    """Q(r) = F^{-1}[H0^{-1}] = c e^{-mr}/r [m beta + i(m + 1/r) rhat.alpha]."""
    r, rho = _radius(r)
    m = _positive_mass(mc)
    e = SQRT_PI_2 * np.exp(-m * rho) / rho
    zero = np.zeros_like(e)
    return radial_to_matrix(zero, m * e, 1j * e * (m + 1.0 / rho), r / rho[..., None])


def _spectral_z(lam, branch):
    """Spectral parameter and validity check shared by B and Q*J."""
    z = complex(lam)
    if z.imag != 0 and branch == "-" and z.imag > 0:
        raise BranchError("branch '-' with Im z > 0 is inconsistent")
    return z


# ---------------------------------------------------------------- Q * J

def conv_qj(r, lam, branch: str, mc, quad: QuadratureSpec = None, method: str = "radial"):
    """(Q*J)(r) = int Q(r - v) J(v) dv.

    ``method="radial"`` (default) integrates the exact angular reduction in one
    dimension.  ``method="direct"`` is a tensor trapezoid sum over ``quad`` with
    ball-averaged values in the cells holding v = r and v = 0.
    """
    z = _spectral_z(lam, branch)
    k = kappa(z, mc, branch)
    r = np.asarray(r, dtype=float)
    if method == "radial":
        _, rho = _radius(r, allow_zero=True)
        m = _positive_mass(mc)
        s0, s1 = radial_conv(rho, k, m)
        with np.errstate(invalid="ignore", divide="ignore"):
            rhat = np.where(rho[..., None] > 0, r / np.where(rho > 0, rho, 1.0)[..., None], 0.0)
        return radial_to_matrix(np.zeros_like(s0), m * s0, s1, rhat)
    if method == "direct":
        return _conv_qj_direct(r, k, _positive_mass(mc), quad or QuadratureSpec())
    raise ValidationError(f"unknown conv_qj method {method!r}", module="green_kernel")


def _ball_radius(h):
    return (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0) * h


def _ball_integral(f, a):
    """4 pi int_0^a f(rho) rho^2 drho by Gauss-Legendre (f vectorized)."""
    x = 0.5 * a * (_GL_BALL_X + 1.0)
    return 4.0 * np.pi * np.sum(0.5 * a * _GL_BALL_W * f(x) * x * x, axis=-1)


def _conv_qj_direct(r, k, m, quad: QuadratureSpec, budget: int = 256):
    if quad.points > budget:
        raise QuadratureBudgetError(f"direct quadrature capped at {budget} points per axis")
    g = quad.grid()
    h = g.h
    c = SQRT_PI_2
    a = _ball_radius(h)
    v = g.points().reshape(-1, 3)
    vr = np.sqrt(np.sum(v * v, axis=1))
    at0 = vr < 1e-9 * h
    vs = np.where(at0, 1.0, vr)
    # Q(v) = m beta q0(|v|) + q1(|v|) vhat.alpha; the odd part averages to zero on the cell
    q0 = c * np.exp(-m * vs) / vs
    q0[at0] = _ball_integral(lambda x: c * np.exp(-m * x) / x, a) / h ** 3
    q1v = (1j * c * np.exp(-m * vs) * (m + 1.0 / vs) / vs ** 2)[:, None] * v
    q1v[at0] = 0.0
    j_avg = _ball_integral(lambda x: c * np.exp(1j * k * x) / x, a) / h ** 3
    single = r.ndim == 1
    rs = np.atleast_2d(r)
    out = np.zeros((len(rs), 4, 4), dtype=complex)
    for i, ri in enumerate(rs):
        d = ri[None, :] - v
        dr = np.sqrt(np.sum(d * d, axis=1))
        hit = dr < 1e-9 * h
        ds = np.where(hit, 1.0, dr)
        jv = c * np.exp(1j * k * ds) / ds
        jv[hit] = j_avg
        sb = h ** 3 * m * np.dot(jv, q0)
        sa = h ** 3 * (jv @ q1v)
        out[i] = sb * _BETA + alpha_dot(sa)
    return out[0] if single else out


# ---------------------------------------------------------------- B

def b_kernel(r, lam, branch: str, mc, quad: QuadratureSpec = None, method: str = "radial",
             terms=(1, 2, 3)) -> np.ndarray:
    """B(r, lambda) = Q + C lambda^2 Q*J + lambda J.

    ``lam`` may be complex (then J and Q*J use Im kappa > 0).  ``terms``
    selects the pieces 1: lambda J, 2: Q, 3: C lambda^2 Q*J.
    """
    z = _spectral_z(lam, branch)
    k = kappa(z, mc, branch)
    r, rho = _radius(r)
    m = _positive_mass(mc)
    if method == "radial":
        bI, bB, bA = b_radial(rho, z, k, m, terms)
        return radial_to_matrix(bI, bB, bA, r / rho[..., None])
    # direct: closed-form pieces plus tensor-quadrature convolution
    bI, bB, bA = b_radial(rho, z, k, m, tuple(t for t in terms if t != 3))
    out = radial_to_matrix(bI, bB, bA, r / rho[..., None])
    if 3 in terms:
        out = out + CONVOLUTION_CONSTANT * z * z * conv_qj(r, z, branch, m, quad, "direct")
    return out


def yukawa_weights(moments, masses):
    """Weights w_j with sum_j w_j (-M_j^2)^p = moments[p] for p < len(masses).

    sum_j w_j/(q^2 + M_j^2) then reproduces a symbol whose large-q expansion is
    sum_p moments[p] q^{-2p-2} through order q^{-2 len(masses)}.
    """
    M2 = -np.asarray(masses, dtype=float) ** 2
    A = np.vander(M2, len(M2), increasing=True).T.astype(complex)
    return np.linalg.solve(A, np.asarray(moments, dtype=complex)[:len(M2)])


def _yukawa_reference(points, z, m, weights, masses):
    """Position-space kernel of (H0(q) + z) sum_j w_j/(q^2 + M_j^2)."""
    r = np.sqrt(np.sum(points * points, axis=-1))
    rs = np.where(r > 0, r, 1.0)
    rhat = points / rs[..., None]
    out = np.zeros(points.shape[:-1] + (4, 4), dtype=complex)
    for w, M in zip(weights, masses):
        e = w * SQRT_PI_2 * np.exp(-M * rs) / rs
        out += radial_to_matrix(z * e, m * e, 1j * e * (M + 1.0 / rs), rhat)
    out[r == 0] = np.nan
    return out


def b_kernel_fft_oracle(grid: GridSpec, lam: float, epsilon: float, branch: str, mc,
                        reference_masses=(1.0, 1.5, 2.0)) -> np.ndarray:
    """Samples of F^{-1}[(H0(q) - (lambda +/- i epsilon))^{-1}] at ``grid.points()``.

    Discrete transform on the grid's dual lattice (periodic images included).
    The raw symbol decays like 1/|q|, so its truncated transform rings at
    O(1) along the lattice axes.  Unless ``reference_masses`` is None, a sum of
    Yukawa-type symbols (H0 + z) w_j/(q^2 + M_j^2), masses in units of m,
    matching the large-q expansion is subtracted before the transform and its
    elementary position-space kernel added back afterwards.  Returns shape
    (n, n, n, 4, 4); the sample at r = 0 is NaN when subtraction is on.
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive", module="green_kernel")
    z = complex(lam, epsilon if branch == "+" else -epsilon)
    q = grid.momenta()
    R = momentum_resolvent(q, z, mc)
    if reference_masses is None:
        return _grid.inverse(R, grid)
    m = _positive_mass(mc)
    masses = m * np.asarray(reference_masses, dtype=float)
    k2 = kappa(z, m) ** 2
    w = yukawa_weights([k2 ** p for p in range(len(masses))], masses)
    q2 = np.sum(q * q, axis=-1)
    sym = sum(wj / (q2 + Mj * Mj) for wj, Mj in zip(w, masses))
    R -= (h0(q, m) + z * np.eye(4)) * sym[..., None, None]
    return _grid.inverse(R, grid) + _yukawa_reference(grid.points(), z, m, w, masses)


def conv_qj_fft_oracle(grid: GridSpec, lam: float, epsilon: float, branch: str, mc,
                       reference_masses=(1.0, 1.5, 2.0, 2.5)) -> np.ndarray:
    """(Q*J)(r) from the momentum-space product (2pi)^{3/2} H0(q)^{-1}/(E^2 - z^2).

    Same discrete transform and optional Yukawa subtraction as
    :func:`b_kernel_fft_oracle`; here the symbol is H0(q)/((q^2+m^2)(q^2-kappa^2)).
    """
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive", module="green_kernel")
    z = complex(lam, epsilon if branch == "+" else -epsilon)
    q = grid.momenta()
    m = _positive_mass(mc)
    q2 = np.sum(q * q, axis=-1)
    H = h0(q, m)
    sym = H / ((q2 + m * m) * (q2 + m * m - z * z))[..., None, None]
    if reference_masses is None:
        return (2.0 * np.pi) ** 1.5 * _grid.inverse(sym, grid)
    k2 = kappa(z, m) ** 2
    masses = m * np.asarray(reference_masses, dtype=float)
    mom = [(k2 ** p - (-m * m) ** p) / (k2 + m * m) for p in range(len(masses))]
    w = yukawa_weights(mom, masses)
    sym -= H * sum(wj / (q2 + Mj * Mj) for wj, Mj in zip(w, masses))[..., None, None]
    out = _grid.inverse(sym, grid) + _yukawa_reference(grid.points(), 0.0, m, w, masses)
    return (2.0 * np.pi) ** 1.5 * out


@dataclass
class ConstantResolution:
    chosen: str
    value: float
    deviations: dict
    epsilon: float
    grid: dict


def resolve_convolution_constant(mc=1.0, lam: float = 1.5, epsilon: float = 0.3,
                                 n: int = 48, h: float = 0.5, rmin: float = 1.0,
                                 rmax: float = 6.0) -> ConstantResolution:
    """Decide the constant in front of Q*J by comparison with the FFT oracle.

    Both candidate constants are tried in the closed form at mu = lambda +
    i epsilon; the one with the smaller maximum relative deviation from the
    oracle over rmin <= |r| <= rmax wins.
    """
    g = GridSpec(n, h, origin=-(n // 2) * h)
    orc = b_kernel_fft_oracle(g, lam, epsilon, "+", mc)
    pts = g.points()
    rho = np.sqrt(np.sum(pts * pts, axis=-1))
    sel = (rho >= rmin) & (rho <= rmax)
    z = complex(lam, epsilon)
    k = kappa(z, mc)
    rs, rr = pts[sel], rho[sel]
    uniq, inv = np.unique(np.round(rr * rr / (h * h)).astype(np.int64), return_inverse=True)
    urho = np.sqrt(uniq) * h
    dev = {}
    for name, C in CONVOLUTION_CONSTANT_CANDIDATES.items():
        bI, bB, bA = b_radial(urho, z, k, mc, conv_constant=C)
        B = radial_to_matrix(bI[inv], bB[inv], bA[inv], rs / rr[:, None])
        ref = orc[sel]
        err = np.linalg.norm(B - ref, axis=(1, 2)) / np.linalg.norm(ref, axis=(1, 2))
        dev[name] = float(err.max())
    chosen = min(dev, key=dev.get)
    return ConstantResolution(chosen, CONVOLUTION_CONSTANT_CANDIDATES[chosen], dev,
                              epsilon, g.to_dict())


# ---------------------------------------------------------------- lattice operators

_SUBTRACTION_WIDTH = 3.0  # Gaussian cut-off width in cells for the moment sums


class LatticeKernel:
    """Kernel B(x, z) sampled on lattice offsets x = h d, |d_i| < n.

    The value at d = 0 is replaced by a corrected weight: the ball average
    (``diag="cell-average"``) or the lattice-sum correction of the Taylor
    moments (``diag="subtraction"``, which also provides the gradient and
    Laplacian weights used by :meth:`convolve`).  The stored samples include
    the cell volume h^3, so ``convolve`` returns sum_j K(r_i - r_j) f_j.
    """

    def __init__(self, n: int, h: float, z, branch: str, mc, terms=(1, 2, 3),
                 diag: str = "cell-average"):
        self.n, self.h = int(n), float(h)
        self.z = complex(z)
        self.branch = branch
        self.m = _positive_mass(mc)
        self.kappa = kappa(self.z, self.m, branch)
        self.terms = tuple(terms)
        if diag not in ("cell-average", "subtraction"):
            raise ValidationError(f"unknown diagonal mode {diag!r}", module="green_kernel")
        self.diag = diag
        nmax = 3 * (self.n - 1) ** 2
        keys = np.arange(1, nmax + 1)
        rho = np.sqrt(keys) * self.h
        bI, bB, bA = b_radial(rho, self.z, self.kappa, self.m, self.terms)
        self.table = np.zeros((nmax + 1, 3), dtype=complex)
        self.table[1:, 0], self.table[1:, 1], self.table[1:, 2] = bI, bB, bA
        self.center = self._center_weights()
        self.table[0, :2] = self.center[:2] / self.h ** 3
        self._spectra = None

    # radial profile as a function, for moment integrals
    def _profiles(self, rho):
        return b_radial(rho, self.z, self.kappa, self.m, self.terms)

    def _center_weights(self):
        """Weights (w_I, w_beta, lap_I, lap_beta, grad_alpha) multiplying f, f, lap f, lap f, alpha.grad f."""
        a = _ball_radius(self.h)
        wI = _ball_integral(lambda x: self._profiles(x)[0], a)
        wB = _ball_integral(lambda x: self._profiles(x)[1], a)
        if self.diag == "cell-average":
            return np.array([wI, wB, 0, 0, 0], dtype=complex)
        s = _SUBTRACTION_WIDTH * self.h
        R = 8.0 * s
        # continuous moments with the Gaussian cut-off chi = exp(-rho^2/2s^2)
        bps = np.array([0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]) * s
        x = (0.5 * (bps[1:] - bps[:-1])[:, None] * (_GL_BALL_X + 1.0) + bps[:-1, None]).ravel()
        w = (0.5 * (bps[1:] - bps[:-1])[:, None] * _GL_BALL_W).ravel()
        pI, pB, pA = self._profiles(x)
        chi = np.exp(-x * x / (2 * s * s))
        A0 = [4 * np.pi * np.sum(w * p * chi * x ** 2) for p in (pI, pB)]
        A2 = [2 * np.pi / 3 * np.sum(w * p * chi * x ** 4) for p in (pI, pB)]
        C1 = 4 * np.pi / 3 * np.sum(w * pA * chi * x ** 3)
        # the same moments as punctured lattice sums
        M = int(np.ceil(R / self.h))
        d = np.arange(-M, M + 1)
        D2 = (d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2).ravel()
        D2 = D2[(D2 > 0) & (D2 * self.h ** 2 <= R * R)]
        uk, cnt = np.unique(D2, return_counts=True)
        rr = np.sqrt(uk) * self.h
        lI, lB, lA = self._profiles(rr)
        chi = np.exp(-rr * rr / (2 * s * s)) * cnt * self.h ** 3
        L0 = [np.sum(p * chi) for p in (lI, lB)]
        L2 = [np.sum(p * chi * rr * rr) / 6.0 for p in (lI, lB)]
        L1 = np.sum(lA * chi * rr) / 3.0
        return np.array([A0[0] - L0[0], A0[1] - L0[1], A2[0] - L2[0], A2[1] - L2[1],
                         C1 - L1], dtype=complex)

    def radial_samples(self, d2):
        """(b_I, b_beta, b_alpha) at integer squared offsets ``d2`` (0 gives the corrected centre)."""
        t = self.table[np.asarray(d2)]
        return t[..., 0], t[..., 1], t[..., 2]

    def blocks(self, d) -> np.ndarray:
        """h^3 B(h d) for integer offsets ``d`` of shape (..., 3); centre corrected."""
        d = np.asarray(d)
        d2 = np.sum(d * d, axis=-1)
        bI, bB, bA = self.radial_samples(d2)
        dn = np.sqrt(d2.astype(float))
        rhat = np.where(d2[..., None] > 0, d / np.where(d2 > 0, dn, 1.0)[..., None], 0.0)
        return self.h ** 3 * radial_to_matrix(bI, bB, bA, rhat)

    def _kernel_spectra(self):
        if self._spectra is None:
            n2 = 2 * self.n
            d = np.fft.fftfreq(n2, 1.0 / n2).astype(np.int64)
            d[self.n] = 0  # unused wrap slot; zeroed below
            D = np.stack(np.meshgrid(d, d, d, indexing="ij"), axis=-1)
            d2 = np.sum(D * D, axis=-1)
            bI, bB, bA = self.radial_samples(d2)
            dn = np.sqrt(d2.astype(float))
            rhat = np.where(d2[..., None] > 0, D / np.where(d2 > 0, dn, 1.0)[..., None], 0.0)
            comps = [bI, bB] + [bA * rhat[..., k] for k in range(3)]
            spec = []
            for cpt in comps:
                a = self.h ** 3 * cpt
                a[self.n, :, :] = 0
                a[:, self.n, :] = 0
                a[:, :, self.n] = 0
                spec.append(np.fft.fftn(a))
            self._spectra = spec
        return self._spectra

    def convolve(self, f: np.ndarray, with_derivatives: bool = None) -> np.ndarray:
        """sum_j h^3 B(r_i - r_j) f_j for f of shape (n, n, n, 4) (zero padded, non-periodic).

        In subtraction mode the gradient and Laplacian corrections are added
        (derivatives taken spectrally on the grid).
        """
        n = self.n
        if f.shape != (n, n, n, 4):
            raise ValidationError("field shape does not match the kernel lattice",
                                  module="green_kernel")
        KI, KB, K1, K2, K3 = self._kernel_spectra()
        F = np.fft.fftn(f, s=(2 * n,) * 3, axes=(0, 1, 2))
        out = KI[..., None] * F
        out += KB[..., None] * F * np.diag(_BETA).real
        for Kk, ak in zip((K1, K2, K3), _ALPHA):
            out += Kk[..., None] * np.einsum("ij,...j->...i", ak, F)
        g = np.fft.ifftn(out, axes=(0, 1, 2))[:n, :n, :n]
        if with_derivatives is None:
            with_derivatives = self.diag == "subtraction"
        if with_derivatives and self.diag == "subtraction":
            _, _, lI, lB, gA = self.center
            q = GridSpec(n, self.h).momenta()
            Fh = np.fft.fftn(f, axes=(0, 1, 2))
            lap = np.fft.ifftn(-np.sum(q * q, axis=-1)[..., None] * Fh, axes=(0, 1, 2))
            grad = alpha_dot(1j * q)  # alpha.(iq)
            agrad = np.fft.ifftn(np.einsum("...ij,...j->...i", grad, Fh), axes=(0, 1, 2))
            g += lI * lap + lB * lap * np.diag(_BETA).real - gA * agrad
        return g


def truncated_kernel_symbol(q, z, mc, radius: float, branch: str = "+") -> tuple:
    """Fourier data of (2 pi)^{-3/2} B(r, z) cut off at |r| = radius.

    Uses B = (z + m beta - i alpha.grad) c e^{i kappa r}/r.  The cut-off scalar
    transforms to s(q) = [1 + e^{i kappa R}(i kappa sin(qR)/q - cos(qR))]/(q^2 - kappa^2)
    and the full symbol is s(q) (z + H0(q)).  Returns ``s`` only, to keep the
    4x4 factor implicit.
    """
    m = _positive_mass(mc)
    k = kappa(z, m, branch)
    qn = np.sqrt(np.sum(np.asarray(q) ** 2, axis=-1))
    R = float(radius)
    with np.errstate(invalid="ignore", divide="ignore"):
        sinc = np.where(qn > 0, np.sin(qn * R) / np.where(qn > 0, qn, 1.0), R)
    return (1.0 + np.exp(1j * k * R) * (1j * k * sinc - np.cos(qn * R))) / (qn * qn - k * k)


def _truncated_convolution(f: np.ndarray, h: float, z, mc) -> np.ndarray:
    """(2 pi)^{-3/2} int B(r - s, z) f(s) ds on the grid of ``f`` (free space, not periodic)."""
    from scipy.fft import fftn, ifftn, next_fast_len

    n = f.shape[0]
    R = np.sqrt(3.0) * (n - 1) * h * (1.0 + 1e-9)
    N = next_fast_len(int(np.ceil((n - 1) + R / h)) + 2)
    qa = 2.0 * np.pi * np.fft.fftfreq(N, d=h)
    q = np.stack(np.meshgrid(qa, qa, qa, indexing="ij"), axis=-1)
    sym = truncated_kernel_symbol(q, z, mc, R)
    F = fftn(f, s=(N,) * 3, axes=(0, 1, 2))
    m = _positive_mass(mc)
    G = (z * F + m * F * np.diag(_BETA).real
         + np.einsum("...k,kij,...j->...i", q, _ALPHA, F))
    G *= sym[..., None]
    return ifftn(G, axes=(0, 1, 2))[:n, :n, :n]


def apply_free_resolvent(f: SpinorField, mu: complex, mc, method: str = "truncated",
                         diag: str = "subtraction", tol: float = 1e-3) -> SpinorField:
    """(L0 - mu)^{-1} f.

    Methods:

    ``"truncated"``
        (2 pi)^{-3/2} int B(r - s, mu) f(s) ds with the kernel cut off beyond
        the box diameter, evaluated through its exact Fourier transform on a
        padded grid.  Free-space, not periodic.
    ``"lattice"``
        the same integral as a corrected lattice sum of B samples
        (``diag`` picks the centre correction).
    ``"spectral"``
        periodic division by H0(q) - mu.

    All require Im mu > 0.  A ``RuntimeWarning`` is issued when the round trip
    (L0 - mu) g = f, with L0 applied spectrally, misses by more than ``tol``.
    """
    mu = complex(mu)
    if not mu.imag > 0:
        raise BranchError(f"apply_free_resolvent needs Im mu > 0, got {mu}")
    gspec = f.grid
    if not np.any(f.samples):
        return SpinorField.zeros(gspec)
    q = gspec.momenta()
    if method == "spectral":
        g = _grid.apply_symbol(f.samples, momentum_resolvent(q, mu, mc))
    elif method == "truncated":
        g = _truncated_convolution(f.samples, gspec.h, mu, mc)
    elif method == "lattice":
        lk = LatticeKernel(gspec.n, gspec.h, mu, "+", mc, diag=diag)
        g = RESOLVENT_PREFACTOR * lk.convolve(f.samples)
    else:
        raise ValidationError(f"unknown method {method!r}", module="green_kernel")
    back = _grid.apply_symbol(g, h0(q, mc) - mu * np.eye(4))
    res = np.linalg.norm(back - f.samples) / np.linalg.norm(f.samples)
    if res > tol:
        warnings.warn(f"grid too coarse: resolvent round-trip residual {res:.2e} > {tol:.1e}",
                      RuntimeWarning, stacklevel=2)
    out = SpinorField(g, gspec)
    out.meta["round_trip_residual"] = float(res)
    out.meta["method"] = method
    return out


def export_kernel_csv(path, points, values) -> None:
    """Write r1, r2, r3 and Re/Im of the 16 entries (row-major) per row."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    values = np.asarray(values).reshape(-1, 16)
    cols = np.empty((len(points), 35))
    cols[:, :3] = points
    cols[:, 3::2] = values.real
    cols[:, 4::2] = values.imag
    hdr = ["r1", "r2", "r3"]
    for i in range(4):
        for j in range(4):
            hdr += [f"re{i}{j}", f"im{i}{j}"]
    np.savetxt(path, cols, delimiter=",", header=",".join(hdr), comments="", fmt="%.17g")
