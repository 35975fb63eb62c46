"""Momentum-space algebra of the free Dirac operator.

Units are natural (hbar = c = 1).  Every function accepts a single momentum of
shape ``(3,)`` or a stack of shape ``(..., 3)`` and returns matrices of shape
``(..., 4, 4)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, PoleError, ValidationError

# eigenvectors switch to the exact m*beta basis below this fraction of m
DEGENERACY_THRESHOLD = 1e-10


@dataclass(frozen=True)
class MassCharge:
    """Rest mass ``m`` and coupling ``e_charge`` (the electron charge is -e)."""

    m: float
    e_charge: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.m) or self.m < 0:
            raise ValidationError(f"mass must be finite and non-negative, got {self.m}",
                                  module="dirac_algebra")
        if not np.isfinite(self.e_charge):
            raise ValidationError("charge must be finite", module="dirac_algebra")


def _mass(mc) -> float:
    return float(mc.m) if isinstance(mc, MassCharge) else float(mc)


_SIGMA = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


def pauli_matrices() -> np.ndarray:
    """sigma_1, sigma_2, sigma_3 stacked as ``(3, 2, 2)``."""
    return _SIGMA.copy()


def _build_alpha() -> np.ndarray:
    a = np.zeros((3, 4, 4), dtype=complex)
    a[:, :2, 2:] = _SIGMA
    a[:, 2:, :2] = _SIGMA
    return a


_ALPHA = _build_alpha()
_BETA = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
_ALPHA.flags.writeable = False
_BETA.flags.writeable = False


def alpha_matrices() -> np.ndarray:
    """alpha_1, alpha_2, alpha_3 as an array of shape ``(3, 4, 4)``.

    Block form [[0, sigma_k], [sigma_k, 0]].
    """
    return _ALPHA.copy()


def beta_matrix() -> np.ndarray:
    """diag(1, 1, -1, -1)."""
    return _BETA.copy()


def alpha_dot(v) -> np.ndarray:
    """sum_k v_k alpha_k for ``v`` of shape ``(..., 3)`` (real or complex)."""
    v = np.asarray(v)
    return np.einsum("...k,kij->...ij", v, _ALPHA)


def h0(q, mc) -> np.ndarray:
    """H0(q) = m beta + alpha . q."""
    q = np.asarray(q, dtype=float)
    return _mass(mc) * _BETA + alpha_dot(q)


def energy(q, mc) -> np.ndarray:
    """Positive branch sqrt(m^2 + |q|^2)."""
    q = np.asarray(q, dtype=float)
    return np.sqrt(_mass(mc) ** 2 + np.sum(q * q, axis=-1))


@dataclass(frozen=True)
class SpectralData:
    """Eigenvalues ``lam[..., k]`` and eigenvectors ``g[..., k, :]`` of H0(q).

    Order is (-E, -E, +E, +E); channels 1, 2 are negative energy and 3, 4
    positive energy.
    """

    lam: np.ndarray
    g: np.ndarray
    normalized: bool


def eigen_h0(q, mc, normalize: bool = False) -> SpectralData:
    """Analytic eigensystem of H0(q).

    With ``normalize`` off the vectors are the unnormalized explicit forms
    g1 = [(-q1+iq2)/(m+E), q3/(m+E), 0, 1],
    g2 = [-q3/(m+E), (-q1-iq2)/(m+E), 1, 0],
    g3 = [(-q1+iq2)/(m-E), q3/(m-E), 0, 1],
    g4 = [-q3/(m-E), (-q1-iq2)/(m-E), 1, 0].
    Where m - E vanishes (|q| < 1e-10 m, or q = 0) g3, g4 are replaced by the
    upper unit vectors e1, e2, which are the m*beta eigenvectors of +m.
    """
    q = np.asarray(q, dtype=float)
    m = _mass(mc)
    shape = q.shape[:-1]
    E = energy(q, m)
    q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2]
    zp = -q1 + 1j * q2
    zm = -q1 - 1j * q2
    g = np.zeros(shape + (4, 4), dtype=complex)

    dp = m + E
    with np.errstate(divide="ignore", invalid="ignore"):
        small_p = dp == 0.0
        inv_p = np.where(small_p, 0.0, 1.0 / np.where(small_p, 1.0, dp))
        qn = np.sqrt(np.sum(q * q, axis=-1))
        small_m = (qn < DEGENERACY_THRESHOLD * m) | (qn == 0.0)
        # m - E = -|q|^2/(m + E) without cancellation at small |q|
        dm = np.where(small_m, 1.0, -(qn * qn) / np.where(small_p, 1.0, dp))
        inv_m = 1.0 / dm

    g[..., 0, 0] = zp * inv_p
    g[..., 0, 1] = q3 * inv_p
    g[..., 0, 3] = 1.0
    g[..., 1, 0] = -q3 * inv_p
    g[..., 1, 1] = zm * inv_p
    g[..., 1, 2] = 1.0
    g[..., 2, 0] = np.where(small_m, 1.0, zp * inv_m)
    g[..., 2, 1] = np.where(small_m, 0.0, q3 * inv_m)
    g[..., 2, 3] = np.where(small_m, 0.0, 1.0)
    g[..., 3, 0] = np.where(small_m, 0.0, -q3 * inv_m)
    g[..., 3, 1] = np.where(small_m, 1.0, zm * inv_m)
    g[..., 3, 2] = np.where(small_m, 0.0, 1.0)

    if normalize:
        g = g / np.linalg.norm(g, axis=-1, keepdims=True)
    lam = np.stack([-E, -E, E, E], axis=-1)
    return SpectralData(lam=lam, g=g, normalized=normalize)


def channel_sign(n: int) -> int:
    """-1 for channels 1, 2 and +1 for channels 3, 4."""
    if n not in (1, 2, 3, 4):
        raise ValidationError(f"channel index must be 1..4, got {n}", module="dirac_algebra")
    return -1 if n <= 2 else 1


def h0_inverse(q, mc) -> np.ndarray:
    """H0(q)^{-1} = H0(q) / (m^2 + |q|^2)."""
    q = np.asarray(q, dtype=float)
    m = _mass(mc)
    e2 = m * m + np.sum(q * q, axis=-1)
    if np.any(e2 == 0.0):
        raise DegenerateInputError("H0 is not invertible for m = 0 and q = 0")
    return h0(q, m) / e2[..., None, None]


def momentum_resolvent(q, z, mc, *, pole_tol: float = 1e-14) -> np.ndarray:
    """(H0(q) - z)^{-1} = H0^{-1} + H0^{-1} z^2/(E^2 - z^2) + z/(E^2 - z^2).

    Falls back to (H0 + z)/(E^2 - z^2) where H0 itself is singular (m = q = 0).
    """
    q = np.asarray(q, dtype=float)
    m = _mass(mc)
    z = complex(z)
    e2 = m * m + np.sum(q * q, axis=-1)
    den = e2 - z * z
    if np.any(np.abs(den) <= pole_tol * max(1.0, abs(z) ** 2)):
        raise PoleError(f"z = {z} lies on the spectrum: z^2 = m^2 + |q|^2")
    H = h0(q, m)
    eye = np.eye(4)
    d = den[..., None, None]
    if np.any(e2 == 0.0):
        return (H + z * eye) / d
    hinv = H / e2[..., None, None]
    return hinv + hinv * (z * z) / d + z * eye / d
