"""Scattering amplitude, far-field check and the first Born oracle.

Far from the potential the kernel behaves like
B(R w - s) ~ c e^{i kappa R}/R (lambda + H0(kappa w)) e^{-i kappa w.s} with
c (2 pi)^{-3/2} = 1/(4 pi), so

    phi(R w) - e^{ik.R w} g_n ~ (e^{i kappa R}/R) f(w),
    f(w) = -(1/4 pi) (lambda + H0(kappa w)) int e^{-i kappa w.s} V(s) phi(s) ds.

The matrix lambda + H0(kappa w) equals 2 lambda times the projector onto the
lambda-eigenspace of H0(kappa w).  ``projector=False`` replaces it by the
scalar lambda.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .algebra import _mass, eigen_h0, h0
from .errors import SpecMismatchError, ValidationError
from .grid import SpinorField
from .potential import PotentialSpec, eval_v
from .solver import ScatterChannel, recover_phi


@dataclass(frozen=True)
class DirectionSet:
    """Unit vectors ``omega`` (M, 3) with surface weights summing to 4 pi."""

    omega: np.ndarray
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float).reshape(-1, 3)
        if np.any(np.abs(np.linalg.norm(w, axis=1) - 1.0) > 1e-12):
            raise ValidationError("directions must be unit vectors", module="scattering")
        object.__setattr__(self, "omega", w / np.linalg.norm(w, axis=1, keepdims=True))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).reshape(-1))

    def __len__(self):
        return len(self.omega)

    @classmethod
    def lebedev(cls, degree: int = 17) -> "DirectionSet":
        xyz, w = integrate.lebedev_rule(degree)
        return cls(xyz.T, w, f"lebedev-{degree}")

    @classmethod
    def latlong(cls, n_theta: int = 16, n_phi: int = 32) -> "DirectionSet":
        """Gauss-Legendre in cos(theta) times uniform phi."""
        x, wx = np.polynomial.legendre.leggauss(n_theta)
        ph = 2 * np.pi * np.arange(n_phi) / n_phi
        ct, P = np.meshgrid(x, ph, indexing="ij")
        st = np.sqrt(1 - ct * ct)
        om = np.stack([st * np.cos(P), st * np.sin(P), ct], axis=-1).reshape(-1, 3)
        w = (wx[:, None] * np.full(n_phi, 2 * np.pi / n_phi)[None, :]).reshape(-1)
        return cls(om, w, f"latlong-{n_theta}x{n_phi}")

    @classmethod
    def fibonacci(cls, count: int = 20) -> "DirectionSet":
        """Quasi-uniform spiral set with equal weights (for per-direction checks)."""
        i = np.arange(count) + 0.5
        ct = 1 - 2 * i / count
        ph = np.pi * (1 + 5 ** 0.5) * i
        st = np.sqrt(1 - ct * ct)
        om = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)
        return cls(om, np.full(count, 4 * np.pi / count), f"fibonacci-{count}")

    @classmethod
    def single(cls, omega) -> "DirectionSet":
        w = np.asarray(omega, dtype=float).reshape(-1, 3)
        return cls(w / np.linalg.norm(w, axis=1, keepdims=True), np.full(len(w), 4 * np.pi / len(w)))


@dataclass
class ScatteringResult:
    channel: ScatterChannel
    directions: DirectionSet
    amplitudes: np.ndarray          # (M, 4)
    meta: dict = field(default_factory=dict)

    @property
    def strength(self) -> np.ndarray:
        """||f(w)||^2; a convenience scalar, not a cross-section."""
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def integrated_strength(self) -> float:
        return float(np.dot(self.directions.weights, self.strength))

    def to_dict(self):
        dirs = []
        for om, f, s in zip(self.directions.omega, self.amplitudes, self.strength):
            dirs.append({"omega": om.tolist(), "f_re": f.real.tolist(), "f_im": f.imag.tolist(),
                         "strength": float(s)})
        return {"channel": self.channel.to_dict(), "lambda": self.channel.lam,
                "k": list(self.channel.k), "directions": dirs, "meta": self.meta}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    def write_csv(self, path):
        om = self.directions.omega
        theta = np.arccos(np.clip(om[:, 2], -1, 1))
        phi = np.mod(np.arctan2(om[:, 1], om[:, 0]), 2 * np.pi)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "phi", "strength"])
            for t, p, s in zip(theta, phi, self.strength):
                w.writerow([repr(float(t)), repr(float(p)), repr(float(s))])


def _apply_prefactor(lam, kap, omega, m, vec, projector):
    if projector:
        M = lam * np.eye(4) + h0(np.real(kap) * omega, m)
        return -np.einsum("dij,dj->di", M, vec) / (4 * np.pi)
    return -lam * vec / (4 * np.pi)


def amplitude(phi: SpinorField, ch: ScatterChannel, spec: PotentialSpec, mc=None,
              dirs: DirectionSet = None, projector: bool = True) -> ScatteringResult:
    """f(w) = -(1/4 pi) M(w) sum_s h^3 e^{-i kappa w.s} V(s) phi(s), M = lambda + H0(kappa w)."""
    mc = ch.mc if mc is None else mc
    dirs = dirs or DirectionSet.lebedev()
    if abs(ch.lam) <= _mass(mc):
        raise ValidationError("amplitude needs |lambda| > m", module="scattering")
    grid = phi.grid
    pts = grid.points().reshape(-1, 3)
    kap = ch.kappa
    if spec.is_zero:
        f = np.zeros((len(dirs), 4), dtype=complex)
    else:
        Vphi = np.einsum("sij,sj->si", eval_v(pts, spec), phi.samples.reshape(-1, 4))
        keep = np.any(Vphi != 0, axis=1)
        ph = np.exp(-1j * kap * (dirs.omega @ pts[keep].T))
        integ = grid.cell_volume * (ph @ Vphi[keep])
        f = _apply_prefactor(ch.lam, kap, dirs.omega, _mass(mc), integ, projector)
    return ScatteringResult(ch, dirs, f, {"grid": grid.to_dict(), "projector": projector})


def born_amplitude_oracle(spec: PotentialSpec, ch: ScatterChannel, mc=None, omega=None,
                          projector: bool = True) -> np.ndarray:
    """First Born amplitude for nu = g exp(-a r^2), A = 0, in closed form.

    int e^{-i kappa w.s} (-e g e^{-a s^2}) e^{ik.s} ds = -e g (pi/a)^{3/2} e^{-|k - kappa w|^2/(4a)}.
    """
    if not spec.is_scalar_gaussian:
        raise SpecMismatchError("the Born oracle needs a scalar gaussian potential")
    mc = ch.mc if mc is None else mc
    om = np.asarray(omega, dtype=float).reshape(-1, 3)
    om = om / np.linalg.norm(om, axis=1, keepdims=True)
    g_n = eigen_h0(np.asarray(ch.k), mc).g[ch.n - 1]
    g, a, e = spec.nu.g, spec.nu.a, spec.e_charge
    kap = np.real(ch.kappa)
    q = np.asarray(ch.k)[None, :] - kap * om
    scal = -e * g * (np.pi / a) ** 1.5 * np.exp(-np.sum(q * q, axis=1) / (4 * a))
    f = _apply_prefactor(ch.lam, kap, om, _mass(mc), scal[:, None] * g_n[None, :], projector)
    return f[0] if np.ndim(omega) == 1 else f


def born_quadrature(spec: PotentialSpec, ch: ScatterChannel, grid, mc=None, omega=None,
                    projector: bool = True) -> np.ndarray:
    """The first Born integral by grid quadrature (phi replaced by the incident wave)."""
    from .solver import incident_wave

    mc = ch.mc if mc is None else mc
    inc = incident_wave(ch, grid, mc)
    dirs = DirectionSet.single(omega)
    return amplitude(inc, ch, spec, mc, dirs, projector).amplitudes


@dataclass
class FarFieldReport:
    radii: list
    epsilon: np.ndarray       # (n_radii, M): R ||phi - inc - e^{i kappa R} f / R||
    fitted: np.ndarray        # (M, 4): two-point 1/R fit from the two largest radii
    fit_deviation: np.ndarray  # (M,): ||fitted - f|| / ||f||
    decreasing: bool

    def to_dict(self):
        return {"radii": list(self.radii), "epsilon": self.epsilon.tolist(),
                "fit_deviation": self.fit_deviation.tolist(), "decreasing": self.decreasing}


def far_field_check(psi: SpinorField, result: ScatteringResult, spec: PotentialSpec,
                    radii=None, mc=None) -> FarFieldReport:
    """Check phi(R w) = e^{ik.R w} g_n + e^{i kappa R} f(w)/R + o(1/R) along result.directions.

    phi is evaluated off the grid through ``recover_phi``.  Default radii are
    10, 20, 40 times the half-width of the solve box.
    """
    ch = result.channel
    mc = ch.mc if mc is None else mc
    grid = psi.grid
    if radii is None:
        radii = [10 * grid.length / 2, 20 * grid.length / 2, 40 * grid.length / 2]
    radii = sorted(float(R) for R in radii)
    om = result.directions.omega
    f = result.amplitudes
    kap = ch.kappa
    g_n = eigen_h0(np.asarray(ch.k), mc).g[ch.n - 1]
    eps, scaled = [], []
    for R in radii:
        pts = R * om
        phi = recover_phi(psi, ch, grid, spec, mc, points=pts)
        inc = np.exp(1j * (pts @ np.asarray(ch.k)))[:, None] * g_n
        sc = phi - inc
        eps.append(R * np.linalg.norm(sc - np.exp(1j * kap * R) / R * f, axis=1))
        scaled.append(R * np.exp(-1j * kap * R) * sc)
    eps = np.array(eps)
    R1, R2 = radii[-2], radii[-1]
    # a(R) = f + c/R  ->  f = (R2 a2 - R1 a1)/(R2 - R1)
    fitted = (R2 * scaled[-1] - R1 * scaled[-2]) / (R2 - R1)
    nf = np.linalg.norm(f, axis=1)
    dev = np.linalg.norm(fitted - f, axis=1) / np.where(nf > 0, nf, 1.0)
    dec = bool(np.all(np.diff(eps, axis=0) < 0)) if np.any(eps) else True
    return FarFieldReport(radii, eps, fitted, dev, dec)
