"""Potentials V(r) = -e nu(r) I + e alpha.A(r), their factorization, and decay diagnostics.

Matrix norms are spectral norms throughout.  For this family of matrices the
eigenvalues are -e nu +- e |A|, so ||V(r)|| = |e| (|nu| + |A|) exactly; the
closed form is used on grids and checked against SVD in the tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import interpolate, integrate

from .algebra import _ALPHA, alpha_dot
from .errors import NonHermitianError, ValidationError
from .grid import GridSpec, QuadratureSpec

FAMILIES = ("zero", "constant", "gaussian", "smoothed-yukawa")
ZERO_EIGENVALUE = 1e-14  # relative to ||V||; smaller |d| count as d = 0, sign +1


@dataclass(frozen=True)
class Profile:
    """A real scalar profile of |r|.

    ``gaussian``: g exp(-a r^2); ``smoothed-yukawa``: g exp(-a r)/(r + eps0);
    ``constant``: g; ``zero``.
    """

    kind: str = "zero"
    g: float = 0.0
    a: float = 1.0
    eps0: float = 0.1

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValidationError(f"unknown profile family {self.kind!r}", module="potential")
        for name in ("g", "a", "eps0"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"profile parameter {name} must be finite", module="potential")
        if self.kind in ("gaussian", "smoothed-yukawa") and self.a < 0:
            raise ValidationError("decay rate a must be non-negative", module="potential")
        if self.kind == "smoothed-yukawa" and not self.eps0 > 0:
            raise ValidationError("smoothed-yukawa needs eps0 > 0", module="potential")

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(rho)
        if self.kind == "constant":
            return np.full_like(rho, self.g)
        if self.kind == "gaussian":
            return self.g * np.exp(-self.a * rho * rho)
        return self.g * np.exp(-self.a * rho) / (rho + self.eps0)

    def scaled(self, c: float) -> "Profile":
        return Profile(self.kind, self.g * c, self.a, self.eps0)

    def to_dict(self):
        return {"kind": self.kind, "g": self.g, "a": self.a, "eps0": self.eps0}


@dataclass
class TablePotential:
    """Tabulated nu and A at points r (rows of a CSV r1,r2,r3,nu,A1,A2,A3).

    Tables on a full tensor grid are interpolated linearly; scattered tables
    use the nearest sample within ``reach`` (default: twice the median spacing).
    Outside the table the potential is zero.
    """

    points: np.ndarray
    nu: np.ndarray
    A: np.ndarray
    reach: float = None
    _interp: object = field(default=None, repr=False)
    _kind: str = field(default="", repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.nu = np.asarray(self.nu, dtype=float).reshape(-1)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, 3)
        if not (len(self.points) == len(self.nu) == len(self.A)) or len(self.nu) == 0:
            raise ValidationError("table columns have inconsistent lengths", module="potential")
        if not (np.all(np.isfinite(self.nu)) and np.all(np.isfinite(self.A))):
            raise ValidationError("table values must be finite", module="potential")
        axes = [np.unique(self.points[:, k]) for k in range(3)]
        vals = np.concatenate([self.nu[:, None], self.A], axis=1)
        if np.prod([len(a) for a in axes]) == len(self.nu) and min(len(a) for a in axes) >= 2:
            idx = [np.searchsorted(axes[k], self.points[:, k]) for k in range(3)]
            cube = np.zeros(tuple(len(a) for a in axes) + (4,))
            cube[idx[0], idx[1], idx[2]] = vals
            self._interp = interpolate.RegularGridInterpolator(
                axes, cube, bounds_error=False, fill_value=0.0)
            self._kind = "grid"
            self.bounds = np.array([[a[0], a[-1]] for a in axes])
        else:
            from scipy.spatial import cKDTree

            tree = cKDTree(self.points)
            if self.reach is None:
                d, _ = tree.query(self.points, k=2)
                self.reach = 2.0 * float(np.median(d[:, 1])) if len(self.points) > 1 else np.inf
            self._interp = (tree, vals)
            self._kind = "scattered"
            self.bounds = np.stack([self.points.min(0), self.points.max(0)], axis=1)

    @property
    def half_extent(self) -> float:
        """Radius of the largest origin-centred ball inside the table's bounding box."""
        return float(np.min(np.abs(self.bounds)))

    def values(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        flat = r.reshape(-1, 3)
        if self._kind == "grid":
            out = self._interp(flat)
        else:
            tree, vals = self._interp
            d, i = tree.query(flat)
            out = np.where((d <= self.reach)[:, None], vals[np.minimum(i, len(vals) - 1)], 0.0)
        return out.reshape(r.shape[:-1] + (4,))

    @classmethod
    def from_csv(cls, path) -> "TablePotential":
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2,
                          skiprows=_header_rows(path))
        if data.shape[1] != 7:
            raise ValidationError(f"{path}: expected 7 columns r1,r2,r3,nu,A1,A2,A3",
                                  module="potential")
        return cls(data[:, :3], data[:, 3], data[:, 4:])


def _header_rows(path) -> int:
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(x) for x in first.split(",")]
        return 0
    except ValueError:
        return 1


@dataclass(frozen=True)
class PotentialSpec:
    """nu (scalar) and A (three components) with charge e; or a table."""

    nu: Profile = Profile()
    A: tuple = None
    e_charge: float = 1.0
    table: TablePotential = None

    def __post_init__(self):
        if self.A is not None:
            if len(self.A) != 3:
                raise ValidationError("vector potential needs three components", module="potential")
            object.__setattr__(self, "A", tuple(self.A))
        if not np.isfinite(self.e_charge):
            raise ValidationError("charge must be finite", module="potential")

    @classmethod
    def gaussian(cls, g: float, a: float = 1.0, e_charge: float = 1.0) -> "PotentialSpec":
        return cls(Profile("gaussian", g, a), None, e_charge)

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls()

    @property
    def is_zero(self) -> bool:
        if self.table is not None:
            return not (np.any(self.table.nu) or np.any(self.table.A))
        if self.e_charge == 0:
            return True
        parts = [self.nu] + list(self.A or ())
        return all(p.kind == "zero" or p.g == 0 for p in parts)

    @property
    def is_scalar_gaussian(self) -> bool:
        vec_zero = self.A is None or all(p.kind == "zero" or p.g == 0 for p in self.A)
        return self.table is None and self.nu.kind == "gaussian" and vec_zero

    def scaled(self, c: float) -> "PotentialSpec":
        """Same shape with every profile multiplied by c (tables are scaled too)."""
        if self.table is not None:
            t = self.table
            return PotentialSpec(table=TablePotential(t.points, c * t.nu, c * t.A, t.reach),
                                 e_charge=self.e_charge)
        A = None if self.A is None else tuple(p.scaled(c) for p in self.A)
        return PotentialSpec(self.nu.scaled(c), A, self.e_charge)

    def fields(self, r):
        """(nu, A) at points ``r`` of shape (..., 3)."""
        r = np.asarray(r, dtype=float)
        if self.table is not None:
            v = self.table.values(r)
            return v[..., 0], v[..., 1:]
        rho = np.sqrt(np.sum(r * r, axis=-1))
        nu = self.nu(rho)
        if self.A is None:
            A = np.zeros(r.shape)
        else:
            A = np.stack([p(rho) for p in self.A], axis=-1)
        return nu, A

    def to_dict(self):
        if self.table is not None:
            return {"table_points": int(len(self.table.nu)), "e_charge": self.e_charge}
        return {"nu": self.nu.to_dict(),
                "A": None if self.A is None else [p.to_dict() for p in self.A],
                "e_charge": self.e_charge}


# ---------------------------------------------------------------- evaluation

def eval_v(r, spec: PotentialSpec) -> np.ndarray:
    """V(r) = -e nu(r) I + e sum_k A_k(r) alpha_k, shape (..., 4, 4)."""
    nu, A = spec.fields(r)
    e = spec.e_charge
    return -e * nu[..., None, None] * np.eye(4) + e * alpha_dot(A)


def v_norm(r, spec: PotentialSpec) -> np.ndarray:
    """Spectral norm ||V(r)|| = |e| (|nu| + |A|)."""
    nu, A = spec.fields(r)
    return abs(spec.e_charge) * (np.abs(nu) + np.sqrt(np.sum(A * A, axis=-1)))


def spectral_norm(M) -> np.ndarray:
    """Largest singular value of each trailing 4x4 block."""
    return np.linalg.norm(np.asarray(M), ord=2, axis=(-2, -1))


# ---------------------------------------------------------------- factorization

@dataclass(frozen=True)
class FactorPair:
    """V = v1 w1 v1 with v1 = |V|^{1/2} and w1 = sign(V) (sign 0 = +1)."""

    v1: np.ndarray
    w1: np.ndarray


def _fix_phases(U):
    """Make the first non-negligible entry of every eigenvector real positive."""
    mag = np.abs(U)
    lead = np.argmax(mag > 1e-12 * mag.max(axis=-2, keepdims=True), axis=-2)
    piv = np.take_along_axis(U, lead[..., None, :], axis=-2)
    return U * (np.abs(piv) / np.where(piv == 0, 1.0, piv))


def factorize_v(v, hermitian_tol: float = 1e-12) -> FactorPair:
    """Pointwise factorization of Hermitian 4x4 matrices, vectorized over leading axes.

    Eigenvalues come back ascending from ``eigh``; eigenvectors are phase fixed.
    Both factors are functions of V alone, so the remaining freedom inside
    degenerate eigenspaces does not affect them.
    """
    v = np.asarray(v, dtype=complex)
    if v.shape[-2:] != (4, 4):
        raise ValidationError("factorize_v expects 4x4 matrices", module="potential")
    scale = np.maximum(1.0, np.max(np.abs(v), axis=(-2, -1)))
    skew = np.max(np.abs(v - np.conj(np.swapaxes(v, -1, -2))), axis=(-2, -1))
    if np.any(skew > hermitian_tol * scale):
        raise NonHermitianError(f"matrix is not Hermitian (max |V - V*| = {skew.max():.3e})")
    d, U = np.linalg.eigh(v)
    U = _fix_phases(U)
    dmax = np.max(np.abs(d), axis=-1, keepdims=True)
    small = np.abs(d) <= ZERO_EIGENVALUE * dmax
    sgn = np.where(small | (d > 0), 1.0, -1.0)
    root = np.where(small, 0.0, np.sqrt(np.abs(d)))
    Uh = np.conj(np.swapaxes(U, -1, -2))
    v1 = (U * root[..., None, :]) @ Uh
    w1 = (U * sgn[..., None, :]) @ Uh
    return FactorPair(v1, w1)


def factor_field(points, spec: PotentialSpec) -> FactorPair:
    """V1, W1 at every point of ``points`` (..., 3)."""
    return factorize_v(eval_v(points, spec))


# ---------------------------------------------------------------- Rolnik integral

@dataclass
class RolnikEstimate:
    """Estimate of int int ||V(r)|| ||V(s)|| / |r - s|^2 dr ds with its refinement history."""

    value: float
    sequence: list
    points: list
    converged: bool

    def __float__(self):
        return float(self.value)


def _rolnik_once(spec: PotentialSpec, extent: float, points: int) -> float:
    from scipy.fft import irfftn, next_fast_len, rfftn

    g = QuadratureSpec(extent, points).grid()
    h = g.h
    w = v_norm(g.points(), spec)
    if not np.any(w):
        return 0.0
    N = next_fast_len(2 * points)
    d = np.fft.fftfreq(N, 1.0 / N)
    D2 = d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2
    with np.errstate(divide="ignore"):
        K = np.where(D2 > 0, h ** 3 / (h * h * D2), 0.0)
    # ball of the cell's volume: int_ball |x|^{-2} dx = 4 pi a
    K[0, 0, 0] = 4.0 * np.pi * (3.0 / (4.0 * np.pi)) ** (1.0 / 3.0) * h
    conv = irfftn(rfftn(K) * rfftn(w, s=(N,) * 3), s=(N,) * 3)[:points, :points, :points]
    return float(h ** 3 * np.sum(w * conv))


def rolnik_norm(spec: PotentialSpec, quad: QuadratureSpec = None, levels: int = 3,
                max_points: int = 128, tol: float = 0.05) -> RolnikEstimate:
    """Tensor quadrature of the Rolnik integral with dyadic refinement.

    The box ``quad.extent`` is fixed while the points per axis double
    ``levels - 1`` times (capped at ``max_points``).  A ``RuntimeWarning``
    flags a sequence whose changes do not shrink.
    """
    quad = quad or QuadratureSpec()
    seq, pts = [], []
    p = quad.points
    for _ in range(levels):
        if p > max_points:
            break
        seq.append(_rolnik_once(spec, quad.extent, p))
        pts.append(p)
        p *= 2
    changes = [abs(b - a) / max(abs(b), 1e-300) for a, b in zip(seq, seq[1:])]
    converged = bool(seq[-1] == 0.0 or (changes and changes[-1] < tol))
    if len(changes) >= 2 and changes[-1] >= changes[-2] and seq[-1] > seq[-2] > seq[-3]:
        warnings.warn("Rolnik estimate keeps growing under refinement; the integral may diverge",
                      RuntimeWarning, stacklevel=2)
    return RolnikEstimate(seq[-1], seq, pts, converged)


# ---------------------------------------------------------------- decay diagnostics

@dataclass
class DecayReport:
    rolnik_estimate: float
    l1_norm_estimate: float
    sup_norm: float
    condition_4_3: dict
    condition_4_18: dict

    def to_dict(self):
        return {"rolnik_estimate": self.rolnik_estimate, "l1_norm_estimate": self.l1_norm_estimate,
                "sup_norm": self.sup_norm, "condition_4_3": self.condition_4_3,
                "condition_4_18": self.condition_4_18}


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def radial_profile(spec: PotentialSpec, radii, degree: int = 17):
    """(max over directions of ||V||, angular mean of ||V||^2) at each radius."""
    xyz, w = integrate.lebedev_rule(degree)
    dirs = xyz.T
    pts = np.asarray(radii)[:, None, None] * dirs[None, :, :]
    nv = v_norm(pts, spec)
    return nv.max(axis=1), (nv ** 2 @ w) / (4.0 * np.pi)


def decay_check(spec: PotentialSpec, quad: QuadratureSpec = None, epsilon: float = 1.0,
                radius: float = None, n_radii: int = 96) -> DecayReport:
    """Numerical evidence for the decay hypotheses of the wave-operator theorem.

    The tail exponent comes from a log-log fit of the radial profile
    p(r) = max_w ||V(r w)|| over [R/4, R].  A fit whose outer half is markedly
    steeper than its inner half (or a vanishing tail) is reported as
    super-polynomial, alpha = inf, with M taken as sup p(r) r^4.

    For the integral condition, I(t) = int_{|r| > t eps} ||V||^2 dr uses the
    angular mean of ||V||^2 on the sampled radii plus the analytic power-law
    tail beyond R; partial sums of int I(t)^{1/2} dt are reported on a
    geometric t-ladder and the remainder beyond the ladder is extrapolated.
    """
    quad = quad or QuadratureSpec()
    if radius is None:
        radius = spec.table.half_extent if spec.table is not None else quad.extent / 2.0
    R = float(radius)
    radii = np.geomspace(R / 512.0, R, n_radii)
    pmax, p2 = radial_profile(spec, radii)

    # tail exponent
    tail = radii >= R / 4.0
    good = tail & (pmax > 1e-280)
    super_poly = False
    if good.sum() < 4:
        alpha, M = np.inf, 0.0
        super_poly = True
    else:
        rt, pt = radii[good], pmax[good]
        alpha = -_slope(rt, pt)
        half = rt >= np.sqrt(rt[0] * rt[-1])
        inner, outer = -_slope(rt[~half], pt[~half]), -_slope(rt[half], pt[half])
        if outer > 1.2 * inner + 0.5:
            super_poly = True
        if super_poly:
            alpha = np.inf
            M = float(np.max(pmax * radii ** 4))
        else:
            M = float(np.max(pt * rt ** alpha))
    c418 = {"alpha_hat": float(alpha), "M_hat": M, "super_polynomial": bool(super_poly),
            "fit_range": [R / 4.0, R], "flag": bool(alpha > 3.0)}

    # integral condition
    rr = np.concatenate([[0.0], radii])
    dens = 4.0 * np.pi * rr ** 2 * np.concatenate([[p2[0]], p2])
    cum = integrate.cumulative_trapezoid(dens[::-1], -rr[::-1], initial=0.0)[::-1]
    if np.isinf(alpha):
        outer_tail = 0.0
        tail_ok = True
    else:
        # ||V||^2 ~ c r^{-2 alpha}: tail int_R^inf 4 pi r^2 c r^{-2 alpha} dr
        c2 = p2[-1] * R ** (2 * alpha)
        tail_ok = alpha > 1.5
        outer_tail = 4 * np.pi * c2 * R ** (3 - 2 * alpha) / (2 * alpha - 3) if tail_ok else np.inf

    def inner_integral(t):
        s = np.abs(t) * epsilon
        if s >= R:
            if np.isinf(alpha):
                return 0.0
            return 4 * np.pi * c2 * s ** (3 - 2 * alpha) / (2 * alpha - 3) if tail_ok else np.inf
        return float(np.interp(s, rr, cum)) + outer_tail

    ts = np.concatenate([[0.0], np.geomspace(R / (512.0 * epsilon), R / epsilon, 48)])
    vals = np.sqrt([inner_integral(t) for t in ts])
    partial = 2.0 * integrate.cumulative_trapezoid(vals, ts, initial=0.0)
    if np.isinf(alpha):
        beta = np.inf
        remainder = 0.0
    else:
        beta = alpha - 1.5  # I(t)^{1/2} ~ t^{-(alpha - 3/2)}
        T = ts[-1]
        remainder = 2.0 * vals[-1] * T / (beta - 1.0) if beta > 1.0 else np.inf
    c43 = {"epsilon": epsilon, "t": ts[1:].tolist(), "partial_sums": partial[1:].tolist(),
           "tail_exponent": float(beta), "extrapolated_total": float(partial[-1] + remainder),
           "converged": bool(np.isfinite(remainder) and np.isfinite(partial[-1]))}

    g = quad.grid()
    nv = v_norm(g.points(), spec)
    rol = rolnik_norm(spec, quad, levels=2)
    return DecayReport(float(rol), float(g.cell_volume * nv.sum()), float(nv.max()), c43, c418)
