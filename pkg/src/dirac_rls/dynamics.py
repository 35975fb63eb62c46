"""Time-dependent propagation, wave operators and the scattering operator.

Sign conventions: ``free_propagate(u, t)`` is e^{-itL0} u, ``full_propagate(u, t)``
is e^{-itL} u, and Theta(t) = e^{itL} e^{-itL0}.  All propagation is periodic on
the grid; wave-operator estimates therefore refuse to run when the packet
reaches the boundary layer (``BoxEscapeError``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import integrate

from .algebra import _mass, eigen_h0, energy
from .errors import BoxEscapeError, ValidationError
from .grid import GridSpec, SpinorField, forward, inverse
from .potential import PotentialSpec, eval_v, v_norm

@dataclass(frozen=True)
class WavePacketSpec:
    """Gaussian packet around momentum p0 (|psi~|^2 has standard deviation sigma_p per axis).

    The momentum amplitude is a(p) = w(|p|) exp(-|p - p0|^2/(4 sigma_p^2) - i p.r0),
    times the normalized channel-n eigenvector of H0(p).  w is a smooth window
    equal to 1 for ||p| - |p0|| < 4 sigma_p and 0 beyond 6 sigma_p, which keeps
    the support inside an annulus away from p = 0.
    """

    p0: tuple
    sigma_p: float
    n: int = 3
    r0: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        p0 = tuple(float(x) for x in np.asarray(self.p0, dtype=float).reshape(3))
        r0 = tuple(float(x) for x in np.asarray(self.r0, dtype=float).reshape(3))
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "r0", r0)
        if not self.sigma_p > 0:
            raise ValidationError("sigma_p must be positive", module="dynamics")
        if np.linalg.norm(p0) <= 4 * self.sigma_p:
            raise ValidationError("packet must satisfy |p0| > 4 sigma_p (annular support)",
                                  module="dynamics")
        if self.n not in (1, 2, 3, 4):
            raise ValidationError("channel must be 1..4", module="dynamics")

    def to_dict(self):
        return {"p0": list(self.p0), "sigma_p": self.sigma_p, "n": self.n, "r0": list(self.r0)}


def _window(x):
    """C-infinity step: 1 for x <= 0, 0 for x >= 1."""
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
        b = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    return a / (a + b)


def packet_amplitude(pkt: WavePacketSpec, q: np.ndarray) -> np.ndarray:
    """Scalar momentum amplitude a(q) (unnormalized)."""
    p0 = np.asarray(pkt.p0)
    qn = np.linalg.norm(q, axis=-1)
    s = pkt.sigma_p
    w = _window((np.abs(qn - np.linalg.norm(p0)) - 4 * s) / (2 * s))
    return w * np.exp(-np.sum((q - p0) ** 2, axis=-1) / (4 * s * s) - 1j * (q @ np.asarray(pkt.r0)))


def make_packet(pkt: WavePacketSpec, grid: GridSpec, mc) -> SpinorField:
    """Unit-norm packet on ``grid``; ``meta['scale']`` is the factor applied to a(q)."""
    q = grid.momenta()
    a = packet_amplitude(pkt, q)
    g = eigen_h0(q, mc, normalize=True).g[..., pkt.n - 1, :]
    u = SpinorField(inverse(a[..., None] * g, grid), grid)
    nrm = u.norm()
    u = u * (1.0 / nrm)
    u.meta["scale"] = 1.0 / nrm
    return u


@dataclass(frozen=True)
class PropagationConfig:
    dt: float = 0.01
    T: float = 10.0
    order: int = 2
    grid: GridSpec = None
    escape_tol: float = 1e-6
    boundary_cells: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive", module="dynamics")
        if not self.T >= self.dt:
            raise ValidationError("T must be at least dt", module="dynamics")
        if self.order not in (1, 2):
            raise ValidationError("splitting order must be 1 (Lie) or 2 (Strang)", module="dynamics")

    def to_dict(self):
        return {"dt": self.dt, "T": self.T, "order": self.order,
                "grid": None if self.grid is None else self.grid.to_dict()}


# ---------------------------------------------------------------- free evolution

class _FreeStep:
    """exp(-i t H0(q)) = cos(E t) - i t sinc(E t) H0(q) on component-major arrays (4, n, n, n).

    H0(q) F is spelled out through the Pauli blocks of alpha, which avoids
    forming 4x4 symbols.
    """

    def __init__(self, grid: GridSpec, mc):
        q = grid.momenta()
        self.q3 = np.ascontiguousarray(q[..., 2])
        self.qp = q[..., 0] + 1j * q[..., 1]
        self.qm = np.conj(self.qp)
        self.E = energy(q, mc)
        self.m = _mass(mc)
        self._cache = {}

    def coefficients(self, t):
        if t not in self._cache:
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[t] = (np.cos(self.E * t), -1j * t * np.sinc(self.E * t / np.pi))
        return self._cache[t]

    def h0(self, F):
        m, q3, qp, qm = self.m, self.q3, self.qp, self.qm
        return np.stack([m * F[0] + q3 * F[2] + qm * F[3],
                         m * F[1] + qp * F[2] - q3 * F[3],
                         -m * F[2] + q3 * F[0] + qm * F[1],
                         -m * F[3] + qp * F[0] - q3 * F[1]])

    def apply_hat(self, F, t):
        c, s = self.coefficients(t)
        return c * F + s * self.h0(F)

    def __call__(self, u, t):
        """``u`` in the public layout (n, n, n, 4)."""
        if t == 0:
            return u.copy()
        F = _fft(_to_cm(u))
        return _to_pm(_ifft(self.apply_hat(F, t)))


def _to_cm(u):
    return np.ascontiguousarray(np.moveaxis(u, -1, 0))


def _to_pm(u):
    return np.ascontiguousarray(np.moveaxis(u, 0, -1))


def _fft(u):
    return sfft.fftn(u, axes=(1, 2, 3), overwrite_x=True)


def _ifft(u):
    return sfft.ifftn(u, axes=(1, 2, 3), overwrite_x=True)


def free_propagate(field_: SpinorField, t: float, mc) -> SpinorField:
    """e^{-itL0} applied exactly per Fourier mode (unitary to rounding)."""
    out = _FreeStep(field_.grid, mc)(field_.samples, float(t))
    return SpinorField(out, field_.grid)


# ---------------------------------------------------------------- full evolution

class _PotentialStep:
    """Pointwise exp(-i tau V(r)) from the Hermitian eigendecomposition of V(r)."""

    def __init__(self, grid: GridSpec, spec: PotentialSpec):
        pts = grid.points()
        self.zero = spec.is_zero
        self.scalar = spec.table is None and (spec.A is None or all(
            p.kind == "zero" or p.g == 0 for p in spec.A))
        if self.zero:
            return
        if self.scalar:
            nu, _ = spec.fields(pts)
            self.diag = -spec.e_charge * nu          # V = diag * I
        else:
            V = eval_v(pts, spec)
            self.d, self.U = np.linalg.eigh(V)
        self._cache = {}

    def matrix(self, tau):
        if tau not in self._cache:
            if len(self._cache) > 4:
                self._cache.clear()
            if self.scalar:
                self._cache[tau] = np.exp(-1j * tau * self.diag)
            else:
                ph = np.exp(-1j * tau * self.d)
                self._cache[tau] = (self.U * ph[..., None, :]) @ np.conj(np.swapaxes(self.U, -1, -2))
        return self._cache[tau]

    def __call__(self, u, tau):
        """``u`` component-major (4, n, n, n)."""
        if self.zero:
            return u
        M = self.matrix(tau)
        if self.scalar:
            return M * u
        return np.einsum("...ij,j...->i...", M, u)


class Propagator:
    """Reusable e^{-itL} on a fixed grid (Strang or Lie splitting)."""

    def __init__(self, grid: GridSpec, spec: PotentialSpec, mc, dt: float, order: int = 2):
        self.grid = grid
        self.free = _FreeStep(grid, mc)
        self.pot = _PotentialStep(grid, spec)
        self.dt = float(dt)
        self.order = order
        vmax = float(v_norm(grid.points(), spec).max()) if not spec.is_zero else 0.0
        if self.dt * vmax > 0.5:
            warnings.warn(f"dt * sup||V|| = {self.dt * vmax:.2f} > 0.5; splitting error may be large",
                          RuntimeWarning, stacklevel=3)

    def __call__(self, u: np.ndarray, t: float) -> np.ndarray:
        """e^{-itL} u for ``u`` of shape (n, n, n, 4)."""
        t = float(t)
        if t == 0:
            return u.copy()
        if self.pot.zero:
            return self.free(u, t)
        nsteps = max(1, int(round(abs(t) / self.dt)))
        tau = t / nsteps
        F = _fft(_to_cm(u))
        if self.order == 2:
            F = self.free.apply_hat(F, tau / 2)
            for j in range(nsteps):
                v = self.pot(_ifft(F), tau)
                F = self.free.apply_hat(_fft(v), tau / 2 if j == nsteps - 1 else tau)
            return _to_pm(_ifft(F))
        for _ in range(nsteps):
            v = self.pot(_ifft(self.free.apply_hat(F, tau)), tau)
            F = _fft(v)
        return _to_pm(_ifft(F))


def full_propagate(field_: SpinorField, t: float, cfg: PropagationConfig, spec: PotentialSpec,
                   mc) -> SpinorField:
    """e^{-itL} by operator splitting with steps of about cfg.dt."""
    prop = Propagator(field_.grid, spec, mc, cfg.dt, cfg.order)
    return SpinorField(prop(field_.samples, t), field_.grid)


def theta(t: float, psi: SpinorField, cfg: PropagationConfig, spec: PotentialSpec, mc) -> SpinorField:
    """Theta(t) psi = e^{itL} e^{-itL0} psi."""
    if t == 0 or spec.is_zero:
        return psi.copy()
    u = free_propagate(psi, t, mc)
    return full_propagate(u, -t, cfg, spec, mc)


# ---------------------------------------------------------------- wave operators

def boundary_fraction(u: np.ndarray, cells: int) -> float:
    """Share of ||u||^2 within ``cells`` of any grid face."""
    dens = np.sum(np.abs(u) ** 2, axis=-1)
    tot = dens.sum()
    if tot == 0:
        return 0.0
    c = cells
    inner = dens[c:-c, c:-c, c:-c].sum()
    return float((tot - inner) / tot)


def _check_escape(u, cfg: PropagationConfig, what: str):
    frac = boundary_fraction(u, cfg.boundary_cells)
    if frac > cfg.escape_tol:
        raise BoxEscapeError(f"{what}: {frac:.2e} of the norm lies in the boundary layer "
                             f"(tolerance {cfg.escape_tol:.1e}); enlarge the box")


@dataclass
class WaveOperatorEstimate:
    field: SpinorField
    times: list
    cauchy_differences: list
    converged: bool
    norm_ratio: float
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"times": self.times, "cauchy_differences": self.cauchy_differences,
                "converged": self.converged, "norm_ratio": self.norm_ratio, **self.meta}


def wave_operator_estimate(pkt: WavePacketSpec, cfg: PropagationConfig, spec: PotentialSpec, mc,
                           t_ladder=None, tol: float = 1e-3, want_field: bool = True
                           ) -> WaveOperatorEstimate:
    """Theta(t_j) psi along a ladder (negative times estimate W-).

    Cauchy differences use ||Theta(t_{j+1})psi - Theta(t_j)psi|| =
    ||e^{i(t_{j+1} - t_j)L} u_{j+1} - u_j|| with u_j = e^{-i t_j L0} psi, so
    only the gaps are propagated under L.  The returned field is
    Theta(t_last) psi.  Converged means the last difference is below
    ``tol * ||psi||``.
    """
    grid = cfg.grid
    if grid is None:
        raise ValidationError("PropagationConfig.grid is required", module="dynamics")
    psi = make_packet(pkt, grid, mc)
    if t_ladder is None:
        T0 = cfg.T / 8.0
        t_ladder = [T0, 2 * T0, 4 * T0, 8 * T0]
    ts = [float(t) for t in t_ladder]
    if spec.is_zero:
        return WaveOperatorEstimate(psi, ts, [0.0] * (len(ts) - 1), True, 1.0)
    free = _FreeStep(grid, mc)
    prop = Propagator(grid, spec, mc, cfg.dt, cfg.order)
    us = []
    for t in ts:
        u = free(psi.samples, t)
        _check_escape(u, cfg, f"free packet at t = {t:g}")
        us.append(u)
    diffs = []
    for j in range(len(ts) - 1):
        v = prop(us[j + 1], -(ts[j + 1] - ts[j]))
        _check_escape(v, cfg, f"interacting packet between t = {ts[j]:g} and {ts[j + 1]:g}")
        diffs.append(float(np.sqrt(grid.cell_volume) * np.linalg.norm(v - us[j])))
    out = psi
    if want_field:
        out = SpinorField(prop(us[-1], -ts[-1]), grid)
        _check_escape(out.samples, cfg, "final estimate")
    ratio = out.norm() / psi.norm()
    conv = bool(diffs and diffs[-1] < tol * psi.norm())
    return WaveOperatorEstimate(out, ts, diffs, conv, float(ratio),
                                {"packet": pkt.to_dict(), "config": cfg.to_dict()})


@dataclass
class SOperatorResult:
    field: SpinorField
    momentum: np.ndarray
    psi: SpinorField
    norm_ratio: float


def s_operator(pkt: WavePacketSpec, cfg: PropagationConfig, spec: PotentialSpec, mc,
               T: float = None) -> SOperatorResult:
    """S psi ~ e^{-iTL0} e^{2iTL} e^{-iTL0} psi, also returned in momentum space."""
    grid = cfg.grid
    T = cfg.T if T is None else float(T)
    psi = make_packet(pkt, grid, mc)
    if spec.is_zero:
        return SOperatorResult(psi.copy(), forward(psi.samples, grid), psi, 1.0)
    free = _FreeStep(grid, mc)
    prop = Propagator(grid, spec, mc, cfg.dt, cfg.order)
    u = free(psi.samples, T)
    _check_escape(u, cfg, f"free packet at t = {T:g}")
    u = prop(u, -2 * T)
    _check_escape(u, cfg, f"interacting packet at t = {-T:g}")
    u = free(u, T)
    out = SpinorField(u, grid)
    return SOperatorResult(out, forward(u, grid), psi, out.norm() / psi.norm())


def shell_overlap(a_hat: np.ndarray, b_hat: np.ndarray, grid: GridSpec, width: float = None) -> float:
    """Overlap of the radial momentum distributions of two momentum-space fields (1 = same shell)."""
    q = np.linalg.norm(grid.momenta(), axis=-1)
    width = width or 2 * np.pi / grid.length
    edges = np.arange(0, q.max() + width, width)
    ha, _ = np.histogram(q, edges, weights=np.sum(np.abs(a_hat) ** 2, axis=-1))
    hb, _ = np.histogram(q, edges, weights=np.sum(np.abs(b_hat) ** 2, axis=-1))
    return float(np.sum(np.sqrt(ha / ha.sum() * hb / hb.sum())))


# ---------------------------------------------------------------- dynamic vs stationary

@dataclass
class ComparisonReport:
    bins: list
    dynamic: list
    stationary: list
    discrepancy: float
    ratio: float
    shell_points: int
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"bins_deg": self.bins, "dynamic": self.dynamic, "stationary": self.stationary,
                "discrepancy": self.discrepancy, "ratio": self.ratio,
                "shell_points": self.shell_points, **self.meta}


def compare_dynamic_stationary(pkt: WavePacketSpec, ch, cfg: PropagationConfig, spec: PotentialSpec,
                               mc, stationary_amplitude, shell: float = 0.05,
                               cone_deg: float = 30.0, n_bins: int = 10,
                               s_result: SOperatorResult = None) -> ComparisonReport:
    """Angular shape of F(S psi - psi) against ||f||^2 from the stationary solution.

    ``stationary_amplitude(omega)`` maps unit vectors (M, 3) to amplitudes
    (M, 4) for incidence along p0, computed with the unit-normalized incident
    spinor.  For a packet with scalar momentum amplitude a(p) that is narrow
    in direction, energy conservation gives on the shell |p'| = P

        |F(S psi - psi)(p')|^2 ~ ||f(p'/P)||^2 |A(P)|^2 / (4 pi^2 lambda^2),
        A(P) = P E(P) int a(P Omega) dOmega,

    so the dynamic side is divided by |A(P)|^2/(4 pi^2 lambda^2) point by
    point and both sides are averaged in polar-angle bins (angle to p0)
    outside the forward cone.  ``discrepancy`` is the L1 distance of the two
    bin profiles after each is normalized to unit sum; ``ratio`` is the
    ratio of their raw sums (1 when the normalizations agree).
    """
    grid = cfg.grid
    m = _mass(mc)
    res = s_result if s_result is not None else s_operator(pkt, cfg, spec, mc)
    dhat = res.momentum - forward(res.psi.samples, grid)
    q = grid.momenta()
    P = np.linalg.norm(q, axis=-1)
    p0 = np.asarray(pkt.p0)
    P0 = np.linalg.norm(p0)
    sel = np.abs(P - P0) < shell
    qs, Ps = q[sel], P[sel]
    om = qs / Ps[:, None]
    cosang = om @ (p0 / P0)
    ang = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
    # A(P) from the packet amplitude on a Lebedev sphere of radius P
    xyz, w = integrate.lebedev_rule(41)
    uniq = np.unique(np.round(Ps, 12))
    A = {}
    for Pv in uniq:
        a = packet_amplitude(pkt, Pv * xyz.T)
        A[Pv] = Pv * np.sqrt(m * m + Pv * Pv) * np.dot(w, a)
    Avals = res.psi.meta["scale"] * np.array([A[v] for v in np.round(Ps, 12)])
    lam = np.sqrt(m * m + Ps ** 2)
    dyn = np.sum(np.abs(dhat[sel]) ** 2, axis=-1) / (np.abs(Avals) ** 2 / (4 * np.pi ** 2 * lam ** 2))
    fst = np.sum(np.abs(stationary_amplitude(om)) ** 2, axis=-1)
    edges = np.linspace(cone_deg, 180.0, n_bins + 1)
    d_bins, s_bins, centers = [], [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        b = (ang >= lo) & (ang < hi if hi < 180 else ang <= hi)
        if not np.any(b):
            continue
        d_bins.append(float(dyn[b].mean()))
        s_bins.append(float(fst[b].mean()))
        centers.append(float(0.5 * (lo + hi)))
    d, s = np.array(d_bins), np.array(s_bins)
    disc = float(np.sum(np.abs(d / d.sum() - s / s.sum()))) if s.sum() > 0 else 0.0
    ratio = float(d.sum() / s.sum()) if s.sum() > 0 else float("nan")
    return ComparisonReport(centers, d_bins, s_bins, disc, ratio, int(sel.sum()),
                            {"shell": shell, "cone_deg": cone_deg, "norm_ratio": res.norm_ratio})
