"""Uniform grids, spinor fields and the Fourier-transform chokepoint.

Fourier convention (used everywhere, see ``CONVENTION``)::

    (F u)(q)      = (2 pi)^{-3/2} \\int e^{-i q.r} u(r) dr
    (F^{-1} U)(r) = (2 pi)^{-3/2} \\int e^{+i q.r} U(q) dq

With p = -i grad this maps mass*beta + alpha.p to multiplication by
H0(q) = m beta + alpha.q.  All discrete transforms go through ``forward`` and
``inverse`` below; other modules only use ``numpy.fft`` for operators that are
diagonal in q, where normalization and origin phase cancel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

CONVENTION = {
    "fourier_forward_kernel": "exp(-i q.r)",
    "fourier_inverse_kernel": "exp(+i q.r)",
    "fourier_normalization": "(2 pi)^(-3/2) both directions",
    "momentum_operator": "p = -i grad  <->  multiplication by q",
    "matrix_norm": "spectral (largest singular value)",
}


@dataclass(frozen=True)
class GridSpec:
    """Cubic grid r_j = origin + h * j, j in [0, n)^3.

    ``origin`` defaults to the symmetric placement -(n - 1) h / 2 per axis.
    """

    n: int
    h: float
    origin: tuple = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValidationError(f"grid needs n >= 8 points per axis, got {self.n}",
                                  module="green_kernel")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ValidationError(f"grid spacing must be positive, got {self.h}",
                                  module="green_kernel")
        o = self.origin
        if o is None:
            o = (-(self.n - 1) * self.h / 2.0,) * 3
        elif np.isscalar(o):
            o = (float(o),) * 3
        object.__setattr__(self, "origin", tuple(float(x) for x in o))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "h", float(self.h))

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def size(self) -> int:
        return self.n ** 3

    @property
    def length(self) -> float:
        return self.n * self.h

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    def axes(self):
        return [o + self.h * np.arange(self.n) for o in self.origin]

    def points(self) -> np.ndarray:
        """Coordinates of shape ``(n, n, n, 3)``."""
        x, y, z = self.axes()
        return np.stack(np.meshgrid(x, y, z, indexing="ij"), axis=-1)

    def momenta(self) -> np.ndarray:
        """Dual lattice q of shape ``(n, n, n, 3)`` in numpy FFT order."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)
        return np.stack(np.meshgrid(k, k, k, indexing="ij"), axis=-1)

    def centered_on_origin(self) -> bool:
        o = np.asarray(self.origin) / self.h
        return np.allclose(o, np.round(o))

    def to_dict(self):
        return {"n": self.n, "h": self.h, "origin": list(self.origin)}


@dataclass
class SpinorField:
    """Four-component complex field on a grid; ``samples`` has shape (n, n, n, 4)."""

    samples: np.ndarray
    grid: GridSpec
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.shape != self.grid.shape + (4,):
            raise ValidationError(
                f"samples must have shape {self.grid.shape + (4,)}, got {s.shape}",
                module="green_kernel")
        self.samples = s

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpinorField":
        return cls(np.zeros(grid.shape + (4,), dtype=complex), grid)

    def copy(self) -> "SpinorField":
        return SpinorField(self.samples.copy(), self.grid, dict(self.meta))

    def norm(self) -> float:
        """Continuous L2 norm approximated by h^3 sum |u|^2."""
        return float(np.sqrt(self.grid.cell_volume * np.vdot(self.samples, self.samples).real))

    def inner(self, other: "SpinorField") -> complex:
        """<self, other>, antilinear in the first slot."""
        return complex(self.grid.cell_volume * np.vdot(self.samples, other.samples))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.samples)))

    def __add__(self, other):
        return SpinorField(self.samples + other.samples, self.grid)

    def __sub__(self, other):
        return SpinorField(self.samples - other.samples, self.grid)

    def __mul__(self, c):
        return SpinorField(self.samples * c, self.grid)

    __rmul__ = __mul__


@dataclass(frozen=True)
class QuadratureSpec:
    """Tensor quadrature box: ``extent`` per axis, ``points`` per axis."""

    extent: float = 16.0
    points: int = 32
    singular: str = "cell-average"

    def __post_init__(self):
        if self.points < 8:
            raise ValidationError("quadrature needs at least 8 points per axis",
                                  module="green_kernel")
        if not self.extent > 0:
            raise ValidationError("quadrature extent must be positive", module="green_kernel")
        if self.singular not in ("cell-average", "subtraction"):
            raise ValidationError(f"unknown singularity mode {self.singular!r}",
                                  module="green_kernel")

    @property
    def h(self) -> float:
        return self.extent / self.points

    def grid(self) -> GridSpec:
        """Lattice through the origin covering [-extent/2, extent/2)."""
        return GridSpec(self.points, self.h, origin=-(self.points // 2) * self.h)


# ---------------------------------------------------------------- transforms

def _origin_phase(grid: GridSpec) -> np.ndarray:
    q = grid.momenta()
    return np.exp(-1j * (q @ np.asarray(grid.origin)))


def forward(samples: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Samples of F u on ``grid.momenta()`` (trapezoid rule, periodic).

    ``samples`` has the three spatial axes first; trailing axes are carried.
    """
    a = np.fft.fftn(samples, axes=(0, 1, 2))
    ph = _origin_phase(grid)
    ph = ph.reshape(ph.shape + (1,) * (a.ndim - 3))
    return a * ph * (grid.h ** 3 / (2.0 * np.pi) ** 1.5)


def inverse(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Inverse of ``forward``: samples of F^{-1} U at ``grid.points()``."""
    ph = np.conj(_origin_phase(grid))
    ph = ph.reshape(ph.shape + (1,) * (values.ndim - 3))
    a = np.fft.ifftn(values * ph, axes=(0, 1, 2))
    return a * ((2.0 * np.pi) ** 1.5 / grid.h ** 3)


def apply_symbol(samples: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    """Apply a 4x4 matrix Fourier multiplier ``symbol`` (n, n, n, 4, 4) to a spinor field.

    The origin phase and normalization cancel, so plain FFTs are used.
    """
    a = np.fft.fftn(samples, axes=(0, 1, 2))
    a = np.einsum("...ij,...j->...i", symbol, a)
    return np.fft.ifftn(a, axes=(0, 1, 2))
