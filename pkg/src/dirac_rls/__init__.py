"""Stationary scattering for the Dirac operator with electromagnetic potentials.

The package builds the Green-function kernels of the free Dirac operator,
solves the modified Lippmann-Schwinger system on a uniform grid, extracts
scattering amplitudes and cross-checks them against time-dependent
propagation of wave packets.
"""

__version__ = "0.1.0"

from .algebra import MassCharge, alpha_matrices, beta_matrix, eigen_h0, h0  # noqa: E402
from .errors import (BoxEscapeError, ConfigError, DiracRLSError, NumericalError,  # noqa: E402
                     SingularSystemError, ThresholdError, ValidationError)
from .grid import GridSpec, QuadratureSpec, SpinorField  # noqa: E402
from .kernels import apply_free_resolvent, b_kernel, kappa  # noqa: E402
from .potential import PotentialSpec, Profile, TablePotential, factorize_v  # noqa: E402
from .scattering import DirectionSet, ScatteringResult, amplitude  # noqa: E402
from .solver import ScatterChannel, recover_phi, solve_modified  # noqa: E402
from .dynamics import (PropagationConfig, WavePacketSpec, s_operator,  # noqa: E402
                       wave_operator_estimate)

__all__ = [
    "MassCharge", "alpha_matrices", "beta_matrix", "eigen_h0", "h0",
    "BoxEscapeError", "ConfigError", "DiracRLSError", "NumericalError",
    "SingularSystemError", "ThresholdError", "ValidationError",
    "GridSpec", "QuadratureSpec", "SpinorField",
    "apply_free_resolvent", "b_kernel", "kappa",
    "PotentialSpec", "Profile", "TablePotential", "factorize_v",
    "DirectionSet", "ScatteringResult", "amplitude",
    "ScatterChannel", "recover_phi", "solve_modified",
    "PropagationConfig", "WavePacketSpec", "s_operator", "wave_operator_estimate",
]
