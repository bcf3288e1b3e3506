"""Wave dynamics on phase space with momentum diffusion.

The state is a complex field ``phi(x, p, t)`` on a periodic phase-space
grid.  It obeys a Kramers-type equation ``d phi/dt = A phi + gamma B phi``
whose dissipative part drives the field onto a subspace that is in
one-to-one correspondence with configuration wave functions.  The package
provides the operators, exact-flow splitting integrators, transforms
between representations, scripted experiments and a command-line tool.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ConfigWavefunction,
    DensityField,
    Ensemble,
    NumericalError,
    PhaseGrid,
    PhysicalParams,
    PotentialSpec,
    PotentialTerm,
    ResolutionWarning,
    ValidationError,
    WaveField,
    double_well,
    harmonic,
    make_grid,
    quartic,
    tabulated,
    zero,
)
from .evolvers import (  # noqa: E402
    EvolveSpec,
    evolve,
    evolve_density,
    evolve_legacy,
    evolve_schrodinger,
)
from .transforms import (  # noqa: E402
    husimi,
    lift_to_phase_space,
    project_stationary,
    wigner,
)

__all__ = [
    "__version__",
    "ConfigWavefunction",
    "DensityField",
    "Ensemble",
    "EvolveSpec",
    "NumericalError",
    "PhaseGrid",
    "PhysicalParams",
    "PotentialSpec",
    "PotentialTerm",
    "ResolutionWarning",
    "ValidationError",
    "WaveField",
    "double_well",
    "evolve",
    "evolve_density",
    "evolve_legacy",
    "evolve_schrodinger",
    "harmonic",
    "husimi",
    "lift_to_phase_space",
    "make_grid",
    "project_stationary",
    "quartic",
    "tabulated",
    "wigner",
    "zero",
]
