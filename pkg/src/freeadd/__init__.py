"""Free additive convolution, singular-value dynamics and least-singular-value
universality for sums of randomly rotated diagonal matrices."""

__version__ = "0.1.0"

from .measures import AtomicMeasure, symmetrize, stieltjes, hat_transform  # noqa: E402
from .freeconv import SolverConfig, solve_subordination, density_at_zero  # noqa: E402

__all__ = [
    "__version__",
    "AtomicMeasure",
    "symmetrize",
    "stieltjes",
    "hat_transform",
    "SolverConfig",
    "solve_subordination",
    "density_at_zero",
]
