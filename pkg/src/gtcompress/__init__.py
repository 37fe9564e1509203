"""Graph transformer embedding compression.

Forward pass for single-head graph transformers plus four ways to
shrink their width while provably (or measurably) tracking the
original outputs: Johnson-Lindenstrauss projection of the attention
maps, exact and approximate low-rank reparameterization, leverage-score
row selection, and cluster-indicator feed-forward blocks. A harness
generates synthetic instances with known structure and verifies
compressed against reference runs.

The per-edge attention kernel has a compiled core (see _attention.pyx)
with a numpy fallback chosen at import; ``backend.backend_name()``
reports which one is active.
"""

from .backend import backend_name
from .errors import ConvergenceError, GtcError, ToleranceError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "GtcError",
    "ValidationError",
    "ToleranceError",
    "ConvergenceError",
    "__version__",
]
