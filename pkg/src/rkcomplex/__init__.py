"""Analysis, optimization and benchmarking of explicit Runge-Kutta schemes
for oscillations with complex frequency."""

from .schemes import (
    EXACT, CompositeScheme, RKScheme, amplification, get_scheme, maximal_order, registry,
)

__all__ = ["EXACT", "CompositeScheme", "RKScheme", "amplification", "get_scheme",
           "maximal_order", "registry"]
__version__ = "0.1.0"
