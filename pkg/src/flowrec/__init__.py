"""flowrec: distributed physics-informed flow reconstruction.

Local neural experts are trained per spatiotemporal subdomain against sparse
velocity observations and momentum/continuity residuals, coupled through
ghost-layer consistency, with pressure gauge fixed by reference-anchor
normalization broadcast from master ranks.
"""

from ._kernels import available_backends, backend_name

__version__ = "0.1.0"

__all__ = ["available_backends", "backend_name", "__version__"]
