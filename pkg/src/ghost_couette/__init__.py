"""Numerical laboratory for the curvature ghost effect in planar Couette flow.

Subpackages mirror the stages of the construction: discrete velocity
space, linearized collision operators, transport coefficients, the 1-D
ghost-effect hydrodynamic system, the half-space (Milne) boundary-layer
problem with centrifugal force, the truncated bulk + boundary-layer
expansion, and a direct kinetic reference solver.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    velocity_space,
    collision_ops,
    transport,
    hydro,
    milne,
    expansion,
    kinetic_ref,
)
