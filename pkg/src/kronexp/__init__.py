"""Third-order directional splitting of φ-functions for Kronecker-sum matrices,
and the exponential Runge-Kutta integrators built on it."""

__version__ = "0.1.0"

from .tensor import (  # noqa: E402
    OpCounter,
    assemble_kronprod,
    assemble_kronsum,
    kronsum_apply,
    mu_mode_product,
    tucker,
    unvec,
    vec,
)
from .phi import expm, phi_matrix, phi_taylor  # noqa: E402

__all__ = [
    "OpCounter", "assemble_kronprod", "assemble_kronsum", "kronsum_apply", "mu_mode_product",
    "tucker", "unvec", "vec", "expm", "phi_matrix", "phi_taylor",
]
