"""Max-min fair SWIPT beamforming for green Cloud-RAN with wireless fronthaul."""

from swiptbeam.linalg import (
    EigenDecomposition,
    HermitianMatrix,
    hermitian_eig,
    is_psd,
    numerical_rank,
    principal_component,
    real_embed,
)

__version__ = "0.1.0"

__all__ = [
    "HermitianMatrix",
    "EigenDecomposition",
    "hermitian_eig",
    "is_psd",
    "real_embed",
    "principal_component",
    "numerical_rank",
]
