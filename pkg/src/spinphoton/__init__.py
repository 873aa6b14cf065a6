"""Simulation and analysis of spin-photon entanglement in a charged quantum dot."""
from .core import (
    LEVELS,
    BasisError,
    DensityMatrix,
    InvalidParameterError,
    OperatorMatrix,
    QdModel,
    StateVector,
    UnphysicalStateError,
    basis_transform,
    build_qd_model,
    entangled_state,
    ket,
    precession_operator,
    rotation_operator,
)

__version__ = "0.1.0"
