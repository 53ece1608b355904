"""Tensor-network nonequilibrium steady states for a vibrationally coupled
resonant level with Lindblad-damped mesoscopic leads.

Subpackages follow the solver pipeline: ``model`` (physical parameters),
``phonon_encoding`` (binary pseudosite boson), ``liouville`` (doubled-space
superoperator), ``tn_core`` (tensor-train engine), ``ness_solver``
(variational steady-state search), ``diagnostics`` (observables and
phase-space measures), ``oracle`` (exact dense references), ``cli``.
"""

from nemstn.model import AuxMode, LeadSpec, ModelSpec
from nemstn.tn_core import OperatorTrain, SweepOptions, TensorTrain

__all__ = [
    "AuxMode",
    "LeadSpec",
    "ModelSpec",
    "OperatorTrain",
    "SweepOptions",
    "TensorTrain",
]

__version__ = "0.1.0"
