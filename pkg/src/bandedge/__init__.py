"""Band-edge scaling of random Jacobi operators: transfer matrices, phase
dynamics, anomaly classification and Fokker-Planck groundstates."""
from .anomaly import AnomalyExpansion, Term, band_edge_expansion, classify
from .fokker_planck import TrigPoly4, coefficients, groundstate, parabolic_theory
from .harness import RegimeSpec, run_scaling, theory_prediction
from .model import (DisorderSpec, ModelInstance, PeriodicBackground, anderson_model,
                    finite_volume_count, load_model)
from .pruefer import simulate
from .transfer import band_edges, cell_transfer, edge_data, jordan_basis

__all__ = [
    "AnomalyExpansion", "Term", "band_edge_expansion", "classify",
    "TrigPoly4", "coefficients", "groundstate", "parabolic_theory",
    "RegimeSpec", "run_scaling", "theory_prediction",
    "DisorderSpec", "ModelInstance", "PeriodicBackground", "anderson_model",
    "finite_volume_count", "load_model", "simulate",
    "band_edges", "cell_transfer", "edge_data", "jordan_basis",
]
__version__ = "0.1.0"
