"""Lyapunov exponents, stationary measure vectors and coupling energies for
locally constant GL(2) cocycles over finite Markov shifts."""

from .cocycle import (CocycleMap, check_expanding, delta_moment_scan, expanding_integral,
                      invariant_points, matrix_conorm, projective_action, projective_derivative,
                      word_product)
from .energy import (Arc, EnergyParams, GridCoupling, CouplingVector, contraction_experiment,
                     coupling_energy, diagonal_transfer, fat_atom_check, min_energy_coupling,
                     surgery_off_diagonal, vector_energy)
from .errors import ConvergenceError, NotExpandingError, SurgeryError, ValidationError
from .grid import GridMeasure, MeasureVector, ProjectiveGrid
from .lyapunov import furstenberg_integral, lambda_pair, lambda_plus_monte_carlo, lyapunov_sum_exact
from .markov import StochasticMatrix, cylinder_measure, sample_chain, stationary_distribution
from .stationary import (cesaro_stationary, detect_atoms, invariance_residual, maximize_furstenberg,
                         transfer_apply, verify_atomic_invariant_set)

__version__ = "0.1.0"

__all__ = [
    "CocycleMap", "check_expanding", "delta_moment_scan", "expanding_integral", "invariant_points",
    "matrix_conorm", "projective_action", "projective_derivative", "word_product",
    "Arc", "EnergyParams", "GridCoupling", "CouplingVector", "contraction_experiment",
    "coupling_energy", "diagonal_transfer", "fat_atom_check", "min_energy_coupling",
    "surgery_off_diagonal", "vector_energy",
    "ConvergenceError", "NotExpandingError", "SurgeryError", "ValidationError",
    "GridMeasure", "MeasureVector", "ProjectiveGrid",
    "furstenberg_integral", "lambda_pair", "lambda_plus_monte_carlo", "lyapunov_sum_exact",
    "StochasticMatrix", "cylinder_measure", "sample_chain", "stationary_distribution",
    "cesaro_stationary", "detect_atoms", "invariance_residual", "maximize_furstenberg",
    "transfer_apply", "verify_atomic_invariant_set",
]
