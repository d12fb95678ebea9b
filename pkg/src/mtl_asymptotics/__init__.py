"""Multi-task learning on synthetic Gaussian tasks.

Empirical side: convex training of coupled ridge/logistic programs with
exact generalization-error evaluation.  Theory side: the deterministic
saddle-point problems whose solutions predict those errors in the
high-dimensional limit, plus a sweep harness overlaying the two.
"""

__version__ = "0.1.0"

from .generr import (
    TheoryPrediction,
    empirical_gen_error,
    empirical_overlaps,
    prediction_from_solution,
    solve_R_of_rho,
    theory_gen_error,
)
from .losses import LogisticLoss, LossKernel, SquaredLoss, make_kernel
from .model import ExperimentConfig, TaskEnsemble, generate_ensemble, unit_sphere_vector
from .quadrature import QuadratureGrid
from .theory import (
    CouplingMatrices,
    CouplingMatrixError,
    SaddleSolution,
    coupling_matrices,
    expected_moreau,
    solve_general,
    solve_infinite_T,
    solve_separate_asymptotic,
    solve_symmetric,
)
from .train import TrainedModel, TrainingError, solve_multitask, solve_separate

__all__ = [
    "__version__",
    "ExperimentConfig",
    "TaskEnsemble",
    "generate_ensemble",
    "unit_sphere_vector",
    "LossKernel",
    "SquaredLoss",
    "LogisticLoss",
    "make_kernel",
    "QuadratureGrid",
    "SaddleSolution",
    "CouplingMatrices",
    "CouplingMatrixError",
    "coupling_matrices",
    "expected_moreau",
    "solve_symmetric",
    "solve_infinite_T",
    "solve_separate_asymptotic",
    "solve_general",
    "TheoryPrediction",
    "theory_gen_error",
    "prediction_from_solution",
    "empirical_gen_error",
    "empirical_overlaps",
    "solve_R_of_rho",
    "TrainedModel",
    "TrainingError",
    "solve_multitask",
    "solve_separate",
]
