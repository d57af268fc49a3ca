"""Sparse polynomial feedback laws for optimal control.

Learns value-function surrogates v(y) = sum theta_k phi_k(y/l) over
monomial index sets by minimizing a closed-loop cost with an adjoint-based
proximal gradient method, and measures the resulting feedback against
Riccati and open-loop references.
"""

from .basis import (BasisSet, downward_closure, hyperbolic_cross_indices,
                    is_b_orthogonal, reduce_basis, strip_low_order,
                    total_degree_indices)
from .benchmarks import (BenchmarkSpec, cheb_grid, make_allen_cahn,
                         make_benchmark, make_cucker_smale, make_lc_circuit,
                         make_vanderpol, sample_initial_conditions)
from .dynamics import ControlSystem, Trajectory, integrate_closed_loop
from .errors import PolyFeedbackError
from .metrics import EvaluationReport, evaluate, scatter_regression
from .model import PolynomialModel, zero_model
from .objective import TrainingSet, cost, gradient, penalty
from .optimizer import OptimizerConfig, OptimizerTrace, minimize, run
from .oracles import (OpenLoopSolution, RiccatiSolution, open_loop_solve,
                      riccati_reference, solve_are)

__version__ = "0.1.0"

__all__ = [
    "BasisSet", "BenchmarkSpec", "ControlSystem", "EvaluationReport",
    "OpenLoopSolution", "OptimizerConfig", "OptimizerTrace",
    "PolyFeedbackError", "PolynomialModel", "RiccatiSolution", "Trajectory",
    "TrainingSet", "cheb_grid", "cost", "downward_closure", "evaluate",
    "gradient", "hyperbolic_cross_indices", "integrate_closed_loop",
    "is_b_orthogonal", "make_allen_cahn", "make_benchmark",
    "make_cucker_smale", "make_lc_circuit", "make_vanderpol", "minimize",
    "open_loop_solve", "penalty", "reduce_basis", "riccati_reference", "run",
    "sample_initial_conditions", "scatter_regression", "solve_are",
    "strip_low_order", "total_degree_indices", "zero_model",
]
