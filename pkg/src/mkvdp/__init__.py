"""Discrete-time McKean-Vlasov control.

Euler-Maruyama particle schemes for controlled mean-field diffusions,
finite-model dynamic programming on quantized measures, and experiments
measuring the discretization and particle approximation rates.
"""

from ._backend import BACKEND
from .em import (EnsembleState, TimeGrid, TrajectoryBundle, em_step_meanfield, em_step_nparticle,
                 reference_simulate, simulate)
from .errors import (ConfigError, MkvError, ModelError, NumericalBlowup, PolicyError, SizeError,
                     UnsupportedStructure)
from .finite_mdp import (FiniteModel, ValueTable, build_transition, lift_step, solve_discounted,
                         solve_finite_horizon)
from .harness import (ExperimentPlan, RateReport, run_chaos, run_discounted_rate,
                      run_n_particle_gap, run_strong_error, run_value_rate)
from .measure import (EmpiricalMeasure, MeasureIndex, QuantizedMeasure, StateGrid, dequantize,
                      quantize, wasserstein1)
from .model import ActionSet, ModelSpec, constant_model, evaluate_dynamics, satmr, validate_model
from .policy import (CostEstimate, MarkovPolicy, OpenLoopPolicy, deploy_interpolated,
                     evaluate_discounted, evaluate_finite_horizon)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ActionSet", "ConfigError", "CostEstimate", "EmpiricalMeasure", "EnsembleState",
    "ExperimentPlan", "FiniteModel", "MarkovPolicy", "MeasureIndex", "MkvError", "ModelError",
    "ModelSpec", "NumericalBlowup", "OpenLoopPolicy", "PolicyError", "QuantizedMeasure",
    "RateReport", "SizeError", "StateGrid", "TimeGrid", "TrajectoryBundle",
    "UnsupportedStructure", "ValueTable", "build_transition", "constant_model",
    "deploy_interpolated", "dequantize", "em_step_meanfield", "em_step_nparticle",
    "evaluate_discounted", "evaluate_dynamics", "evaluate_finite_horizon", "lift_step",
    "quantize", "reference_simulate", "run_chaos", "run_discounted_rate", "run_n_particle_gap",
    "run_strong_error", "run_value_rate", "satmr", "simulate", "solve_discounted",
    "solve_finite_horizon", "validate_model", "wasserstein1",
]
