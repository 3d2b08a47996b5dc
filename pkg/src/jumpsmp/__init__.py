"""Stochastic maximum principle for jump diffusions with progressive controls.

Simulation of controlled jump SDEs on jump-adapted grids, spike variations
that avoid the jump-time graph, first- and second-order adjoints, and
Monte Carlo checks of the variational inequality, organized as seeded,
reproducible experiments.
"""
from .adjoint import (AdjointPath, DualityReport, RegressionSpec, SecondAdjointPath, UnsupportedProblemError,
                      duality_check_px, duality_check_pxx, duality_check_py, duality_checks,
                      solve_adjoint_closed_form, solve_adjoint_regression)
from .benchmarks import BenchmarkInstance, get_benchmark, list_benchmarks
from .calculus import (bracket_of_jump_integral, compensated_jump_integral, compensator, graph_indicator,
                       ito_integral, jump_integral_N, jump_of_integral)
from .experiments import ExperimentConfig, ExperimentResult, run_experiment
from .forward import (CostSample, DivergenceError, JumpSDE, StatePath, cost, expected_cost, lp_estimate_check,
                      picard_iterate, solve_forward, solve_sde)
from .maximum import MpReport, hamiltonian, inequality_lhs, localization_check, mp_deficiency
from .noise import MarkSpace, NoiseBatch, NoisePath, SeedSpec, TimeGrid, coarsen, sample_batch, sample_noise
from .problem import (AffineStructure, ControlPath, ControlSet, FeedbackControl, LinearFeedback, ProblemDef,
                      ThresholdFeedback, validate)
from .variation import (OrderFit, SpikeSpec, fit_order, naive_spike_control, solve_first_variation,
                        solve_second_variation, spike_control)

__version__ = "0.1.0"
