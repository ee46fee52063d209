"""Two qubits under continuous half-parity measurement.

Stochastic trajectory generation by Bayesian conditioning on homodyne
records, closed-form concurrence statistics with their Monte Carlo oracles,
and most-likely-path extraction both from the action-extremization ODEs and
from trajectory ensembles.
"""

__version__ = "0.1.0"

from .bayes import Trajectory, simulate, simulate_ensemble, step, update
from .concurrence import (ConcurrencePdf, NoSolutionError, c_max, c_max_numeric,
                          c_of_readout, c_readout_symmetric, cdf, concurrence,
                          concurrence_path, histogram_grid, invert_readout,
                          nonneg_condition, pdf, pdf_mass, prob_zero)
from .ensemble import (BranchPartition, Ensemble, GridMismatchError,
                       extract_branch_mlps, extract_mlp, generate_ensemble,
                       partition_branches, time_to_max_histogram,
                       total_distances, trace_distance)
from .mlp import (HamiltonianPath, HamiltonianState, MlpSolution,
                  StepFailureError, conjugate_rhs, find_mlp_branches,
                  full_parity_concurrence, full_parity_lambda, full_parity_path,
                  hamiltonian, integrate_hamiltonian, integrate_state,
                  likelihood_scan, log_likelihood, optimal_readout, state_rhs,
                  symmetric_high_branch_path)
from .model import (ConfigError, DerivedParams, InvalidStateError, MeasConfig,
                    SymmetricConfig, XState, build_meas_config, dephasing_rate,
                    derived_params, full_matrix, load_config, random_xstate,
                    symmetric_config, time_grid)
from .readout import (ReadoutSample, RngStream, cond_density, mixture_cdf,
                      mixture_density, readout_sigma, sample_readout,
                      sample_readouts)

__all__ = [name for name in dir() if not name.startswith("_")]
