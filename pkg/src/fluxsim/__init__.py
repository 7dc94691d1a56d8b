"""Differentiable simulator for fluxonium quantum processors.

Builds composite Hamiltonians from a device graph, computes static spectra
and Trotterized time evolution, and computes exact gradients of fidelity and
spectrum objectives with respect to device and control parameters via a
local continuous adjoint method.
"""

from .graph import (CouplingSpec, DeviceGraph, GraphError, ParameterSet,
                    PulseSpec, QubitSpec, apply_deviations, bind_params,
                    extract_params, load_graph, save_graph)
from .qubit import (QubitOperators, TruncatedQubit, build_fluxonium, truncate)
from .composite import (CompositeSystem, EnergyTensor, LocalTerm, assemble,
                        dense_hamiltonian, eigenbasis, energy_tensor,
                        energy_tensor_gradient, static_zz)
from .trotter import (TrotterPlan, apply_local, evolve_state, evolve_unitary,
                      greedy_path, make_plan)
from .adjoint import (Gradient, backprop, dense_chain_gradient, fd_gradient,
                      overhead_report, stage_param_derivative)
from .objectives import (CompositeStateTransfer, GateInfidelity,
                         StateInfidelity, average_gate_fidelity,
                         compensated_fidelity, composite_state_cost,
                         kl_fit_objective, target_state_infidelity)
from .optimize import (EvolutionOptions, EvolutionProblem, build_pattern_chain,
                       create_cr_pulse, device_step, minimize,
                       pattern_workflow)

__version__ = "0.1.0"
