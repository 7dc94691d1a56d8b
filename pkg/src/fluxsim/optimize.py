"""Optimization harness: quasi-Newton driver, device steps, and workflows.

Ties objectives and adjoint gradients to scipy's bound-constrained
quasi-Newton minimizer, implements the one-step device update with the
fixed learning rate, and the three-stage pattern workflow (optimize controls,
step the device pattern once, re-optimize reinitialized controls).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize as sopt

from . import gates
from .adjoint import AdjointError, Gradient, backprop, evaluate_objective, fd_gradient
from .composite import assemble, energy_tensor
from .graph import (DeviceGraph, ParameterSet, PulseSpec, QubitSpec,
                    CouplingSpec, bind_params, extract_params)
from .objectives import GateInfidelity
from .trotter import make_plan

TWOPI = 2.0 * math.pi

# rate of Eq-style one-step device update, in GHz^2 (applied in GHz units)
DEVICE_RATE_GHZ2 = 0.01

# hard-coded effective coupling used by the CR amplitude initial guess
J_EFF_DEFAULT = 0.01 * TWOPI

TABLE_PATTERN = (
    ("grey", 0.9), ("blue", 1.0), ("green", 1.1),  # (mark, el in GHz); ec=1, ej=4
)


class OptimizeError(RuntimeError):
    pass


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    nit: int
    nfev: int
    success: bool
    message: str
    trace: list
    aborted: bool = False


class _NanAbort(Exception):
    pass


def minimize(fun, x0, method: str = "L-BFGS-B", bounds=None, maxiter: int = 200,
             tol=None, logging: bool = False, callback=None) -> MinimizeResult:
    """Minimize fun(x) -> (value, gradient) with best-so-far tracking.

    The trace records the running best value per evaluation, so it is
    monotone non-increasing; NaN in the value or gradient aborts and returns
    the best point found.
    """
    x0 = np.asarray(x0, dtype=float)
    state = {"best_x": x0.copy(), "best_f": np.inf, "trace": [], "nfev": 0}

    def wrapped(x):
        value, grad = fun(np.asarray(x))
        grad = np.asarray(grad, dtype=float)
        state["nfev"] += 1
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise _NanAbort()
        if value < state["best_f"]:
            state["best_f"] = float(value)
            state["best_x"] = np.array(x, dtype=float)
        state["trace"].append(state["best_f"])
        if logging:
            print(f"[minimize] eval {state['nfev']:4d}  f = {value:.6e}")
        if callback is not None:
            callback(np.asarray(x), float(value))
        return float(value), grad

    try:
        res = sopt.minimize(wrapped, x0, jac=True, method=method, bounds=bounds,
                            tol=tol, options={"maxiter": maxiter})
        success, message, nit = bool(res.success), str(res.message), int(res.nit)
        aborted = False
    except _NanAbort:
        success, message, nit = False, "aborted on non-finite objective", 0
        aborted = True
    best_f = state["best_f"]
    if not math.isfinite(best_f):
        raise OptimizeError("objective was never finite")
    return MinimizeResult(x=state["best_x"], fun=best_f, nit=nit,
                          nfev=state["nfev"], success=success, message=message,
                          trace=state["trace"], aborted=aborted)


def device_step(params: ParameterSet, grad: Gradient,
                rate_ghz2: float = DEVICE_RATE_GHZ2) -> ParameterSet:
    """One explicit gradient step on the device energies, couplings frozen.

    The published learning rate is stated in GHz units; parameters are stored
    as angular frequencies, so the update is
    theta <- theta - rate * (2 pi)^2 * dL/dtheta.
    """
    changes = {}
    for e in params.entries:
        fld = e.key.rsplit(".", 1)[-1]
        if fld in ("ec", "ej", "el") and e.key in grad.values:
            changes[e.key] = e.value - rate_ghz2 * (TWOPI ** 2) * grad[e.key]
    return params.updated(changes)


# ---------------------------------------------------------------------------
# evolution problems (graph + objective + plan options)


@dataclass
class EvolutionOptions:
    truncated_dim: int = 3
    dim_full: int = 60
    share_params: bool = True
    unify_coupling: bool = True
    basis: str = "eigen"
    order: str = "4j"
    dt: float | None = 0.05
    astep: int | None = None
    t0: float = 0.0
    tg: float | None = None


class EvolutionProblem:
    """A differentiable scalar of the evolved unitary/state over theta.

    Rebinds parameters into the graph, reassembles the system, and evaluates
    the objective; gradients come from the adjoint engine (or finite
    differences for validation).
    """

    def __init__(self, graph: DeviceGraph, objective, options: EvolutionOptions,
                 grad_keys=None):
        self.graph = graph
        self.objective = objective
        self.options = options
        full = extract_params(graph, share_params=options.share_params,
                              unify_coupling=options.unify_coupling)
        if grad_keys is None:
            grad_keys = [e.key for e in full.entries
                         if e.key.rsplit(".", 1)[-1] not in ("length", "delay")]
        self.params = full.subset(grad_keys)
        sys0 = self._assemble(graph)
        self.plan = make_plan(sys0, options.order, dt=options.dt, t0=options.t0,
                              tg=options.tg, astep=options.astep)
        self._sys0 = sys0

    def _assemble(self, graph):
        o = self.options
        return assemble(graph, o.truncated_dim, dim_full=o.dim_full,
                        share_params=o.share_params, unify_coupling=o.unify_coupling)

    def system_at(self, params: ParameterSet | None = None):
        if params is None:
            return self._sys0
        return self._assemble(bind_params(self.graph, params))

    def value(self, params: ParameterSet | None = None) -> float:
        sys = self.system_at(params)
        return evaluate_objective(sys, self.plan, self.objective,
                                  basis=self.options.basis)

    def value_and_grad(self, params: ParameterSet | None = None,
                       method: str = "adjoint"):
        params = self.params if params is None else params
        sys = self.system_at(params)
        g = backprop(sys, self.plan, self.objective, params,
                     basis=self.options.basis, method=method)
        return g.objective, g

    def fd(self, params: ParameterSet | None = None, step: float = 1e-6) -> Gradient:
        params = self.params if params is None else params
        sys = self.system_at(params)
        return fd_gradient(sys, self.plan, self.objective, params, step=step,
                           basis=self.options.basis)

    def minimize(self, maxiter: int = 100, method: str = "L-BFGS-B",
                 logging: bool = False, tol=None) -> tuple[MinimizeResult, ParameterSet]:
        keys = self.params.keys()

        def fun(x):
            p = self.params.with_vector(x)
            value, g = self.value_and_grad(p)
            return value, g.as_array(keys)

        res = minimize(fun, self.params.values(), method=method,
                       maxiter=maxiter, logging=logging, tol=tol)
        return res, self.params.with_vector(res.x)


# ---------------------------------------------------------------------------
# chain construction and CR pulses


def build_pattern_chain(n_qubit: int, jc: float = 0.01225 * TWOPI,
                        jl: float = -0.002 * TWOPI,
                        pattern=TABLE_PATTERN, periodic: bool = False) -> DeviceGraph:
    """Chain of fluxoniums tiled by the (mark, E_L) frequency pattern."""
    g = DeviceGraph()
    for i in range(n_qubit):
        mark, el = pattern[i % len(pattern)]
        g.add_node(f"q{i}", QubitSpec(ec=1.0 * TWOPI, ej=4.0 * TWOPI,
                                      el=el * TWOPI, phiext=math.pi,
                                      shared_param_mark=mark))
    pairs = [(i, i + 1) for i in range(n_qubit - 1)]
    if periodic and n_qubit > 2:
        pairs.append((n_qubit - 1, 0))
    for i, j in pairs:
        g.add_edge(f"q{i}", f"q{j}", CouplingSpec(capacitive_strength=jc,
                                                  inductive_strength=jl))
    return g


def dressed_frequencies(graph: DeviceGraph, truncated_dim: int,
                        dim_full: int = 60) -> dict[str, float]:
    """Single-excitation dressed frequencies (rad/ns) per node."""
    sys = assemble(graph, truncated_dim, dim_full=dim_full)
    ten = energy_tensor(sys)
    out = {}
    for i, name in enumerate(graph.node_names):
        label = tuple(1 if k == i else 0 for k in range(len(graph.node_names)))
        out[name] = float(ten[label])
    return out


def create_cr_pulse(graph: DeviceGraph, controls, targets, lengths,
                    truncated_dim: int = 2, dim_full: int = 60,
                    j_eff: float = J_EFF_DEFAULT) -> DeviceGraph:
    """Attach cross-resonance pulses driving each control at its target's
    dressed frequency, with the amplitude initial guess
    amp = (pi/2) * detuning / (j_eff * length).
    """
    freqs = dressed_frequencies(graph, truncated_dim, dim_full)
    names = graph.node_names
    out = graph.copy()
    for c, t, length in zip(controls, targets, lengths):
        cname = names[c] if not isinstance(c, str) else c
        tname = names[t] if not isinstance(t, str) else t
        detuning = abs(freqs[cname] - freqs[tname])
        amp = 0.5 * math.pi * detuning / j_eff / length
        pulse = PulseSpec(amp=amp, omega_d=freqs[tname], phase=0.0,
                          length=float(length), pulse_type="cos",
                          operator_type="phi_operator", delay=0.0)
        spec = out.nodes[cname]
        out.nodes[cname] = replace(spec, pulses=spec.pulses + (pulse,))
    return out


def strip_pulses(graph: DeviceGraph) -> DeviceGraph:
    out = graph.copy()
    for name, spec in out.nodes.items():
        out.nodes[name] = replace(spec, pulses=())
    return out


def cr_chain_target(n_qubit: int, pairs) -> np.ndarray:
    """Tensor-product CNOT target on adjacent (control, target) pairs."""
    ops = []
    covered = set()
    for c, t in pairs:
        if t != c + 1:
            raise OptimizeError("cr_chain_target expects target = control + 1")
        covered.update((c, t))
    i = 0
    while i < n_qubit:
        if (i, i + 1) in [tuple(p) for p in pairs]:
            ops.append(gates.cnot())
            i += 2
        else:
            if i in covered:
                raise OptimizeError("inconsistent pair layout")
            ops.append(gates.identity())
            i += 1
    return gates.tensor(*ops)


# ---------------------------------------------------------------------------
# three-stage pattern workflow


@dataclass
class WorkflowStage:
    kind: str
    objective_trace: list
    final_objective: float
    params: ParameterSet | None = None


@dataclass
class WorkflowReport:
    baseline: float
    stages: list[WorkflowStage] = field(default_factory=list)

    def final_objectives(self):
        return [s.final_objective for s in self.stages]


def _device_keys_of(params: ParameterSet):
    return [e.key for e in params.entries
            if e.key.rsplit(".", 1)[-1] in ("ec", "ej", "el")]


def _pulse_keys_of(params: ParameterSet):
    return [e.key for e in params.entries
            if ".pulses." in e.key and e.key.rsplit(".", 1)[-1] in
            ("amp", "omega_d", "phase")]


def pattern_workflow(graph: DeviceGraph, controls, targets, lengths,
                     stages=("control", "device", "control"),
                     options: EvolutionOptions | None = None,
                     target: np.ndarray | None = None,
                     compensation: str = "arbit_single",
                     comp_starts: int = 8,
                     maxiter: int = 40, device_rate: float = DEVICE_RATE_GHZ2,
                     j_eff: float = J_EFF_DEFAULT,
                     logging: bool = False) -> WorkflowReport:
    """Control optimization, one-step device update, control re-optimization.

    Each control stage reinitializes the CR pulses from the current spectrum
    (the dressed frequencies move after a device step) and minimizes the gate
    infidelity over the pulse parameters; the device stage applies the fixed
    learning-rate update to the pattern energies with couplings frozen.
    """
    options = options or EvolutionOptions(truncated_dim=2, dt=0.05, tg=max(lengths))
    if target is None:
        n = len(graph.node_names)
        target = cr_chain_target(n, list(zip(controls, targets)))
    objective = GateInfidelity(target=target, compensation=compensation,
                               n_starts=comp_starts)

    def with_fresh_pulses(g):
        return create_cr_pulse(strip_pulses(g), controls, targets, lengths,
                               truncated_dim=options.truncated_dim,
                               dim_full=options.dim_full, j_eff=j_eff)

    current = with_fresh_pulses(graph)
    problem = EvolutionProblem(current, objective, options)
    report = WorkflowReport(baseline=problem.value())
    for kind in stages:
        if kind == "control":
            current = with_fresh_pulses(strip_pulses(current))
            problem = EvolutionProblem(current, objective, options,
                                       grad_keys=_pulse_keys_of(
                                           extract_params(current,
                                                          options.share_params,
                                                          options.unify_coupling)))
            res, best = problem.minimize(maxiter=maxiter, logging=logging)
            current = bind_params(current, best)
            report.stages.append(WorkflowStage(kind="control",
                                               objective_trace=res.trace,
                                               final_objective=res.fun,
                                               params=best))
        elif kind == "device":
            full = extract_params(current, options.share_params,
                                  options.unify_coupling)
            dev = full.subset(_device_keys_of(full))
            problem = EvolutionProblem(current, objective, options,
                                       grad_keys=dev.keys())
            value, grad = problem.value_and_grad(dev)
            stepped = device_step(dev, grad, rate_ghz2=device_rate)
            current = bind_params(current, stepped)
            report.stages.append(WorkflowStage(kind="device",
                                               objective_trace=[value],
                                               final_objective=value,
                                               params=stepped))
        else:
            raise OptimizeError(f"unknown workflow stage {kind!r}")
    return report
