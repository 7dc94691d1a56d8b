"""Minimizer wrapper, device step, chain builders, workflow scaffolding."""

import numpy as np
import pytest

from fluxsim.graph import ParamEntry, ParameterSet, extract_params
from fluxsim.adjoint import Gradient
from fluxsim.composite import assemble, energy_tensor
from fluxsim.optimize import (EvolutionOptions, EvolutionProblem, OptimizeError,
                              build_pattern_chain, cr_chain_target,
                              create_cr_pulse, device_step, dressed_frequencies,
                              minimize, pattern_workflow, strip_pulses)
from fluxsim.objectives import GateInfidelity
from fluxsim import gates

from conftest import TWOPI


# ---------------------------------------------------------------------------
# minimize


def test_minimize_convex_quadratic():
    a = np.array([3.0, 1.0, 0.5, 2.0])
    b = np.array([1.0, -2.0, 0.3, 0.0])

    def fun(x):
        return float(np.sum(a * (x - b) ** 2)), 2 * a * (x - b)

    res = minimize(fun, np.zeros(4), maxiter=50)
    assert res.success
    assert np.max(np.abs(res.x - b)) < 1e-5
    assert res.fun < 1e-10
    assert res.nit <= 2 * len(b) + 2


def test_minimize_trace_monotone_and_never_worse():
    def fun(x):
        v = float((x[0] - 3) ** 2 * (1 + 0.3 * np.sin(5 * x[0])))
        g = np.array([2 * (x[0] - 3) * (1 + 0.3 * np.sin(5 * x[0]))
                      + (x[0] - 3) ** 2 * 1.5 * np.cos(5 * x[0])])
        return v, g

    x0 = np.array([0.0])
    res = minimize(fun, x0, maxiter=60)
    assert res.fun <= fun(x0)[0]
    assert all(b <= a + 1e-15 for a, b in zip(res.trace, res.trace[1:]))


def test_minimize_nan_abort_returns_best():
    calls = {"n": 0}

    def fun(x):
        calls["n"] += 1
        if calls["n"] > 2:
            return float("nan"), np.array([np.nan])
        return float((x[0] - 3.0) ** 2), np.array([2 * (x[0] - 3.0)])

    res = minimize(fun, np.array([0.0]), maxiter=50)
    assert res.aborted
    assert not res.success
    assert np.isfinite(res.fun)


def test_minimize_respects_bounds():
    def fun(x):
        return float((x[0] + 5) ** 2), np.array([2 * (x[0] + 5)])

    res = minimize(fun, np.array([1.0]), bounds=[(0.0, 2.0)], maxiter=50)
    assert res.x[0] == pytest.approx(0.0, abs=1e-9)


# ---------------------------------------------------------------------------
# device step


def _dev_params():
    return ParameterSet([
        ParamEntry("shared.grey.ec", 1.0 * TWOPI, "rad/ns"),
        ParamEntry("shared.grey.ej", 4.0 * TWOPI, "rad/ns"),
        ParamEntry("capacitive_coupling_all_unify.strength", 0.0770, "rad/ns"),
        ParamEntry("q1.pulses.0.amp", 0.13, "rad/ns"),
    ])


def test_device_step_zero_gradient_identity():
    params = _dev_params()
    grad = Gradient(values={k: 0.0 for k in params.keys()}, objective=0.1)
    assert device_step(params, grad).values().tolist() == params.values().tolist()


def test_device_step_published_example():
    # E_C <- 1.0 GHz - 0.01 GHz^2 * (-0.4280 / GHz) = 1.004280 GHz
    params = _dev_params()
    grad_ghz = -0.4280
    grad = Gradient(values={"shared.grey.ec": grad_ghz / TWOPI}, objective=0.0)
    out = device_step(params, grad)
    assert out["shared.grey.ec"] / TWOPI == pytest.approx(1.0 + 0.004280, abs=1e-12)
    # everything that is not a device energy stays frozen
    assert out["capacitive_coupling_all_unify.strength"] == 0.0770
    assert out["q1.pulses.0.amp"] == 0.13


def test_device_step_zero_rate_identity():
    params = _dev_params()
    grad = Gradient(values={k: 1.0 for k in params.keys()}, objective=0.0)
    once = device_step(params, grad, rate_ghz2=0.0)
    twice = device_step(once, grad, rate_ghz2=0.0)
    assert twice.values().tolist() == params.values().tolist()


def test_device_step_linear_in_gradient():
    params = _dev_params()
    g1 = Gradient(values={"shared.grey.ej": 0.3}, objective=0.0)
    g2 = Gradient(values={"shared.grey.ej": 0.6}, objective=0.0)
    d1 = device_step(params, g1)["shared.grey.ej"] - params["shared.grey.ej"]
    d2 = device_step(params, g2)["shared.grey.ej"] - params["shared.grey.ej"]
    assert d2 == pytest.approx(2 * d1, rel=1e-12)


# ---------------------------------------------------------------------------
# chains, CR pulses, targets


def test_build_pattern_chain_tiles_marks():
    g = build_pattern_chain(10)
    marks = [g.nodes[n].shared_param_mark for n in g.node_names]
    assert marks == ["grey", "blue", "green"] * 3 + ["grey"]
    assert len(g.edges) == 9
    ps = extract_params(g, share_params=True, unify_coupling=True)
    assert len([k for k in ps.keys() if k.startswith("shared.")]) == 9


def test_create_cr_pulse_initial_guess():
    g = build_pattern_chain(3, jc=0.02 * TWOPI, jl=-0.002 * TWOPI)
    gp = create_cr_pulse(g, [0], [1], [100.0], truncated_dim=3)
    freqs = dressed_frequencies(g, truncated_dim=3)
    p = gp.nodes["q0"].pulses[0]
    detuning = abs(freqs["q0"] - freqs["q1"])
    assert p.omega_d == pytest.approx(freqs["q1"], abs=1e-12)
    assert p.amp == pytest.approx(np.pi / 2 * detuning / (0.01 * TWOPI) / 100.0,
                                  abs=1e-12)
    assert p.pulse_type == "cos" and p.operator_type == "phi_operator"
    # published starting point: amp ~ 0.13 rad/ns, omega_d ~ dressed 0.582 GHz
    assert p.amp == pytest.approx(0.13, abs=0.01)
    assert p.omega_d / TWOPI == pytest.approx(0.582, abs=1e-3)


def test_cr_chain_target_layout():
    t = cr_chain_target(3, [(0, 1)])
    expected = gates.tensor(gates.cnot(), gates.identity())
    assert np.array_equal(t, expected)
    t2 = cr_chain_target(6, [(0, 1), (2, 3), (4, 5)])
    assert t2.shape == (64, 64)
    with pytest.raises(OptimizeError):
        cr_chain_target(3, [(0, 2)])


def test_strip_pulses():
    g = build_pattern_chain(3)
    gp = create_cr_pulse(g, [0], [1], [50.0], truncated_dim=2)
    assert len(gp.nodes["q0"].pulses) == 1
    assert strip_pulses(gp) == g


def test_workflow_empty_stage_list_reports_baseline():
    g = build_pattern_chain(3)
    options = EvolutionOptions(truncated_dim=2, basis="eigen", order="2",
                               dt=0.5, tg=20.0)
    report = pattern_workflow(g, [0], [1], [20.0], stages=(), options=options,
                              comp_starts=1, maxiter=1)
    assert report.stages == []
    assert 0.0 <= report.baseline <= 1.0


def test_workflow_unknown_stage_rejected():
    g = build_pattern_chain(3)
    options = EvolutionOptions(truncated_dim=2, basis="eigen", order="2",
                               dt=0.5, tg=20.0)
    with pytest.raises(OptimizeError):
        pattern_workflow(g, [0], [1], [20.0], stages=("anneal",),
                         options=options)


def test_problem_minimize_improves_objective():
    g = build_pattern_chain(2, jc=0.02 * TWOPI, jl=-0.002 * TWOPI)
    gp = create_cr_pulse(g, [0], [1], [30.0], truncated_dim=2)
    target = cr_chain_target(2, [(0, 1)])
    obj = GateInfidelity(target=target, compensation="zrot", n_starts=2)
    options = EvolutionOptions(truncated_dim=2, basis="eigen", order="2",
                               dt=0.1, tg=30.0)
    keys = [k for k in extract_params(gp, True, True).keys()
            if ".pulses." in k and k.rsplit(".", 1)[-1] in ("amp", "omega_d", "phase")]
    problem = EvolutionProblem(gp, obj, options, grad_keys=keys)
    v0 = problem.value()
    res, best = problem.minimize(maxiter=10)
    assert res.fun <= v0
