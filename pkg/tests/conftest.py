"""Shared fixtures: reference device graphs and tolerances."""

import numpy as np
import pytest

from fluxsim.graph import CouplingSpec, DeviceGraph, PulseSpec, QubitSpec

TWOPI = 2 * np.pi


def make_chain3(jc=0.02 * TWOPI, jl=-0.002 * TWOPI):
    """The reference 3-qubit multipath chain (els 0.9/1.0/1.1 GHz)."""
    g = DeviceGraph()
    for i, (el, mark) in enumerate([(0.9, "grey"), (1.0, "blue"), (1.1, "green")], 1):
        g.add_node(f"q{i}", QubitSpec(ec=1.0 * TWOPI, ej=4.0 * TWOPI,
                                      el=el * TWOPI, phiext=np.pi,
                                      shared_param_mark=mark))
    g.add_edge("q1", "q2", CouplingSpec(jc, jl))
    g.add_edge("q2", "q3", CouplingSpec(jc, jl))
    return g


def make_driven2(amp=0.13, phase=0.3, length=10.0, jc=0.02 * TWOPI,
                 jl=-0.002 * TWOPI):
    """Two coupled fluxoniums with one phase drive on the first."""
    g = DeviceGraph()
    g.add_node("q1", QubitSpec(
        ec=1.0 * TWOPI, ej=4.0 * TWOPI, el=0.9 * TWOPI, phiext=np.pi,
        shared_param_mark="grey",
        pulses=(PulseSpec(amp=amp, omega_d=0.582 * TWOPI, phase=phase,
                          length=length),)))
    g.add_node("q2", QubitSpec(ec=1.0 * TWOPI, ej=4.0 * TWOPI, el=1.0 * TWOPI,
                               phiext=np.pi, shared_param_mark="blue"))
    g.add_edge("q1", "q2", CouplingSpec(jc, jl))
    return g


@pytest.fixture(scope="session")
def chain3():
    return make_chain3()


@pytest.fixture(scope="session")
def driven2():
    return make_driven2()
