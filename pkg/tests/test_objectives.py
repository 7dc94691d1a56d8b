"""Fidelity metrics, compensation, and the KL fitting objective."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxsim import gates
from fluxsim.objectives import (CompositeStateTransfer, GateInfidelity,
                                ObjectiveError, StateInfidelity,
                                average_fidelity_operator_sum,
                                average_gate_fidelity, compensated_fidelity,
                                composite_state_cost, kl_fit_objective,
                                lorentzian_model, synthetic_spectrum,
                                target_state_infidelity)


def random_unitary(d, rng):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))


# ---------------------------------------------------------------------------
# average gate fidelity


def test_fidelity_identity_is_one():
    u = random_unitary(8, np.random.default_rng(0))
    assert average_gate_fidelity(u, u) == pytest.approx(1.0, abs=1e-13)


def test_fidelity_closed_form_example():
    # D = 2, M = diag(1, -1): F = (0 + 2) / (2 * 3) = 1/3
    u_t = np.eye(2, dtype=complex)
    u_s = np.diag([1.0, -1.0]).astype(complex)
    assert average_gate_fidelity(u_s, u_t) == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert average_fidelity_operator_sum(u_s, u_t) == pytest.approx(1.0 / 3.0,
                                                                    abs=1e-12)


@pytest.mark.parametrize("d", [2, 4, 8])
def test_fidelity_matches_operator_sum(d):
    rng = np.random.default_rng(d)
    for _ in range(50):
        a, b = random_unitary(d, rng), random_unitary(d, rng)
        assert average_gate_fidelity(a, b) == pytest.approx(
            average_fidelity_operator_sum(a, b), abs=1e-12)


def test_fidelity_global_phase_invariance():
    rng = np.random.default_rng(7)
    a, b = random_unitary(4, rng), random_unitary(4, rng)
    f = average_gate_fidelity(a, b)
    assert average_gate_fidelity(np.exp(0.3j) * a, b) == pytest.approx(f, abs=1e-13)
    assert average_gate_fidelity(a, np.exp(-1.1j) * b) == pytest.approx(f, abs=1e-13)


@given(st.integers(min_value=0, max_value=10_000))
@settings(max_examples=30, deadline=None)
def test_fidelity_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    a, b = random_unitary(4, rng), random_unitary(4, rng)
    f = average_gate_fidelity(a, b)
    assert -1e-12 <= f <= 1.0 + 1e-12


def test_fidelity_shape_mismatch():
    with pytest.raises(ObjectiveError):
        average_gate_fidelity(np.eye(2), np.eye(4))


# ---------------------------------------------------------------------------
# composite state cost


def test_composite_cost_trivial_cases():
    rng = np.random.default_rng(0)
    psi = rng.standard_normal((3, 8)) + 1j * rng.standard_normal((3, 8))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    assert composite_state_cost(psi, psi) == pytest.approx(0.0, abs=1e-14)
    a = np.array([[1.0, 0.0]], dtype=complex)
    b = np.array([[0.0, 1.0]], dtype=complex)
    assert composite_state_cost(a, b) == pytest.approx(1.0)


def test_composite_cost_complete_basis_equals_trace_form():
    rng = np.random.default_rng(3)
    d = 8
    u_s, u_t = random_unitary(d, rng), random_unitary(d, rng)
    cost = composite_state_cost(u_s.T, u_t.T)  # rows as states = columns of U
    trace_form = 1.0 - abs(np.trace(u_t.conj().T @ u_s) / d) ** 2
    assert cost == pytest.approx(trace_form, abs=1e-12)


def test_state_infidelity_seed_matches_fd():
    rng = np.random.default_rng(1)
    psi_t = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    psi_t /= np.linalg.norm(psi_t)
    psi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    psi /= np.linalg.norm(psi)
    value, seed = target_state_infidelity(psi, psi_t)
    h = 1e-7
    for k in range(4):
        for part, delta in (("re", h), ("im", 1j * h)):
            up = psi.copy(); up[k] += delta
            dn = psi.copy(); dn[k] -= delta
            fd = (target_state_infidelity(up, psi_t)[0]
                  - target_state_infidelity(dn, psi_t)[0]) / (2 * h)
            # dL = 2 Re(seed* . dpsi): real part perturbation gives 2Re(seed_k),
            # imaginary part gives -2Im(seed_k)
            expected = 2 * np.real(seed[k]) if part == "re" else 2 * np.imag(seed[k])
            assert fd == pytest.approx(expected, abs=1e-6)


# ---------------------------------------------------------------------------
# compensation


def test_zrot_recovers_zz_error():
    target = gates.tensor(gates.cnot())
    u_sim = gates.tensor(gates.pauli_z(), gates.pauli_z()) @ target
    res = compensated_fidelity(u_sim, target, mode="zrot")
    assert res.fidelity == pytest.approx(1.0, abs=1e-9)


def test_arbit_single_recovers_local_rotations():
    rng = np.random.default_rng(5)
    target = gates.tensor(gates.cnot())
    ka = gates.tensor(random_unitary(2, rng), random_unitary(2, rng))
    kb = gates.tensor(random_unitary(2, rng), random_unitary(2, rng))
    res = compensated_fidelity(ka @ target @ kb, target, mode="arbit_single")
    assert res.fidelity == pytest.approx(1.0, abs=1e-8)


def test_compensation_never_below_bare():
    rng = np.random.default_rng(9)
    for _ in range(5):
        u_s, u_t = random_unitary(4, rng), random_unitary(4, rng)
        bare = average_gate_fidelity(u_s, u_t)
        for mode in ("zrot", "arbit_single"):
            res = compensated_fidelity(u_s, u_t, mode=mode)
            assert res.fidelity >= bare - 1e-10


def test_no_comp_mode_passthrough():
    rng = np.random.default_rng(2)
    u_s, u_t = random_unitary(4, rng), random_unitary(4, rng)
    res = compensated_fidelity(u_s, u_t, mode="no_comp")
    assert res.fidelity == pytest.approx(average_gate_fidelity(u_s, u_t))
    assert np.array_equal(res.u_comp, u_s)


def test_unknown_mode_rejected():
    with pytest.raises(ObjectiveError):
        compensated_fidelity(np.eye(2), np.eye(2), mode="full")


def test_gate_infidelity_seed_matches_fd():
    rng = np.random.default_rng(11)
    target = gates.tensor(gates.cnot())
    u = random_unitary(4, rng)
    obj = GateInfidelity(target=target, compensation="no_comp")
    value, seed = obj.value_and_seed(u)
    h = 1e-7
    worst = 0.0
    for i in range(4):
        for j in range(4):
            for delta, expected in ((h, 2 * np.real(seed[i, j])),
                                    (1j * h, 2 * np.imag(seed[i, j]))):
                up = u.copy(); up[i, j] += delta
                dn = u.copy(); dn[i, j] -= delta
                fd = (obj.value_and_seed(up)[0] - obj.value_and_seed(dn)[0]) / (2 * h)
                worst = max(worst, abs(fd - expected))
    assert worst < 1e-6


def test_composite_transfer_seed_matches_fd():
    rng = np.random.default_rng(12)
    target = gates.tensor(gates.cnot())
    u = random_unitary(4, rng)
    obj = CompositeStateTransfer(target=target)
    _, seed = obj.value_and_seed(u)
    assert abs(seed[1, 1]) > 0
    h = 1e-7
    up = u.copy(); up[1, 1] += 1j * h
    dn = u.copy(); dn[1, 1] -= 1j * h
    fd = (obj.value_and_seed(up)[0] - obj.value_and_seed(dn)[0]) / (2 * h)
    assert fd == pytest.approx(2 * np.imag(seed[1, 1]), abs=1e-7)


# ---------------------------------------------------------------------------
# KL divergence fitting

TRUE_FIT = {"ec": 1.0, "ej": 4.0, "el": 1.0, "a": 0.9, "b": 2.2,
            "lam": 0.05, "c": 1.0}
XS = np.linspace(0.0, 1.0, 21)
EPS = np.linspace(0.4, 1.6, 31)


def test_kl_zero_when_equal():
    p, _ = synthetic_spectrum(XS, EPS, TRUE_FIT)
    value, _ = kl_fit_objective(XS, EPS, p, TRUE_FIT)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_kl_nonnegative_gibbs():
    p, _ = synthetic_spectrum(XS, EPS, TRUE_FIT)
    rng = np.random.default_rng(0)
    for _ in range(4):
        other = dict(TRUE_FIT)
        other["el"] *= 1 + 0.1 * rng.uniform(-1, 1)
        other["lam"] *= 1 + 0.5 * rng.uniform(0, 1)
        value, _ = kl_fit_objective(XS, EPS, p, other)
        assert value >= -1e-12


def test_kl_gradient_matches_fd():
    p, _ = synthetic_spectrum(XS, EPS, TRUE_FIT)
    point = dict(TRUE_FIT)
    point["el"] = 1.03
    point["lam"] = 0.06
    value, grad = kl_fit_objective(XS, EPS, p, point)
    for name in ("ec", "ej", "el", "a", "b", "lam", "c"):
        h = 1e-6 * max(1.0, abs(point[name]))
        up = dict(point); up[name] += h
        dn = dict(point); dn[name] -= h
        fd = (kl_fit_objective(XS, EPS, p, up, with_grad=False)[0]
              - kl_fit_objective(XS, EPS, p, dn, with_grad=False)[0]) / (2 * h)
        assert abs(fd - grad[name]) / max(abs(fd), 1e-9) < 1e-5, name


def test_kl_rejects_nonpositive_model():
    p, _ = synthetic_spectrum(XS, EPS, TRUE_FIT)
    bad = dict(TRUE_FIT); bad["c"] = -5.0
    with pytest.raises(ObjectiveError, match="non-positive"):
        kl_fit_objective(XS, EPS, p, bad)


def test_kl_rejects_unnormalized_data():
    p, _ = synthetic_spectrum(XS, EPS, TRUE_FIT)
    with pytest.raises(ObjectiveError, match="normalized"):
        kl_fit_objective(XS, EPS, 2 * p, TRUE_FIT)


def test_lorentzian_model_normalized():
    q, raw, z, draw, f01 = lorentzian_model(XS, EPS, TRUE_FIT)
    assert q.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(q > 0)
    assert f01.shape == XS.shape
