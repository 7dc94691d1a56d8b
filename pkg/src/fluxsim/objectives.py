"""Fidelity metrics, single-qubit compensation, and adjoint seeds.

Objectives evaluate a scalar loss on the final unitary view (or final state)
and supply the seed adjoint dL/d(output)* for backpropagation. For a real
loss of complex outputs the Wirtinger convention is used throughout:
dL/dtheta accumulates as 2 Re <seed | d(output)/dtheta>.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from . import gates
from .qubit import fluxonium_matrices

COMPENSATION_MODES = ("no_comp", "arbit_single", "zrot")


class ObjectiveError(ValueError):
    pass


# ---------------------------------------------------------------------------
# average gate fidelity


def average_gate_fidelity(u_sim: np.ndarray, u_target: np.ndarray) -> float:
    """Closed-form average fidelity of the unitary channel M = U_t^dag U_sim.

    F = (|tr M|^2 + D) / (D (D+1)); equals the operator-basis sum for any M.
    """
    if u_sim.shape != u_target.shape or u_sim.shape[0] != u_sim.shape[1]:
        raise ObjectiveError("unitary shape mismatch")
    d = u_sim.shape[0]
    m = u_target.conj().T @ u_sim
    return float((abs(np.trace(m)) ** 2 + d) / (d * (d + 1)))


def _weyl_basis(d):
    """Unitary operator basis X^a Z^b (orthogonal: tr(U_i^dag U_j) = D delta)."""
    x = np.roll(np.eye(d), 1, axis=0)
    omega = np.exp(2j * np.pi / d)
    z = np.diag(omega ** np.arange(d))
    basis = []
    xa = np.eye(d, dtype=complex)
    for _ in range(d):
        zb = np.eye(d, dtype=complex)
        for _ in range(d):
            basis.append(xa @ zb)
            zb = zb @ z
        xa = xa @ x
    return basis


def average_fidelity_operator_sum(u_sim: np.ndarray, u_target: np.ndarray) -> float:
    """Literal operator-basis-sum form of the average fidelity (test oracle)."""
    d = u_sim.shape[0]
    m = u_target.conj().T @ u_sim
    total = 0.0 + 0.0j
    for uj in _weyl_basis(d):
        total += np.trace(uj.conj().T @ m @ uj @ m.conj().T)
    return float(np.real((total + d * d) / (d * d * (d + 1))))


def composite_state_cost(psi_g: np.ndarray, psi_t: np.ndarray) -> float:
    """1 - |mean_s <psi_t^s | psi_g^s>|^2 over a batch of column states."""
    pg = np.atleast_2d(np.asarray(psi_g))
    pt = np.atleast_2d(np.asarray(psi_t))
    if pg.shape != pt.shape:
        raise ObjectiveError("state batch shape mismatch")
    m = np.mean(np.sum(pt.conj() * pg, axis=-1))
    return float(1.0 - abs(m) ** 2)


def target_state_infidelity(psi_g, psi_t):
    """1 - |<psi_t|psi_g>|^2 plus its adjoint seed."""
    pg = np.asarray(psi_g).ravel()
    pt = np.asarray(psi_t).ravel()
    ov = np.vdot(pt, pg)
    value = float(1.0 - abs(ov) ** 2)
    seed = -ov * pt
    return value, seed


# ---------------------------------------------------------------------------
# single-qubit compensation


def _su2(angles):
    a, b, c = angles
    return gates.rz(a) @ gates.rx(b) @ gates.rz(c)


def _dsu2(angles):
    a, b, c = angles
    return [gates.drz(a) @ gates.rx(b) @ gates.rz(c),
            gates.rz(a) @ gates.drx(b) @ gates.rz(c),
            gates.rz(a) @ gates.rx(b) @ gates.drz(c)]


def _kron_chain(mats):
    out = np.eye(1, dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def _comp_unitaries(x, n, mode):
    per = 3 if mode == "arbit_single" else 1
    xb = x[: n * per].reshape(n, per)
    xa = x[n * per:].reshape(n, per)
    if mode == "arbit_single":
        kb = _kron_chain([_su2(r) for r in xb])
        ka = _kron_chain([_su2(r) for r in xa])
    else:
        kb = _kron_chain([gates.rz(r[0]) for r in xb])
        ka = _kron_chain([gates.rz(r[0]) for r in xa])
    return kb, ka


def _trace_envs(t_mat, mats):
    """Per-qubit environments of tr((X_1 (x) ... (x) X_n) @ t_mat).

    env_q[j, i] = d(trace)/d(X_q[j, i]) at X = mats, so the directional trace
    for any single-qubit direction is a 2x2 contraction instead of a full
    Kronecker rebuild.
    """
    n = len(mats)
    w = t_mat.T.reshape((2,) * (2 * n))  # axes j1..jn, i1..in
    envs = []
    for q in range(n):
        cur = w
        axes = [("j", r) for r in range(n)] + [("i", r) for r in range(n)]
        for r in range(n):
            if r == q:
                continue
            jax = axes.index(("j", r))
            iax = axes.index(("i", r))
            cur = np.tensordot(mats[r], cur, axes=([0, 1], [jax, iax]))
            axes = [a for k, a in enumerate(axes) if k not in (jax, iax)]
        jax = axes.index(("j", q))
        iax = axes.index(("i", q))
        envs.append(np.moveaxis(cur, [jax, iax], [0, 1]))
    return envs


def _comp_value_grad(x, u_sim, u_target, n, mode):
    d = u_sim.shape[0]
    per = 3 if mode == "arbit_single" else 1
    xb = x[: n * per].reshape(n, per)
    xa = x[n * per:].reshape(n, per)
    if mode == "arbit_single":
        bs = [_su2(r) for r in xb]
        as_ = [_su2(r) for r in xa]
        dbs = [_dsu2(r) for r in xb]
        das = [_dsu2(r) for r in xa]
    else:
        bs = [gates.rz(r[0]) for r in xb]
        as_ = [gates.rz(r[0]) for r in xa]
        dbs = [[gates.drz(r[0])] for r in xb]
        das = [[gates.drz(r[0])] for r in xa]
    kb = _kron_chain(bs)
    ka = _kron_chain(as_)
    m = u_target.conj().T @ ka @ u_sim @ kb
    trm = np.trace(m)
    f = (abs(trm) ** 2 + d) / (d * (d + 1))
    # tr M = tr(Kb T_b') = tr(Ka T_a'); environments give all angle derivatives
    t_a = u_sim @ kb @ u_target.conj().T
    t_b = u_target.conj().T @ ka @ u_sim
    env_b = _trace_envs(t_b, bs)
    env_a = _trace_envs(t_a, as_)
    grad = np.zeros_like(x)
    idx = 0
    for q in range(n):
        for p in range(per):
            dtr = np.sum(dbs[q][p] * env_b[q])
            grad[idx] = 2.0 * np.real(np.conj(trm) * dtr) / (d * (d + 1))
            idx += 1
    for q in range(n):
        for p in range(per):
            dtr = np.sum(das[q][p] * env_a[q])
            grad[idx] = 2.0 * np.real(np.conj(trm) * dtr) / (d * (d + 1))
            idx += 1
    return -f, -grad


@dataclass
class CompensationResult:
    fidelity: float
    u_comp: np.ndarray
    k_before: np.ndarray
    k_after: np.ndarray
    converged: bool
    angles: np.ndarray


def compensated_fidelity(u_sim: np.ndarray, u_target: np.ndarray,
                         mode: str = "arbit_single", n_starts: int = 8,
                         maxiter: int = 500, seed: int = 11) -> CompensationResult:
    """Best average fidelity over errorless single-qubit rotations.

    mode "arbit_single" optimizes an SU(2) per qubit before and after the
    simulated unitary (ZXZ Euler angles); "zrot" restricts to Z rotations;
    "no_comp" evaluates the bare fidelity. Deterministic multi-start:
    identity plus fixed random restarts.
    """
    if mode not in COMPENSATION_MODES:
        raise ObjectiveError(f"unknown compensation mode {mode!r}")
    d = u_sim.shape[0]
    n = int(round(np.log2(d)))
    if 2 ** n != d:
        raise ObjectiveError("compensation needs a 2^N-dimensional view")
    if mode == "no_comp":
        f = average_gate_fidelity(u_sim, u_target)
        eye = np.eye(d, dtype=complex)
        return CompensationResult(f, u_sim.copy(), eye, eye, True,
                                  np.zeros(0))
    per = 3 if mode == "arbit_single" else 1
    nx = 2 * n * per
    rng = np.random.default_rng(seed)
    starts = [np.zeros(nx)] + [rng.uniform(-np.pi, np.pi, nx) for _ in range(n_starts)]
    best = None
    converged = False
    for x0 in starts:
        res = _scipy_minimize(_comp_value_grad, x0, args=(u_sim, u_target, n, mode),
                              jac=True, method="L-BFGS-B",
                              options={"maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
            converged = bool(res.success)
    kb, ka = _comp_unitaries(best.x, n, mode)
    return CompensationResult(fidelity=float(-best.fun),
                              u_comp=ka @ u_sim @ kb,
                              k_before=kb, k_after=ka,
                              converged=converged, angles=best.x.copy())


# ---------------------------------------------------------------------------
# objectives consumed by the gradient engine


@dataclass
class GateInfidelity:
    """1 - F(K_a U K_b, U_target) on the computational view.

    With compensation, the inner rotation optimum is held fixed while seeding
    the outer gradient (envelope theorem).
    """

    target: np.ndarray
    compensation: str = "no_comp"
    n_starts: int = 8
    maxiter: int = 500
    mode: str = field(default="unitary", init=False)
    last_compensation: CompensationResult | None = field(default=None, init=False)

    def value_and_seed(self, u_view):
        d = u_view.shape[0]
        if self.target.shape != u_view.shape:
            raise ObjectiveError("target shape does not match the view")
        comp = compensated_fidelity(u_view, self.target, mode=self.compensation,
                                    n_starts=self.n_starts, maxiter=self.maxiter)
        self.last_compensation = comp
        a = self.target.conj().T @ comp.k_after
        b = comp.k_before
        m = a @ u_view @ b
        trm = np.trace(m)
        value = 1.0 - (abs(trm) ** 2 + d) / (d * (d + 1))
        seed = -(trm / (d * (d + 1))) * (a.conj().T @ b.conj().T)
        return float(value), seed


@dataclass
class CompositeStateTransfer:
    """Composite state-transfer cost of the view against a target unitary."""

    target: np.ndarray
    mode: str = field(default="unitary", init=False)

    def value_and_seed(self, u_view):
        if self.target.shape != u_view.shape:
            raise ObjectiveError("target shape does not match the view")
        s = u_view.shape[0]
        m = np.trace(self.target.conj().T @ u_view) / s
        value = 1.0 - abs(m) ** 2
        seed = -(m / s) * self.target
        return float(value), seed


@dataclass
class StateInfidelity:
    """Target-state infidelity of a single evolved state (product basis)."""

    psi0: np.ndarray
    psi_target: np.ndarray
    mode: str = field(default="state", init=False)

    def value_and_seed(self, psi_g):
        value, seed = target_state_infidelity(psi_g.ravel(),
                                              np.asarray(self.psi_target).ravel())
        return value, seed.reshape(psi_g.shape)


# ---------------------------------------------------------------------------
# spectrum fitting (KL divergence against a Lorentzian line model)

FIT_PARAM_NAMES = ("ec", "ej", "el", "a", "b", "lam", "c")


def f01_with_derivatives(ec, ej, el, phis, dim_full=40):
    """Lowest transition frequency (GHz) per external flux, with derivatives.

    Device energies are taken in GHz; derivatives are returned for
    (ec, ej, el) in 1/GHz-per-GHz and for phiext in GHz/rad.
    """
    twopi = 2.0 * np.pi
    f01 = np.empty(len(phis))
    derivs = {k: np.empty(len(phis)) for k in ("ec", "ej", "el", "phi")}
    for i, phi_ext in enumerate(phis):
        h, n, phi, phi_shift, cosphi = fluxonium_matrices(
            ec * twopi, ej * twopi, el * twopi, phi_ext, dim_full)
        evals, evecs = np.linalg.eigh(h)
        v0, v1 = evecs[:, 0], evecs[:, 1]
        f01[i] = (evals[1] - evals[0]) / twopi

        def hf(dmat):
            return (v1 @ dmat @ v1 - v0 @ dmat @ v0) / twopi

        derivs["ec"][i] = hf(4.0 * (n @ n).real) * twopi  # per GHz of ec
        derivs["ej"][i] = hf(-cosphi) * twopi
        derivs["el"][i] = hf(0.5 * (phi_shift @ phi_shift)) * twopi
        derivs["phi"][i] = hf(el * twopi * phi_shift)
    return f01, derivs


def lorentzian_model(x, eps, params, dim_full=40):
    """Model distribution Q(x, eps) and its parameter gradient pieces."""
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    phis = params["a"] * x + params["b"]
    f01, df = f01_with_derivatives(params["ec"], params["ej"], params["el"],
                                   phis, dim_full)
    lam, c = params["lam"], params["c"]
    delta = eps[None, :] - f01[:, None]
    denom = delta ** 2 + lam ** 2
    lor = lam / denom
    raw = lor + c
    if np.any(raw <= 0):
        raise ObjectiveError("model density non-positive (need c > 0)")
    z = raw.sum()
    q = raw / z
    dlor_df = 2.0 * lam * delta / denom ** 2
    draw = {
        "lam": (delta ** 2 - lam ** 2) / denom ** 2,
        "c": np.ones_like(raw),
        "a": dlor_df * (df["phi"] * x)[:, None],
        "b": dlor_df * df["phi"][:, None],
        "ec": dlor_df * df["ec"][:, None],
        "ej": dlor_df * df["ej"][:, None],
        "el": dlor_df * df["el"][:, None],
    }
    return q, raw, z, draw, f01


def kl_fit_objective(x, eps, p_data, params, dim_full=40, with_grad=True):
    """KL divergence C(P, Q) = sum P ln(P/Q) and its gradient.

    ``p_data`` is the normalized measured distribution on the (x, eps) grid
    (x along axis 0). The model Q is a Lorentzian line centered on
    f01(a x + b) with linewidth lam over a constant background c.
    """
    p = np.asarray(p_data, dtype=float)
    if p.shape != (len(x), len(eps)):
        raise ObjectiveError("data grid shape mismatch")
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-8):
        raise ObjectiveError("P must be a normalized distribution")
    q, raw, z, draw, _ = lorentzian_model(x, eps, params, dim_full)
    mask = p > 0
    value = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    if not with_grad:
        return value, None
    grad = {}
    for name in FIT_PARAM_NAMES:
        dr = draw[name]
        grad[name] = float(-np.sum(p * dr / raw) + dr.sum() / z)
    return value, grad


def synthetic_spectrum(x, eps, params, dim_full=40, noise=0.0, seed=0):
    """Generate a normalized synthetic data distribution from the model."""
    q, _, _, _, f01 = lorentzian_model(x, eps, params, dim_full)
    if noise > 0:
        rng = np.random.default_rng(seed)
        q = q * (1.0 + noise * rng.standard_normal(q.shape))
        q = np.clip(q, 0.0, None)
        q = q / q.sum()
    return q, f01
