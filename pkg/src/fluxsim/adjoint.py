"""Gradients of evolution objectives by the local continuous adjoint method.

The reverse sweep keeps one state and one adjoint state: after the forward
pass, every step is undone stage by stage (exact stage inverses), the adjoint
is pulled back through stage conjugate-transposes, and each stage contributes

    dL/dtheta += 2 Re < a_after | dG_stage/dtheta | psi_before >

summed over batch columns. Stage derivatives are Frechet derivatives of the
local matrix exponentials, evaluated on the small d^k blocks through the
Daleckii-Krein formula, so no full-space matrix is ever formed. Memory cost
is one state plus one adjoint state, independent of the step count.

Device parameters reach the evolution through the truncated single-qubit
operators (perturbation-theory derivatives from the qubit model) and, for
eigenbasis evolution, through the idle eigenbasis V (perturbation theory on
the dense idle Hamiltonian, assignment held fixed).

A finite-difference oracle and a dense store-everything chain-rule oracle are
provided for validation; both differentiate the same discretized evolution
map, so they agree with the adjoint result to their own accuracy regardless
of the Trotter error.
"""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .composite import CompositeSystem, eigenbasis, eigenbasis_derivative, embed
from .graph import ParameterSet, bind_params
from .trotter import StageRunner, TrotterPlan, computational_indices


class AdjointError(RuntimeError):
    pass


@dataclass
class Gradient:
    """Per-key derivative of the objective; units are 1/(parameter unit)."""

    values: dict[str, float]
    objective: float

    def __getitem__(self, key):
        return self.values[key]

    def keys(self):
        return list(self.values)

    def as_array(self, keys=None):
        keys = list(self.values) if keys is None else keys
        return np.array([self.values[k] for k in keys])


def _differentiable_keys(sys: CompositeSystem, params: ParameterSet):
    """Validate that every requested key can be differentiated."""
    touched = set()
    for term in sys.terms:
        touched.update(term.dirs)
        touched.update(term.coeff_dirs)
    bad = []
    for e in params.entries:
        if e.key not in touched:
            bad.append(e.key)
    if bad:
        structural = [k for k in bad if k.split(".")[-1] in ("length", "delay")]
        if structural:
            raise AdjointError(
                f"pulse length/delay are structural (fixed evolution window); "
                f"cannot backpropagate {structural}")
        raise AdjointError(f"keys {bad} do not touch the Hamiltonian")
    return [e.key for e in params.entries]


def _phi_matrix(w, s):
    """Daleckii-Krein divided differences for exp(s*w) on a Hermitian spectrum.

    (e^a - e^b)/(a - b) = e^{(a+b)/2} * sinh(x)/x with x = (a-b)/2, evaluated
    through a series for small x to avoid cancellation near degeneracies.
    """
    ws = s * np.asarray(w, dtype=complex)
    x = 0.5 * (ws[:, None] - ws[None, :])
    mean = 0.5 * (ws[:, None] + ws[None, :])
    small = np.abs(x) < 1e-3
    xs = np.where(small, 0.0, x)
    ratio = np.where(small,
                     1.0 + x * x / 6.0 * (1.0 + x * x / 20.0 * (1.0 + x * x / 42.0)),
                     np.sinh(xs) / np.where(xs == 0, 1.0, xs))
    return np.exp(mean) * ratio


def frechet_dirs(w, u, s, dmats):
    """Frechet derivatives of exp(s*M) in directions s*dM, stacked.

    M = u diag(w) u^dagger. Returns array (X, d, d) with
    out[x] = D exp(s M)[s * dmats[x]].
    """
    phi = _phi_matrix(w, s)
    out = np.empty((len(dmats),) + u.shape, dtype=complex)
    uc = u.conj().T
    for x, dm in enumerate(dmats):
        g = uc @ dm @ u
        out[x] = u @ ((s * g) * phi) @ uc
    return out


def stage_param_derivative(term, key, scale, dt, t=None):
    """d/d(key) of exp(-i*scale*dt*H_term) as a block on the term's sites.

    Zero-matrix fast path when the key does not touch the term. Drive terms
    evaluate their coefficient (and its parameter derivative) at time t.
    """
    d = term.matrix.shape[0]
    if key not in term.dirs and key not in term.coeff_dirs:
        return np.zeros((d, d), dtype=complex)
    w, u = np.linalg.eigh(term.matrix)
    s_base = -1j * scale * dt
    if term.is_drive:
        if t is None:
            raise AdjointError("drive stage derivative requires a time")
        f = term.coeff(t)
        s = s_base * f
    else:
        s = s_base
    if key in term.dirs:
        return frechet_dirs(w, u, s, [term.dirs[key]])[0]
    df = term.coeff.derivative(t, term.coeff_dirs[key])
    # direction proportional to M commutes with it: exact product rule
    return s_base * df * ((u * (w * np.exp(s * w))) @ u.conj().T)


class _TermDirections:
    """Per-term stacked derivative directions restricted to requested keys."""

    def __init__(self, sys, keys):
        key_pos = {k: i for i, k in enumerate(keys)}
        self.dev = []    # per term: (positions array, stacked dM (X, d, d))
        self.ctrl = []   # per term: list of (position, field)
        for term in sys.terms:
            pos, mats = [], []
            for k, dm in term.dirs.items():
                if k in key_pos:
                    pos.append(key_pos[k])
                    mats.append(dm)
            self.dev.append((np.array(pos, dtype=int),
                             np.array(mats, dtype=complex) if mats else None))
            self.ctrl.append([(key_pos[k], fld) for k, fld in term.coeff_dirs.items()
                              if k in key_pos])


def _fold(psi, sites):
    """Reshape (S, dims...) so the term's site axes become a leading matrix axis."""
    k = len(sites)
    moved = np.moveaxis(psi, [s + 1 for s in sites], range(k))
    dk = int(np.prod(moved.shape[:k]))
    return np.ascontiguousarray(moved).reshape(dk, -1)


class _Accumulator:
    """Accumulates per-stage parameter contributions during the reverse sweep."""

    def __init__(self, sys, plan, runner, keys):
        self.sys = sys
        self.plan = plan
        self.runner = runner
        self.keys = keys
        self.dirs = _TermDirections(sys, keys)
        self.grad = np.zeros(len(keys))
        self._static_cache = {}

    def _static_dg(self, term_idx, scale):
        key = (term_idx, complex(scale))
        hit = self._static_cache.get(key)
        if hit is None:
            pos, dms = self.dirs.dev[term_idx]
            if dms is None:
                hit = (pos, None)
            else:
                w, u = self.runner._eig[term_idx]
                s = -1j * scale * self.plan.dt
                hit = (pos, frechet_dirs(w, u, s, dms))
            self._static_cache[key] = hit
        return hit

    def add_stage(self, stage, t, a_after, psi_before):
        term = self.sys.terms[stage.term]
        pos_dev, _ = self.dirs.dev[stage.term]
        ctrl = self.dirs.ctrl[stage.term]
        if len(pos_dev) == 0 and not ctrl:
            return
        w, u = self.runner._eig[stage.term]
        s_base = -1j * stage.scale * self.plan.dt

        stacks = []
        positions = []
        if term.is_drive:
            tau = t + stage.tfrac * self.plan.dt
            f = term.coeff(tau)
            s = s_base * f
            if len(pos_dev):
                _, dms = self.dirs.dev[stage.term]
                stacks.append(frechet_dirs(w, u, s, dms))
                positions.append(pos_dev)
            if ctrl:
                mg = (u * (w * np.exp(s * w))) @ u.conj().T
                cmats = np.array([s_base * term.coeff.derivative(tau, fld) * mg
                                  for _, fld in ctrl])
                stacks.append(cmats)
                positions.append(np.array([p for p, _ in ctrl], dtype=int))
        else:
            pos, dgs = self._static_dg(stage.term, stage.scale)
            if dgs is not None:
                stacks.append(dgs)
                positions.append(pos)
        if not stacks:
            return
        dg = np.concatenate(stacks, axis=0)
        pos = np.concatenate(positions)
        psi_m = _fold(psi_before, term.sites)
        a_m = _fold(a_after, term.sites)
        dpsi = dg @ psi_m  # (X, dk, R)
        contrib = 2.0 * np.real(np.einsum("ar,xar->x", a_m.conj(), dpsi))
        np.add.at(self.grad, pos, contrib)


def _forward(sys, plan, psi0_batch):
    runner = StageRunner(sys, plan)
    psi = np.asarray(psi0_batch, dtype=complex)
    for i in range(plan.astep):
        t = plan.t0 + i * plan.dt
        for st in plan.stages:
            psi = runner.apply_stage(psi, st, t)
    return psi, runner


def _forward_stored(sys, plan, psi0_batch):
    runner = StageRunner(sys, plan)
    psi = np.asarray(psi0_batch, dtype=complex)
    stored = [psi]
    for i in range(plan.astep):
        t = plan.t0 + i * plan.dt
        for st in plan.stages:
            psi = runner.apply_stage(psi, st, t)
        stored.append(psi)
    return stored, runner


@dataclass
class _ViewSetup:
    """Mapping between evolution batches and the objective's view space."""

    basis: str
    sel: np.ndarray | None
    V: np.ndarray | None
    psi0: np.ndarray
    mode: str  # "unitary" or "state"


def _setup_view(sys, basis, objective):
    mode = getattr(objective, "mode", "unitary")
    D = sys.total_dim
    if mode == "state":
        if basis != "product":
            raise AdjointError("state objectives are defined in the product basis")
        psi0 = np.asarray(objective.psi0, dtype=complex).reshape(1, *sys.dims)
        return _ViewSetup(basis=basis, sel=None, V=None, psi0=psi0, mode=mode)
    sel = computational_indices(sys.dims)
    if basis == "eigen":
        V = eigenbasis(sys)
        cols = V[:, sel].astype(complex)
    elif basis == "product":
        V = None
        cols = np.eye(D, dtype=complex)[:, sel]
    else:
        raise AdjointError(f"unknown basis {basis!r}")
    psi0 = cols.T.reshape(len(sel), *sys.dims)
    return _ViewSetup(basis=basis, sel=sel, V=V, psi0=psi0, mode=mode)


def _view_of(setup, sys, psi_g):
    if setup.mode == "state":
        return psi_g[0]
    S = psi_g.shape[0]
    Psi = psi_g.reshape(S, sys.total_dim).T  # columns are evolved states
    if setup.basis == "eigen":
        return (setup.V.conj().T @ Psi)[setup.sel, :]
    return Psi[setup.sel, :]


def _seed_batch(setup, sys, seed_view):
    if setup.mode == "state":
        return np.asarray(seed_view, dtype=complex).reshape(1, *sys.dims)
    D = sys.total_dim
    S = seed_view.shape[1]
    B = np.zeros((D, S), dtype=complex)
    B[setup.sel, :] = seed_view
    A = setup.V @ B if setup.basis == "eigen" else B
    return A.T.reshape(S, *sys.dims)


def _static_param_keys(sys, keys):
    static = set()
    for term in sys.static_terms:
        static.update(term.dirs)
    return [k for k in keys if k in static]


def _v_corrections(sys, keys, seed_view, sel, psi_g, a0):
    """Gradient contributions from the theta-dependence of the eigenbasis V."""
    S = psi_g.shape[0]
    Psi = psi_g.reshape(S, sys.total_dim).T
    A0 = a0.reshape(S, sys.total_dim).T
    D = sys.total_dim
    B = np.zeros((D, S), dtype=complex)
    B[sel, :] = seed_view
    out = np.zeros(len(keys))
    for i, key in enumerate(keys):
        dV = eigenbasis_derivative(sys, key)
        term1 = np.sum((dV @ B).conj() * Psi)
        term2 = np.sum(A0.conj() * dV[:, sel])
        out[i] = 2.0 * np.real(term1 + term2)
    return out


def backprop(sys: CompositeSystem, plan: TrotterPlan, objective,
             params: ParameterSet, basis: str = "product",
             method: str = "adjoint") -> Gradient:
    """Objective value and full gradient in one forward plus one reverse sweep.

    method="adjoint" reconstructs states by inverse stages (memory independent
    of the step count); method="store_all" keeps every per-step state from the
    forward pass instead (linear memory, used as a reference and for the
    memory-scaling comparison).
    """
    keys = _differentiable_keys(sys, params)
    setup = _setup_view(sys, basis, objective)

    if method == "store_all":
        stored, runner = _forward_stored(sys, plan, setup.psi0)
        psi_g = stored[-1]
    elif method == "adjoint":
        psi_g, runner = _forward(sys, plan, setup.psi0)
    else:
        raise AdjointError(f"unknown method {method!r}")

    view = _view_of(setup, sys, psi_g)
    value, seed_view = objective.value_and_seed(view)
    a = _seed_batch(setup, sys, seed_view)

    acc = _Accumulator(sys, plan, runner, keys)
    psi = psi_g
    for i in reversed(range(plan.astep)):
        t = plan.t0 + i * plan.dt
        if method == "store_all":
            befores = []
            p = stored[i]
            for st in plan.stages:
                befores.append(p)
                p = runner.apply_stage(p, st, t)
            for st, pb in zip(reversed(plan.stages), reversed(befores)):
                acc.add_stage(st, t, a, pb)
                a = runner.apply_stage(a, st, t, kind="dag")
        else:
            for st in reversed(plan.stages):
                psi = runner.apply_stage(psi, st, t, kind="inv")
                acc.add_stage(st, t, a, psi)
                a = runner.apply_stage(a, st, t, kind="dag")
        if not np.all(np.isfinite(a.real)):
            raise AdjointError(f"non-finite adjoint at step {i}")

    grad = acc.grad
    if setup.basis == "eigen":
        vkeys = _static_param_keys(sys, keys)
        if vkeys:
            vgrad = _v_corrections(sys, vkeys, seed_view, setup.sel, psi_g, a)
            for k, gv in zip(vkeys, vgrad):
                grad[keys.index(k)] += gv
    return Gradient(values=dict(zip(keys, grad)), objective=float(value))


def reconstruct_initial(sys, plan, psi_g):
    """Reverse-run the plan on a final state (round-trip drift diagnostics)."""
    runner = StageRunner(sys, plan)
    psi = np.asarray(psi_g, dtype=complex)
    unbatched = psi.ndim == len(sys.dims)
    if unbatched:
        psi = psi[None, ...]
    for i in reversed(range(plan.astep)):
        t = plan.t0 + i * plan.dt
        for st in reversed(plan.stages):
            psi = runner.apply_stage(psi, st, t, kind="inv")
    return psi[0] if unbatched else psi


def evaluate_objective(sys, plan, objective, basis: str = "product") -> float:
    """Forward evolution and objective value only."""
    setup = _setup_view(sys, basis, objective)
    psi_g, _ = _forward(sys, plan, setup.psi0)
    view = _view_of(setup, sys, psi_g)
    value, _ = objective.value_and_seed(view)
    return float(value)


def fd_gradient(sys: CompositeSystem, plan: TrotterPlan, objective,
                params: ParameterSet, step: float = 1e-6,
                basis: str = "product") -> Gradient:
    """Central finite differences; two forward evaluations per parameter."""
    if step <= 0:
        raise AdjointError("fd step must be > 0")

    def value_at(p):
        g = bind_params(sys.graph, p)
        s2 = sys.rebuild(g)
        return evaluate_objective(s2, plan, objective, basis=basis)

    base = evaluate_objective(sys, plan, objective, basis=basis)
    values = {}
    for e in params.entries:
        up = params.updated({e.key: e.value + step})
        dn = params.updated({e.key: e.value - step})
        values[e.key] = (value_at(up) - value_at(dn)) / (2.0 * step)
    return Gradient(values=values, objective=base)


def dense_chain_gradient(sys: CompositeSystem, plan: TrotterPlan, objective,
                         params: ParameterSet, basis: str = "product") -> Gradient:
    """Store-all-intermediates chain rule with dense full-space stage matrices.

    Oracle path: stage exponentials and their Frechet derivatives are computed
    by scipy on the Kronecker-embedded generators. Only feasible for small
    systems; validates the local-contraction gradient to near machine
    precision.
    """
    keys = _differentiable_keys(sys, params)
    setup = _setup_view(sys, basis, objective)
    D = sys.total_dim
    dims = sys.dims
    S = setup.psi0.shape[0]
    runner = StageRunner(sys, plan)  # only for stage scalars

    # forward with dense stage matrices, storing every per-stage state
    psi = setup.psi0.reshape(S, D).T.copy()
    states = []
    stage_mats = []
    for i in range(plan.astep):
        t = plan.t0 + i * plan.dt
        for st in plan.stages:
            term = sys.terms[st.term]
            s = runner.scalar(st, t)
            a_dense = s * embed(term.matrix, term.sites, dims)
            g_dense = sla.expm(a_dense)
            states.append(psi)
            stage_mats.append((st, t, a_dense, g_dense))
            psi = g_dense @ psi
    psi_g = psi.T.reshape(S, *dims)

    view = _view_of(setup, sys, psi_g)
    value, seed_view = objective.value_and_seed(view)
    a = _seed_batch(setup, sys, seed_view).reshape(S, D).T

    grad = np.zeros(len(keys))
    for (st, t, a_dense, g_dense), psi_before in zip(reversed(stage_mats),
                                                     reversed(states)):
        term = sys.terms[st.term]
        s_base = -1j * st.scale * plan.dt
        for ki, key in enumerate(keys):
            if key in term.dirs:
                if term.is_drive:
                    tau = t + st.tfrac * plan.dt
                    da = s_base * term.coeff(tau) * embed(term.dirs[key], term.sites, dims)
                else:
                    da = s_base * embed(term.dirs[key], term.sites, dims)
            elif key in term.coeff_dirs:
                tau = t + st.tfrac * plan.dt
                df = term.coeff.derivative(tau, term.coeff_dirs[key])
                da = s_base * df * embed(term.matrix, term.sites, dims)
            else:
                continue
            dg = sla.expm_frechet(a_dense, da, compute_expm=False)
            grad[ki] += 2.0 * np.real(np.sum(a.conj() * (dg @ psi_before)))
        a = g_dense.conj().T @ a

    if setup.basis == "eigen":
        vkeys = _static_param_keys(sys, keys)
        if vkeys:
            a0 = a.T.reshape(S, *dims)
            vgrad = _v_corrections(sys, vkeys, seed_view, setup.sel, psi_g, a0)
            for k, gv in zip(vkeys, vgrad):
                grad[keys.index(k)] += gv
    return Gradient(values=dict(zip(keys, grad)), objective=float(value))


@dataclass
class OverheadReport:
    o_t: float
    o_m: float
    t_forward: float
    t_grad: float
    m_forward: int
    m_grad: int


def measure_peak(fn):
    """Run fn and report (result, peak traced bytes)."""
    tracemalloc.start()
    tracemalloc.reset_peak()
    try:
        result = fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return result, peak


def overhead_report(forward_fn, grad_fn) -> OverheadReport:
    """Time and memory overhead of a gradient run relative to its forward run."""
    t0 = time.perf_counter()
    _, m_forward = measure_peak(forward_fn)
    t_forward = time.perf_counter() - t0
    t0 = time.perf_counter()
    _, m_grad = measure_peak(grad_fn)
    t_grad = time.perf_counter() - t0
    return OverheadReport(
        o_t=t_grad / t_forward if t_forward > 0 else float("inf"),
        o_m=m_grad / m_forward if m_forward > 0 else float("inf"),
        t_forward=t_forward, t_grad=t_grad,
        m_forward=m_forward, m_grad=m_grad)
