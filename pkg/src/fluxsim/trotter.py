"""Suzuki-Trotter time evolution with local-term tensor contraction.

A plan expands one time step into a stage sequence: each stage applies
exp(-i c * dt * H_k) for one local term, with c the (possibly complex) stage
coefficient of the chosen product formula. Orders:

* 1   forward product, drive coefficients sampled at the step start
* 2   palindromic half-step sweep, sampled at the step midpoint
* 4j  two palindromic blocks with conjugate complex coefficients
      p = (3 - i*sqrt(3))/6
* 4   three palindromic blocks with p = 1/(2 - 2^(1/3)) and 1 - 2p in the
      middle

Each palindromic block spans a virtual clock interval equal to its coefficient
times dt and samples drives at the block's clock midpoint; for the complex
scheme those sample points are complex and envelopes are analytically
continued.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .composite import CompositeSystem

P4 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
P4J = (3.0 - 1j * math.sqrt(3.0)) / 6.0

_BATCH_BYTES_LIMIT = 4 << 30


class TrotterError(RuntimeError):
    pass


@dataclass(frozen=True)
class Stage:
    term: int
    scale: complex  # c in exp(-i c dt H_k)
    tfrac: complex  # drive sample offset within the step, fraction of dt


def _palindrome(n_terms, coeff, clock_start):
    mid = clock_start + coeff / 2.0
    fwd = [Stage(k, coeff / 2.0, mid) for k in range(n_terms)]
    rev = [Stage(k, coeff / 2.0, mid) for k in reversed(range(n_terms))]
    return fwd + rev, clock_start + coeff


def stage_schedule(n_terms: int, order) -> list[Stage]:
    """Per-step stage sequence in application order."""
    order = str(order)
    if order == "1":
        return [Stage(k, 1.0, 0.0) for k in range(n_terms)]
    if order == "2":
        stages, _ = _palindrome(n_terms, 1.0, 0.0)
        return stages
    if order == "4j":
        blocks = [np.conj(P4J), P4J]
    elif order == "4":
        blocks = [P4, 1.0 - 2.0 * P4, P4]
    else:
        raise TrotterError(f"unknown Trotter order {order!r}")
    stages = []
    clock = 0.0
    for c in blocks:
        blk, clock = _palindrome(n_terms, c, clock)
        stages += blk
    return stages


@dataclass
class TrotterPlan:
    order: str
    dt: float
    astep: int
    t0: float
    tg: float
    stages: list[Stage]
    _paths: dict = field(default_factory=dict, repr=False)


def make_plan(sys: CompositeSystem, order, dt: float | None = None,
              t0: float = 0.0, tg: float | None = None,
              astep: int | None = None) -> TrotterPlan:
    """Build the stage sequence and per-term exponential caches.

    Either dt or astep must be given; tg defaults to the latest pulse end.
    astep = round((tg - t0)/dt) when dt is given.
    """
    if tg is None:
        ends = [term.coeff.end for term in sys.drive_terms]
        if not ends:
            raise TrotterError("tg is required for a system without pulses")
        tg = t0 + max(e - t0 for e in ends)
    if tg <= t0:
        raise TrotterError("tg must be > t0")
    if astep is None:
        if dt is None:
            raise TrotterError("one of dt or astep is required")
        astep = int(round((tg - t0) / dt))
        astep = max(astep, 1)
    dt = (tg - t0) / astep
    stages = stage_schedule(len(sys.terms), order)
    return TrotterPlan(order=str(order), dt=dt, astep=astep, t0=t0, tg=tg,
                       stages=stages)


def greedy_path(inputs, sizes, output=()):
    """Greedy pairwise contraction order for a list of labeled tensors.

    ``inputs`` is a list of index-label tuples, ``sizes`` maps labels to
    dimensions, ``output`` lists labels kept in the result. Pairs are chosen
    to minimize (resultant size, flops); returns a list of index pairs in
    opt_einsum path convention (indices into the shrinking operand list).
    """
    if not inputs:
        raise TrotterError("greedy_path needs at least one tensor")
    terms = [frozenset(t) for t in inputs]
    keep = frozenset(output)
    path = []
    while len(terms) > 1:
        best = None
        for i in range(len(terms)):
            for j in range(i + 1, len(terms)):
                union = terms[i] | terms[j]
                rest = [terms[k] for k in range(len(terms)) if k not in (i, j)]
                external = keep.union(*rest) if rest else keep
                result = union & external
                flops = math.prod(sizes[x] for x in union)
                size = math.prod(sizes[x] for x in result)
                cand = (size, flops, i, j)
                if best is None or cand < best[0]:
                    best = (cand, result)
        _, _, i, j = best[0]
        path.append((i, j))
        terms = [t for k, t in enumerate(terms) if k not in (i, j)] + [best[1]]
    return path


def contraction_cost(inputs, sizes, output=()):
    """Total flops of the greedy path (for path-quality tests)."""
    terms = [frozenset(t) for t in inputs]
    keep = set(output)
    total = 0
    for (i, j) in greedy_path(inputs, sizes, output):
        union = terms[i] | terms[j]
        rest = [t for k, t in enumerate(terms) if k not in (i, j)]
        other = keep.union(*rest) if rest else keep
        result = union & other
        total += math.prod(sizes[x] for x in union)
        terms = rest + [result]
    return total


def apply_matrix(mat, psi, sites):
    """Contract a d^k x d^k block against site axes of a batched state.

    The state is folded so the contraction is a single fixed-order einsum;
    the per-element reduction order is then independent of the batch extent,
    making batched evolution bit-identical to column-by-column evolution.
    """
    k = len(sites)
    src = [s + 1 for s in sites]
    moved = np.moveaxis(psi, src, range(k))
    shp = moved.shape
    dk = int(np.prod(shp[:k]))
    folded = np.ascontiguousarray(moved).reshape(dk, -1)
    out = np.einsum("ab,br->ar", np.asarray(mat).reshape(dk, dk), folded,
                    optimize=False)
    return np.moveaxis(out.reshape(shp), range(k), src)


def _expm_scaled(w, u, s):
    """exp(s M) for Hermitian M = u diag(w) u^dagger and complex scalar s."""
    return (u * np.exp(s * w)) @ u.conj().T


class StageRunner:
    """Shared stage-exponential machinery for evolution and backpropagation.

    Exponential caches live on the runner (they depend on the system's term
    matrices); only the structural contraction paths are cached on the plan
    and reused across rebinds.
    """

    def __init__(self, sys: CompositeSystem, plan: TrotterPlan):
        self.sys = sys
        self.plan = plan
        self.terms = sys.terms
        self._eig = {}
        self._static = {}
        for idx, term in enumerate(self.terms):
            w, u = np.linalg.eigh(term.matrix)
            self._eig[idx] = (w, u)
            if idx not in plan._paths:
                # cached contraction order for this term (op x state); reused
                # across every step of the evolution and the reverse sweep
                state_ix = tuple(range(len(sys.dims)))
                sizes = {i: d for i, d in enumerate(sys.dims)}
                sizes.update({f"o{s}": sys.dims[s] for s in term.sites})
                op_labels = tuple(f"o{s}" for s in term.sites) + tuple(term.sites)
                out_labels = tuple(f"o{s}" if s in term.sites else s for s in state_ix)
                plan._paths[idx] = greedy_path([op_labels, state_ix], sizes,
                                               output=out_labels)

    def scalar(self, stage: Stage, t: float):
        """s such that the stage applies exp(s * M_term)."""
        term = self.terms[stage.term]
        s = -1j * stage.scale * self.plan.dt
        if term.is_drive:
            tau = t + stage.tfrac * self.plan.dt
            s = s * term.coeff(tau)
        return s

    def stage_matrix(self, stage: Stage, t: float, kind: str = "fwd"):
        s = self.scalar(stage, t)
        if kind == "inv":
            s = -s
        elif kind == "dag":
            s = np.conj(s)
        term = self.terms[stage.term]
        if not term.is_drive:
            key = (stage.term, complex(s))
            mat = self._static.get(key)
            if mat is None:
                w, u = self._eig[stage.term]
                mat = _expm_scaled(w, u, s)
                self._static[key] = mat
            return mat
        w, u = self._eig[stage.term]
        return _expm_scaled(w, u, s)

    def apply_stage(self, psi, stage: Stage, t: float, kind: str = "fwd"):
        term = self.terms[stage.term]
        return apply_matrix(self.stage_matrix(stage, t, kind), psi, term.sites)


def apply_local(psi, term, scale, t=None):
    """Apply exp(-i * scale * H_term) to a rank-N state tensor.

    ``scale`` already includes the time step and stage coefficient; drive
    terms take their scalar coefficient at time t. Site i of the term
    addresses axis i of the state.
    """
    coeff = term.coefficient(t) if term.is_drive else term.coeff
    w, u = np.linalg.eigh(term.matrix)
    mat = _expm_scaled(w, u, -1j * scale * coeff)
    return apply_matrix(mat, psi[None, ...], term.sites)[0]


def evolve_state(sys: CompositeSystem, psi0, plan: TrotterPlan):
    """Propagate a state (dims...) or batch (S, dims...) from t0 to tg."""
    psi = np.asarray(psi0, dtype=complex)
    unbatched = psi.ndim == len(sys.dims)
    if unbatched:
        psi = psi[None, ...]
    if psi.shape[1:] != tuple(sys.dims):
        raise TrotterError(f"state shape {psi.shape} does not match dims {sys.dims}")
    runner = StageRunner(sys, plan)
    for i in range(plan.astep):
        t = plan.t0 + i * plan.dt
        for st in plan.stages:
            psi = runner.apply_stage(psi, st, t)
        if not np.all(np.isfinite(psi.real)):
            raise TrotterError(f"non-finite state at step {i}")
    return psi[0] if unbatched else psi


@dataclass(frozen=True)
class UnitaryResult:
    """Full-space evolution matrix plus its computational-subspace view."""

    full: np.ndarray
    view: np.ndarray
    basis: str
    comp_indices: np.ndarray


def computational_indices(dims) -> np.ndarray:
    """Flat product-basis indices of the 2^N computational labels."""
    n = len(dims)
    labels = list(np.ndindex(*(2,) * n))
    return np.array([np.ravel_multi_index(l, dims) for l in labels])


def evolve_unitary(sys: CompositeSystem, plan: TrotterPlan,
                   basis: str = "product") -> UnitaryResult:
    """Evolve all product-basis columns in a batch.

    basis="eigen" maps columns through the idle eigenbasis V (evolution stays
    in the product basis; V and V^dagger are absorbed into the states).
    """
    from .composite import eigenbasis  # local import to avoid cycle at import time

    D = sys.total_dim
    if D * D * 16 > _BATCH_BYTES_LIMIT:
        raise TrotterError("unitary batch exceeds the memory budget")
    if basis == "product":
        cols = np.eye(D, dtype=complex)
    elif basis == "eigen":
        cols = eigenbasis(sys).astype(complex)
    else:
        raise TrotterError(f"unknown basis {basis!r}")
    batch = cols.T.reshape(D, *sys.dims)
    out = evolve_state(sys, batch, plan)
    psi = out.reshape(D, D).T  # columns are evolved states
    if basis == "eigen":
        V = eigenbasis(sys)
        full = V.conj().T @ psi
    else:
        full = psi
    sel = computational_indices(sys.dims)
    view = full[np.ix_(sel, sel)]
    return UnitaryResult(full=full, view=view, basis=basis, comp_indices=sel)
