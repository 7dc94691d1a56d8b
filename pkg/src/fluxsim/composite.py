"""Composite N-qudit system: local terms, dressed spectra, eigenbasis.

The static Hamiltonian is kept as a list of local terms (1-body diagonal
spectra plus 2-body coupling blocks); drives are local terms with
time-dependent scalar coefficients. Dense assembly, dressed-state
identification, and the energy tensor live here, together with the
Hellmann-Feynman / perturbation-theory derivatives used by the gradient
engine.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qubit as qb
from .graph import ENERGY_FIELDS, UNIFY_KEYS, DeviceGraph, extract_params
from .pulses import GRAD_FIELDS, PulseCoefficient

DENSE_LIMIT_DEFAULT = 4096
_ASSIGN_MIN_OVERLAP = 0.25


class CompositeError(RuntimeError):
    pass


@dataclass
class LocalTerm:
    """A k-body operator (k in {1, 2}) with a scalar coefficient.

    ``matrix`` is the full d^k x d^k block on ``sites``; ``coeff`` is either
    1.0 (static) or a PulseCoefficient. ``dirs`` maps parameter keys to
    d(matrix)/d(key); ``coeff_dirs`` maps parameter keys to pulse fields whose
    coefficient derivative is taken at evaluation time.
    """

    sites: tuple[int, ...]
    matrix: np.ndarray
    coeff: float | PulseCoefficient = 1.0
    dirs: dict[str, np.ndarray] = field(default_factory=dict)
    coeff_dirs: dict[str, str] = field(default_factory=dict)
    label: str = ""

    @property
    def is_drive(self):
        return isinstance(self.coeff, PulseCoefficient)

    def coefficient(self, t):
        return self.coeff(t) if self.is_drive else self.coeff


@dataclass
class CompositeSystem:
    qudits: list[qb.TruncatedQubit]
    dims: list[int]
    static_terms: list[LocalTerm]
    drive_terms: list[LocalTerm]
    node_names: list[str]
    graph: DeviceGraph
    truncated_dim: int
    dim_full: int
    share_params: bool
    unify_coupling: bool
    dense_limit: int = DENSE_LIMIT_DEFAULT
    _spectrum_cache: tuple | None = field(default=None, repr=False)

    @property
    def terms(self):
        return self.static_terms + self.drive_terms

    @property
    def total_dim(self):
        return int(np.prod(self.dims))

    def site_of(self, name):
        return self.node_names.index(name)

    def rebuild(self, graph):
        """Same assembly options on a different graph."""
        return assemble(graph, self.truncated_dim, dim_full=self.dim_full,
                        share_params=self.share_params,
                        unify_coupling=self.unify_coupling,
                        dense_limit=self.dense_limit)


def _device_keys(graph, name, share_params):
    mark = graph.nodes[name].shared_param_mark
    if share_params:
        return {fld: f"shared.{mark}.{fld}" for fld in ENERGY_FIELDS}
    return {fld: f"{name}.{fld}" for fld in ENERGY_FIELDS}


def assemble(graph: DeviceGraph, truncated_dim: int, dim_full: int = qb.DEFAULT_DIM_FULL,
             share_params: bool = False, unify_coupling: bool = False,
             dense_limit: int = DENSE_LIMIT_DEFAULT) -> CompositeSystem:
    """Build the local-term Hamiltonian of the processor.

    Per node: a diagonal 1-body term (truncated spectrum). Per edge: a 2-body
    block  J_C n (x) n + J_L phi (x) phi  in the truncated eigenbases, with
    the stored strengths multiplying the displaced-phase operators directly.
    Per pulse: a drive term on its node. Parameter-derivative directions are
    attached under the key names produced by extract_params with the same
    share/unify flags.
    """
    graph.validate()
    # parameter-key sanity (raises on sharing conflicts up front)
    extract_params(graph, share_params=share_params, unify_coupling=unify_coupling)
    names = graph.node_names
    qudits = []
    derivs = {}
    for name in names:
        ops = qb.build_fluxonium(graph.nodes[name], dim_full)
        qudits.append(qb.truncate(ops, truncated_dim))
        derivs[name] = qb.fluxonium_param_derivs(graph.nodes[name], truncated_dim, dim_full)
    dims = [truncated_dim] * len(names)

    static_terms = []
    for i, name in enumerate(names):
        keys = _device_keys(graph, name, share_params)
        dirs = {keys[fld]: derivs[name][fld].dh_d for fld in ENERGY_FIELDS}
        static_terms.append(LocalTerm(sites=(i,), matrix=qudits[i].h_d, dirs=dirs,
                                      label=f"h({name})"))
    for (a, b), cpl in graph.edges.items():
        i, j = sorted((names.index(a), names.index(b)))
        na, nb = names[i], names[j]
        qi, qj = qudits[i], qudits[j]
        mat = (cpl.capacitive_strength * np.kron(qi.n_d, qj.n_d)
               + cpl.inductive_strength * np.kron(qi.phi_d, qj.phi_d))
        if unify_coupling:
            kc, kl = UNIFY_KEYS["capacitive_strength"], UNIFY_KEYS["inductive_strength"]
        else:
            kc, kl = f"{na}__{nb}.capacitive_strength", f"{na}__{nb}.inductive_strength"
        dirs = {kc: np.kron(qi.n_d, qj.n_d), kl: np.kron(qi.phi_d, qj.phi_d)}
        for name, other, left in ((na, qj, True), (nb, qi, False)):
            keys = _device_keys(graph, name, share_params)
            for fld in ENERGY_FIELDS:
                dv = derivs[name][fld]
                if left:
                    dmat = (cpl.capacitive_strength * np.kron(dv.dn_d, other.n_d)
                            + cpl.inductive_strength * np.kron(dv.dphi_d, other.phi_d))
                else:
                    dmat = (cpl.capacitive_strength * np.kron(other.n_d, dv.dn_d)
                            + cpl.inductive_strength * np.kron(other.phi_d, dv.dphi_d))
                key = keys[fld]
                dirs[key] = dirs.get(key, 0) + dmat
        static_terms.append(LocalTerm(sites=(i, j), matrix=mat, dirs=dirs,
                                      label=f"cpl({na},{nb})"))

    drive_terms = []
    for i, name in enumerate(names):
        keys = _device_keys(graph, name, share_params)
        for pi, p in enumerate(graph.nodes[name].pulses):
            coeff = PulseCoefficient(p.amp, p.omega_d, p.phase, p.length,
                                     delay=p.delay, pulse_type=p.pulse_type)
            if p.operator_type == "phi_operator":
                op = qudits[i].phi_d
                dop = {fld: derivs[name][fld].dphi_d for fld in ENERGY_FIELDS}
            else:
                op = qudits[i].n_d
                dop = {fld: derivs[name][fld].dn_d for fld in ENERGY_FIELDS}
            dirs = {keys[fld]: dop[fld] for fld in ENERGY_FIELDS}
            coeff_dirs = {f"{name}.pulses.{pi}.{fld}": fld for fld in GRAD_FIELDS}
            drive_terms.append(LocalTerm(sites=(i,), matrix=op, coeff=coeff,
                                         dirs=dirs, coeff_dirs=coeff_dirs,
                                         label=f"drive({name},{pi})"))

    return CompositeSystem(qudits=qudits, dims=dims, static_terms=static_terms,
                           drive_terms=drive_terms, node_names=names, graph=graph,
                           truncated_dim=truncated_dim, dim_full=dim_full,
                           share_params=share_params, unify_coupling=unify_coupling,
                           dense_limit=dense_limit)


def embed(matrix, sites, dims):
    """Kronecker-embed a k-site block into the full product space."""
    full = None
    pending = {s: True for s in sites}
    # blocks on (i, j) are ordered i < j and contiguous in kron structure only
    # when built site-by-site; handle k<=2 explicitly
    if len(sites) == 1:
        ops = {sites[0]: matrix}
        for k, dk in enumerate(dims):
            m = ops.get(k, np.eye(dk))
            full = m if full is None else np.kron(full, m)
        return full
    if len(sites) == 2:
        i, j = sites
        if i > j:
            raise CompositeError("2-body sites must be ordered")
        d_i, d_j = dims[i], dims[j]
        # reshape block to (i_out, j_out, i_in, j_in) and interleave identities
        blk = matrix.reshape(d_i, d_j, d_i, d_j)
        left = int(np.prod(dims[:i], dtype=int))
        mid = int(np.prod(dims[i + 1:j], dtype=int))
        right = int(np.prod(dims[j + 1:], dtype=int))
        out = np.einsum("abcd,ef,gh->aebgcfdh", blk, np.eye(mid), np.eye(right),
                        optimize=True)
        dim_r = d_i * mid * d_j * right
        out = out.reshape(dim_r, dim_r)
        return np.kron(np.eye(left), out)
    raise CompositeError("only 1- and 2-body terms supported")


def dense_hamiltonian(sys: CompositeSystem, t: float | None = None) -> np.ndarray:
    """Sum of all terms embedded densely; static only when t is None."""
    total = sys.total_dim
    if total > sys.dense_limit:
        raise CompositeError(
            f"dense dimension {total} exceeds limit {sys.dense_limit}")
    h = np.zeros((total, total), dtype=complex)
    for term in sys.static_terms:
        h += embed(term.matrix, term.sites, sys.dims)
    if t is not None:
        for term in sys.drive_terms:
            h += term.coefficient(t) * embed(term.matrix, term.sites, sys.dims)
    return h


@dataclass(frozen=True)
class EnergyTensor:
    """Dressed eigenenergies indexed by bare product labels, ground at zero."""

    values: np.ndarray
    node_names: tuple[str, ...]

    def __getitem__(self, label):
        return self.values[label]

    @property
    def dims(self):
        return self.values.shape


def _assign_dressed(overlaps):
    """Greedy global assignment bare-label -> eigenvector by |overlap|^2."""
    D = overlaps.shape[0]
    flat = np.argsort(overlaps, axis=None)[::-1]
    assign = np.full(D, -1)
    used_eig = np.zeros(D, dtype=bool)
    used_bare = np.zeros(D, dtype=bool)
    count = 0
    for f in flat:
        b, e = divmod(f, D)
        if used_bare[b] or used_eig[e]:
            continue
        if overlaps[b, e] < _ASSIGN_MIN_OVERLAP:
            contested = [int(x) for x in np.nonzero(~used_bare)[0]]
            raise CompositeError(
                "ambiguous dressed-state assignment: best remaining overlap "
                f"{overlaps[b, e]:.3f} < {_ASSIGN_MIN_OVERLAP} for bare labels {contested}")
        assign[b] = e
        used_bare[b] = used_eig[e] = True
        count += 1
        if count == D:
            break
    return assign


def _spectrum(sys: CompositeSystem):
    if sys._spectrum_cache is not None:
        return sys._spectrum_cache
    h = dense_hamiltonian(sys).real
    evals, evecs = np.linalg.eigh(h)
    overlaps = np.abs(evecs) ** 2  # [bare, eig]
    assign = _assign_dressed(overlaps)
    V = evecs[:, assign]
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    V = V * signs
    energies = evals[assign]
    sys._spectrum_cache = (energies, V, assign)
    return sys._spectrum_cache


def energy_tensor(sys: CompositeSystem) -> EnergyTensor:
    """Diagonalize the idle system and label dressed energies by bare states."""
    energies, _, _ = _spectrum(sys)
    values = (energies - energies[0]).reshape(sys.dims)
    return EnergyTensor(values=values, node_names=tuple(sys.node_names))


def eigenbasis(sys: CompositeSystem) -> np.ndarray:
    """Dressed eigenvectors as columns, ordered by bare label, signs fixed."""
    _, V, _ = _spectrum(sys)
    return V


def static_zz(energy: EnergyTensor, pair) -> float:
    """Residual ZZ rate of a qubit pair from four dressed energies."""
    names = energy.node_names
    i, j = (names.index(p) if isinstance(p, str) else int(p) for p in pair)
    n = len(energy.dims)

    def lbl(bi, bj):
        v = [0] * n
        v[i], v[j] = bi, bj
        return tuple(v)

    return float(energy[lbl(0, 0)] + energy[lbl(1, 1)]
                 - energy[lbl(1, 0)] - energy[lbl(0, 1)])


def dense_param_derivative(sys: CompositeSystem, key: str) -> np.ndarray:
    """d(dense static H)/d(key), assembled from the terms' directions."""
    total = sys.total_dim
    dh = np.zeros((total, total), dtype=complex)
    found = False
    for term in sys.static_terms:
        if key in term.dirs:
            dh += embed(term.dirs[key], term.sites, sys.dims)
            found = True
    if not found:
        raise KeyError(f"{key!r} does not parameterize the static Hamiltonian")
    return dh


def energy_tensor_gradient(sys: CompositeSystem, keys) -> dict[str, EnergyTensor]:
    """Hellmann-Feynman gradient of every dressed energy, ground-referenced."""
    energies, V, _ = _spectrum(sys)
    out = {}
    for key in keys:
        dh = dense_param_derivative(sys, key).real
        de = np.einsum("il,ij,jl->l", V, dh, V)
        values = (de - de[0]).reshape(sys.dims)
        out[key] = EnergyTensor(values=values, node_names=tuple(sys.node_names))
    return out


def eigenbasis_derivative(sys: CompositeSystem, key: str,
                          gap_tol: float = 1e-9) -> np.ndarray:
    """dV/d(key) by first-order perturbation theory with fixed assignment."""
    energies, V, _ = _spectrum(sys)
    gaps = energies[None, :] - energies[:, None]  # gaps[m, l] = E_l - E_m
    offdiag = ~np.eye(len(energies), dtype=bool)
    if np.any(np.abs(gaps[offdiag]) < gap_tol):
        raise CompositeError("near-degenerate composite spectrum; dV undefined")
    dh = dense_param_derivative(sys, key).real
    g = V.T @ dh @ V
    coef = np.zeros_like(g)
    coef[offdiag] = g[offdiag] / gaps[offdiag]
    return V @ coef
