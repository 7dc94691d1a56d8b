"""Device graph: processor description with JSON round-tripping.

The graph is the single source of truth for a processor: qubits (nodes),
couplings (edges), drive pulses, parameter-sharing marks, and fabrication
deviations. All energies and frequencies are stored as angular frequencies in
rad/ns (a value of 1 GHz enters as ``1.0 * 2 * pi``); times are in ns and
hbar = 1.

Hierarchical parameter keys
---------------------------
* per-node fields      ``<node>.ec`` / ``.ej`` / ``.el``
* shared device fields ``shared.<mark>.ec`` / ``.ej`` / ``.el``
* per-edge fields      ``<a>__<b>.capacitive_strength`` (a, b sorted)
* unified couplings    ``capacitive_coupling_all_unify.strength`` and the
                       inductive analog
* pulse fields         ``<node>.pulses.<i>.amp`` etc.

Deviations are stored as multiplicative factors next to the pattern values, so
parameter sharing and extraction always see the undeviated pattern; builders
use the effective values (pattern * factor).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .pulses import OPERATOR_TYPES, PULSE_TYPES

SYSTEM_TYPES = ("fluxonium",)

ENERGY_FIELDS = ("ec", "ej", "el")
PULSE_FIELDS = ("amp", "omega_d", "phase", "length", "delay")
UNIFY_KEYS = {
    "capacitive_strength": "capacitive_coupling_all_unify.strength",
    "inductive_strength": "inductive_coupling_all_unify.strength",
}


class GraphError(ValueError):
    """Schema or parameter violation; message names the offending item."""


@dataclass(frozen=True)
class PulseSpec:
    amp: float
    omega_d: float
    phase: float
    length: float
    pulse_type: str = "cos"
    operator_type: str = "phi_operator"
    delay: float = 0.0

    def validate(self, where):
        if self.length <= 0:
            raise GraphError(f"{where}: pulse length must be > 0")
        if self.delay < 0:
            raise GraphError(f"{where}: pulse delay must be >= 0")
        if self.pulse_type not in PULSE_TYPES:
            raise GraphError(f"{where}: unknown pulse_type {self.pulse_type!r}")
        if self.operator_type not in OPERATOR_TYPES:
            raise GraphError(f"{where}: unknown operator_type {self.operator_type!r}")

    @property
    def end(self):
        return self.delay + self.length


@dataclass(frozen=True)
class QubitSpec:
    ec: float
    ej: float
    el: float
    phiext: float
    shared_param_mark: str = ""
    system_type: str = "fluxonium"
    pulses: tuple[PulseSpec, ...] = ()
    # fabrication deviation factors (multiplicative, default none)
    dev_ec: float = 1.0
    dev_ej: float = 1.0
    dev_el: float = 1.0

    def validate(self, name):
        if self.system_type not in SYSTEM_TYPES:
            raise GraphError(f"node {name!r}: unknown system_type {self.system_type!r}")
        for f in ENERGY_FIELDS:
            if not getattr(self, f) > 0:
                raise GraphError(f"node {name!r}: {f} must be > 0")
        if not np.isfinite(self.phiext):
            raise GraphError(f"node {name!r}: phiext must be finite")
        for i, p in enumerate(self.pulses):
            p.validate(f"node {name!r} pulse {i}")

    @property
    def ec_eff(self):
        return self.ec * self.dev_ec

    @property
    def ej_eff(self):
        return self.ej * self.dev_ej

    @property
    def el_eff(self):
        return self.el * self.dev_el


@dataclass(frozen=True)
class CouplingSpec:
    capacitive_strength: float = 0.0
    inductive_strength: float = 0.0

    def validate(self, where):
        if not (np.isfinite(self.capacitive_strength) and np.isfinite(self.inductive_strength)):
            raise GraphError(f"edge {where}: coupling strengths must be finite")


def _edge_key(a, b):
    if a == b:
        raise GraphError(f"edge ({a!r}, {b!r}): self-edges are not allowed")
    return (a, b) if a <= b else (b, a)


@dataclass
class DeviceGraph:
    """Immutable-by-convention processor description.

    Nodes keep insertion order, which fixes the qudit ordering of every
    composite quantity downstream.
    """

    nodes: dict[str, QubitSpec] = field(default_factory=dict)
    edges: dict[tuple[str, str], CouplingSpec] = field(default_factory=dict)

    def add_node(self, name, spec):
        if name in self.nodes:
            raise GraphError(f"node {name!r}: duplicate node name")
        spec.validate(name)
        self.nodes[name] = spec

    def add_edge(self, a, b, spec):
        key = _edge_key(a, b)
        for end in key:
            if end not in self.nodes:
                raise GraphError(f"edge ({a!r}, {b!r}): unknown node {end!r}")
        spec.validate(key)
        self.edges[key] = spec

    def validate(self):
        for name, spec in self.nodes.items():
            spec.validate(name)
        for (a, b), spec in self.edges.items():
            if a == b:
                raise GraphError(f"edge ({a!r}, {b!r}): self-edges are not allowed")
            for end in (a, b):
                if end not in self.nodes:
                    raise GraphError(f"edge ({a!r}, {b!r}): unknown node {end!r}")
            spec.validate((a, b))

    @property
    def node_names(self):
        return list(self.nodes)

    def node_index(self, name):
        return self.node_names.index(name)

    def copy(self):
        return DeviceGraph(nodes=dict(self.nodes), edges=dict(self.edges))

    def with_node(self, name, spec):
        g = self.copy()
        spec.validate(name)
        g.nodes[name] = spec
        return g

    def __eq__(self, other):
        if not isinstance(other, DeviceGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edges == other.edges


# ---------------------------------------------------------------------------
# JSON serialization


def _node_to_json(spec):
    out = {
        "ec": spec.ec,
        "ej": spec.ej,
        "el": spec.el,
        "phiext": spec.phiext,
        "shared_param_mark": spec.shared_param_mark,
        "system_type": spec.system_type,
        "pulses": [
            {
                "amp": p.amp,
                "omega_d": p.omega_d,
                "phase": p.phase,
                "length": p.length,
                "pulse_type": p.pulse_type,
                "operator_type": p.operator_type,
                "delay": p.delay,
            }
            for p in spec.pulses
        ],
    }
    if (spec.dev_ec, spec.dev_ej, spec.dev_el) != (1.0, 1.0, 1.0):
        out["deviation"] = {"ec": spec.dev_ec, "ej": spec.dev_ej, "el": spec.dev_el}
    return out


def _require(mapping, key, where, kind=(int, float)):
    if key not in mapping:
        raise GraphError(f"{where}: missing key {key!r}")
    val = mapping[key]
    if kind is not None and not isinstance(val, kind) or isinstance(val, bool):
        raise GraphError(f"{where}: key {key!r} has invalid value {val!r}")
    return val


def _node_from_json(name, data):
    where = f"node {name!r}"
    if not isinstance(data, dict):
        raise GraphError(f"{where}: expected an object")
    pulses = []
    for i, p in enumerate(data.get("pulses", [])):
        pw = f"{where} pulse {i}"
        pulses.append(PulseSpec(
            amp=_require(p, "amp", pw),
            omega_d=_require(p, "omega_d", pw),
            phase=_require(p, "phase", pw),
            length=_require(p, "length", pw),
            pulse_type=_require(p, "pulse_type", pw, kind=str),
            operator_type=_require(p, "operator_type", pw, kind=str),
            delay=p.get("delay", 0.0),
        ))
    dev = data.get("deviation", {})
    spec = QubitSpec(
        ec=_require(data, "ec", where),
        ej=_require(data, "ej", where),
        el=_require(data, "el", where),
        phiext=_require(data, "phiext", where),
        shared_param_mark=str(data.get("shared_param_mark", "")),
        system_type=_require(data, "system_type", where, kind=str),
        pulses=tuple(pulses),
        dev_ec=dev.get("ec", 1.0),
        dev_ej=dev.get("ej", 1.0),
        dev_el=dev.get("el", 1.0),
    )
    spec.validate(name)
    return spec


def load_graph(data: bytes | str) -> DeviceGraph:
    """Parse the JSON schema into a validated graph."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GraphError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise GraphError("top level must be an object with 'nodes' and 'edges'")
    g = DeviceGraph()
    if not isinstance(doc["nodes"], dict):
        raise GraphError("'nodes' must be an object keyed by node name")
    for name, nd in doc["nodes"].items():
        g.add_node(name, _node_from_json(name, nd))
    if not isinstance(doc["edges"], list):
        raise GraphError("'edges' must be a list")
    for i, ed in enumerate(doc["edges"]):
        where = f"edge {i}"
        if not isinstance(ed, dict):
            raise GraphError(f"{where}: expected an object")
        a = _require(ed, "a", where, kind=str)
        b = _require(ed, "b", where, kind=str)
        cap = ed.get("capacitive_coupling", {})
        ind = ed.get("inductive_coupling", {})
        g.add_edge(a, b, CouplingSpec(
            capacitive_strength=cap.get("strength", 0.0),
            inductive_strength=ind.get("strength", 0.0),
        ))
    g.validate()
    return g


def save_graph(g: DeviceGraph) -> bytes:
    doc = {
        "nodes": {name: _node_to_json(spec) for name, spec in g.nodes.items()},
        "edges": [
            {
                "a": a,
                "b": b,
                "capacitive_coupling": {"strength": spec.capacitive_strength},
                "inductive_coupling": {"strength": spec.inductive_strength},
            }
            for (a, b), spec in g.edges.items()
        ],
    }
    return json.dumps(doc, indent=2).encode()


# ---------------------------------------------------------------------------
# Parameter extraction / binding


@dataclass(frozen=True)
class ParamEntry:
    key: str
    value: float
    unit: str


@dataclass
class ParameterSet:
    """Flat, named, ordered real parameter vector with sharing groups."""

    entries: list[ParamEntry]
    sharing: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise GraphError("duplicate parameter keys")

    def keys(self):
        return [e.key for e in self.entries]

    def values(self):
        return np.array([e.value for e in self.entries])

    def __getitem__(self, key):
        for e in self.entries:
            if e.key == key:
                return e.value
        raise KeyError(key)

    def __contains__(self, key):
        return any(e.key == key for e in self.entries)

    def __len__(self):
        return len(self.entries)

    def unit(self, key):
        for e in self.entries:
            if e.key == key:
                return e.unit
        raise KeyError(key)

    def updated(self, changes: dict) -> "ParameterSet":
        unknown = set(changes) - set(self.keys())
        if unknown:
            raise GraphError(f"unknown parameter keys {sorted(unknown)}")
        entries = [
            replace(e, value=float(changes.get(e.key, e.value))) for e in self.entries
        ]
        return ParameterSet(entries, dict(self.sharing))

    def with_vector(self, vec) -> "ParameterSet":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(self.entries),):
            raise GraphError("parameter vector has wrong length")
        entries = [replace(e, value=float(v)) for e, v in zip(self.entries, vec)]
        return ParameterSet(entries, dict(self.sharing))

    def subset(self, keys) -> "ParameterSet":
        keys = list(keys)
        missing = set(keys) - set(self.keys())
        if missing:
            raise GraphError(f"unknown parameter keys {sorted(missing)}")
        entries = [e for e in self.entries if e.key in keys]
        sharing = {k: v for k, v in self.sharing.items() if k in keys}
        return ParameterSet(entries, sharing)


def _mark_order(g):
    """Sharing marks in order of first appearance; unmarked nodes excluded."""
    marks = []
    for spec in g.nodes.values():
        m = spec.shared_param_mark
        if m and m not in marks:
            marks.append(m)
    return marks


def extract_params(g: DeviceGraph, share_params: bool = False,
                   unify_coupling: bool = False) -> ParameterSet:
    """Flatten the graph's tunable parameters into a ParameterSet.

    With ``share_params``, one (ec, ej, el) triple per sharing mark; a value
    conflict inside a group is an error. With ``unify_coupling``, one
    capacitive and one inductive strength replace all edge entries. Pulse
    parameters are always per-pulse.
    """
    entries = []
    sharing = {}
    if share_params:
        marks = _mark_order(g)
        unmarked = [n for n, s in g.nodes.items() if not s.shared_param_mark]
        if unmarked:
            raise GraphError(
                f"share_params requires shared_param_mark on every node; missing on {unmarked}")
        for mark in marks:
            members = [n for n, s in g.nodes.items() if s.shared_param_mark == mark]
            for fld in ENERGY_FIELDS:
                vals = {getattr(g.nodes[n], fld) for n in members}
                if len(vals) > 1:
                    raise GraphError(
                        f"sharing group {mark!r}: conflicting {fld} values {sorted(vals)}")
                key = f"shared.{mark}.{fld}"
                entries.append(ParamEntry(key, vals.pop(), "rad/ns"))
                sharing[key] = [f"{n}.{fld}" for n in members]
    else:
        for name, spec in g.nodes.items():
            for fld in ENERGY_FIELDS:
                entries.append(ParamEntry(f"{name}.{fld}", getattr(spec, fld), "rad/ns"))

    if unify_coupling:
        if g.edges:
            for fld, key in UNIFY_KEYS.items():
                vals = {getattr(spec, fld) for spec in g.edges.values()}
                if len(vals) > 1:
                    raise GraphError(
                        f"unify_coupling: conflicting {fld} values {sorted(vals)}")
                entries.append(ParamEntry(key, vals.pop(), "rad/ns"))
                sharing[key] = [f"{a}__{b}.{fld}" for (a, b) in g.edges]
    else:
        for (a, b), spec in g.edges.items():
            for fld in ("capacitive_strength", "inductive_strength"):
                entries.append(ParamEntry(f"{a}__{b}.{fld}", getattr(spec, fld), "rad/ns"))

    units = {"amp": "rad/ns", "omega_d": "rad/ns", "phase": "rad",
             "length": "ns", "delay": "ns"}
    for name, spec in g.nodes.items():
        for i, p in enumerate(spec.pulses):
            for fld in PULSE_FIELDS:
                entries.append(
                    ParamEntry(f"{name}.pulses.{i}.{fld}", getattr(p, fld), units[fld]))
    return ParameterSet(entries, sharing)


def _set_node_field(g, name, fld, value):
    if name not in g.nodes:
        raise GraphError(f"unknown node {name!r} in parameter key")
    g.nodes[name] = replace(g.nodes[name], **{fld: value})


def _set_edge_field(g, a, b, fld, value):
    key = _edge_key(a, b)
    if key not in g.edges:
        raise GraphError(f"unknown edge {a!r}__{b!r} in parameter key")
    g.edges[key] = replace(g.edges[key], **{fld: value})


def _set_pulse_field(g, name, idx, fld, value):
    if name not in g.nodes:
        raise GraphError(f"unknown node {name!r} in parameter key")
    spec = g.nodes[name]
    if idx >= len(spec.pulses):
        raise GraphError(f"node {name!r} has no pulse {idx}")
    pulses = list(spec.pulses)
    pulses[idx] = replace(pulses[idx], **{fld: value})
    g.nodes[name] = replace(spec, pulses=tuple(pulses))


def _apply_leaf_key(g, key, value):
    parts = key.split(".")
    if len(parts) == 2 and parts[1] in ENERGY_FIELDS and "__" not in parts[0]:
        _set_node_field(g, parts[0], parts[1], value)
    elif len(parts) == 2 and "__" in parts[0]:
        a, b = parts[0].split("__")
        if parts[1] not in ("capacitive_strength", "inductive_strength"):
            raise GraphError(f"unknown edge field in key {key!r}")
        _set_edge_field(g, a, b, parts[1], value)
    elif len(parts) == 4 and parts[1] == "pulses":
        if parts[3] not in PULSE_FIELDS:
            raise GraphError(f"unknown pulse field in key {key!r}")
        _set_pulse_field(g, parts[0], int(parts[2]), parts[3], value)
    else:
        raise GraphError(f"unknown parameter key {key!r}")


def bind_params(g: DeviceGraph, params: ParameterSet) -> DeviceGraph:
    """Write parameter values back into a new graph (inverse of extract)."""
    out = g.copy()
    for e in params.entries:
        members = params.sharing.get(e.key)
        if members is not None:
            for mk in members:
                _apply_leaf_key(out, mk, e.value)
        else:
            _apply_leaf_key(out, e.key, e.value)
    out.validate()
    return out


def apply_deviations(g: DeviceGraph, seed: int, relative_std: float) -> DeviceGraph:
    """Draw per-node multiplicative deviations for (ec, ej, el).

    Factors are 1 + relative_std * z with z standard normal, drawn from a
    Philox stream keyed by (seed, node insertion index), so the same seed
    reproduces the same graph on any platform. The pattern values are left
    untouched; only the deviation factors change.
    """
    if relative_std < 0:
        raise GraphError("relative_std must be >= 0")
    out = g.copy()
    for i, (name, spec) in enumerate(g.nodes.items()):
        if relative_std == 0:
            factors = np.ones(3)
        else:
            rng = np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64)))
            factors = 1.0 + relative_std * rng.standard_normal(3)
        out.nodes[name] = replace(
            spec, dev_ec=float(factors[0]), dev_ej=float(factors[1]), dev_el=float(factors[2]))
    return out
