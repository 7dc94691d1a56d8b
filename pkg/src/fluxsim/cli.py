"""Batch command-line front end.

Subcommands: spectrum, evolve, grad, optimize, fit. Outputs are CSV/JSON for
external plotting. Exit codes: 0 success, 2 schema/file error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3


def _common_graph_flags(p):
    p.add_argument("graph", help="device graph JSON file")
    p.add_argument("--truncated-dim", type=int, default=3)
    p.add_argument("--dim-full", type=int, default=60)
    p.add_argument("--share-params", action="store_true")
    p.add_argument("--unify-coupling", action="store_true")
    p.add_argument("--deviations", type=float, default=0.0,
                   help="relative std of device deviations")
    p.add_argument("--seed", type=int, default=0, help="deviation seed")


def _evolve_flags(p):
    p.add_argument("--basis", choices=("product", "eigen"), default="eigen")
    p.add_argument("--trotter-order", choices=("1", "2", "4j", "4"), default="4j")
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--astep", type=int, default=None)
    p.add_argument("--tg", type=float, default=None)


def _target_flags(p):
    p.add_argument("--target-cnot", action="append", default=[],
                   metavar="CTRL,TGT", help="CNOT on a node pair (repeatable)")
    p.add_argument("--target-x", action="append", default=[], metavar="NODE",
                   help="X gate on a node (repeatable)")
    p.add_argument("--compensation", choices=("no_comp", "arbit_single", "zrot"),
                   default="arbit_single")


def build_parser():
    ap = argparse.ArgumentParser(prog="fluxsim",
                                 description="fluxonium processor simulator")
    ap.add_argument("--threads", type=int, default=None,
                    help="BLAS thread cap (set before numpy loads)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="dressed energies and ZZ rates")
    _common_graph_flags(p)
    p.add_argument("--zz", action="append", default=[], metavar="A,B",
                   help="report the static ZZ rate of a node pair (repeatable)")
    p.add_argument("--out", default=None, help="CSV output path")

    p = sub.add_parser("evolve", help="time-evolution unitary")
    _common_graph_flags(p)
    _evolve_flags(p)
    p.add_argument("--out", default=None, help="JSON output path (re/im parts)")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("grad", help="objective gradient table")
    _common_graph_flags(p)
    _evolve_flags(p)
    _target_flags(p)
    p.add_argument("--out", default=None, help="two-column CSV output path")

    p = sub.add_parser("optimize", help="pulse-parameter minimization")
    _common_graph_flags(p)
    _evolve_flags(p)
    _target_flags(p)
    p.add_argument("--maxiter", type=int, default=50)
    p.add_argument("--out", default=None, help="trace CSV output path (epoch, objective)")

    p = sub.add_parser("fit", help="KL-divergence spectrum fit")
    p.add_argument("data", help="CSV grid file with columns x, eps, value")
    p.add_argument("--init", required=True,
                   help="JSON with initial ec, ej, el (GHz), a, b, lam, c")
    p.add_argument("--maxiter", type=int, default=300)
    p.add_argument("--dim-full", type=int, default=40)
    p.add_argument("--out", default=None, help="fitted parameter JSON path")
    p.add_argument("--curve-out", default=None, help="fitted f01(x) CSV path")
    return ap


def _load_graph_arg(args):
    from .graph import apply_deviations, load_graph

    with open(args.graph, "rb") as fh:
        g = load_graph(fh.read())
    if args.deviations > 0:
        g = apply_deviations(g, args.seed, args.deviations)
    return g


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def cmd_spectrum(args):
    import numpy as np

    from .composite import assemble, energy_tensor, static_zz

    g = _load_graph_arg(args)
    sys_ = assemble(g, args.truncated_dim, dim_full=args.dim_full,
                    share_params=args.share_params,
                    unify_coupling=args.unify_coupling)
    ten = energy_tensor(sys_)
    names = g.node_names
    lines = []
    for i, name in enumerate(names):
        label = tuple(1 if k == i else 0 for k in range(len(names)))
        f = ten[label] / (2 * np.pi)
        print(f"{name} omega01/2pi = {f:.3f} GHz")
        lines.append(f"{name},{f:.9f}")
    for pair in args.zz:
        a, b = pair.split(",")
        z = static_zz(ten, (a, b)) / (2 * np.pi)
        print(f"zeta_zz({a},{b}) = {z:.6f} GHz")
        lines.append(f"zz:{a}__{b},{z:.9f}")
    if args.out:
        _write(args.out, "label,value_ghz\n" + "\n".join(lines) + "\n")
    return 0


def _make_plan_from_args(args, sys_):
    from .trotter import make_plan

    return make_plan(sys_, args.trotter_order, dt=args.dt, tg=args.tg,
                     astep=args.astep)


def cmd_evolve(args):
    import numpy as np

    from .composite import assemble
    from .trotter import evolve_unitary

    g = _load_graph_arg(args)
    sys_ = assemble(g, args.truncated_dim, dim_full=args.dim_full,
                    share_params=args.share_params,
                    unify_coupling=args.unify_coupling)
    plan = _make_plan_from_args(args, sys_)
    res = evolve_unitary(sys_, plan, basis=args.basis)
    u = res.view
    if args.format == "json":
        doc = {"basis": args.basis, "dim": u.shape[0],
               "re": np.real(u).tolist(), "im": np.imag(u).tolist()}
        _write(args.out, json.dumps(doc, indent=1) + "\n")
    else:
        rows = ["i,j,re,im"]
        for i in range(u.shape[0]):
            for j in range(u.shape[1]):
                rows.append(f"{i},{j},{u[i, j].real:.12e},{u[i, j].imag:.12e}")
        _write(args.out, "\n".join(rows) + "\n")
    return 0


def _target_from_args(args, g):
    from . import gates

    names = g.node_names
    n = len(names)
    ops = {i: gates.identity() for i in range(n)}
    consumed = set()
    pairs = []
    for spec in args.target_cnot:
        a, b = spec.split(",")
        ia, ib = names.index(a), names.index(b)
        if ib != ia + 1:
            raise ValueError("CNOT targets must be (node, next node) pairs")
        pairs.append((ia, ib))
        consumed.update((ia, ib))
    for node in args.target_x:
        i = names.index(node)
        ops[i] = gates.pauli_x()
        consumed.add(i)
    mats = []
    i = 0
    while i < n:
        if (i, i + 1) in pairs:
            mats.append(gates.cnot())
            i += 2
        else:
            mats.append(ops[i])
            i += 1
    return gates.tensor(*mats)


def _problem_from_args(args, g):
    from .objectives import GateInfidelity
    from .optimize import EvolutionOptions, EvolutionProblem

    target = _target_from_args(args, g)
    objective = GateInfidelity(target=target, compensation=args.compensation)
    options = EvolutionOptions(truncated_dim=args.truncated_dim,
                               dim_full=args.dim_full,
                               share_params=args.share_params,
                               unify_coupling=args.unify_coupling,
                               basis=args.basis, order=args.trotter_order,
                               dt=args.dt, astep=args.astep, tg=args.tg)
    return EvolutionProblem(g, objective, options)


def cmd_grad(args):
    g = _load_graph_arg(args)
    problem = _problem_from_args(args, g)
    value, grad = problem.value_and_grad()
    print(f"objective = {value:.9e}")
    rows = ["key,gradient"]
    for key in problem.params.keys():
        print(f"{key:48s} {grad[key]: .6e}")
        rows.append(f"{key},{grad[key]:.12e}")
    if args.out:
        _write(args.out, "\n".join(rows) + "\n")
    return 0


def cmd_optimize(args):
    from .graph import extract_params

    g = _load_graph_arg(args)
    full = extract_params(g, args.share_params, args.unify_coupling)
    pulse_keys = [k for k in full.keys()
                  if ".pulses." in k and k.rsplit(".", 1)[-1] in
                  ("amp", "omega_d", "phase")]
    if not pulse_keys:
        raise ValueError("no pulse parameters to optimize; add pulses first")
    from .objectives import GateInfidelity
    from .optimize import EvolutionOptions, EvolutionProblem

    target = _target_from_args(args, g)
    objective = GateInfidelity(target=target, compensation=args.compensation)
    options = EvolutionOptions(truncated_dim=args.truncated_dim,
                               dim_full=args.dim_full,
                               share_params=args.share_params,
                               unify_coupling=args.unify_coupling,
                               basis=args.basis, order=args.trotter_order,
                               dt=args.dt, astep=args.astep, tg=args.tg)
    problem = EvolutionProblem(g, objective, options, grad_keys=pulse_keys)
    res, best = problem.minimize(maxiter=args.maxiter, logging=True)
    print(f"final objective = {res.fun:.9e}")
    for key, val in zip(best.keys(), best.values()):
        print(f"{key:48s} {val: .9f}")
    rows = ["epoch,objective"] + [f"{i},{v:.12e}" for i, v in enumerate(res.trace)]
    if args.out:
        _write(args.out, "\n".join(rows) + "\n")
    return 0


def cmd_fit(args):
    import numpy as np

    from .objectives import FIT_PARAM_NAMES, kl_fit_objective
    from .optimize import minimize

    rows = np.loadtxt(args.data, delimiter=",", skiprows=1)
    xs = np.unique(rows[:, 0])
    es = np.unique(rows[:, 1])
    p = np.zeros((len(xs), len(es)))
    xi = {v: i for i, v in enumerate(xs)}
    ei = {v: i for i, v in enumerate(es)}
    for x, e, v in rows:
        p[xi[x], ei[e]] = v
    p = np.clip(p, 0, None)
    p = p / p.sum()

    with open(args.init) as fh:
        init = json.load(fh)
    names = list(FIT_PARAM_NAMES)
    x0 = np.array([float(init[k]) for k in names])

    def fun(vec):
        params = dict(zip(names, vec))
        value, grad = kl_fit_objective(xs, es, p, params, dim_full=args.dim_full)
        return value, np.array([grad[k] for k in names])

    lo = np.array([1e-3, 1e-3, 1e-3, -np.inf, -np.inf, 1e-6, 1e-12])
    hi = np.full(len(names), np.inf)
    res = minimize(fun, x0, bounds=list(zip(lo, hi)), maxiter=args.maxiter)
    fitted = dict(zip(names, (float(v) for v in res.x)))
    fitted["kl"] = float(res.fun)
    print(json.dumps(fitted, indent=1))
    if args.out:
        _write(args.out, json.dumps(fitted, indent=1) + "\n")
    if args.curve_out:
        from .objectives import f01_with_derivatives

        phis = fitted["a"] * xs + fitted["b"]
        f01, _ = f01_with_derivatives(fitted["ec"], fitted["ej"], fitted["el"],
                                      phis, dim_full=args.dim_full)
        lines = ["x,f01_ghz"] + [f"{x:.9g},{f:.9g}" for x, f in zip(xs, f01)]
        _write(args.curve_out, "\n".join(lines) + "\n")
    return 0


COMMANDS = {
    "spectrum": cmd_spectrum,
    "evolve": cmd_evolve,
    "grad": cmd_grad,
    "optimize": cmd_optimize,
    "fit": cmd_fit,
}


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
