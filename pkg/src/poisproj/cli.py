"""Command-line front end.

Subcommands::

    catalog list                         stable entry identifiers
    catalog show ID [--kind ...]         construct and print an entry
    derive --from BRACKET --via PROJ     project and report closure
    check  --antisym --jacobi --parity --closure IDS...
    evolve --model FILE --bracket NAME --energy NAME --grid N --dt --steps
    export --id ENTRY --format dsl|json|latex

Exit codes: 0 success / all checks pass; 2 a derivation is not closed;
1 error or failed check.  Catalog ids take parameters as `name:key=v,key=v`.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import catalog
from .brackets import (check_antisymmetry, check_jacobi, check_trt_parity)
from .errors import NonlinearBracket, PoisprojError
from .projection import project_bracket
from .render import (bracket_json, bracket_tex, closure_json, expr_json,
                     expr_tex, report_json, standalone_tex)
from . import dsl


def _parse_id(spec: str):
    name, _, rest = spec.partition(":")
    params = {}
    if rest:
        for kv in rest.split(","):
            k, _, v = kv.partition("=")
            params[k.strip()] = int(v)
    return name, params


def _emit_bracket(b, fmt):
    if fmt == "dsl":
        return dsl.export_bracket(b)
    if fmt == "json":
        return json.dumps(bracket_json(b), indent=1)
    if fmt == "latex":
        return standalone_tex(bracket_tex(b), title=b.name)
    raise PoisprojError(f"unknown format {fmt}")


def cmd_catalog(args) -> int:
    entries = catalog.list_entries()
    if args.action == "list":
        for kind, ids in entries.items():
            for i in ids:
                print(f"{kind}\t{i}")
        return 0
    name, params = _parse_id(args.id)
    if name in entries["bracket"]:
        b = catalog.bracket(name, **params)
        print(_emit_bracket(b, args.format))
    elif name in entries["projection"]:
        pm = catalog.projection(name, **params)
        if args.format == "json":
            print(json.dumps({"kind": "projection", "name": pm.name,
                              "source": pm.source.name,
                              "target": pm.target.name,
                              "defs": {c: expr_json(e)
                                       for c, (v, e) in pm.defs.items()}},
                             indent=1))
        else:
            print(dsl.export_projection(pm))
    else:
        print(f"unknown catalog id {name!r}", file=sys.stderr)
        return 1
    return 0


def cmd_derive(args) -> int:
    bname, bparams = _parse_id(getattr(args, "from"))
    pname, pparams = _parse_id(args.via)
    if args.dim is not None:
        bparams.setdefault("d", args.dim)
        pparams.setdefault("d", args.dim)
    try:
        b = catalog.bracket(bname, **bparams)
        pm = catalog.projection(pname, **pparams)
        out = project_bracket(b, pm)
    except PoisprojError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1
    if args.format == "json":
        print(json.dumps(closure_json(out), indent=1))
    elif out.is_closed:
        print(_emit_bracket(out.closed, args.format))
    else:
        print("not closed; unresolved moment symbols: "
              + ", ".join(out.unresolved))
        for r in out.residual[:10]:
            print("  residual: " + (expr_tex(r) if args.format == "latex"
                                    else dsl.export_expr(r)))
    return 0 if out.is_closed else 2


def cmd_check(args) -> int:
    checks = []
    if args.antisym:
        checks.append(("antisymmetry", check_antisymmetry))
    if args.jacobi:
        checks.append(("jacobi", check_jacobi))
    if args.parity:
        checks.append(("trt_parity", check_trt_parity))
    reports = []
    ok = True
    for spec in args.ids:
        name, params = _parse_id(spec)
        if args.dim is not None:
            params.setdefault("d", args.dim)
        try:
            if args.closure:
                bname, via = name.split("/")
                b = catalog.bracket(bname, **params)
                pm = catalog.projection(via, **params)
                out = project_bracket(b, pm)
                reports.append((spec, "closure", out.is_closed, ""))
                ok &= out.is_closed
            b = catalog.bracket(name, **params) if not args.closure else None
            for cname, fn in checks if b is not None else []:
                try:
                    rep = fn(b)
                    reports.append((spec, cname, rep.passed, rep.detail))
                    ok &= rep.passed
                except NonlinearBracket as e:
                    reports.append((spec, cname, False,
                                    f"nonlinear bracket: {e}"))
                    ok = False
        except PoisprojError as e:
            print(json.dumps({"error": type(e).__name__, "message": str(e)}),
                  file=sys.stderr)
            return 1
    for spec, cname, passed, detail in sorted(reports):
        status = "pass" if passed else "FAIL"
        extra = f"  ({detail})" if detail and not passed else ""
        print(f"{spec}\t{cname}\t{status}{extra}")
    return 0 if ok else 1


def _opaque_preset(spec: str):
    from .numeric import scalar_opaque, constant_opaque
    name, _, rest = spec.partition("=")
    kind, _, val = rest.partition(":")
    c = float(val) if val else 1.0
    if kind == "const":
        return constant_opaque(name, c)
    if kind == "linear":
        return scalar_opaque(name, [lambda z: c * z,
                                    lambda z: c * np.ones_like(z),
                                    lambda z: np.zeros_like(z)])
    if kind == "quadratic":
        return scalar_opaque(name, [lambda z: c * z * z,
                                    lambda z: 2 * c * z,
                                    lambda z: 2 * c * np.ones_like(z),
                                    lambda z: np.zeros_like(z)])
    raise PoisprojError(f"unknown opaque preset {spec!r}")


def _read_config(path):
    out = {}
    if not path:
        return out
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def cmd_evolve(args) -> int:
    from .fields import MOM, POS
    from .numeric import (Axis, DiscreteBracket, DiscreteFunctional,
                          DiscreteLevel, Grid, OpaqueTable,
                          conservation_report, evolve, random_state)
    cfg = _read_config(args.config)
    with open(args.model) as fh:
        sess = dsl.parse_model(fh.read())
    if args.bracket not in sess.brackets:
        print(f"model has no bracket {args.bracket!r}", file=sys.stderr)
        return 1
    if args.energy not in sess.energies:
        print(f"model has no energy {args.energy!r}", file=sys.stderr)
        return 1
    b = sess.brackets[args.bracket]
    lvl, E_expr = sess.energies[args.energy]
    ns = [int(v) for v in args.grid.split(",")]
    pos = Axis(POS, ns[0], float(cfg.get("length", 1.0)))
    mom = Axis(MOM, ns[1], float(cfg.get("mom_length", 8.0))) \
        if len(ns) > 1 else None
    grid = Grid(pos, mom)
    dl = DiscreteLevel(b.level, grid)
    table = {}
    for key, val in cfg.items():
        if key.startswith("opaque."):
            table.update(_opaque_preset(key[len("opaque."):] + "=" + val))
    ops = OpaqueTable(table)
    Ld = DiscreteBracket(b, dl, ops)
    E = DiscreteFunctional(E_expr, dl, ops)
    seed = int(cfg.get("seed", args.seed))
    x0 = random_state(dl, seed=seed,
                      positive=set(cfg.get("positive", "rho").split()))
    times, states = evolve(Ld, E, x0, dt=args.dt, steps=args.steps,
                           record_every=max(1, args.steps // 20))
    funcs = {"energy": E.value}
    rep = conservation_report(times, states, funcs)
    for name, r in rep.items():
        print(json.dumps({"functional": name, **r}))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("time," + ",".join(funcs) + "\n")
            for t, x in zip(times, states):
                fh.write(f"{t}," + ",".join(str(funcs[k](x))
                                            for k in funcs) + "\n")
    return 0


def cmd_export(args) -> int:
    return cmd_catalog(argparse.Namespace(action="show", id=args.id,
                                          format=args.format))


def build_parser():
    p = argparse.ArgumentParser(prog="poisproj", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    pc = sub.add_parser("catalog", help="list or show catalog entries")
    pc.add_argument("action", choices=["list", "show"])
    pc.add_argument("id", nargs="?", default="")
    pc.add_argument("--format", default="dsl",
                    choices=["dsl", "json", "latex"])
    pc.set_defaults(fn=cmd_catalog)

    pd = sub.add_parser("derive", help="project a bracket to a lower level")
    pd.add_argument("--from", required=True)
    pd.add_argument("--via", required=True)
    pd.add_argument("--dim", type=int, default=None)
    pd.add_argument("--format", default="dsl",
                    choices=["dsl", "json", "latex"])
    pd.set_defaults(fn=cmd_derive)

    pk = sub.add_parser("check", help="structural checks on catalog entries")
    pk.add_argument("ids", nargs="+")
    pk.add_argument("--antisym", action="store_true")
    pk.add_argument("--jacobi", action="store_true")
    pk.add_argument("--parity", action="store_true")
    pk.add_argument("--closure", action="store_true")
    pk.add_argument("--dim", type=int, default=None)
    pk.set_defaults(fn=cmd_check)

    pe = sub.add_parser("evolve", help="semidiscrete reversible evolution")
    pe.add_argument("--model", required=True)
    pe.add_argument("--bracket", required=True)
    pe.add_argument("--energy", required=True)
    pe.add_argument("--grid", default="64")
    pe.add_argument("--dt", type=float, default=1e-3)
    pe.add_argument("--steps", type=int, default=1000)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--csv", default="")
    pe.add_argument("--config", default="")
    pe.set_defaults(fn=cmd_evolve)

    px = sub.add_parser("export", help="export a catalog entry")
    px.add_argument("--id", required=True)
    px.add_argument("--format", default="dsl",
                    choices=["dsl", "json", "latex"])
    px.set_defaults(fn=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PoisprojError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
