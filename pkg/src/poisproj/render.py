"""Stable JSON trees and LaTeX rendering for expressions and reports."""

from __future__ import annotations

import json
from fractions import Fraction

from .kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                          PowNF, SlotSym, Var, arg_of)

SCHEMA = "poisproj/1"


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _var_json(v: Var):
    return [v.name, v.kind, v.dim]


def _arg_json(a):
    return [[_var_json(v), [c.numerator, c.denominator]] for v, c in a]


def _factor_json(f):
    if isinstance(f, FieldEval):
        return {"t": "field", "name": f.field,
                "args": [_arg_json(a) for a in f.args],
                "deriv": list(map(list, f.deriv)), "sym": f.sym}
    if isinstance(f, SlotSym):
        return {"t": "slot", "functional": f.functional, "name": f.field,
                "args": [_arg_json(a) for a in f.args],
                "deriv": list(map(list, f.deriv)), "sym": f.sym}
    if isinstance(f, Opaque):
        return {"t": "opaque", "name": f.name, "dorder": list(f.dorder),
                "args": [expr_json(a) for a in f.args]}
    if isinstance(f, Coord):
        return {"t": "coord", "var": _var_json(f.v), "comp": f.comp}
    if isinstance(f, Delta):
        return {"t": "delta", "arg": _arg_json(f.aarg),
                "deriv": list(f.deriv)}
    if isinstance(f, PowNF):
        return {"t": "pow", "base": expr_json(f.base), "exp": f.exp}
    raise TypeError(f)


def expr_json(e: Expr) -> dict:
    return {"schema": SCHEMA, "kind": "expr",
            "terms": [{
                "coeff": [m.coeff.numerator, m.coeff.denominator],
                "binders": [_var_json(b) for b in m.binders],
                "factors": [[_factor_json(f), p] for f, p in m.factors],
            } for m in e.terms]}


def _var_from(j):
    return Var(j[0], j[1], j[2])


def _arg_from(j):
    return arg_of(*[(_var_from(v), Fraction(c[0], c[1])) for v, c in j])


def _factor_from(j):
    t = j["t"]
    if t == "field":
        return FieldEval(j["name"], tuple(_arg_from(a) for a in j["args"]),
                         tuple(map(tuple, j["deriv"])), j["sym"])
    if t == "slot":
        return SlotSym(j["functional"], j["name"],
                       tuple(_arg_from(a) for a in j["args"]),
                       tuple(map(tuple, j["deriv"])), j["sym"])
    if t == "opaque":
        return Opaque(j["name"], tuple(j["dorder"]),
                      tuple(expr_from_json(a) for a in j["args"]))
    if t == "coord":
        return Coord(_var_from(j["var"]), j["comp"])
    if t == "delta":
        return Delta(_arg_from(j["arg"]), tuple(j["deriv"]))
    if t == "pow":
        return PowNF(expr_from_json(j["base"]), j["exp"])
    raise ValueError(t)


def expr_from_json(j: dict) -> Expr:
    terms = []
    for tj in j["terms"]:
        terms.append(Monomial(
            Fraction(tj["coeff"][0], tj["coeff"][1]),
            tuple(_var_from(b) for b in tj["binders"]),
            tuple((_factor_from(fj), p) for fj, p in tj["factors"])))
    return Expr(tuple(terms))


def bracket_json(b) -> dict:
    return {"schema": SCHEMA, "kind": "bracket", "name": b.name,
            "level": b.level.name,
            "terms": [{
                "binders": [_var_json(v) for v in t.binders],
                "coeff": expr_json(t.coeff),
                "left": _slot_json(t.left),
                "right": _slot_json(t.right),
            } for t in b.terms]}


def _slot_json(s):
    return {"field": s.field, "deriv": list(map(list, s.deriv)),
            "point": [_arg_json(a) for a in s.point]}


def report_json(rep) -> dict:
    out = {"schema": SCHEMA, "kind": "check_report", "check": rep.check,
           "passed": rep.passed, "detail": rep.detail}
    if rep.witness is not None:
        out["witness"] = expr_json(rep.witness)
    return out


def closure_json(outcome) -> dict:
    out = {"schema": SCHEMA, "kind": "closure",
           "closed": outcome.is_closed,
           "unresolved": list(outcome.unresolved)}
    if outcome.is_closed:
        out["bracket"] = bracket_json(outcome.closed)
    else:
        out["residual"] = [expr_json(r) for r in outcome.residual]
    return out


# ---------------------------------------------------------------------------
# LaTeX
# ---------------------------------------------------------------------------

_GREEK = {"rho": r"\rho", "rhot": r"\tilde\rho", "sigma": r"\sigma",
          "sigmat": r"\tilde\sigma", "eps": r"\varepsilon",
          "epsh": r"\varepsilon", "ut": r"\tilde u", "st": r"\tilde s",
          "uT": r"u^{T}", "sT": r"s^{T}", "ft": r"\tilde f",
          "fN": r"f_N", "fNs": r"f_N^{S}", "fNN": r"f_{N+\tilde N}",
          "rho1": r"\rho_1", "rho2": r"\rho_2", "rho3": r"\rho_3",
          "e1": "e_1", "e2": "e_2", "e3": "e_3", "f1": "f_1", "f2": "f_2",
          "moment3": "f_3"}


def _name_tex(name: str) -> str:
    base, _, comps = name.partition(".")
    t = _GREEK.get(base, base)
    if comps:
        t += "_{" + ",".join(comps) + "}"
    return t


def _var_tex(v: Var) -> str:
    return v.name.replace(".", "").replace("_", "")


def _arg_tex(a) -> str:
    parts = []
    for v, c in a:
        if c == 1:
            parts.append(("+" if parts else "") + _var_tex(v))
        elif c == -1:
            parts.append("-" + _var_tex(v))
        else:
            sgn = "+" if (c > 0 and parts) else ("-" if c < 0 else "")
            parts.append(f"{sgn}\\tfrac{{{abs(c.numerator)}}}"
                         f"{{{c.denominator}}}{_var_tex(v)}")
    return "".join(parts)


def _deriv_tex(args, deriv, body):
    for (s, c) in deriv:
        v = args[s][0][0] if args[s] else None
        sym = _var_tex(v) if v is not None else "z"
        body = rf"\partial_{{{sym}_{{{c}}}}} {body}"
    return body


def factor_tex(f) -> str:
    if isinstance(f, FieldEval):
        body = f"{_name_tex(f.field)}({', '.join(_arg_tex(a) for a in f.args)})"
        return _deriv_tex(f.args, f.deriv, body)
    if isinstance(f, SlotSym):
        body = f"{f.functional}_{{{_name_tex(f.field)}}}" \
               f"({', '.join(_arg_tex(a) for a in f.args)})"
        return _deriv_tex(f.args, f.deriv, body)
    if isinstance(f, Opaque):
        nm = _GREEK.get(f.name, f.name)
        if not f.args:
            return nm
        primes = "".join("'" for _ in range(sum(f.dorder)))
        return f"{nm}{primes}\\!\\left(" + ", ".join(
            expr_tex(a) for a in f.args) + r"\right)"
    if isinstance(f, Coord):
        return f"{_var_tex(f.v)}_{{{f.comp}}}"
    if isinstance(f, Delta):
        d = "" if not f.deriv else r"^{(" + ",".join(map(str, f.deriv)) + ")}"
        return rf"\delta{d}({_arg_tex(f.aarg)})"
    if isinstance(f, PowNF):
        return rf"\left({expr_tex(f.base)}\right)^{{{f.exp}}}"
    raise TypeError(f)


def monomial_tex(m: Monomial) -> str:
    parts = []
    if m.coeff == -1 and m.factors:
        parts.append("-")
    elif m.coeff != 1 or not m.factors:
        q = m.coeff
        txt = str(q.numerator) if q.denominator == 1 else \
            rf"\tfrac{{{q.numerator}}}{{{q.denominator}}}"
        parts.append(txt)
    for b in m.binders:
        parts.append(rf"\int \mathrm{{d}}{_var_tex(b)}\,")
    for f, p in m.factors:
        t = factor_tex(f)
        if p != 1:
            t = rf"\left[{t}\right]^{{{p}}}"
        parts.append(t)
    return " ".join(parts)


def expr_tex(e: Expr) -> str:
    if not e.terms:
        return "0"
    out = monomial_tex(e.terms[0])
    for m in e.terms[1:]:
        t = monomial_tex(m)
        out += (" " + t) if t.startswith("-") else (" + " + t)
    return out


def bracket_tex(b) -> str:
    lines = [r"\{A, B\} ="]
    for i, t in enumerate(b.terms):
        from .kernel.expr import SlotSym as _S
        term = Monomial(Fraction(1), t.binders, ())
        txt = []
        for bnd in t.binders:
            txt.append(rf"\int \mathrm{{d}}{_var_tex(bnd)}\,")
        txt.append(expr_tex(t.coeff))
        txt.append(r"\," + factor_tex(_S("A", t.left.field, t.left.point,
                                         t.left.deriv)))
        txt.append(r"\," + factor_tex(_S("B", t.right.field, t.right.point,
                                         t.right.deriv)))
        joined = " ".join(txt)
        lines.append((r" + " if i else " ") + joined + "%")
    return "\n".join(lines)


def standalone_tex(body: str, title: str = "") -> str:
    return "\n".join([
        r"\documentclass{article}",
        r"\usepackage{amsmath}",
        r"\usepackage[margin=2cm]{geometry}",
        r"\begin{document}",
        (rf"\section*{{{title}}}" if title else ""),
        r"\begin{dmath*}" if False else r"\[",
        body,
        r"\]",
        r"\end{document}",
    ])
