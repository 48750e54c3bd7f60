"""Declarative model files: levels, brackets, projections and energies.

The surface syntax is line-agnostic and brace-delimited::

    dim 3
    level hydro {
      field rho pos parity +
      field u pos parity - rank 1
      field s pos parity +
    }
    bracket hydro_b on hydro {
      term { vars x:pos; coeff rho(x); left rho(x) deriv (0 0);
             right u.0(x); }
      ...
    }
    projection moments from boltzmann to hydro kind weight {
      def rho (x:pos) = int(r:pos, p:mom)(m() * f(r, p) * delta(r - x))
      ...
      meta "{...json...}"
    }
    energy etot on cit = int(x:pos)(...)

Bracket terms use the bilinear normal form only; arbitrary expressions are
allowed in projection definitions and energies.  Parsing is all-or-nothing:
any diagnostic aborts the whole model, so no partial state is registered.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field as dfield
from fractions import Fraction

from .errors import ModelSyntaxError, ResolutionError
from .fields import (BaseSpace, EVEN, FieldSpec, LevelSpec, MOM, ODD, POS,
                     define_level, phase_space, position_space)
from .kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                          PowNF, Var, ZERO, arg_of, as_expr, diff_expr,
                          integral, mul, scale, var)
from .brackets import BilinearTerm, BracketForm, Slot
from .projection import ProjectionMap, make_projection

_TOKEN = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>\d+/\d+|\d+\.\d+|\d+)
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<str>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<op>[{}();,:=^*+\[\]-])
""", re.VERBOSE)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str):
    out = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        m = _TOKEN.match(text, i)
        if not m:
            raise ModelSyntaxError(f"unexpected character {text[i]!r}",
                                   line, col)
        kind = m.lastgroup
        tok = m.group(0)
        if kind != "ws":
            out.append(Tok(kind, tok, line, col))
        nl = tok.count("\n")
        if nl:
            line += nl
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        i = m.end()
    out.append(Tok("eof", "", line, col))
    return out


@dataclass
class Session:
    levels: dict = dfield(default_factory=dict)
    brackets: dict = dfield(default_factory=dict)
    projections: dict = dfield(default_factory=dict)
    energies: dict = dfield(default_factory=dict)


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.dim = 3

    # -- token plumbing ------------------------------------------------

    def peek(self) -> Tok:
        return self.toks[self.i]

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text=None, kind=None) -> Tok:
        t = self.next()
        if text is not None and t.text != text:
            raise ModelSyntaxError(f"expected {text!r}, got {t.text!r}",
                                   t.line, t.col)
        if kind is not None and t.kind != kind:
            raise ModelSyntaxError(f"expected {kind}, got {t.text!r}",
                                   t.line, t.col)
        return t

    def accept(self, text) -> bool:
        if self.peek().text == text:
            self.next()
            return True
        return False

    # -- model ----------------------------------------------------------

    def parse_model(self) -> Session:
        s = Session()
        while self.peek().kind != "eof":
            t = self.peek()
            if t.text == "dim":
                self.next()
                self.dim = int(self.expect(kind="num").text)
            elif t.text == "level":
                self.parse_level(s)
            elif t.text == "bracket":
                self.parse_bracket(s)
            elif t.text == "projection":
                self.parse_projection(s)
            elif t.text == "energy":
                self.parse_energy(s)
            else:
                raise ModelSyntaxError(f"unknown declaration {t.text!r}",
                                       t.line, t.col)
        return s

    def parse_level(self, s: Session):
        self.expect("level")
        name = self.expect(kind="name").text
        self.expect("{")
        fields = []
        while not self.accept("}"):
            self.expect("field")
            fname = self.expect(kind="name").text
            base_t = self.next()
            if base_t.text == "pos":
                base = position_space(self.dim)
            elif base_t.text == "phase":
                base = phase_space(self.dim)
            elif base_t.text == "particles":
                n = int(self.expect(kind="num").text)
                base = phase_space(self.dim, n)
            elif base_t.text == "base":
                kinds = []
                while self.peek().text in ("pos", "mom"):
                    kinds.append(self.next().text)
                base = BaseSpace(tuple((k, self.dim) for k in kinds))
            else:
                raise ModelSyntaxError(
                    f"unknown base {base_t.text!r}", base_t.line, base_t.col)
            self.expect("parity")
            pt = self.next()
            parity = {"+": EVEN, "-": ODD}.get(pt.text)
            if parity is None:
                raise ModelSyntaxError("parity must be + or -",
                                       pt.line, pt.col)
            rank = 0
            idxsym = False
            psym = False
            while self.peek().text in ("rank", "sym", "indexsym"):
                t = self.next()
                if t.text == "rank":
                    rank = int(self.expect(kind="num").text)
                elif t.text == "sym":
                    psym = True
                else:
                    idxsym = True
            fields.append(FieldSpec(fname, base, parity, rank=rank,
                                    index_symmetric=idxsym,
                                    particle_symmetric=psym))
        # validated now, registered only when the whole model parses
        s.levels[name] = _validate_level(name, fields)

    # -- expressions ------------------------------------------------------

    def parse_vardecl(self):
        name = self.expect(kind="name").text
        self.expect(":")
        kind_t = self.next()
        if kind_t.text not in (POS, MOM):
            raise ModelSyntaxError("variable kind must be pos or mom",
                                   kind_t.line, kind_t.col)
        return var(name, kind_t.text, self.dim)

    def parse_point_arg(self, scope):
        """A linear combination of variables."""
        acc = {}
        sign = -1 if self.accept("-") else 1
        while True:
            coeff = Fraction(sign)
            t = self.peek()
            if t.kind == "num":
                coeff *= Fraction(t.text)
                self.next()
                self.expect("*")
            vn = self.expect(kind="name")
            v = scope.get(vn.text)
            if v is None:
                raise ResolutionError(f"unknown variable {vn.text!r}",
                                      vn.line, vn.col)
            acc[v] = acc.get(v, Fraction(0)) + coeff
            if self.accept("+"):
                sign = 1
            elif self.accept("-"):
                sign = -1
            else:
                break
        return arg_of(*acc.items())

    def parse_expr(self, scope, level) -> Expr:
        e = self.parse_term(scope, level)
        while self.peek().text in ("+", "-"):
            op = self.next().text
            rhs = self.parse_term(scope, level)
            e = e + rhs if op == "+" else e - rhs
        return e

    def parse_term(self, scope, level) -> Expr:
        e = self.parse_factor(scope, level)
        while self.accept("*"):
            e = mul(e, self.parse_factor(scope, level))
        return e

    def parse_factor(self, scope, level) -> Expr:
        e = self.parse_atom(scope, level)
        if self.accept("^"):
            neg = self.accept("-")
            n = int(self.expect(kind="num").text)
            n = -n if neg else n
            if n >= 0:
                out = as_expr(Fraction(1))
                for _ in range(n):
                    out = mul(out, e)
                return out
            return as_expr(PowNF(e, n))
        return e

    def parse_atom(self, scope, level) -> Expr:
        t = self.peek()
        if t.text == "-":
            self.next()
            return scale(self.parse_atom(scope, level), Fraction(-1))
        if t.text == "(":
            self.next()
            e = self.parse_expr(scope, level)
            self.expect(")")
            return e
        if t.kind == "num":
            self.next()
            return as_expr(Fraction(t.text))
        if t.text == "int":
            self.next()
            self.expect("(")
            vs = [self.parse_vardecl()]
            inner = dict(scope)
            inner[vs[0].name] = vs[0]
            while self.accept(","):
                v = self.parse_vardecl()
                vs.append(v)
                inner[v.name] = v
            self.expect(")")
            self.expect("(")
            body = self.parse_expr(inner, level)
            self.expect(")")
            return integral(vs, body)
        if t.text == "d":
            self.next()
            self.expect("(")
            vn = self.expect(kind="name")
            v = scope.get(vn.text)
            if v is None:
                raise ResolutionError(f"unknown variable {vn.text!r}",
                                      vn.line, vn.col)
            self.expect(",")
            comp = int(self.expect(kind="num").text)
            self.expect(")")
            self.expect("(")
            body = self.parse_expr(scope, level)
            self.expect(")")
            return diff_expr(body, v, comp)
        if t.text == "delta":
            self.next()
            self.expect("(")
            a = self.parse_point_arg(scope)
            self.expect(")")
            return as_expr(Delta(a))
        if t.kind == "name":
            self.next()
            name = t.text
            if self.accept("["):
                vn = scope.get(name)
                if vn is None:
                    raise ResolutionError(f"unknown variable {name!r}",
                                          t.line, t.col)
                comp = int(self.expect(kind="num").text)
                self.expect("]")
                return as_expr(Coord(vn, comp))
            if self.peek().text == "{":
                self.next()
                orders = []
                if self.peek().text != "}":
                    orders.append(int(self.expect(kind="num").text))
                    while self.accept(","):
                        orders.append(int(self.expect(kind="num").text))
                self.expect("}")
                self.expect("(")
                args = []
                if self.peek().text != ")":
                    args.append(self.parse_expr(scope, level))
                    while self.accept(","):
                        args.append(self.parse_expr(scope, level))
                self.expect(")")
                if len(orders) != len(args):
                    raise ModelSyntaxError(
                        f"{name}: {len(orders)} orders for {len(args)} "
                        "arguments", t.line, t.col)
                return as_expr(Opaque(name, tuple(orders), tuple(args)))
            if self.accept("("):
                args = []
                if self.peek().text != ")":
                    args.append(self.parse_point_arg(scope))
                    while self.accept(","):
                        args.append(self.parse_point_arg(scope))
                self.expect(")")
                if level is not None and name in level.components():
                    spec = level.component_owner(name)
                    return as_expr(FieldEval(name, tuple(args), (),
                                             spec.sym_blocks))
                if not args:
                    return as_expr(Opaque(name))
                raise ResolutionError(
                    f"{name!r} is not a field of the active level",
                    t.line, t.col)
            vn = scope.get(name)
            if vn is not None and vn.dim == 1:
                return as_expr(Coord(vn, 0))
            raise ResolutionError(f"cannot resolve {name!r}", t.line, t.col)
        raise ModelSyntaxError(f"unexpected token {t.text!r}", t.line, t.col)

    # -- brackets ---------------------------------------------------------

    def parse_slot(self, scope, level):
        name_t = self.expect(kind="name")
        comp = name_t.text
        if comp not in level.components():
            raise ResolutionError(f"unknown field component {comp!r}",
                                  name_t.line, name_t.col)
        self.expect("(")
        pts = [self.parse_point_arg(scope)]
        while self.accept(","):
            pts.append(self.parse_point_arg(scope))
        self.expect(")")
        deriv = []
        if self.accept("deriv"):
            while self.accept("("):
                slot = int(self.expect(kind="num").text)
                comp_i = int(self.expect(kind="num").text)
                self.expect(")")
                deriv.append((slot, comp_i))
        return Slot(comp, tuple(sorted(deriv)), tuple(pts))

    def parse_bracket(self, s: Session):
        self.expect("bracket")
        name = self.expect(kind="name").text
        self.expect("on")
        lvl_t = self.expect(kind="name")
        level = s.levels.get(lvl_t.text) or self._global_level(lvl_t)
        self.expect("{")
        terms = []
        while not self.accept("}"):
            self.expect("term")
            self.expect("{")
            self.expect("vars")
            vs = [self.parse_vardecl()]
            scope = {vs[0].name: vs[0]}
            while self.accept(","):
                v = self.parse_vardecl()
                vs.append(v)
                scope[v.name] = v
            self.expect(";")
            self.expect("coeff")
            coeff = self.parse_expr(scope, level)
            self.expect(";")
            self.expect("left")
            left = self.parse_slot(scope, level)
            self.expect(";")
            self.expect("right")
            right = self.parse_slot(scope, level)
            self.expect(";")
            antisym = False
            if self.accept("antisym"):
                antisym = True
                self.expect(";")
            self.expect("}")
            terms.append(BilinearTerm(tuple(vs), coeff, left, right))
            if antisym:
                terms.append(BilinearTerm(tuple(vs), scale(coeff, -1),
                                          right, left))
        s.brackets[name] = BracketForm(level, tuple(terms), name=name)

    def _global_level(self, tok):
        from .fields import registered_levels
        lv = registered_levels().get(tok.text)
        if lv is None:
            raise ResolutionError(f"unknown level {tok.text!r}",
                                  tok.line, tok.col)
        return lv

    def parse_projection(self, s: Session):
        self.expect("projection")
        name = self.expect(kind="name").text
        self.expect("from")
        src = s.levels.get(self.peek().text) or self._global_level(self.peek())
        self.next()
        self.expect("to")
        tgt = s.levels.get(self.peek().text) or self._global_level(self.peek())
        self.next()
        self.expect("kind")
        kind = self.expect(kind="name").text
        self.expect("{")
        defs = {}
        meta = {}
        while not self.accept("}"):
            if self.accept("meta"):
                raw = self.expect(kind="str").text
                meta = json.loads(raw[1:-1].replace('\\"', '"'))
                continue
            self.expect("def")
            comp_t = self.expect(kind="name")
            comp = comp_t.text
            if comp not in tgt.components():
                raise ResolutionError(
                    f"{comp!r} is not a component of {tgt.name}",
                    comp_t.line, comp_t.col)
            self.expect("(")
            pts = [self.parse_vardecl()]
            scope = {pts[0].name: pts[0]}
            while self.accept(","):
                v = self.parse_vardecl()
                pts.append(v)
                scope[v.name] = v
            self.expect(")")
            self.expect("=")
            expr = self.parse_expr(scope, src)
            defs[comp] = (tuple(pts), expr)
        meta = _meta_decode(meta, src, tgt)
        s.projections[name] = make_projection(src, tgt, kind, defs,
                                              meta=meta, name=name,
                                              check_parity=False)

    def parse_energy(self, s: Session):
        self.expect("energy")
        name = self.expect(kind="name").text
        self.expect("on")
        lvl = s.levels.get(self.peek().text) or self._global_level(self.peek())
        self.next()
        self.expect("=")
        s.energies[name] = (lvl, self.parse_expr({}, lvl))


def _validate_level(name, fields):
    from .errors import DuplicateField, MissingParity
    seen = set()
    for f in fields:
        if f.name in seen:
            raise DuplicateField(f.name)
        seen.add(f.name)
        if f.parity not in (EVEN, ODD):
            raise MissingParity(f.name)
    return LevelSpec(name, tuple(fields))


def parse_model(text: str) -> Session:
    """Parse a model file; diagnostics carry line and column.

    No declaration is registered unless the whole model parses.
    """
    s = Parser(text).parse_model()
    for name, lvl in s.levels.items():
        define_level(name, lvl.fields)
    return s


def _meta_decode(meta, src, tgt):
    out = dict(meta)
    if "targets" in out:
        out["targets"] = [(c, k, (list(p) if p is not None else None))
                          for c, k, p in out["targets"]]
    if "subst" in out:
        dec = {}
        for comp, (ptnames, text) in out["subst"].items():
            sub = Parser(text)
            sub.dim = src.dim
            pts = tuple(var(n, k, src.dim) for n, k in ptnames)
            scope = {v.name: v for v in pts}
            dec[comp] = (pts, sub.parse_expr(scope, tgt))
        out["subst"] = dec
    return out


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _frac(q: Fraction) -> str:
    return str(q) if q.denominator != 1 else str(q.numerator)


def export_arg(a) -> str:
    parts = []
    for v, c in a:
        if c == 1:
            parts.append(("+ " if parts else "") + v.name)
        elif c == -1:
            parts.append("- " + v.name)
        else:
            parts.append(("+ " if parts and c > 0 else "") +
                         (f"{_frac(abs(c))} * {v.name}" if c > 0
                          else f"- {_frac(abs(c))} * {v.name}"))
    return " ".join(parts)


def export_expr(e: Expr) -> str:
    terms = []
    for m in e.terms:
        terms.append(export_monomial(m))
    return " + ".join(terms) if terms else "0"


def export_monomial(m: Monomial) -> str:
    parts = []
    if m.coeff != 1 or not m.factors:
        parts.append(_frac(m.coeff))
    for f, p in m.factors:
        txt = export_factor(f)
        if p != 1:
            txt += f"^{p}"
        parts.append(txt)
    body = " * ".join(parts)
    if m.binders:
        vs = ", ".join(f"{b.name}:{b.kind}" for b in m.binders)
        return f"int({vs})({body})"
    return body


def export_factor(f) -> str:
    if isinstance(f, FieldEval):
        base = f"{f.field}({', '.join(export_arg(a) for a in f.args)})"
        for (s, c) in f.deriv:
            v = f.args[s][0][0]
            base = f"d({v.name}, {c})({base})"
        return base
    if isinstance(f, Coord):
        return f"{f.v.name}[{f.comp}]"
    if isinstance(f, Opaque):
        if not f.args:
            return f"{f.name}()"
        orders = ", ".join(str(k) for k in f.dorder)
        args = ", ".join(export_expr(a) for a in f.args)
        return f"{f.name}{{{orders}}}({args})"
    if isinstance(f, Delta):
        return f"delta({export_arg(f.aarg)})"
    if isinstance(f, PowNF):
        return f"({export_expr(f.base)})^{f.exp}"
    from .kernel.expr import SlotSym
    if isinstance(f, SlotSym):
        # diagnostic rendering of functional-derivative slots in residuals
        base = f"{f.functional}[{f.field}]" \
            f"({', '.join(export_arg(a) for a in f.args)})"
        if f.deriv:
            base += " deriv " + "".join(f"({a} {b})" for a, b in f.deriv)
        return base
    raise TypeError(f)


def export_level(lvl: LevelSpec) -> str:
    dim = lvl.dim
    lines = [f"dim {dim}", f"level {lvl.name} {{"]
    for f in lvl.fields:
        kinds = [k for k, _ in f.base.slots]
        if kinds == [POS]:
            base = "pos"
        elif kinds == [POS, MOM]:
            base = "phase"
        elif len(kinds) % 2 == 0 and f.base.particles:
            base = f"particles {f.base.particles}"
        else:
            base = "base " + " ".join(kinds)
        par = "+" if f.parity == EVEN else "-"
        extra = ""
        if f.rank:
            extra += f" rank {f.rank}"
        if f.particle_symmetric:
            extra += " sym"
        if f.index_symmetric:
            extra += " indexsym"
        lines.append(f"  field {f.name} {base} parity {par}{extra}")
    lines.append("}")
    return "\n".join(lines)


def _ident(name: str, fallback: str) -> str:
    out = re.sub(r"[^A-Za-z0-9_.]", "_", name or fallback)
    if not re.match(r"[A-Za-z_]", out):
        out = "_" + out
    return out


def export_bracket(b: BracketForm) -> str:
    lines = [export_level(b.level), f"bracket {_ident(b.name, 'b')} on "
             f"{b.level.name} {{"]
    for t in b.terms:
        vs = ", ".join(f"{v.name}:{v.kind}" for v in t.binders)
        left = _export_slot(t.left)
        right = _export_slot(t.right)
        lines.append(f"  term {{ vars {vs}; coeff {export_expr(t.coeff)}; "
                     f"left {left}; right {right}; }}")
    lines.append("}")
    return "\n".join(lines)


def _export_slot(s: Slot) -> str:
    pts = ", ".join(export_arg(a) for a in s.point)
    out = f"{s.field}({pts})"
    if s.deriv:
        out += " deriv " + "".join(f"({a} {b})" for (a, b) in s.deriv)
    return out


def export_projection(pm: ProjectionMap) -> str:
    lines = [export_level(pm.source), export_level(pm.target),
             f"projection {_ident(pm.name, 'p')} from {pm.source.name} to "
             f"{pm.target.name} kind {pm.kind} {{"]
    for comp, (pts, expr) in pm.defs.items():
        vs = ", ".join(f"{v.name}:{v.kind}" for v in pts)
        lines.append(f"  def {comp} ({vs}) = {export_expr(expr)}")
    meta = _meta_encode(pm.meta)
    if meta:
        lines.append(f"  meta {json.dumps(json.dumps(meta))}")
    lines.append("}")
    return "\n".join(lines)


def _meta_encode(meta):
    out = {}
    for k, v in meta.items():
        if k == "subst":
            out[k] = {comp: ([[vv.name, vv.kind] for vv in pts],
                             export_expr(expr))
                      for comp, (pts, expr) in v.items()}
        elif k == "targets":
            out[k] = [[c, kk, (list(p) if p is not None else None)]
                      for c, kk, p in v]
        else:
            out[k] = v
    return out
