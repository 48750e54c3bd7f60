"""Exact-rational expression trees for field functionals.

The engine works on a flattened normal form: an expression is a sum of
monomials, each monomial a rational coefficient times a product of factors
under a list of integration binders.  Factors are field evaluations, opaque
function applications, coordinate components, delta distributions, integer
powers of local subexpressions, and functional-derivative slot symbols.
Derivatives are stored as multi-indices attached to the factor they act on,
so Leibniz and chain rules are applied eagerly and never survive as nodes.

All coefficients are `fractions.Fraction`; no floating point enters here.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple, Optional, Union

from ..errors import UnsupportedFragment

POS = "pos"
MOM = "mom"

_FRESH_COUNTER = itertools.count()


class Var(NamedTuple):
    """An integration or free point variable: one coordinate block."""

    name: str
    kind: str  # POS or MOM
    dim: int


def var(name: str, kind: str = POS, dim: int = 3) -> Var:
    if kind not in (POS, MOM):
        raise ValueError(f"bad variable kind {kind!r}")
    return Var(name, kind, dim)


def fresh_var(kind: str, dim: int, tag: str = "v") -> Var:
    return Var(f".{tag}{next(_FRESH_COUNTER)}", kind, dim)


# An Arg is a linear combination of Vars with rational coefficients,
# stored sorted by variable name with zero coefficients dropped.
Arg = tuple  # tuple[tuple[Var, Fraction], ...]


def arg_of(*pairs) -> Arg:
    """Build an Arg from (var, coeff) pairs or bare vars (coeff 1)."""
    acc: dict[Var, Fraction] = {}
    for p in pairs:
        if isinstance(p, Var):
            v, c = p, Fraction(1)
        else:
            v, c = p
            c = Fraction(c)
        acc[v] = acc.get(v, Fraction(0)) + c
    items = tuple(sorted(((v, c) for v, c in acc.items() if c != 0),
                         key=lambda t: t[0].name))
    return items


def arg_add(a: Arg, b: Arg, bscale: Fraction = Fraction(1)) -> Arg:
    acc = {v: c for v, c in a}
    for v, c in b:
        acc[v] = acc.get(v, Fraction(0)) + c * bscale
    return tuple(sorted(((v, c) for v, c in acc.items() if c != 0),
                        key=lambda t: t[0].name))


def arg_scale(a: Arg, s: Fraction) -> Arg:
    s = Fraction(s)
    if s == 0:
        return ()
    return tuple((v, c * s) for v, c in a)


def arg_kind(a: Arg) -> Optional[str]:
    kinds = {v.kind for v, _ in a}
    if len(kinds) > 1:
        raise UnsupportedFragment(f"argument mixes coordinate kinds: {a}")
    return kinds.pop() if kinds else None


def arg_dim(a: Arg) -> Optional[int]:
    dims = {v.dim for v, _ in a}
    if len(dims) > 1:
        raise UnsupportedFragment(f"argument mixes dimensions: {a}")
    return dims.pop() if dims else None


def arg_vars(a: Arg):
    return [v for v, _ in a]


# ---------------------------------------------------------------------------
# Factors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldEval:
    """(possibly derived) field value: [d^deriv y](args).

    `deriv` is a sorted tuple of (slot_index, component) pairs.
    `sym` > 0 marks permutation symmetry of argument blocks of that size.
    """

    field: str
    args: tuple  # tuple[Arg, ...]
    deriv: tuple = ()
    sym: int = 0


@dataclass(frozen=True)
class SlotSym:
    """Functional-derivative symbol [d^deriv (dF/dy)](args) for functional F."""

    functional: str
    field: str
    args: tuple
    deriv: tuple = ()
    sym: int = 0


@dataclass(frozen=True)
class Opaque:
    """Opaque smooth function application with formal derivative orders.

    `dorder[i]` counts derivatives with respect to scalar argument i; each
    argument is a closed Expr.  Zero-argument instances act as opaque
    constants (particle mass and similar).
    """

    name: str
    dorder: tuple = ()
    args: tuple = ()  # tuple[Expr, ...]


@dataclass(frozen=True)
class Coord:
    """A single coordinate component of a variable."""

    v: Var
    comp: int


@dataclass(frozen=True)
class Delta:
    """delta distribution of a linear argument, with a derivative multi-index
    of coordinate components (derivatives taken with respect to the argument).
    """

    aarg: tuple  # Arg
    deriv: tuple = ()  # sorted tuple of component indices


@dataclass(frozen=True)
class PowNF:
    """Integer power of a local scalar subexpression (used for quotients)."""

    base: "Expr"
    exp: int


Factor = Union[FieldEval, SlotSym, Opaque, Coord, Delta, PowNF]


@dataclass(frozen=True)
class Monomial:
    coeff: Fraction
    binders: tuple  # tuple[Var, ...]
    factors: tuple  # tuple[tuple[Factor, int], ...]  (factor, positive power)


@dataclass(frozen=True)
class Expr:
    terms: tuple  # tuple[Monomial, ...]

    def __add__(self, other: "Expr") -> "Expr":
        other = as_expr(other)
        return Expr(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "Expr":
        return Expr(tuple(Monomial(-m.coeff, m.binders, m.factors)
                          for m in self.terms))

    def __sub__(self, other: "Expr") -> "Expr":
        return self + (-as_expr(other))

    def __rsub__(self, other) -> "Expr":
        return as_expr(other) + (-self)

    def __mul__(self, other) -> "Expr":
        if isinstance(other, (int, Fraction)):
            return scale(self, Fraction(other))
        return mul(self, as_expr(other))

    __rmul__ = __mul__

    def is_syntactic_zero(self) -> bool:
        return all(m.coeff == 0 for m in self.terms)


ZERO = Expr(())
ONE = Expr((Monomial(Fraction(1), (), ()),))


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, (int, Fraction)):
        return num(x)
    if isinstance(x, (FieldEval, SlotSym, Opaque, Coord, Delta, PowNF)):
        return Expr((Monomial(Fraction(1), (), ((x, 1),)),))
    raise TypeError(f"cannot coerce {x!r} to Expr")


def num(q) -> Expr:
    q = Fraction(q)
    if q == 0:
        return ZERO
    return Expr((Monomial(q, (), ()),))


def scale(e: Expr, q: Fraction) -> Expr:
    q = Fraction(q)
    if q == 0:
        return ZERO
    return Expr(tuple(Monomial(m.coeff * q, m.binders, m.factors)
                      for m in e.terms))


# ---------------------------------------------------------------------------
# Variable bookkeeping
# ---------------------------------------------------------------------------


def factor_vars(f: Factor) -> set:
    out: set = set()
    if isinstance(f, (FieldEval, SlotSym)):
        for a in f.args:
            out.update(v for v, _ in a)
    elif isinstance(f, Opaque):
        for sub in f.args:
            out.update(expr_free_vars(sub))
    elif isinstance(f, Coord):
        out.add(f.v)
    elif isinstance(f, Delta):
        out.update(v for v, _ in f.aarg)
    elif isinstance(f, PowNF):
        out.update(expr_free_vars(f.base))
    return out


def mono_all_vars(m: Monomial) -> set:
    out: set = set()
    for f, _ in m.factors:
        out.update(factor_vars(f))
    return out


def mono_free_vars(m: Monomial) -> set:
    return mono_all_vars(m) - set(m.binders)


def expr_free_vars(e: Expr) -> set:
    out: set = set()
    for m in e.terms:
        out.update(mono_free_vars(m))
    return out


def _rename_binders(m: Monomial, taken: set) -> Monomial:
    """Freshen binder names that collide with `taken` variable names."""
    mapping = {}
    newb = []
    for b in m.binders:
        if b.name in taken:
            nb = fresh_var(b.kind, b.dim)
            mapping[b] = arg_of(nb)
            newb.append(nb)
        else:
            newb.append(b)
    if not mapping:
        return m
    sub = subst_monomial(Monomial(m.coeff, (), m.factors), mapping)
    assert len(sub.terms) == 1
    inner = sub.terms[0]
    return Monomial(inner.coeff, tuple(newb), inner.factors)


def mul(a: Expr, b: Expr) -> Expr:
    out = []
    for ma in a.terms:
        for mb in b.terms:
            taken = {v.name for v in mono_all_vars(ma)} | {v.name for v in ma.binders}
            mb2 = _rename_binders(mb, taken)
            out.append(Monomial(ma.coeff * mb2.coeff,
                                ma.binders + mb2.binders,
                                ma.factors + mb2.factors))
    return Expr(tuple(out))


def integral(vars_: Iterable[Var], e: Expr) -> Expr:
    """Integrate e over the given variables (they become binders)."""
    vs = tuple(vars_)
    out = []
    for m in e.terms:
        clash = {b.name for b in m.binders} & {v.name for v in vs}
        if clash:
            m = _rename_binders(m, {v.name for v in vs} | {x.name for x in mono_all_vars(m)})
        out.append(Monomial(m.coeff, vs + m.binders, m.factors))
    return Expr(tuple(out))


# ---------------------------------------------------------------------------
# Substitution  var := Arg  (linear change of points)
# ---------------------------------------------------------------------------


def subst_arg(a: Arg, mapping: dict) -> Arg:
    acc: dict[Var, Fraction] = {}
    for v, c in a:
        if v in mapping:
            for w, cw in mapping[v]:
                acc[w] = acc.get(w, Fraction(0)) + c * cw
        else:
            acc[v] = acc.get(v, Fraction(0)) + c
    return tuple(sorted(((v, c) for v, c in acc.items() if c != 0),
                        key=lambda t: t[0].name))


def subst_factor(f: Factor, mapping: dict) -> Expr:
    """Substitute vars by linear combinations inside one factor.

    Returns an Expr because Coord factors distribute over the combination.
    """
    if isinstance(f, FieldEval):
        return as_expr(FieldEval(f.field, tuple(subst_arg(a, mapping) for a in f.args),
                                 f.deriv, f.sym))
    if isinstance(f, SlotSym):
        return as_expr(SlotSym(f.functional, f.field,
                               tuple(subst_arg(a, mapping) for a in f.args),
                               f.deriv, f.sym))
    if isinstance(f, Opaque):
        return as_expr(Opaque(f.name, f.dorder,
                              tuple(subst_expr(sub, mapping) for sub in f.args)))
    if isinstance(f, Delta):
        return as_expr(Delta(subst_arg(f.aarg, mapping), f.deriv))
    if isinstance(f, PowNF):
        return as_expr(PowNF(subst_expr(f.base, mapping), f.exp))
    if isinstance(f, Coord):
        if f.v not in mapping:
            return as_expr(f)
        total = ZERO
        for w, cw in mapping[f.v]:
            total = total + scale(as_expr(Coord(w, f.comp)), cw)
        return total
    raise TypeError(f)


def subst_monomial(m: Monomial, mapping: dict, same_scope: bool = False) -> Expr:
    # binders must not be substituted through
    mapping = {v: a for v, a in mapping.items() if v not in m.binders}
    if not mapping:
        return Expr((m,))
    if not same_scope:
        introduced = {w for a in mapping.values() for w, _ in a}
        if introduced & set(m.binders):
            m = _rename_binders(m, {w.name for w in introduced})
    total = Expr((Monomial(m.coeff, m.binders, ()),))
    for f, p in m.factors:
        sub = subst_factor(f, mapping)
        for _ in range(p):
            total = mul(total, sub)
    # restore binders (mul keeps them on the first operand)
    return total


def subst_expr(e: Expr, mapping: dict) -> Expr:
    out = ZERO
    for m in e.terms:
        out = out + subst_monomial(m, mapping)
    return out


# ---------------------------------------------------------------------------
# Differentiation with respect to a variable component
# ---------------------------------------------------------------------------


def _arg_coeff(a: Arg, v: Var) -> Fraction:
    for w, c in a:
        if w == v:
            return c
    return Fraction(0)


def diff_factor(f: Factor, v: Var, comp: int) -> Expr:
    """d/d v_comp of a single factor; returns an Expr."""
    if isinstance(f, (FieldEval, SlotSym)):
        total = ZERO
        for slot, a in enumerate(f.args):
            c = _arg_coeff(a, v)
            if c == 0:
                continue
            nd = tuple(sorted(f.deriv + ((slot, comp),)))
            if isinstance(f, FieldEval):
                nf = FieldEval(f.field, f.args, nd, f.sym)
            else:
                nf = SlotSym(f.functional, f.field, f.args, nd, f.sym)
            total = total + scale(as_expr(nf), c)
        return total
    if isinstance(f, Opaque):
        total = ZERO
        for i, sub in enumerate(f.args):
            dsub = diff_expr(sub, v, comp)
            if dsub.is_syntactic_zero():
                continue
            nd = tuple(f.dorder[j] + (1 if j == i else 0)
                       for j in range(len(f.args)))
            total = total + mul(as_expr(Opaque(f.name, nd, f.args)), dsub)
        return total
    if isinstance(f, Coord):
        if f.v == v:
            return num(1) if f.comp == comp else ZERO
        return ZERO
    if isinstance(f, Delta):
        c = _arg_coeff(f.aarg, v)
        if c == 0:
            return ZERO
        return scale(as_expr(Delta(f.aarg, tuple(sorted(f.deriv + (comp,))))), c)
    if isinstance(f, PowNF):
        dbase = diff_expr(f.base, v, comp)
        if dbase.is_syntactic_zero():
            return ZERO
        return scale(mul(as_expr(PowNF(f.base, f.exp - 1)), dbase), f.exp) \
            if f.exp != 1 else dbase
    raise TypeError(f)


def diff_monomial(m: Monomial, v: Var, comp: int) -> Expr:
    total = ZERO
    flist = m.factors
    for i, (f, p) in enumerate(flist):
        df = diff_factor(f, v, comp)
        if df.is_syntactic_zero():
            continue
        rest = flist[:i] + ((f, p - 1),) * (p > 1) + flist[i + 1:]
        base = Monomial(m.coeff * p, m.binders, rest)
        total = total + mul(Expr((base,)), df)
    return total


def diff_expr(e: Expr, v: Var, comp: int) -> Expr:
    total = ZERO
    for m in e.terms:
        if v in m.binders:
            continue  # bound inside: no dependence from outside
        total = total + diff_monomial(m, v, comp)
    return total


def grad_dot(e: Expr, v: Var, weights=None) -> Expr:
    """Sum over components of d/d v_c (optionally weighted)."""
    total = ZERO
    for c in range(v.dim):
        d = diff_expr(e, v, c)
        if weights is not None:
            d = mul(d, weights[c])
        total = total + d
    return total


# ---------------------------------------------------------------------------
# Serialization (structural keys used for canonical ordering)
# ---------------------------------------------------------------------------


def ser_frac(q: Fraction):
    return ("q", q.numerator, q.denominator)


def ser_arg(a: Arg, namer):
    return ("a",) + tuple((namer(v), ser_frac(c)) for v, c in a)


def ser_factor(f: Factor, namer):
    if isinstance(f, FieldEval):
        return ("fe", f.field, tuple(ser_arg(a, namer) for a in f.args),
                f.deriv, f.sym)
    if isinstance(f, SlotSym):
        return ("sl", f.functional, f.field,
                tuple(ser_arg(a, namer) for a in f.args), f.deriv, f.sym)
    if isinstance(f, Opaque):
        return ("op", f.name, f.dorder,
                tuple(ser_expr(sub, namer) for sub in f.args))
    if isinstance(f, Coord):
        return ("co", namer(f.v), f.comp)
    if isinstance(f, Delta):
        return ("de", ser_arg(f.aarg, namer), f.deriv)
    if isinstance(f, PowNF):
        return ("pw", f.exp, ser_expr(f.base, namer))
    raise TypeError(f)


def ser_monomial(m: Monomial, namer):
    return (ser_frac(m.coeff), tuple(namer(b) for b in m.binders),
            tuple((ser_factor(f, namer), p) for f, p in m.factors))


def ser_expr(e: Expr, namer):
    return ("e",) + tuple(sorted(ser_monomial(m, namer) for m in e.terms))


def plain_namer(v: Var):
    return (v.name, v.kind, v.dim)
