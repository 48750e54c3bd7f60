"""Poisson brackets as bilinear forms, their structural checks, and
projections between levels with closure detection.

A bracket is a list of bilinear terms; each term contributes

    coeff * [d^alpha (dA/d field_a)](point_a) * [d^beta (dB/d field_b)](point_b)

under its integration variables, literally (no implicit antisymmetrization:
constructors emit both halves, so the antisymmetry check has teeth).

Projection substitutes the chain rule for functional derivatives through a
projection map, normalizes, and then tries to recognize the surviving
integrals of higher-level fields as evaluations of the lower-level fields;
whatever survives unrecognized is the closure residual.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dfield
from fractions import Fraction
from typing import Callable, Optional

from .errors import (IncompatibleLevels, IndefiniteParity, LevelMismatch,
                     NonlinearBracket, UnsupportedFragment)
from .fields import EVEN, FieldSpec, LevelSpec, MOM, ODD, POS
from .kernel.expr import (Arg, Coord, Delta, Expr, FieldEval, Monomial,
                          Opaque, PowNF, SlotSym, Var, ZERO, arg_of,
                          arg_scale, as_expr, diff_expr, fresh_var, integral,
                          mono_all_vars, mul, scale, ser_monomial, subst_expr,
                          subst_monomial)
from .kernel.fderiv import (as_point, functional_derivative, slot_derivative)
from .kernel.normalize import (is_zero, normalize, reduce_modulo_exact,
                               strip_step)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Abstract:
    """An opaque functional of the level's fields, known only by name."""

    name: str
    level: Optional[LevelSpec] = None


@dataclass(frozen=True)
class Concrete:
    """A functional given by an explicit expression."""

    expr: Expr
    level: Optional[LevelSpec] = None
    name: str = "F"


Functional = Abstract | Concrete


# ---------------------------------------------------------------------------
# Bracket forms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    field: str
    deriv: tuple  # ((slot_index, component), ...)
    point: tuple  # tuple[Arg, ...]


@dataclass(frozen=True)
class BilinearTerm:
    binders: tuple
    coeff: Expr
    left: Slot
    right: Slot


@dataclass(frozen=True)
class BracketForm:
    level: LevelSpec
    terms: tuple
    name: str = ""

    def __post_init__(self):
        comps = set(self.level.components())
        for t in self.terms:
            for s in (t.left, t.right):
                if s.field not in comps:
                    raise LevelMismatch(
                        f"slot field {s.field} not on level {self.level.name}")


@dataclass(frozen=True)
class CheckReport:
    check: str
    passed: bool
    witness: Optional[Expr] = None
    detail: str = ""

    def __bool__(self):
        return self.passed


@dataclass(frozen=True)
class ClosureOutcome:
    closed: Optional[BracketForm]
    residual: tuple = ()
    unresolved: tuple = ()

    @property
    def is_closed(self) -> bool:
        return self.closed is not None


# ---------------------------------------------------------------------------
# Applying brackets to functionals
# ---------------------------------------------------------------------------


def _slot_expr(level: LevelSpec, F: Functional, s: Slot) -> Expr:
    if isinstance(F, Abstract):
        spec = level.component_owner(s.field)
        return as_expr(SlotSym(F.name, s.field, s.point, s.deriv,
                               spec.sym_blocks))
    return slot_derivative(F.expr, s.field, s.point, s.deriv)


def apply_bracket_raw(L: BracketForm, A: Functional, B: Functional) -> Expr:
    for F in (A, B):
        if getattr(F, "level", None) is not None and F.level is not L.level:
            raise LevelMismatch(
                f"functional declared on {F.level.name}, bracket on {L.level.name}")
    total = ZERO
    for t in L.terms:
        fa = _slot_expr(L.level, A, t.left)
        fb = _slot_expr(L.level, B, t.right)
        if fa.is_syntactic_zero() or fb.is_syntactic_zero():
            continue
        total = total + integral(t.binders, mul(t.coeff, mul(fa, fb)))
    return total


def apply_bracket(L: BracketForm, A: Functional, B: Functional) -> Expr:
    """The bracket evaluated on two functionals, normalized."""
    return normalize(apply_bracket_raw(L, A, B))


def bracket_equal(L1: BracketForm, L2: BracketForm) -> bool:
    """Equality as bilinear forms on abstract functionals."""
    A, B = Abstract("A"), Abstract("B")
    return is_zero(apply_bracket_raw(L1, A, B) - apply_bracket_raw(L2, A, B))


def bivector_component(L: BracketForm, ca: str, cb: str) -> Expr:
    """Kernel L^{ab}(x_a, x_b) as a distribution in two free points."""
    speca = L.level.component_owner(ca)
    specb = L.level.component_owner(cb)
    pa = tuple(fresh_var(k, d, "a") for k, d in speca.base.slots)
    pb = tuple(fresh_var(k, d, "b") for k, d in specb.base.slots)
    A = Concrete(as_expr(L.level.eval(ca, *pa)), name="A")
    B = Concrete(as_expr(L.level.eval(cb, *pb)), name="B")
    return reduce_modulo_exact(apply_bracket_raw(L, A, B))


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------


def check_antisymmetry(L: BracketForm) -> CheckReport:
    A, B = Abstract("A"), Abstract("B")
    x = apply_bracket_raw(L, A, B) + apply_bracket_raw(L, B, A)
    r = reduce_modulo_exact(x)
    if is_zero(r):
        return CheckReport("antisymmetry", True)
    return CheckReport("antisymmetry", False, witness=r,
                       detail="{A,B} + {B,A} does not vanish")


def _coeff_affine(L: BracketForm) -> bool:
    comps = set(L.level.components())
    for t in L.terms:
        for m in normalize(t.coeff, strip=False).terms:
            deg = 0
            for f, p in m.factors:
                if isinstance(f, FieldEval) and f.field in comps:
                    deg += p
                elif isinstance(f, Opaque) and f.args:
                    return False
                elif isinstance(f, PowNF):
                    return False
            if deg > 1:
                return False
    return True


def _test_field_name(tag: str, comp: str) -> str:
    return f"tst_{tag}__{comp}"


def linear_test_functional(level: LevelSpec, tag: str) -> Concrete:
    """sum_c int test_c(z) y_c(z) dz with opaque test densities."""
    total = ZERO
    for f in level.fields:
        for comp in f.components():
            vs = tuple(fresh_var(k, d, "t") for k, d in f.base.slots)
            phi = FieldEval(_test_field_name(tag, comp),
                            tuple(arg_of(v) for v in vs), (), f.sym_blocks)
            y = level.eval(comp, *vs)
            total = total + integral(vs, mul(as_expr(phi), as_expr(y)))
    return Concrete(total, name=tag)


def _collect_density(expr: Expr, level: LevelSpec) -> Expr:
    """Rebuild sum_c int (d expr/d y_c)(z) y_c(z) dz for field-affine expr."""
    total = ZERO
    for f in level.fields:
        for comp in f.components():
            vs = tuple(fresh_var(k, d, "k") for k, d in f.base.slots)
            dens = functional_derivative(expr, comp, vs)
            if dens.is_syntactic_zero():
                continue
            for m in dens.terms:
                for g, _ in m.factors:
                    if isinstance(g, FieldEval) and \
                            g.field in level.components():
                        raise NonlinearBracket(
                            "bracket of linear functionals is not linear")
            y = level.eval(comp, *vs)
            total = total + integral(vs, mul(dens, as_expr(y)))
    return total


def check_jacobi(L: BracketForm) -> CheckReport:
    """Symbolic Jacobi identity for field-affine brackets.

    Runs the cyclic sum on linear functionals with arbitrary test densities,
    which suffices for Lie-Poisson forms because their bracket of linear
    functionals is again linear.
    """
    if not _coeff_affine(L):
        raise NonlinearBracket(L.name or "bracket")
    A = linear_test_functional(L.level, "A")
    B = linear_test_functional(L.level, "B")
    C = linear_test_functional(L.level, "C")
    pairs = [(A, B, C), (B, C, A), (C, A, B)]
    total = ZERO
    for X, Y, Z in pairs:
        inner = normalize(apply_bracket_raw(L, X, Y))
        FXY = Concrete(_collect_density(inner, L.level), name="W")
        total = total + apply_bracket_raw(L, FXY, Z)
    r = reduce_modulo_exact(total)
    if is_zero(r):
        return CheckReport("jacobi", True)
    return CheckReport("jacobi", False, witness=r,
                       detail="cyclic sum {{A,B},C} + cyc does not vanish")


def _reflect_point(args: tuple, base_slots) -> tuple:
    out = []
    for s, a in enumerate(args):
        kind = base_slots[s][0]
        out.append(arg_scale(a, Fraction(-1)) if kind == MOM else a)
    return tuple(out)


def _mom_deriv_count(deriv, base_slots) -> int:
    return sum(1 for (s, c) in deriv if base_slots[s][0] == MOM)


def _trt_transform(e: Expr, level: LevelSpec, do_fields: bool,
                   do_slots: bool) -> Expr:
    out = ZERO
    for m in e.terms:
        term = Expr((Monomial(m.coeff, m.binders, ()),))
        for f, p in m.factors:
            fe = _trt_factor(f, level, do_fields, do_slots)
            for _ in range(p):
                term = mul(term, fe)
        out = out + term
    return out


def _trt_factor(f, level: LevelSpec, do_fields: bool, do_slots: bool) -> Expr:
    if isinstance(f, FieldEval) and do_fields:
        try:
            spec = level.component_owner(f.field)
        except Exception:
            return as_expr(f)
        sign = spec.parity * (-1) ** _mom_deriv_count(f.deriv, spec.base.slots)
        nf = FieldEval(f.field, _reflect_point(f.args, spec.base.slots),
                       f.deriv, f.sym)
        return scale(as_expr(nf), Fraction(sign))
    if isinstance(f, SlotSym) and do_slots:
        spec = level.component_owner(f.field)
        sign = spec.parity * (-1) ** _mom_deriv_count(f.deriv, spec.base.slots)
        nf = SlotSym(f.functional, f.field,
                     _reflect_point(f.args, spec.base.slots), f.deriv, f.sym)
        return scale(as_expr(nf), Fraction(sign))
    if isinstance(f, Opaque) and do_fields and f.args:
        nargs = tuple(_trt_transform(a, level, do_fields, do_slots)
                      for a in f.args)
        return as_expr(Opaque(f.name, f.dorder, nargs))
    if isinstance(f, PowNF) and do_fields:
        nb = _trt_transform(f.base, level, do_fields, do_slots)
        return as_expr(PowNF(nb, f.exp))
    if isinstance(f, Coord) and f.v.kind == MOM and do_fields:
        raise IndefiniteParity(
            "momentum coordinate in a bracket coefficient")
    return as_expr(f)


def check_trt_parity(L: BracketForm) -> CheckReport:
    """Time-reversal: the bracket at reversed states must equal minus the
    bracket with reflected, parity-weighted functional slots."""
    for f in L.level.fields:
        if f.parity not in (EVEN, ODD):
            raise IndefiniteParity(f.name)
    A, B = Abstract("A"), Abstract("B")
    x = normalize(apply_bracket_raw(L, A, B))
    xs = _trt_transform(x, L.level, do_fields=True, do_slots=False)
    xr = _trt_transform(x, L.level, do_fields=False, do_slots=True)
    r = reduce_modulo_exact(xs + xr)
    if is_zero(r):
        return CheckReport("trt_parity", True)
    return CheckReport("trt_parity", False, witness=r,
                       detail="reversibility sign relation fails")


def is_casimir(L: BracketForm, C: Expr) -> bool:
    x = apply_bracket_raw(L, Concrete(as_expr(C), name="C"), Abstract("B"))
    return is_zero(x)


def evolution_equations(L: BracketForm, E: Expr):
    """Right-hand sides d y_a/dt = {y_a, E} at a free evaluation point."""
    out = []
    Ef = Concrete(as_expr(E), name="E")
    for f in L.level.fields:
        for comp in f.components():
            star = tuple(fresh_var(k, d, "s") for k, d in f.base.slots)
            A = Concrete(as_expr(L.level.eval(comp, *star)), name="A")
            rhs = normalize(apply_bracket_raw(L, A, Ef))
            out.append((comp, star, rhs))
    return out
