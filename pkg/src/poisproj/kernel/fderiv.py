"""Variational derivatives of integral functionals.

`functional_derivative(F, comp, point)` inserts delta distributions for each
occurrence of the field component and lets normalization collapse them, which
yields the Euler-Lagrange form including chain factors through opaque
compositions.  Symmetric multi-particle fields differentiate with the
symmetrized delta comb, so the result is automatically block-symmetric.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from ..errors import NLimitExceeded, NotAFunctional
from .expr import (Arg, Delta, Expr, FieldEval, Monomial, Opaque, PowNF,
                   SlotSym, Var, ZERO, arg_add, arg_of, arg_scale, as_expr,
                   diff_expr, fresh_var, mul, scale, subst_expr)
from .normalize import normalize

N_LIMIT = 4


def as_point(point) -> tuple:
    out = []
    for p in point:
        if isinstance(p, Var):
            out.append(arg_of(p))
        else:
            out.append(p)
    return tuple(out)


def _delta_comb(args: tuple, point: tuple, deriv: tuple, sym: int) -> Expr:
    """delta(args - point) with the factor's derivative multi-index applied,
    symmetrized over permutations of the point's blocks when sym > 0."""
    nslots = len(args)
    if sym and nslots > sym:
        nblocks = nslots // sym
        perms = list(itertools.permutations(range(nblocks)))
    else:
        perms = [None]
    if perms == [None]:
        return Expr((Monomial(Fraction(1), (), tuple(
            (Delta(arg_add(args[s], arg_scale(point[s], Fraction(-1))),
                   tuple(sorted(c for (sl, c) in deriv if sl == s))), 1)
            for s in range(nslots))),))
    total = ZERO
    w = Fraction(1, len(perms))
    for perm in perms:
        factors = []
        for b, pb in enumerate(perm):
            for k in range(sym):
                s = b * sym + k
                ps = pb * sym + k
                ders = tuple(sorted(c for (sl, c) in deriv if sl == s))
                factors.append(
                    (Delta(arg_add(args[s], arg_scale(point[ps], Fraction(-1))),
                           ders), 1))
        total = total + scale(
            Expr((Monomial(Fraction(1), (), tuple(factors)),)), w)
    return total


def _fd_factor(f, comp: str, point: tuple) -> Expr | None:
    """Derivative of a single factor with respect to comp at point."""
    if isinstance(f, FieldEval):
        if f.field != comp:
            return None
        return _delta_comb(f.args, point, f.deriv, f.sym)
    if isinstance(f, Opaque):
        total = ZERO
        hit = False
        for i, sub in enumerate(f.args):
            dsub = functional_derivative_raw(sub, comp, point)
            if dsub.is_syntactic_zero():
                continue
            hit = True
            nd = tuple(f.dorder[j] + (1 if j == i else 0)
                       for j in range(len(f.args)))
            total = total + mul(as_expr(Opaque(f.name, nd, f.args)), dsub)
        return total if hit else None
    if isinstance(f, PowNF):
        dbase = functional_derivative_raw(f.base, comp, point)
        if dbase.is_syntactic_zero():
            return None
        inner = as_expr(PowNF(f.base, f.exp - 1)) if f.exp != 1 else \
            as_expr(Fraction(1))
        return scale(mul(inner, dbase), f.exp)
    if isinstance(f, SlotSym):
        raise NotAFunctional(
            "cannot differentiate an abstract functional-derivative symbol")
    return None


def functional_derivative_raw(F, comp: str, point) -> Expr:
    F = as_expr(F)
    point = as_point(point)
    total = ZERO
    for m in F.terms:
        for i, (f, p) in enumerate(m.factors):
            df = _fd_factor(f, comp, point)
            if df is None or df.is_syntactic_zero():
                continue
            rest = m.factors[:i] + ((f, p - 1),) * (p > 1) + m.factors[i + 1:]
            base = Expr((Monomial(m.coeff * p, m.binders, rest),))
            total = total + mul(base, df)
    return total


def functional_derivative(F, comp: str, point) -> Expr:
    """Variational derivative dF/d comp evaluated at `point` (vars or args)."""
    return normalize(functional_derivative_raw(F, comp, point))


def slot_derivative(F, comp: str, point, deriv: tuple) -> Expr:
    """[d^deriv (dF/d comp)](point) for a concrete functional F."""
    point = as_point(point)
    kinds = []
    for a in point:
        vs = [v for v, _ in a]
        kinds.append((vs[0].kind, vs[0].dim) if vs else None)
    probes = tuple(fresh_var(k, d, "w") for (k, d) in kinds)
    g = functional_derivative(F, comp, probes)
    for (s, c) in deriv:
        g = diff_expr(g, probes[s], c)
    mapping = {probes[s]: point[s] for s in range(len(point))}
    return subst_expr(g, mapping)


def particle_sum(N: int, maker) -> Expr:
    """Expanded finite sum over a particle index 1..N (budget-guarded)."""
    if N > N_LIMIT:
        raise NLimitExceeded(f"particle number {N} exceeds budget {N_LIMIT}")
    total = ZERO
    for i in range(N):
        total = total + maker(i)
    return total


def particle_pair_sum(N: int, maker) -> Expr:
    """Expanded sum over ordered distinct pairs (i, j), i != j."""
    if N > N_LIMIT:
        raise NLimitExceeded(f"particle number {N} exceeds budget {N_LIMIT}")
    total = ZERO
    for i in range(N):
        for j in range(N):
            if i != j:
                total = total + maker(i, j)
    return total


def collapse_particle_sums(e, N: int, projection=None):
    """Expand-and-collapse entry point for expressions with finite particle
    sums (already expanded at construction): enforces the particle budget,
    performs the delta collapses, and optionally recognizes moment patterns
    against a projection map.
    """
    from .normalize import reduce_modulo_exact
    if N > N_LIMIT:
        raise NLimitExceeded(f"particle number {N} exceeds budget {N_LIMIT}")
    out = reduce_modulo_exact(e)
    if projection is not None:
        from ..projection import project_expression
        closed, residual, unresolved = project_expression(out, projection)
        return closed, residual, unresolved
    return out
