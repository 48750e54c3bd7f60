"""Normalization of field-functional expressions.

The pipeline rewrites every monomial with the following moves, repeated to a
fixed point under a pass budget:

  1. delta reduction: derivatives are taken off delta factors by parts, then
     deltas whose argument contains an integration variable are collapsed by
     substitution (boundary terms are always dropped);
  2. slot stripping: derivatives on the lexicographically smallest
     functional-derivative symbol are moved onto the rest of the integrand by
     parts, giving bilinear expressions an operator normal form;
  3. composition rules: a factor group u(g) * dg/dv, with u a pure
     composition of a single field value g, either vanishes under the
     v-integral (perfect derivative of an antiderivative that need not be
     known in closed form) when nothing else depends on v, or is rewritten
     through an algebraic antiderivative of u found in the differential ring
     generated by g and its opaque compositions.

Monomials are then canonically labelled (dummy variables renamed and
oriented, symmetric argument blocks sorted) and merged.  `is_zero` decides
the remaining by-parts freedom with the variational (Euler) criterion for
local integrands and a bounded reduction modulo total derivatives otherwise.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from ..errors import UnsupportedFragment
from .expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque, PowNF,
                   SlotSym, Var, ZERO, arg_of, arg_scale, as_expr,
                   diff_monomial, factor_vars, mono_all_vars, mul, scale,
                   ser_factor, ser_monomial, subst_monomial)

PERM_LIMIT = 5040
SIGN_LIMIT = 64
PASS_BUDGET = 400000


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def d_bound(m: Monomial, v: Var, comp: int) -> Expr:
    """Derivative of the integrand of m with respect to a bound variable."""
    inner = Monomial(m.coeff, tuple(b for b in m.binders if b != v), m.factors)
    d = diff_monomial(inner, v, comp)
    return Expr(tuple(Monomial(t.coeff, m.binders, t.factors) for t in d.terms))


def _factor_var_slots(f, v: Var):
    out = []
    if isinstance(f, (FieldEval, SlotSym)):
        for s, a in enumerate(f.args):
            for w, c in a:
                if w == v:
                    out.append((s, c))
    return out


def _depends_on(f, v: Var) -> bool:
    return v in factor_vars(f)


# ---------------------------------------------------------------------------
# 1. Delta reduction
# ---------------------------------------------------------------------------


def _delta_step(m: Monomial):
    """Eliminate one delta whose argument contains an integration variable.

    Derivatives on the delta are moved onto the rest of the integrand by
    parts and the delta is collapsed in the same step, so chains of deltas
    sharing a variable cannot trade derivatives back and forth.
    """
    bound = set(m.binders)
    best = None
    for i, (f, p) in enumerate(m.factors):
        if not isinstance(f, Delta):
            continue
        if p != 1:
            raise UnsupportedFragment("square of a delta distribution")
        cand = [(v, c) for v, c in f.aarg if v in bound]
        if not cand:
            continue
        cand.sort(key=lambda t: (abs(t[1]) != 1, t[0].name))
        key = (len(f.deriv), i)
        if best is None or key < best[0]:
            best = (key, i, f, cand[0])
    if best is None:
        return None
    _, i, f, (v, kappa) = best
    rest = m.factors[:i] + m.factors[i + 1:]
    work = Expr((Monomial(m.coeff, m.binders, rest),))
    for comp in f.deriv:
        nxt = []
        for t in work.terms:
            d = d_bound(t, v, comp)
            for u in d.terms:
                nxt.append(Monomial(u.coeff * Fraction(-1) / kappa,
                                    u.binders, u.factors))
        work = Expr(tuple(nxt))
    repl = arg_scale(arg_of(*[(w, c) for w, c in f.aarg if w != v]),
                     Fraction(-1) / kappa)
    jac = (Fraction(1) / abs(kappa)) ** v.dim
    out = ZERO
    for t in work.terms:
        binders = tuple(b for b in t.binders if b != v)
        base = Monomial(t.coeff * jac, binders, t.factors)
        out = out + subst_monomial(base, {v: repl}, same_scope=True)
    return out


def _free_delta_sub(m: Monomial):
    """Canonicalize against underived free deltas: delta(a-b) g(a) = delta(a-b) g(b).

    Eliminates the pivot variable of each plain delta from the rest of the
    monomial so kernel expressions compare structurally.
    """
    for i, (f, p) in enumerate(m.factors):
        if not isinstance(f, Delta) or f.deriv or len(f.aarg) < 2:
            continue
        cand = sorted(((v, c) for v, c in f.aarg), key=lambda t:
                      (abs(t[1]) != 1, t[0].name))
        v, kappa = cand[0]
        used_elsewhere = False
        for j, (g, _) in enumerate(m.factors):
            if j != i and _depends_on(g, v):
                used_elsewhere = True
                break
        if not used_elsewhere:
            continue
        repl = arg_scale(arg_of(*[(w, c) for w, c in f.aarg if w != v]),
                         Fraction(-1) / kappa)
        rest = Monomial(m.coeff, m.binders, m.factors[:i] + m.factors[i + 1:])
        sub = subst_monomial(rest, {v: repl}, same_scope=True)
        out = []
        for t in sub.terms:
            out.append(Monomial(t.coeff, t.binders, t.factors + ((f, p),)))
        return Expr(tuple(out))
    return None


# ---------------------------------------------------------------------------
# 2. Slot stripping
# ---------------------------------------------------------------------------


def _strippable(f, m: Monomial):
    """Find (slot, comp, var, kappa) permitting a one-derivative strip."""
    if not isinstance(f, (FieldEval, SlotSym)) or not f.deriv:
        return None
    bound = set(m.binders)
    for (s, c) in f.deriv:
        a = f.args[s]
        vs = [(v, k) for v, k in a if v in bound]
        if len(vs) != 1:
            continue
        v, kappa = vs[0]
        if any(s2 != s for s2, _ in _factor_var_slots(f, v)):
            continue
        return (s, c, v, kappa)
    return None


def strip_step(m: Monomial, target) -> Expr | None:
    """Move one derivative off a factor selected by `target` onto the rest."""
    for i, (f, p) in enumerate(m.factors):
        if p != 1 or not target(f):
            continue
        hit = _strippable(f, m)
        if hit is None:
            continue
        s, c, v, kappa = hit
        nd = list(f.deriv)
        nd.remove((s, c))
        if isinstance(f, SlotSym):
            lowered = SlotSym(f.functional, f.field, f.args, tuple(nd), f.sym)
        else:
            lowered = FieldEval(f.field, f.args, tuple(nd), f.sym)
        rest = m.factors[:i] + m.factors[i + 1:]
        drest = d_bound(Monomial(m.coeff, m.binders, rest), v, c)
        out = []
        for t in drest.terms:
            out.append(Monomial(t.coeff * Fraction(-1) / kappa, t.binders,
                                t.factors + ((lowered, 1),)))
        return Expr(tuple(out))
    return None


def _min_functional(m: Monomial):
    names = [f.functional for f, _ in m.factors if isinstance(f, SlotSym)]
    return min(names) if names else None


def _slot_strip_step(m: Monomial) -> Expr | None:
    fn = _min_functional(m)
    if fn is None:
        return None
    return strip_step(m, lambda f: isinstance(f, SlotSym) and f.functional == fn)


# ---------------------------------------------------------------------------
# 3. Composition rules
# ---------------------------------------------------------------------------


def _carrier_key(f):
    if isinstance(f, FieldEval) and not f.deriv:
        return ("fe", f.field, f.args, f.sym)
    if isinstance(f, Opaque) and len(f.args) == 1 and len(f.dorder) <= 1:
        sub = f.args[0]
        if len(sub.terms) == 1:
            t = sub.terms[0]
            if (t.coeff == 1 and not t.binders and len(t.factors) == 1
                    and t.factors[0][1] == 1
                    and isinstance(t.factors[0][0], FieldEval)
                    and not t.factors[0][0].deriv):
                g = t.factors[0][0]
                return ("fe", g.field, g.args, g.sym)
    return None


def _solve_linear(rows):
    """Particular solution of linear system; rows = (dict[j]->q, rhs)."""
    rows = [({j: Fraction(v) for j, v in r.items() if v != 0}, Fraction(b))
            for r, b in rows]
    pivots = []  # (col, row, rhs)
    for row, rhs in rows:
        for col, prow, prhs in pivots:
            if col in row:
                fac = row.pop(col)
                for j, v in prow.items():
                    row[j] = row.get(j, Fraction(0)) - fac * v
                    if row[j] == 0:
                        del row[j]
                rhs -= fac * prhs
        if not row:
            if rhs != 0:
                return None
            continue
        col = min(row)
        pv = row.pop(col)
        row = {j: v / pv for j, v in row.items()}
        pivots.append((col, row, rhs / pv))
    sol = {}
    for col, row, rhs in reversed(pivots):
        val = rhs - sum(row.get(j, Fraction(0)) * sol.get(j, Fraction(0))
                        for j in row)
        sol[col] = val
    return sol


def _antiderivative(poly_pow: int, opaque_orders: tuple):
    """Solve U' = x^a * prod F^(k)(x) in the ring Q[x, F^(j)(x), ...]."""
    a = poly_pow
    target = (a, tuple(sorted(opaque_orders)))

    def d_mono(mono):
        b, orders = mono
        out = {}
        if b > 0:
            key = (b - 1, orders)
            out[key] = out.get(key, Fraction(0)) + b
        for i in range(len(orders)):
            fam, k = orders[i]
            no = tuple(sorted(orders[:i] + ((fam, k + 1),) + orders[i + 1:]))
            out[no2key(b, no)] = out.get(no2key(b, no), Fraction(0)) + 1
        return out

    def no2key(b, no):
        return (b, no)

    fams = sorted({fam for fam, _ in target[1]})
    nmax = len(target[1])
    omax = max([k for _, k in target[1]], default=0)
    cands = set()
    for b in range(0, a + 2):
        for n in range(0, nmax + 1):
            for combo in itertools.combinations_with_replacement(
                    [(fam, k) for fam in fams for k in range(0, omax + 1)], n):
                cands.add((b, tuple(sorted(combo))))
    cands = sorted(cands)
    if len(cands) > 600:
        return None
    support: dict = {}
    for j, mono in enumerate(cands):
        for key, val in d_mono(mono).items():
            support.setdefault(key, {})[j] = \
                support.setdefault(key, {}).get(j, Fraction(0)) + val
    if target not in support:
        return None
    rows = [(cols, Fraction(1) if key == target else Fraction(0))
            for key, cols in support.items()]
    sol = _solve_linear(rows)
    if sol is None:
        return None
    out = [(c, cands[j][0], cands[j][1]) for j, c in sol.items() if c != 0]
    return out or None


def _comp_step(m: Monomial) -> Expr | None:
    for v in m.binders:
        for i, (f, p) in enumerate(m.factors):
            if not isinstance(f, FieldEval) or len(f.deriv) != 1 or p != 1:
                continue
            (s, c) = f.deriv[0]
            vs = [(w, k) for w, k in f.args[s] if w == v]
            if len(vs) != 1:
                continue
            if any(s2 != s for s2, _ in _factor_var_slots(f, v)):
                continue
            kappa = vs[0][1]
            gkey = ("fe", f.field, f.args, f.sym)
            group, rest = [], []
            for j, (g, q) in enumerate(m.factors):
                if j == i:
                    continue
                if _carrier_key(g) == gkey:
                    group.append((g, q))
                else:
                    rest.append((g, q))
            rest_dep = any(_depends_on(g, v) for g, _ in rest)
            if not rest_dep:
                return ZERO  # perfect v-derivative; integral drops
            if any(isinstance(g, SlotSym) and _depends_on(g, v)
                   for g, _ in rest):
                continue
            if not group:
                # moving the derivative off a bare factor terminates only
                # when differentiation of the rest cannot create new field
                # derivatives, i.e. the remaining v-dependence is through
                # coordinate factors alone
                if any(not isinstance(g, Coord) and _depends_on(g, v)
                       for g, _ in rest):
                    continue
            poly_pow = 0
            orders = []
            for g, q in group:
                if isinstance(g, FieldEval):
                    poly_pow += q
                else:
                    orders.extend([(g.name, g.dorder[0] if g.dorder else 0)] * q)
            U = _antiderivative(poly_pow, tuple(sorted(orders)))
            if U is None:
                continue
            carrier = FieldEval(f.field, f.args, (), f.sym)
            garg = as_expr(carrier)
            drest = d_bound(Monomial(m.coeff, m.binders, tuple(rest)), v, c)
            out = []
            for coeffU, b, ords in U:
                ufac = []
                if b:
                    ufac.append((carrier, b))
                for fam, k in ords:
                    ufac.append((Opaque(fam, (k,), (garg,)), 1))
                for t in drest.terms:
                    out.append(Monomial(t.coeff * coeffU * Fraction(-1) / kappa,
                                        t.binders, t.factors + tuple(ufac)))
            return Expr(tuple(out))
    return None


# ---------------------------------------------------------------------------
# Canonical labelling
# ---------------------------------------------------------------------------


def _blockkey(block):
    args, ders = block
    return (tuple((tuple((v.name, v.kind, v.dim) for v, _ in a),
                   tuple((c.numerator, c.denominator) for _, c in a))
                  for a in args), ders)


def _sort_sym_blocks(f):
    if not isinstance(f, (FieldEval, SlotSym)) or not f.sym:
        return f
    k = f.sym
    n = len(f.args) // k
    if n <= 1:
        return f
    blocks = []
    for b in range(n):
        args = f.args[b * k:(b + 1) * k]
        ders = tuple(sorted((s - b * k, c) for s, c in f.deriv
                            if b * k <= s < (b + 1) * k))
        blocks.append((args, ders))
    order = sorted(range(n), key=lambda b: _blockkey(blocks[b]))
    nargs, nderiv = [], []
    for newpos, b in enumerate(order):
        args, ders = blocks[b]
        nargs.extend(args)
        nderiv.extend((s + newpos * k, c) for s, c in ders)
    if isinstance(f, FieldEval):
        return FieldEval(f.field, tuple(nargs), tuple(sorted(nderiv)), f.sym)
    return SlotSym(f.functional, f.field, tuple(nargs), tuple(sorted(nderiv)),
                   f.sym)


def _orient_delta(f):
    if not isinstance(f, Delta) or not f.aarg:
        return f, 1
    if f.aarg[0][1] < 0:
        sign = (-1) ** len(f.deriv)
        return Delta(arg_scale(f.aarg, Fraction(-1)), f.deriv), sign
    return f, 1


def _resort(m: Monomial) -> Monomial:
    coeff = m.coeff
    fs = []
    for f, p in m.factors:
        f = _sort_sym_blocks(f)
        f, sg = _orient_delta(f)
        if sg == -1 and p % 2 == 1:
            coeff = -coeff
        fs.append((f, p))
    merged: dict = {}
    for f, p in fs:
        k = ser_factor(f, lambda v: (v.name, v.kind, v.dim))
        if k in merged:
            merged[k] = (merged[k][0], merged[k][1] + p)
        else:
            merged[k] = (f, p)
    fs2 = tuple(merged[k] for k in sorted(merged.keys()) if merged[k][1] != 0)
    return Monomial(coeff, m.binders, fs2)


def _var_coeff_multiset(m: Monomial, v: Var):
    # encode sign after magnitude so +1 is preferred over -1
    out = []
    for f, p in m.factors:
        if isinstance(f, (FieldEval, SlotSym)):
            args = f.args
        elif isinstance(f, Delta):
            args = (f.aarg,)
        else:
            continue
        for a in args:
            for w, c in a:
                if w == v:
                    out.append((0 if c > 0 else 1, abs(c.numerator),
                                c.denominator))
    return sorted(out)


def _fix_signs(m: Monomial):
    """Presentation-independent orientation of bound variables.

    A variable is flipped when the multiset of its occurrence coefficients
    negated is lexicographically smaller; on ties the variable joins the
    exhaustive orientation search.
    """
    ties = []
    mapping = {}
    for v in m.binders:
        plus = _var_coeff_multiset(m, v)
        minus = sorted([(1 - s, n, d) for s, n, d in plus])
        if minus < plus:
            mapping[v] = arg_of((v, Fraction(-1)))
        elif minus == plus and plus:
            ties.append(v)
    if mapping:
        inner = Monomial(m.coeff, (), m.factors)
        sub = subst_monomial(inner, mapping)
        assert len(sub.terms) == 1
        t = sub.terms[0]
        m = Monomial(t.coeff, m.binders, t.factors)
    return m, ties


def _canon_names(m: Monomial, prefix: str = ".c") -> Monomial:
    bound = list(m.binders)
    if not bound:
        return _resort(m)
    m, ties = _fix_signs(m)
    free = mono_all_vars(m) - set(bound)
    freenames = {v: ("F", v.name, v.kind, v.dim) for v in free}

    def blind(w):
        return freenames.get(w, ("B", w.kind, w.dim))

    # signatures refined by occurrence patterns are unsound in the presence
    # of permutable argument blocks (block sorting follows the labelling),
    # so fall back to coarse kind/dim classes there and search permutations
    has_sym = any(isinstance(f, (FieldEval, SlotSym)) and f.sym
                  and len(f.args) > f.sym for f, _ in m.factors)
    sigs = {}
    for v in bound:
        if has_sym:
            sigs[v] = (v.kind, v.dim)
            continue
        occ = []
        for f, p in m.factors:
            fk = ser_factor(f, blind)
            for w in _occurrences(f, v):
                occ.append((fk, w))
        sigs[v] = (v.kind, v.dim, tuple(sorted(occ)))
    classes: dict = {}
    for v in bound:
        classes.setdefault(sigs[v], []).append(v)
    ordered = [sorted(classes[k], key=lambda v: v.name)
               for k in sorted(classes.keys())]
    nperm = 1
    for cl in ordered:
        nperm *= _factorial(len(cl))
    if nperm > PERM_LIMIT:
        raise UnsupportedFragment("dummy-relabelling search too large")
    if 2 ** len(ties) > SIGN_LIMIT:
        raise UnsupportedFragment("orientation search too large")

    best = None
    best_m = None
    for perm in itertools.product(*[itertools.permutations(cl)
                                    for cl in ordered]):
        flat = [v for cl in perm for v in cl]
        for signs in itertools.product(
                *[((1, -1) if v in ties else (1,)) for v in flat]):
            mapping = {}
            newb = []
            for idx, (v, sg) in enumerate(zip(flat, signs)):
                nv = Var(f"{prefix}{idx}", v.kind, v.dim)
                mapping[v] = arg_of((nv, Fraction(sg)))
                newb.append(nv)
            inner = Monomial(m.coeff, (), m.factors)
            sub = subst_monomial(inner, mapping)
            assert len(sub.terms) == 1
            t = sub.terms[0]
            cand = _resort(Monomial(t.coeff, tuple(newb), t.factors))
            # the candidate choice must not depend on the coefficient sign,
            # or a monomial and its negative pick different representatives
            key = ser_monomial(Monomial(Fraction(1), cand.binders,
                                        cand.factors),
                               lambda v: (v.name, v.kind, v.dim))
            if best is None or key < best:
                best = key
                best_m = cand
    return best_m


def _factorial(n):
    out = 1
    for i in range(2, n + 1):
        out *= i
    return out


def _occurrences(f, v):
    out = []
    if isinstance(f, (FieldEval, SlotSym)):
        args = f.args
    elif isinstance(f, Delta):
        args = (f.aarg,)
    else:
        args = ()
    for s, a in enumerate(args):
        for w, c in a:
            if w == v:
                out.append((s, abs(c).numerator, abs(c).denominator))
    if isinstance(f, Coord) and f.v == v:
        out.append((-1, 1, 1))
    if isinstance(f, (Opaque, PowNF)) and v in factor_vars(f):
        out.append((-2, 1, 1))
    return out


def _canon_inner(m: Monomial) -> Monomial:
    """Canonicalize expressions nested inside opaque arguments and inverse
    bases, in their own name space so inner binders never collide with the
    outer canonical names."""
    changed = False
    fs = []
    for f, p in m.factors:
        if isinstance(f, Opaque) and f.args:
            nargs = tuple(normalize(a, strip=False, comp=False, denom=False,
                                    prefix=".i") for a in f.args)
            if nargs != f.args:
                f = Opaque(f.name, f.dorder, nargs)
                changed = True
        elif isinstance(f, PowNF):
            nb = normalize(f.base, strip=False, comp=False, denom=False,
                           prefix=".i")
            if nb != f.base:
                f = PowNF(nb, f.exp)
                changed = True
        fs.append((f, p))
    if not changed:
        return m
    return Monomial(m.coeff, m.binders, tuple(fs))


def canonical_monomial(m: Monomial, prefix: str = ".c") -> Monomial:
    m = _canon_inner(m)
    m = _resort(m)
    used = mono_all_vars(m)
    loose = [b for b in m.binders if b not in used]
    if loose and m.coeff != 0:
        raise UnsupportedFragment(
            f"integral over unused variable(s) {[b.name for b in loose]}")
    if loose:
        m = Monomial(m.coeff, tuple(b for b in m.binders if b in used),
                     m.factors)
    return _canon_names(m, prefix)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _expand_pows(m: Monomial) -> Expr | None:
    for i, (f, p) in enumerate(m.factors):
        if not isinstance(f, PowNF):
            continue
        base = normalize(f.base, strip=False, prefix=".i")
        rest = m.factors[:i] + m.factors[i + 1:]
        if f.exp >= 1:
            out = Expr((Monomial(m.coeff, m.binders, rest),))
            for _ in range(f.exp * p):
                out = mul(out, base)
            return out
        if f.exp < -1:
            nf = (PowNF(base, -1), -f.exp * p)
            return Expr((Monomial(m.coeff, m.binders, rest + (nf,)),))
        if base != f.base:
            return Expr((Monomial(m.coeff, m.binders,
                                  rest + ((PowNF(base, f.exp), p),)),))
    return None


def _norm_opaque_args(m: Monomial) -> Expr | None:
    for i, (f, p) in enumerate(m.factors):
        if isinstance(f, Opaque) and f.args:
            nargs = tuple(normalize(a, strip=False, prefix=".i")
                          for a in f.args)
            if nargs != f.args:
                nf = Opaque(f.name, f.dorder, nargs)
                return Expr((Monomial(m.coeff, m.binders,
                                      m.factors[:i] + ((nf, p),)
                                      + m.factors[i + 1:]),))
    return None


def _common_denominator(e: Expr) -> Expr:
    """Equalize negative powers of each inverse base across monomials.

    Monomials carrying base^(-k) are brought to the maximal power seen for
    that base by multiplying with expanded copies of the base, so rational
    combinations with a common denominator cancel at the merge step.
    """
    from .expr import ser_expr
    bases: dict = {}
    for m in e.terms:
        for f, p in m.factors:
            if isinstance(f, PowNF) and f.exp == -1:
                key = ser_expr(f.base, lambda v: (v.name, v.kind, v.dim))
                bases.setdefault(key, [f.base, 0])
                bases[key][1] = max(bases[key][1], p)
    if not bases:
        return e
    changed = False
    out = []
    for m in e.terms:
        extra = []
        nf = []
        for f, p in m.factors:
            if isinstance(f, PowNF) and f.exp == -1:
                key = ser_expr(f.base, lambda v: (v.name, v.kind, v.dim))
                base, K = bases[key]
                if p < K:
                    extra.append((base, K - p))
                    nf.append((f, K))
                    changed = True
                    continue
            nf.append((f, p))
        term = Expr((Monomial(m.coeff, m.binders, tuple(nf)),))
        for base, times in extra:
            for _ in range(times):
                term = mul(term, base)
        out.extend(term.terms)
    if not changed:
        return e
    return Expr(tuple(out))


def normalize(e, strip: bool = True, comp: bool = True,
              denom: bool = True, prefix: str = ".c") -> Expr:
    """Rewrite to the canonical merged normal form."""
    e = as_expr(e)
    work = list(e.terms)
    done = []
    budget = PASS_BUDGET
    while work:
        budget -= 1
        if budget < 0:
            raise UnsupportedFragment("normalization pass budget exceeded")
        m = work.pop()
        if m.coeff == 0:
            continue
        step = _expand_pows(m)
        if step is None:
            step = _norm_opaque_args(m)
        if step is None:
            step = _delta_step(m)
        if step is None:
            step = _free_delta_sub(m)
        if step is None and strip:
            step = _slot_strip_step(m)
        if step is None and comp:
            step = _comp_step(m)
        if step is None:
            done.append(m)
        else:
            work.extend(step.terms)
    merged: dict = {}
    for m in done:
        cm = canonical_monomial(m, prefix)
        key = ser_monomial(Monomial(Fraction(1), cm.binders, cm.factors),
                           lambda v: (v.name, v.kind, v.dim))
        if key in merged:
            prev = merged[key]
            merged[key] = Monomial(prev.coeff + cm.coeff, prev.binders,
                                   prev.factors)
        else:
            merged[key] = cm
    out = tuple(merged[k] for k in sorted(merged.keys())
                if merged[k].coeff != 0)
    result = Expr(out)
    if denom:
        eq = _common_denominator(result)
        if eq is not result:
            result = normalize(eq, strip=strip, comp=comp, denom=False,
                               prefix=prefix)
    return result


# ---------------------------------------------------------------------------
# Zero test
# ---------------------------------------------------------------------------


def _mono_key(m: Monomial):
    return ser_monomial(Monomial(Fraction(1), m.binders, m.factors),
                        lambda v: (v.name, v.kind, v.dim))


def _is_strictly_local(m: Monomial) -> bool:
    """All factor arguments are bare binder variables (coefficient one)."""
    bound = set(m.binders)
    for f, _ in m.factors:
        if isinstance(f, (FieldEval, SlotSym)):
            for a in f.args:
                if len(a) != 1 or a[0][1] != 1 or a[0][0] not in bound:
                    return False
        elif isinstance(f, Delta):
            return False
        elif isinstance(f, (Opaque, PowNF)):
            if any(v in bound for v in factor_vars(f)):
                return False
    return True


def _euler_families(e: Expr):
    fams = set()
    for m in e.terms:
        for f, _ in m.factors:
            if isinstance(f, FieldEval):
                fams.add((f.field, len(f.args), f.sym))
            elif isinstance(f, SlotSym):
                fams.add(("slot:" + f.functional + ":" + f.field,
                          len(f.args), f.sym))
    return fams


def _euler_zero(e: Expr) -> bool:
    """Variational criterion: a strictly local integrand integrates to zero
    for all field configurations iff every Euler operator annihilates it."""
    fams = _euler_families(e)
    for fam, nargs, sym in fams:
        probes: dict = {}  # arg kinds -> shared fresh point vars
        acc = ZERO
        for m in e.terms:
            for i, (f, p) in enumerate(m.factors):
                name = (f.field if isinstance(f, FieldEval)
                        else "slot:" + f.functional + ":" + f.field) \
                    if isinstance(f, (FieldEval, SlotSym)) else None
                if name != fam:
                    continue
                occ_vars = tuple(a[0][0] for a in f.args)
                sigkinds = tuple((v.kind, v.dim) for v in occ_vars)
                if sigkinds not in probes:
                    from .expr import fresh_var
                    probes[sigkinds] = tuple(fresh_var(k, d, "e")
                                             for k, d in sigkinds)
                pts = probes[sigkinds]
                rest = m.factors[:i] + ((f, p - 1),) * (p > 1) \
                    + m.factors[i + 1:]
                term = Expr((Monomial(m.coeff * p, m.binders, rest),))
                for (s, c) in f.deriv:
                    v = f.args[s][0][0]
                    nterm = ZERO
                    for t in term.terms:
                        nterm = nterm + scale(d_bound(t, v, c), Fraction(-1))
                    term = nterm
                # evaluate at the shared probe point: unbind and substitute
                moved = ZERO
                for t in term.terms:
                    nb = tuple(b for b in t.binders if b not in occ_vars)
                    mapping = {v: arg_of(pts[k])
                               for k, v in enumerate(occ_vars)}
                    moved = moved + subst_monomial(
                        Monomial(t.coeff, nb, t.factors), mapping)
                acc = acc + moved
        if not normalize(acc, strip=False, comp=False).is_syntactic_zero():
            return False
    return True


def _parents(m: Monomial):
    out = []
    for i, (f, p) in enumerate(m.factors):
        if isinstance(f, (FieldEval, SlotSym)) and f.deriv and p == 1:
            hit = _strippable(f, m)
            if hit is None:
                continue
            s, c, v, kappa = hit
            nd = list(f.deriv)
            nd.remove((s, c))
            if isinstance(f, SlotSym):
                lf = SlotSym(f.functional, f.field, f.args, tuple(nd), f.sym)
            else:
                lf = FieldEval(f.field, f.args, tuple(nd), f.sym)
            out.append((Monomial(Fraction(1), m.binders,
                                 m.factors[:i] + ((lf, 1),) + m.factors[i + 1:]),
                        v, c))
        elif isinstance(f, Opaque) and len(f.args) == 1 and f.dorder \
                and f.dorder[0] > 0:
            key = _carrier_key(Opaque(f.name, (0,), f.args))
            if key is None:
                continue
            for j, (g, q) in enumerate(m.factors):
                if not isinstance(g, FieldEval) or len(g.deriv) != 1:
                    continue
                if ("fe", g.field, g.args, g.sym) != key:
                    continue
                (s, c) = g.deriv[0]
                vs = [(w, k) for w, k in g.args[s] if w in set(m.binders)]
                if len(vs) != 1:
                    continue
                v, _k = vs[0]
                lf = Opaque(f.name, (f.dorder[0] - 1,), f.args)
                rest = list(m.factors)
                rest[i] = (lf, p)
                if q == 1:
                    del rest[j]
                else:
                    rest[j] = (g, q - 1)
                out.append((Monomial(Fraction(1), m.binders, tuple(rest)),
                            v, c))
    return out


def total_derivative_reduce(e: Expr, rounds: int = 2):
    """Reduce e modulo total derivatives of parent monomials (bounded).

    Returns (vec, monos): the reduced coefficient vector and a key-to-monomial
    table for rendering the representative back into an expression.
    """
    vec: dict = {}
    monos: dict = {}
    for m in e.terms:
        k = _mono_key(m)
        vec[k] = vec.get(k, Fraction(0)) + m.coeff
        monos[k] = m
    vec = {k: c for k, c in vec.items() if c != 0}
    if not vec:
        return {}, monos
    seen = set()
    relations = []
    frontier = list(e.terms)
    for _ in range(rounds):
        nxt = []
        for m in frontier:
            for parent, v, c in _parents(m):
                pk = (_mono_key(parent), v.name, c)
                if pk in seen:
                    continue
                seen.add(pk)
                rel = normalize(d_bound(parent, v, c))
                row: dict = {}
                for t in rel.terms:
                    tk = _mono_key(t)
                    row[tk] = row.get(tk, Fraction(0)) + t.coeff
                    monos.setdefault(tk, t)
                row = {k: q for k, q in row.items() if q != 0}
                if row:
                    relations.append(row)
                    nxt.extend(rel.terms)
        frontier = nxt
    pivots: dict = {}
    for row in relations:
        row = dict(row)
        for pk in sorted(pivots.keys(), reverse=True):
            if pk in row:
                fac = row.pop(pk)
                for k, q in pivots[pk].items():
                    row[k] = row.get(k, Fraction(0)) - fac * q
                    if row[k] == 0:
                        del row[k]
        if not row:
            continue
        pk = max(row.keys())
        pv = row.pop(pk)
        pivots[pk] = {k: q / pv for k, q in row.items()}
    for pk in sorted(pivots.keys(), reverse=True):
        if pk in vec:
            fac = vec.pop(pk)
            for k, q in pivots[pk].items():
                vec[k] = vec.get(k, Fraction(0)) - fac * q
                if vec[k] == 0:
                    del vec[k]
    return vec, monos


def reduce_modulo_exact(e, rounds: int = 2) -> Expr:
    """Normalize, then eliminate combinations that are total derivatives."""
    e = normalize(e)
    if not e.terms:
        return e
    vec, monos = total_derivative_reduce(e, rounds)
    out = []
    for k in sorted(vec.keys()):
        m = monos[k]
        out.append(Monomial(vec[k], m.binders, m.factors))
    return Expr(tuple(out))


def is_zero(e) -> bool:
    """Semantic zero test within the supported fragment."""
    e = normalize(e)
    if not e.terms:
        return True
    strata: dict = {}
    for m in e.terms:
        sig = tuple(sorted((b.kind, b.dim) for b in m.binders))
        strata.setdefault(sig, []).append(m)
    for sig, monos in strata.items():
        sub = Expr(tuple(monos))
        if all(_is_strictly_local(m) for m in monos) and sig:
            if _euler_zero(sub):
                continue
        if total_derivative_reduce(sub)[0]:
            return False
    return True


def equal(e1, e2) -> bool:
    """Semantic equality modulo the engine's identification rules."""
    return is_zero(as_expr(e1) - as_expr(e2))
