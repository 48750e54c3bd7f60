"""Projection maps between levels and bracket projection with closure
detection.

A projection map declares each lower-level field as a functional of the
higher-level fields.  Projecting a bracket substitutes the chain rule for
the functional-derivative slots, normalizes, and then runs a recognizer that
rewrites surviving integrals of higher-level fields as evaluations of
lower-level fields.  Four recognizer kinds cover the catalog:

  comb    moments of an N-particle distribution against sums of delta combs
          (one-particle and k-particle reductions, symmetrization);
  weight  single-particle moments (mass / momentum / entropy weights and
          the second-moment weights of pair densities);
  local   pointwise definitions (species sums, with an optional opaque
          local correction term);
  subst   invertible changes of field families given by explicit formulas.

Whatever the recognizer cannot express in lower-level fields becomes the
closure residual, with fresh named moment symbols for readability.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dfield
from fractions import Fraction
from typing import Optional

from .errors import IncompatibleLevels, UnsupportedFragment
from .fields import INDEFINITE, FieldSpec, LevelSpec, parity_of
from .kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                          PowNF, SlotSym, Var, ZERO, arg_of, as_expr,
                          diff_expr, fresh_var, integral, mono_all_vars, mul,
                          scale, ser_monomial, subst_expr, subst_monomial)
from .kernel.fderiv import functional_derivative
from .kernel.normalize import (canonical_monomial, is_zero, normalize,
                               reduce_modulo_exact, strip_step)
from .brackets import (Abstract, BilinearTerm, BracketForm, ClosureOutcome,
                       Slot)


@dataclass(frozen=True)
class ProjectionMap:
    source: LevelSpec
    target: LevelSpec
    kind: str
    defs: dict  # target comp -> (point vars, defining Expr in source fields)
    meta: dict = dfield(default_factory=dict)
    name: str = ""

    def definition(self, comp: str):
        return self.defs[comp]

    def dpi(self, comp: str, source_comp: str, probes):
        """Variational derivative of the definition of `comp`."""
        ptvars, expr = self.defs[comp]
        return functional_derivative(expr, source_comp, probes)


def make_projection(source, target, kind, defs, meta=None, name="",
                    check_parity=True) -> ProjectionMap:
    """Validate and build a projection map.

    The stored variational derivatives are recomputed from the definitions
    (self-consistency is by construction) and target parities are
    cross-checked against the parity of the defining integrand.
    """
    meta = dict(meta or {})
    pm = ProjectionMap(source, target, kind, dict(defs), meta, name)
    if check_parity:
        for comp, (ptvars, expr) in pm.defs.items():
            spec = target.component_owner(comp)
            par = parity_of(expr, source)
            if par is not INDEFINITE and par != spec.parity:
                raise IncompatibleLevels(
                    f"declared parity of {comp} is {spec.parity} but its "
                    f"definition has parity {par}")
    return pm


# ---------------------------------------------------------------------------
# Chain rule
# ---------------------------------------------------------------------------


def chain_rule_substitute(func: str, pm: ProjectionMap, source_comp: str,
                          point, deriv=()) -> Expr:
    """dF/dx(point) for a functional F of the lower level, written as
    sum_a int (d pi^a / dx)(point) * F_{y^a}."""
    spec = pm.source.component_owner(source_comp)
    probes = tuple(fresh_var(k, d, "z") for k, d in spec.base.slots)
    total = ZERO
    for comp, (ptvars, expr) in pm.defs.items():
        g = pm.dpi(comp, source_comp, probes)
        if g.is_syntactic_zero():
            continue
        for (s, c) in deriv:
            g = diff_expr(g, probes[s], c)
        # rename the definition's free point variables before the evaluation
        # point is substituted, so shared names cannot capture
        fresh_pts = tuple(fresh_var(v.kind, v.dim, "w") for v in ptvars)
        g = subst_expr(g, {v: arg_of(w) for v, w in zip(ptvars, fresh_pts)})
        pt = [p if not isinstance(p, Var) else arg_of(p) for p in point]
        g = subst_expr(g, {probes[s]: pt[s] for s in range(len(pt))})
        tspec = pm.target.component_owner(comp)
        slot = SlotSym(func, comp, tuple(arg_of(w) for w in fresh_pts), (),
                       tspec.sym_blocks)
        total = total + integral(fresh_pts, mul(g, as_expr(slot)))
    return total


# ---------------------------------------------------------------------------
# Recognizers
# ---------------------------------------------------------------------------


def _strip_source_derivs(e: Expr, sources: set) -> Expr:
    """Move derivatives off source-field evaluations by parts."""
    pred = lambda f: isinstance(f, FieldEval) and f.field in sources
    work = list(e.terms)
    out = []
    guard = 0
    while work:
        guard += 1
        if guard > 200000:
            raise UnsupportedFragment("source-derivative stripping diverges")
        m = work.pop()
        step = strip_step(m, pred)
        if step is None:
            out.append(m)
        else:
            work.extend(step.terms)
    return normalize(Expr(tuple(out)), strip=False)


def _blocks_of(spec: FieldSpec):
    slots = spec.base.slots
    assert len(slots) % 2 == 0
    return [(2 * b, 2 * b + 1) for b in range(len(slots) // 2)]


def _source_factor(m: Monomial, source: str):
    for i, (f, p) in enumerate(m.factors):
        if isinstance(f, FieldEval) and f.field == source:
            return i, f, p
    return None


def _recognize_comb(e: Expr, pm: ProjectionMap):
    """Delta-comb moments of an N-particle distribution function."""
    source = pm.meta["source_comp"]
    spec = pm.source.component_owner(source)
    N = pm.meta["N"]
    targets = pm.meta["targets"]  # list of (comp, k, positions or None)
    symmetric = spec.sym_blocks > 0
    fresh = {}
    rewritten = []
    residual = []
    unresolved = []

    def target_for(k, S):
        for comp, kk, positions in targets:
            if kk != k:
                continue
            if positions is not None and any(b not in positions for b in S):
                continue
            return comp, positions
        return None, None

    if symmetric:
        for m in e.terms:
            hit = _source_factor(m, source)
            if hit is None:
                rewritten.append(Expr((m,)))
                continue
            i, f, p = hit
            if p != 1 or f.deriv:
                residual.append(Expr((m,)))
                continue
            blocks = _blocks_of(spec)
            touched = []
            othervars = set()
            for j, (g, _) in enumerate(m.factors):
                if j != i:
                    othervars |= {v for v in mono_all_vars(
                        Monomial(Fraction(1), (), ((g, 1),)))}
            for b, (sr, sp) in enumerate(blocks):
                vs = {v for a in (f.args[sr], f.args[sp]) for v, _ in a}
                if vs & othervars:
                    touched.append(b)
            k = len(touched)
            comp, _pos = target_for(k, touched)
            is_fresh = False
            if comp is None:
                comp = fresh.setdefault(k, f"moment{k}")
                is_fresh = True
            weight = Fraction(1)
            for j in range(k):
                weight /= (N - j)
            keepvars = []
            args = []
            for b in touched:
                sr, sp = _blocks_of(spec)[b]
                args.extend([f.args[sr], f.args[sp]])
                keepvars.extend([v for a in (f.args[sr], f.args[sp])
                                 for v, _ in a])
            dropvars = set()
            for b in range(N):
                if b not in touched:
                    sr, sp = _blocks_of(spec)[b]
                    dropvars |= {v for a in (f.args[sr], f.args[sp])
                                 for v, _ in a}
            binders = tuple(b for b in m.binders if b not in dropvars)
            nf = FieldEval(comp, tuple(args), (), 2 if k > 1 else 0)
            nm = Monomial(m.coeff * weight, binders,
                          m.factors[:i] + ((nf, 1),) + m.factors[i + 1:])
            if is_fresh:
                residual.append(Expr((nm,)))
                if comp not in unresolved:
                    unresolved.append(comp)
            else:
                rewritten.append(Expr((nm,)))
        return _sum(rewritten), residual, unresolved

    if pm.meta.get("full_sym"):
        return _recognize_full_sym(e, pm)

    # non-symmetric: group comb instances over block positions
    buckets: dict = {}
    passthrough = []
    for m in e.terms:
        hit = _source_factor(m, source)
        if hit is None:
            passthrough.append(Expr((m,)))
            continue
        i, f, p = hit
        if p != 1 or f.deriv:
            residual.append(Expr((m,)))
            continue
        blocks = _blocks_of(spec)
        othervars = set()
        for j, (g, _) in enumerate(m.factors):
            if j != i:
                othervars |= {v for v in mono_all_vars(
                    Monomial(Fraction(1), (), ((g, 1),)))}
        touched = []
        for b, (sr, sp) in enumerate(blocks):
            vs = {v for a in (f.args[sr], f.args[sp]) for v, _ in a}
            if vs & othervars:
                touched.append(b)
        mapping = {}
        placeholders = []
        ok = True
        for j, b in enumerate(touched):
            sr, sp = blocks[b]
            for tag, s in (("r", sr), ("p", sp)):
                a = f.args[s]
                if len(a) != 1 or a[0][1] != 1 or a[0][0] not in m.binders:
                    ok = False
                    break
                v = a[0][0]
                pl = Var(f".pl{j}{tag}", v.kind, v.dim)
                mapping[v] = arg_of(pl)
                placeholders.append(pl)
            if not ok:
                break
        if not ok:
            residual.append(Expr((m,)))
            continue
        dropvars = {a[0][0] for s in range(len(spec.base.slots))
                    for a in [f.args[s]] if len(a) == 1} - set(mapping)
        binders = tuple(b for b in m.binders
                        if b not in dropvars and b not in mapping)
        probe = Monomial(Fraction(1), binders,
                         m.factors[:i] + m.factors[i + 1:])
        probe_e = subst_monomial(probe, mapping)
        probe_n = normalize(probe_e, strip=False, comp=False)
        if len(probe_n.terms) != 1:
            residual.append(Expr((m,)))
            continue
        key = ser_monomial(Monomial(Fraction(1), probe_n.terms[0].binders,
                                    probe_n.terms[0].factors),
                           lambda v: (v.name, v.kind, v.dim))
        buckets.setdefault(key, []).append(
            (tuple(touched), m.coeff * probe_n.terms[0].coeff,
             probe_n.terms[0], tuple(placeholders)))
    for key, entries in buckets.items():
        k = len(entries[0][0])
        comp, positions = target_for(k, entries[0][0])
        allowed = positions if positions is not None else list(range(N))
        want = set(itertools.permutations(allowed, k))
        got = {S for S, _, _, _ in entries}
        coeffs = {c for _, c, _, _ in entries}
        if comp is not None and got == want and len(coeffs) == 1:
            S, c, probe, pls = entries[0]
            tspec = pm.target.component_owner(comp)
            nf = FieldEval(comp, tuple(arg_of(v) for v in pls), (),
                           tspec.sym_blocks)
            nm = Monomial(c, probe.binders + pls,
                          probe.factors + ((nf, 1),))
            rewritten.append(Expr((nm,)))
        else:
            for S, c, probe, pls in entries:
                nm = Monomial(c, probe.binders + pls, probe.factors + ((
                    FieldEval(f"marginal{''.join(str(b) for b in S)}",
                              tuple(arg_of(v) for v in pls), (), 0), 1),))
                residual.append(Expr((nm,)))
                tagname = f"marginal{''.join(str(b) for b in S)}"
                if tagname not in unresolved:
                    unresolved.append(tagname)
    rewritten.extend(passthrough)
    return _sum(rewritten), residual, unresolved


def _recognize_full_sym(e: Expr, pm: ProjectionMap):
    """Replace the distribution by its symmetrization when the complete
    cofactor multiset is invariant under particle-block permutations."""
    source = pm.meta["source_comp"]
    spec = pm.source.component_owner(source)
    N = pm.meta["N"]
    (target, _, _), = pm.meta["targets"]
    tspec = pm.target.component_owner(target)
    keyed: dict = {}
    rewritten, residual = [], []
    items = []
    for m in e.terms:
        hit = _source_factor(m, source)
        if hit is None:
            rewritten.append(Expr((m,)))
            continue
        i, f, p = hit
        if p != 1 or f.deriv:
            residual.append(Expr((m,)))
            continue
        blocks = _blocks_of(spec)
        mapping = {}
        ok = True
        pls = []
        for b, (sr, sp) in enumerate(blocks):
            for tag, sl in (("r", sr), ("p", sp)):
                a = f.args[sl]
                if len(a) != 1 or a[0][1] != 1 or a[0][0] not in m.binders:
                    ok = False
                    break
                v = a[0][0]
                pl = Var(f".fs{b}{tag}", v.kind, v.dim)
                mapping[v] = arg_of(pl)
                pls.append(pl)
            if not ok:
                break
        if not ok:
            residual.append(Expr((m,)))
            continue
        probe = Monomial(Fraction(1), (), m.factors[:i] + m.factors[i + 1:])
        pe = normalize(subst_monomial(probe, mapping), strip=False,
                       comp=False)
        if len(pe.terms) != 1:
            residual.append(Expr((m,)))
            continue
        key = ser_monomial(canonical_monomial(pe.terms[0]), _namer)
        keyed[key] = keyed.get(key, Fraction(0)) + m.coeff * pe.terms[0].coeff
        items.append((m, i, f, mapping, pls, key, pe.terms[0].coeff))
    # permutation closure of the keyed multiset
    closed = True
    for m, i, f, mapping, pls, key, pc in items:
        for perm in itertools.permutations(range(N)):
            pmap = {}
            for b in range(N):
                for tag in ("r", "p"):
                    src_v = Var(f".fs{b}{tag}",
                                "pos" if tag == "r" else "mom",
                                pm.source.dim)
                    dst_v = Var(f".fs{perm[b]}{tag}", src_v.kind, src_v.dim)
                    pmap[src_v] = arg_of(dst_v)
            probe = Monomial(Fraction(1), (),
                             m.factors[:i] + m.factors[i + 1:])
            pe = normalize(subst_monomial(subst_monomial(
                probe, mapping).terms[0], pmap), strip=False, comp=False)
            pk = ser_monomial(canonical_monomial(pe.terms[0]), _namer)
            if keyed.get(pk) != keyed[key]:
                closed = False
                break
        if not closed:
            break
    if closed:
        for m, i, f, mapping, pls, key, pc in items:
            nf = FieldEval(target, f.args, (), tspec.sym_blocks)
            rewritten.append(Expr((Monomial(
                m.coeff, m.binders,
                m.factors[:i] + ((nf, 1),) + m.factors[i + 1:]),)))
        return _sum(rewritten), residual, []
    for m, i, f, mapping, pls, key, pc in items:
        residual.append(Expr((m,)))
    return _sum(rewritten), residual, [target + "?"]


def _pattern_variants(pm: ProjectionMap, comp: str, max_order: int = 2):
    """Single-monomial derivative variants of a moment definition."""
    ptvars, expr = pm.defs[comp]
    base = normalize(expr, strip=False)
    variants = []
    idx = [(v, c) for v in ptvars for c in range(v.dim)]
    for order in range(0, max_order + 1):
        for combo in itertools.combinations_with_replacement(idx, order):
            d = base
            for v, c in combo:
                d = diff_expr(d, v, c)
            d = normalize(d, strip=False)
            if len(d.terms) != 1:
                continue
            variants.append((d.terms[0], tuple(combo)))
    return variants


def _match_pattern(m: Monomial, pat: Monomial, ptvars, pm):
    """Try to match the pattern monomial inside m; return rewrite or None."""
    # anchor: first FieldEval factor of the pattern
    anchor = None
    for f, p in pat.factors:
        if isinstance(f, (FieldEval, Opaque)):
            anchor = (f, p)
            break
    if anchor is None:
        return None
    af, ap = anchor

    def anchor_name(f):
        if isinstance(f, FieldEval):
            return ("fe", f.field)
        return ("op", f.name, f.dorder)

    for i, (f, p) in enumerate(m.factors):
        if type(f) is not type(af) or p < ap:
            continue
        if anchor_name(f) != anchor_name(af):
            continue
        hit = _unify_factor(f, af, set(pat.binders), set(ptvars),
                            set(m.binders))
        if hit is None:
            continue
        mapping, transfers = hit
        ok = True
        used = {i: ap}
        for pf, pp in pat.factors:
            if pf is af:
                continue
            img = _image_factor(pf, mapping)
            found = False
            for j, (g, q) in enumerate(m.factors):
                if used.get(j, 0) + pp <= q or (j not in used and pp <= q):
                    from .kernel.expr import ser_factor
                    if ser_factor(g, _namer) == ser_factor(img, _namer):
                        used[j] = used.get(j, 0) + pp
                        found = True
                        break
            if not found:
                ok = False
                break
        if not ok:
            continue
        # consumed binders must not occur outside matched factors
        consumed = {mapping[v][0][0] for v in pat.binders if v in mapping}
        leftover = []
        for j, (g, q) in enumerate(m.factors):
            rem = q - used.get(j, 0)
            if rem < 0:
                ok = False
                break
            if rem:
                leftover.append((g, rem))
        if not ok:
            continue
        bad = False
        for g, q in leftover:
            from .kernel.expr import factor_vars
            if factor_vars(g) & consumed:
                bad = True
                break
        if bad:
            continue
        return mapping, used, leftover, consumed, transfers
    return None


_namer = lambda v: (v.name, v.kind, v.dim)


def _unify_factor(f, pf, pat_bound, pat_free, m_bound):
    """Unify a candidate factor with a pattern factor; map pattern vars."""
    mapping = {}
    if isinstance(pf, FieldEval):
        if not isinstance(f, FieldEval) or f.field != pf.field:
            return None
        if len(f.args) != len(pf.args):
            return None
        # pattern derivatives must all be present; the surplus may transfer
        remaining = list(f.deriv)
        for dv in pf.deriv:
            if dv not in remaining:
                return None
            remaining.remove(dv)
        extra = remaining
        transfers = []
        # extra derivatives allowed only on slots bound to free pattern vars
        for s, a in enumerate(pf.args):
            fa = f.args[s]
            if len(a) != 1 or len(fa) != 1:
                return None
            (pv, pc), (mv, mc) = a[0], fa[0]
            if pc != mc:
                return None
            if pv in mapping and mapping[pv] != arg_of(mv):
                return None
            mapping[pv] = arg_of(mv)
            if pv in pat_bound and mv not in m_bound:
                return None
        for (s, c) in extra:
            pv = pf.args[s][0][0]
            if pv in pat_bound:
                return None
            if pv.kind != "pos":
                return None
            transfers.append((pv, c))
        return mapping, transfers
    if isinstance(pf, Opaque):
        if not isinstance(f, Opaque) or f.name != pf.name \
                or f.dorder != pf.dorder:
            return None
        if len(f.args) != len(pf.args):
            return None
        for pa, fa in zip(pf.args, f.args):
            sub = _unify_expr(fa, pa, pat_bound, pat_free, m_bound, mapping)
            if sub is None:
                return None
        return mapping, []
    return None


def _unify_expr(fe: Expr, pe: Expr, pat_bound, pat_free, m_bound, mapping):
    """Structural unification of opaque arguments (single-monomial bodies)."""
    if len(fe.terms) != len(pe.terms):
        return None
    for ft, pt in zip(fe.terms, pe.terms):
        if ft.coeff != pt.coeff or len(ft.factors) != len(pt.factors):
            return None
        for (ff, fp), (pf, pp) in zip(ft.factors, pt.factors):
            if fp != pp:
                return None
            if isinstance(pf, FieldEval) and isinstance(ff, FieldEval):
                hit2 = _unify_factor(ff, pf, pat_bound | set(pt.binders),
                                     pat_free, m_bound | set(ft.binders))
                if hit2 is None or hit2[1]:
                    return None
                sub = hit2[0]
                for k, v in sub.items():
                    if k in mapping and mapping[k] != v:
                        return None
                    if k not in pt.binders:
                        mapping[k] = v
            else:
                from .kernel.expr import ser_factor
                if ser_factor(pf, _namer) != ser_factor(ff, _namer):
                    return None
    return mapping


def _image_factor(pf, mapping):
    e = subst_monomial(Monomial(Fraction(1), (), ((pf, 1),)), mapping)
    if len(e.terms) != 1 or len(e.terms[0].factors) != 1 \
            or e.terms[0].coeff != 1:
        raise UnsupportedFragment("pattern factor does not map to a factor")
    return e.terms[0].factors[0][0]


def _recognize_weight(e: Expr, pm: ProjectionMap):
    source_comps = set(pm.meta.get("source_comps")
                       or pm.source.components())
    patterns = []
    for comp in pm.defs:
        for pat, deriv in _pattern_variants(pm, comp,
                                            pm.meta.get("max_order", 2)):
            patterns.append((comp, pat, pm.defs[comp][0], deriv))
    # prefer more specific patterns (more factors, then more derivatives)
    patterns.sort(key=lambda t: (-len(t[1].factors), -len(t[3])))
    out = []
    residual = []
    for m in e.terms:
        cur = m
        changed = True
        guard = 0
        while changed:
            changed = False
            guard += 1
            if guard > 64:
                raise UnsupportedFragment("weight recognition diverges")
            for comp, pat, ptvars, deriv in patterns:
                hit = _match_pattern(cur, pat, ptvars, pm)
                if hit is None:
                    continue
                mapping, used, leftover, consumed, transfers = hit
                tspec = pm.target.component_owner(comp)
                pt = tuple(mapping[v] for v in ptvars)
                dmap = tuple(sorted(
                    [(ptvars.index(v), c) for (v, c) in deriv]
                    + [(ptvars.index(v), c) for (v, c) in transfers]))
                nf = FieldEval(comp, pt, dmap, tspec.sym_blocks)
                binders = tuple(b for b in cur.binders if b not in consumed)
                ratio = cur.coeff / pat.coeff
                cur = Monomial(ratio, binders,
                               tuple(leftover) + ((nf, 1),))
                changed = True
                break
        bad = any(isinstance(f, FieldEval) and f.field in source_comps
                  for f, _ in cur.factors)
        (residual if bad else out).append(Expr((cur,)))
    return _sum(out), residual, []


def _recognize_local(e: Expr, pm: ProjectionMap):
    groups = []
    shared = set()
    for comp, (ptvars, expr) in pm.defs.items():
        ne = normalize(expr, strip=False)
        members = []
        kpart = []
        for m in ne.terms:
            if len(m.factors) == 1 and isinstance(m.factors[0][0], FieldEval) \
                    and not m.factors[0][0].deriv and m.factors[0][1] == 1 \
                    and not m.binders:
                members.append((m.factors[0][0].field, m.coeff))
            else:
                kpart.append(m)
        if len(members) == 1 and members[0][0] == comp and not kpart:
            shared.add(comp)
            continue
        groups.append((comp, ptvars, members,
                       Expr(tuple(kpart)) if kpart else None))
    member_of = {}
    for gi, (comp, ptvars, members, kpart) in enumerate(groups):
        for mc, c in members:
            member_of[mc] = gi

    buckets: dict = {}
    passthrough = []
    for m in e.terms:
        hit = None
        for i, (f, p) in enumerate(m.factors):
            if isinstance(f, FieldEval) and f.field in member_of and p == 1:
                hit = (member_of[f.field], i, f)
                break
        if hit is None:
            passthrough.append(m)
            continue
        gi, i, f = hit
        probe = canonical_monomial(Monomial(
            Fraction(1), m.binders,
            m.factors[:i] + ((FieldEval("__mk__", f.args, f.deriv), 1),)
            + m.factors[i + 1:]))
        key = (gi, ser_monomial(probe, _namer))
        slot = buckets.setdefault(key, {"probe": probe, "gi": gi,
                                        "coeffs": {}})
        slot["coeffs"][f.field] = slot["coeffs"].get(f.field, Fraction(0)) \
            + m.coeff

    out = [Expr(tuple(passthrough))]
    residual = []
    for key, data in buckets.items():
        gi = data["gi"]
        comp, ptvars, members, kpart = groups[gi]
        coeffs = data["coeffs"]
        probe = data["probe"]
        mi = next(i for i, (f, _) in enumerate(probe.factors)
                  if isinstance(f, FieldEval) and f.field == "__mk__")
        mk = probe.factors[mi][0]
        rest = probe.factors[:mi] + probe.factors[mi + 1:]
        base = None
        complete = set(coeffs) == {mc for mc, _ in members}
        if complete:
            vals = {coeffs[mc] / c for mc, c in members}
            complete = len(vals) == 1
            if complete:
                base = vals.pop()
        if complete:
            tspec = pm.target.component_owner(comp)
            nf = FieldEval(comp, mk.args, mk.deriv, tspec.sym_blocks)
            out.append(Expr((Monomial(base, probe.binders,
                                      rest + ((nf, 1),)),)))
            if kpart is not None:
                kx = _eval_local_at(kpart, ptvars, mk.args, mk.deriv)
                out.append(scale(
                    mul(Expr((Monomial(Fraction(1), probe.binders, rest),)),
                        kx), -base))
        else:
            for mc, c in coeffs.items():
                residual.append(Expr((Monomial(
                    c, probe.binders,
                    rest + ((FieldEval(mc, mk.args, mk.deriv), 1),)),)))
    resolved = _sum(out)
    unresolved = sorted({f.field for r in residual for m in r.terms
                         for f, _ in m.factors
                         if isinstance(f, FieldEval) and f.field in member_of})
    return resolved, residual, unresolved


def _eval_local_at(expr: Expr, ptvars, args, deriv) -> Expr:
    g = expr
    for (s, c) in deriv:
        g = diff_expr(g, ptvars[s], c)
    return subst_expr(g, {ptvars[s]: args[s] for s in range(len(ptvars))})


def _recognize_subst(e: Expr, pm: ProjectionMap):
    defs = pm.meta["subst"]
    out = []
    for m in e.terms:
        work = [m]
        while work:
            cur = work.pop()
            hit = None
            for i, (f, p) in enumerate(cur.factors):
                if isinstance(f, FieldEval) and f.field in defs:
                    hit = (i, f, p)
                    break
            if hit is None:
                out.append(Expr((cur,)))
                continue
            i, f, p = hit
            ptvars, expr = defs[f.field]
            g = _eval_local_at(expr, ptvars, f.args, f.deriv)
            rest = Expr((Monomial(cur.coeff, cur.binders,
                                  cur.factors[:i]
                                  + ((f, p - 1),) * (p > 1)
                                  + cur.factors[i + 1:]),))
            work.extend(mul(rest, g).terms)
    return _sum(out), [], []


def _sum(exprs) -> Expr:
    total = ZERO
    for x in exprs:
        total = total + x
    return total


_RECOGNIZERS = {
    "comb": _recognize_comb,
    "weight": _recognize_weight,
    "local": _recognize_local,
    "subst": _recognize_subst,
}


# ---------------------------------------------------------------------------
# Bracket projection
# ---------------------------------------------------------------------------


def project_expression(x: Expr, pm: ProjectionMap):
    """Normalize, recognize moments, and split closed/residual parts."""
    x = reduce_modulo_exact(x)
    sources = set(pm.source.components()) - set(pm.target.components())
    if pm.kind == "comb":
        # marginal recognition wants derivatives off the distribution;
        # moment-weight patterns instead match derived variants directly
        x = _strip_source_derivs(x, sources)
    rec, residual, unresolved = _RECOGNIZERS[pm.kind](x, pm)
    rec = reduce_modulo_exact(rec)
    closed_terms = []
    for m in rec.terms:
        bad = [f.field for f, _ in m.factors
               if isinstance(f, FieldEval) and f.field in sources]
        if bad:
            residual.append(Expr((m,)))
            for b in bad:
                if b not in unresolved:
                    unresolved.append(b)
        else:
            closed_terms.append(m)
    return Expr(tuple(closed_terms)), residual, unresolved


def project_bracket(L: BracketForm, pm: ProjectionMap) -> ClosureOutcome:
    """Push the bracket through the projection and decide closure."""
    if pm.source is not L.level and pm.source.name != L.level.name:
        raise IncompatibleLevels(
            f"projection from {pm.source.name}, bracket on {L.level.name}")
    if pm.kind == "staged":
        p1, p2 = pm.meta["stages"]
        first = project_bracket(L, p1)
        if not first.is_closed:
            return first
        return project_bracket(first.closed, p2)
    total = ZERO
    for t in L.terms:
        fa = chain_rule_substitute("A", pm, t.left.field, t.left.point,
                                   t.left.deriv)
        fb = chain_rule_substitute("B", pm, t.right.field, t.right.point,
                                   t.right.deriv)
        if fa.is_syntactic_zero() or fb.is_syntactic_zero():
            continue
        total = total + integral(t.binders, mul(t.coeff, mul(fa, fb)))
    closed, residual, unresolved = project_expression(total, pm)
    if residual:
        res = [reduce_modulo_exact(r) for r in residual]
        res = [r for r in res if r.terms]
        if res:
            return ClosureOutcome(None, tuple(res), tuple(unresolved))
    return ClosureOutcome(_rebuild_bracket(closed, pm.target, L.name), (), ())


def _rebuild_bracket(e: Expr, level: LevelSpec, name: str) -> BracketForm:
    terms = []
    for m in e.terms:
        slots = {}
        coeff_factors = []
        for f, p in m.factors:
            if isinstance(f, SlotSym):
                if p != 1 or f.functional in slots:
                    raise UnsupportedFragment(
                        "projected expression is not bilinear")
                slots[f.functional] = f
            else:
                coeff_factors.append((f, p))
        if set(slots) != {"A", "B"}:
            raise UnsupportedFragment(
                f"expected exactly one A and one B slot, got {set(slots)}")
        a, b = slots["A"], slots["B"]
        terms.append(BilinearTerm(
            m.binders, Expr((Monomial(m.coeff, (), tuple(coeff_factors)),)),
            Slot(a.field, a.deriv, a.args), Slot(b.field, b.deriv, b.args)))
    return BracketForm(level, tuple(terms), name=name + "->" + level.name)


def substitute_fields(expr: Expr, defs: dict) -> Expr:
    """Replace field evaluations by their defining expressions.

    `defs` maps component names to (point vars, expression); derivatives on
    the replaced evaluation are applied to the definition.
    """
    work = list(normalize(expr, strip=False).terms)
    out = ZERO
    guard = 0
    while work:
        guard += 1
        if guard > 100000:
            raise UnsupportedFragment("field substitution diverges")
        m = work.pop()
        hit = None
        for i, (f, p) in enumerate(m.factors):
            if isinstance(f, FieldEval) and f.field in defs:
                hit = (i, f, p)
                break
        if hit is None:
            out = out + Expr((m,))
            continue
        i, f, p = hit
        ptvars, de = defs[f.field]
        g = _eval_local_at(de, ptvars, f.args, f.deriv)
        rest = Expr((Monomial(m.coeff, m.binders,
                              m.factors[:i] + ((f, p - 1),) * (p > 1)
                              + m.factors[i + 1:]),))
        work.extend(mul(rest, g).terms)
    return out


def compose_projections(p1: ProjectionMap, p2: ProjectionMap,
                        name: str = "") -> ProjectionMap:
    """The composite map whose definitions are the second projection's
    moments written directly in the fields of the first projection's source.

    Bracket projection through the composite runs the two recognizers in
    stages; the composed definitions are what the map exports.
    """
    if p1.target.name != p2.source.name:
        raise IncompatibleLevels(
            f"{p1.name} lands on {p1.target.name}, {p2.name} starts on "
            f"{p2.source.name}")
    defs = {}
    for comp, (ptvars, expr) in p2.defs.items():
        defs[comp] = (ptvars, substitute_fields(expr, p1.defs))
    meta = {"stages": (p1, p2)}
    return ProjectionMap(p1.source, p2.target, "staged", dict(defs), meta,
                         name or f"{p1.name}*{p2.name}")
