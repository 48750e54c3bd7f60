"""Catalog of levels of description, brackets, projections and energies.

Every entry is constructible offline from stable identifiers.  Bracket
constructors emit both halves of each antisymmetric pair explicitly, so the
structural checks operate on literal term lists.  Dimensions default to 3;
derivations and the numeric layer may request lower-dimensional variants.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

from .errors import BadParams, NLimitExceeded, UnknownId
from .fields import (BaseSpace, EVEN, FieldSpec, LevelSpec, MOM, ODD, POS,
                     define_level, phase_space, position_space)
from .kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                          PowNF, SlotSym, Var, ZERO, arg_add, arg_of,
                          arg_scale, as_expr, integral, mul, scale, var)
from .kernel.fderiv import N_LIMIT
from .brackets import BilinearTerm, BracketForm, Slot
from .projection import ProjectionMap, make_projection

_LEVELS: dict = {}
_BRACKETS: dict = {}
_PROJECTIONS: dict = {}


def _cached(cache, key, maker):
    if key not in cache:
        cache[key] = maker()
    return cache[key]


# ---------------------------------------------------------------------------
# Levels
# ---------------------------------------------------------------------------


def level(id: str, **params) -> LevelSpec:
    key = (id, tuple(sorted(params.items())))
    return _cached(_LEVELS, key, lambda: _make_level(id, **params))


def _make_level(id: str, d: int = 3, N: int = 2, Nt: int = 2,
                K: int = 3) -> LevelSpec:
    if id == "liouville":
        if N > N_LIMIT:
            raise NLimitExceeded(str(N))
        return define_level(f"liouville{N}_d{d}",
                            [FieldSpec("fN", phase_space(d, N), EVEN)])
    if id == "sym_liouville":
        if N > N_LIMIT:
            raise NLimitExceeded(str(N))
        return define_level(
            f"sym_liouville{N}_d{d}",
            [FieldSpec("fNs", phase_space(d, N), EVEN,
                       particle_symmetric=(N > 1))])
    if id == "binary_liouville":
        if N + Nt > N_LIMIT:
            raise NLimitExceeded(str(N + Nt))
        return define_level(f"binary_liouville{N}_{Nt}_d{d}",
                            [FieldSpec("fNN", phase_space(d, N + Nt), EVEN)])
    if id == "boltzmann":
        return define_level(f"boltzmann_d{d}",
                            [FieldSpec("f", phase_space(d), EVEN)])
    if id == "binary_boltzmann":
        return define_level(f"binary_boltzmann_d{d}",
                            [FieldSpec("f", phase_space(d), EVEN),
                             FieldSpec("ft", phase_space(d), EVEN)])
    if id == "hydro":
        return define_level(f"hydro_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("u", position_space(d), ODD, rank=1),
            FieldSpec("s", position_space(d), EVEN)])
    if id == "binary_hydro":
        return define_level(f"binary_hydro_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("u", position_space(d), ODD, rank=1),
            FieldSpec("s", position_space(d), EVEN),
            FieldSpec("rhot", position_space(d), EVEN),
            FieldSpec("ut", position_space(d), ODD, rank=1),
            FieldSpec("st", position_space(d), EVEN)])
    if id == "cit":
        return define_level(f"cit_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("rhot", position_space(d), EVEN),
            FieldSpec("uT", position_space(d), ODD, rank=1),
            FieldSpec("sT", position_space(d), EVEN)])
    if id == "mech_equilibrium":
        return define_level(f"mech_equilibrium_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("rhot", position_space(d), EVEN),
            FieldSpec("sT", position_space(d), EVEN)])
    if id == "eit":
        return define_level(f"eit_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("rhot", position_space(d), EVEN),
            FieldSpec("u", position_space(d), ODD, rank=1),
            FieldSpec("ut", position_space(d), ODD, rank=1),
            FieldSpec("sT", position_space(d), EVEN)])
    if id == "two_point_kinetic":
        return define_level(f"two_point_kinetic_d{d}", [
            FieldSpec("rho1", phase_space(d), EVEN),
            FieldSpec("rho2", phase_space(d, 2), EVEN,
                      particle_symmetric=True)])
    if id == "bbgky_pair":
        return define_level(f"bbgky_pair_d{d}", [
            FieldSpec("f1", phase_space(d), EVEN),
            FieldSpec("f2", phase_space(d, 2), EVEN,
                      particle_symmetric=True)])
    if id == "gce":
        if K > N_LIMIT:
            raise NLimitExceeded(str(K))
        fields = [FieldSpec(f"e{n}", phase_space(d, n), EVEN,
                            particle_symmetric=(n > 1))
                  for n in range(1, K + 1)]
        return define_level(f"gce{K}_d{d}", fields)
    if id == "gce_rho":
        if K > N_LIMIT:
            raise NLimitExceeded(str(K))
        fields = [FieldSpec(f"rho{n}", phase_space(d, n), EVEN,
                            particle_symmetric=(n > 1))
                  for n in range(1, K + 1)]
        return define_level(f"gce_rho{K}_d{d}", fields)
    if id == "extended_hydro":
        return define_level(f"extended_hydro_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("u", position_space(d), ODD, rank=1),
            FieldSpec("s", position_space(d), EVEN),
            FieldSpec("b", position_space(d), EVEN, rank=2,
                      index_symmetric=True),
            FieldSpec("c", position_space(d), EVEN, rank=2,
                      index_symmetric=True),
            FieldSpec("w", position_space(d), ODD, rank=2)])
    if id == "correlation":
        return define_level(f"correlation_d{d}", [
            FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("u", position_space(d), ODD, rank=1),
            FieldSpec("s", position_space(d), EVEN),
            FieldSpec("g", BaseSpace(((POS, d), (POS, d))), EVEN,
                      particle_symmetric=False)])
    if id == "mechanics":
        # finite-dimensional canonical mechanics fibered over a dummy cell
        fields = []
        for k in range(N):
            fields.append(FieldSpec(f"Q{k}", position_space(d), EVEN, rank=1))
            fields.append(FieldSpec(f"P{k}", position_space(d), ODD, rank=1))
        return define_level(f"mechanics{N}_d{d}", fields)
    raise UnknownId(id)


# ---------------------------------------------------------------------------
# Bracket constructors
# ---------------------------------------------------------------------------


def _pair(binders, coeff, left, right):
    """A term and its swapped negative."""
    return [BilinearTerm(tuple(binders), coeff, left, right),
            BilinearTerm(tuple(binders), scale(coeff, -1), right, left)]


def _phase_vars(n, d, prefix="z"):
    return [var(f"{prefix}{s}", POS if s % 2 == 0 else MOM, d)
            for s in range(2 * n)]


def _kinetic_terms(lvl, comp, N, d, weight=Fraction(1), varprefix="z"):
    """sum_k int dZ w * x(Z) (d_r A_x d_p B_x - swap) for an N-particle comp."""
    Z = _phase_vars(N, d, varprefix)
    Zp = tuple(arg_of(v) for v in Z)
    coeff = scale(as_expr(lvl.eval(comp, *Z)), weight)
    terms = []
    for k in range(N):
        for c in range(d):
            l = Slot(comp, ((2 * k, c),), Zp)
            r = Slot(comp, ((2 * k + 1, c),), Zp)
            terms.extend(_pair(Z, coeff, l, r))
    return terms


def _hydro_terms(lvl, d, rho="rho", u="u", s="s", x=None):
    """The three groups of the classical hydrodynamic bracket."""
    x = x or var("x", POS, d)
    xp = (arg_of(x),)
    terms = []
    for i in range(d):
        terms.extend(_pair((x,), as_expr(lvl.eval(rho, x)),
                           Slot(rho, ((0, i),), xp), Slot(f"{u}.{i}", (), xp)))
        terms.extend(_pair((x,), as_expr(lvl.eval(s, x)),
                           Slot(s, ((0, i),), xp), Slot(f"{u}.{i}", (), xp)))
        for j in range(d):
            terms.extend(_pair((x,), as_expr(lvl.eval(f"{u}.{i}", x)),
                               Slot(f"{u}.{i}", ((0, j),), xp),
                               Slot(f"{u}.{j}", (), xp)))
    return terms


def bracket(id: str, **params) -> BracketForm:
    key = (id, tuple(sorted(params.items())))
    return _cached(_BRACKETS, key, lambda: _make_bracket(id, **params))


def _make_bracket(id: str, d: int = 3, N: int = 2, Nt: int = 2, K: int = 3,
                  taylor_order: int = 1) -> BracketForm:
    if id == "liouville":
        lvl = level("liouville", d=d, N=N)
        return BracketForm(lvl, tuple(_kinetic_terms(lvl, "fN", N, d)),
                           name=f"liouville(N={N})")
    if id == "sym_liouville":
        lvl = level("sym_liouville", d=d, N=N)
        return BracketForm(lvl, tuple(_kinetic_terms(lvl, "fNs", N, d)),
                           name=f"sym_liouville(N={N})")
    if id == "binary_liouville":
        lvl = level("binary_liouville", d=d, N=N, Nt=Nt)
        return BracketForm(lvl, tuple(_kinetic_terms(lvl, "fNN", N + Nt, d)),
                           name=f"binary_liouville(N={N},Nt={Nt})")
    if id == "boltzmann":
        lvl = level("boltzmann", d=d)
        return BracketForm(lvl, tuple(_kinetic_terms(lvl, "f", 1, d)),
                           name="boltzmann")
    if id == "binary_boltzmann":
        lvl = level("binary_boltzmann", d=d)
        terms = _kinetic_terms(lvl, "f", 1, d, varprefix="z")
        terms += _kinetic_terms(lvl, "ft", 1, d, varprefix="y")
        return BracketForm(lvl, tuple(terms), name="binary_boltzmann")
    if id == "hydro":
        lvl = level("hydro", d=d)
        return BracketForm(lvl, tuple(_hydro_terms(lvl, d)), name="hydro")
    if id == "binary_hydro":
        lvl = level("binary_hydro", d=d)
        terms = _hydro_terms(lvl, d)
        terms += _hydro_terms(lvl, d, rho="rhot", u="ut", s="st",
                              x=var("y", POS, d))
        return BracketForm(lvl, tuple(terms), name="binary_hydro")
    if id == "cit":
        lvl = level("cit", d=d)
        x = var("x", POS, d)
        xp = (arg_of(x),)
        terms = []
        for i in range(d):
            for dens in ("rho", "rhot", "sT"):
                terms.extend(_pair((x,), as_expr(lvl.eval(dens, x)),
                                   Slot(dens, ((0, i),), xp),
                                   Slot(f"uT.{i}", (), xp)))
            for j in range(d):
                terms.extend(_pair((x,), as_expr(lvl.eval(f"uT.{i}", x)),
                                   Slot(f"uT.{i}", ((0, j),), xp),
                                   Slot(f"uT.{j}", (), xp)))
        return BracketForm(lvl, tuple(terms), name="cit")
    if id == "canonical":
        lvl = level("mechanics", d=d, N=N)
        x = var("x", POS, 1)
        xp = (arg_of(x),)
        terms = []
        for k in range(N):
            for c in range(d):
                terms.extend(_pair((x,), as_expr(Fraction(1)),
                                   Slot(f"Q{k}.{c}", (), xp),
                                   Slot(f"P{k}.{c}", (), xp)))
        return BracketForm(lvl, tuple(terms), name=f"canonical(N={N})")
    if id == "gce":
        lvl = level("gce", d=d, K=K)
        terms = []
        for n in range(1, K + 1):
            terms.extend(_kinetic_terms(lvl, f"e{n}", n, d,
                                        weight=Fraction(_fact(n)),
                                        varprefix=f"z{n}_"))
        return BracketForm(lvl, tuple(terms), name=f"gce(K={K})")
    if id == "gce_two_point":
        return _gce_two_point(d)
    if id == "extended_hydro":
        return _extended_hydro(d)
    if id == "correlation":
        return _correlation(d, taylor_order)
    raise UnknownId(id)


def _fact(n):
    out = 1
    for i in range(2, n + 1):
        out *= i
    return out


def _gce_two_point(d: int) -> BracketForm:
    """Closed bracket of the pair kinetic theory: one-point part plus the
    three pair-density groups with both orderings of the pair slots."""
    lvl = level("two_point_kinetic", d=d)
    z = _phase_vars(1, d, "z")
    zp = tuple(arg_of(v) for v in z)
    terms = []
    coeff1 = as_expr(lvl.eval("rho1", *z))
    for c in range(d):
        terms.extend(_pair(z, coeff1, Slot("rho1", ((0, c),), zp),
                           Slot("rho1", ((1, c),), zp)))
    Z = _phase_vars(2, d, "w")
    Zp = tuple(arg_of(v) for v in Z)
    pair12 = Zp
    pair21 = (Zp[2], Zp[3], Zp[0], Zp[1])
    coeff2 = as_expr(lvl.eval("rho2", *Z))
    # derivatives act on particle 1; in the swapped ordering that is the
    # second argument block of the pair-density slot
    orderings = ((pair12, 0), (pair21, 2))
    for c in range(d):
        one_l = Slot("rho1", ((0, c),), (Zp[0], Zp[1]))
        one_r = Slot("rho1", ((1, c),), (Zp[0], Zp[1]))
        for pair, off in orderings:
            two_l = Slot("rho2", ((off, c),), pair)
            two_r = Slot("rho2", ((off + 1, c),), pair)
            # d_r A_rho1 d_p (B_rho2(1,2)+B_rho2(2,1)) - swap
            terms.extend(_pair(Z, coeff2, one_l, two_r))
            # d_r (A_rho2(1,2)+A_rho2(2,1)) d_p B_rho1 - swap
            terms.extend(_pair(Z, coeff2, two_l, one_r))
        for pa, offa in orderings:
            for pb, offb in orderings:
                la = Slot("rho2", ((offa, c),), pa)
                rb = Slot("rho2", ((offb + 1, c),), pb)
                terms.extend(_pair(Z, coeff2, la, rb))
    return BracketForm(lvl, tuple(terms), name="gce_two_point")


def _sym2(field, i, j):
    return f"{field}.{min(i, j)}{max(i, j)}"


def _extended_hydro(d: int) -> BracketForm:
    """Hydrodynamics extended by second moments of the pair density.

    The symmetric tensors are stored in reduced components with canonical
    index ordering; the printed sums of derivative slots over both index
    orders become single slots with a doubled weight on the diagonal.
    """
    lvl = level("extended_hydro", d=d)
    x = var("x", POS, d)
    xp = (arg_of(x),)
    ev = lambda comp: as_expr(lvl.eval(comp, x))

    def S(fld, k, j):
        # A_{T^{kj}} + A_{T^{jk}} in reduced symmetric components
        return _sym2(fld, k, j), (Fraction(2) if k == j else Fraction(1))

    terms = _hydro_terms(lvl, d, x=x)
    for i in range(d):
        for j in range(d):
            for k in range(d):
                for fld in ("b", "c"):
                    if j < i:
                        continue
                    comp = _sym2(fld, i, j)
                    terms.extend(_pair((x,), ev(comp),
                                       Slot(comp, ((0, k),), xp),
                                       Slot(f"u.{k}", (), xp)))
                terms.extend(_pair((x,), ev(f"w.{i}{j}"),
                                   Slot(f"w.{i}{j}", ((0, k),), xp),
                                   Slot(f"u.{k}", (), xp)))
    for i in range(d):
        for j in range(d):
            for k in range(d):
                bkj, wb = S("b", k, j)
                ckj, wc = S("c", k, j)
                cki, wci = S("c", k, i)
                # + b^{ij} (A_{b^{kj}}+A_{b^{jk}}) d_i B_{u_k}  - swap
                terms.extend(_pair((x,), scale(ev(_sym2("b", i, j)), wb),
                                   Slot(bkj, (), xp),
                                   Slot(f"u.{k}", ((0, i),), xp)))
                # - c_{ij} (A_{c^{kj}}+A_{c^{jk}}) d_k B_{u_i}  - swap
                terms.extend(_pair((x,), scale(ev(_sym2("c", i, j)), -wc),
                                   Slot(ckj, (), xp),
                                   Slot(f"u.{i}", ((0, k),), xp)))
                # + w^i_j A_{w^k_j} d_i B_{u_k} - w^j_i A_{w^j_k} d_k B_{u_i}
                terms.extend(_pair((x,), ev(f"w.{i}{j}"),
                                   Slot(f"w.{k}{j}", (), xp),
                                   Slot(f"u.{k}", ((0, i),), xp)))
                terms.extend(_pair((x,), scale(ev(f"w.{j}{i}"), -1),
                                   Slot(f"w.{j}{k}", (), xp),
                                   Slot(f"u.{i}", ((0, k),), xp)))
                # + 2 w^j_i (A_{b^{kj}}+A_{b^{jk}})(B_{c^{ki}}+B_{c^{ik}})
                terms.extend(_pair((x,), scale(ev(f"w.{j}{i}"),
                                               2 * wb * wci),
                                   Slot(bkj, (), xp), Slot(cki, (), xp)))
                # + 2 b^{ji} (A_{b^{kj}}+A_{b^{jk}}) B_{w^i_k} - swap
                terms.extend(_pair((x,), scale(ev(_sym2("b", j, i)), 2 * wb),
                                   Slot(bkj, (), xp),
                                   Slot(f"w.{i}{k}", (), xp)))
                # + 2 c_{ji} A_{w^k_j} (B_{c^{ki}}+B_{c^{ik}}) - swap
                terms.extend(_pair((x,), scale(ev(_sym2("c", j, i)),
                                               2 * wci),
                                   Slot(f"w.{k}{j}", (), xp),
                                   Slot(cki, (), xp)))
                # + 2 w^i_j (A_{w^k_j} B_{w^i_k} - B_{w^k_j} A_{w^i_k})
                terms.extend(_pair((x,), scale(ev(f"w.{i}{j}"), 2),
                                   Slot(f"w.{k}{j}", (), xp),
                                   Slot(f"w.{i}{k}", (), xp)))
    return BracketForm(lvl, tuple(terms), name="extended_hydro")


def _correlation(d: int, taylor_order: int) -> BracketForm:
    """Hydrodynamics coupled to a spatial correlation function, with the
    momentum-slot evaluations Taylor-expanded to the requested order."""
    lvl = level("correlation", d=d)
    x = var("x", POS, d)
    R = var("X", POS, d)
    xp = (arg_of(x),)
    terms = _hydro_terms(lvl, d, x=x)
    gpt = (arg_of(x), arg_of(R))
    gneg = (arg_of(x), arg_scale(arg_of(R), Fraction(-1)))
    coeff = as_expr(lvl.eval("g", x, R))
    half = Fraction(1, 2)
    for k in range(d):
        for gp in (gpt, gneg):
            # d_{r^k} of the symmetrized g-derivative against B_{u_k},
            # expanded through even Taylor orders
            terms.extend(_pair((x, R), scale(coeff, half),
                               Slot("g", ((0, k),), gp),
                               Slot(f"u.{k}", (), xp)))
            if taylor_order >= 2:
                for l in range(d):
                    for mm in range(d):
                        w = scale(mul(mul(coeff, as_expr(Coord(R, l))),
                                      as_expr(Coord(R, mm))),
                                  half * Fraction(1, 8))
                        terms.extend(_pair((x, R), w,
                                           Slot("g", ((0, k),), gp),
                                           Slot(f"u.{k}", ((0, l), (0, mm)),
                                                xp)))
            # R^l d_{R^k} of the symmetrized g-derivative against d_l B_{u_k}
            for l in range(d):
                w = scale(mul(coeff, as_expr(Coord(R, l))), half)
                sign = Fraction(1) if gp is gpt else Fraction(-1)
                terms.extend(_pair((x, R), scale(w, sign),
                                   Slot("g", ((1, k),), gp),
                                   Slot(f"u.{k}", ((0, l),), xp)))
    return BracketForm(lvl, tuple(terms), name="correlation")


# ---------------------------------------------------------------------------
# Projection constructors
# ---------------------------------------------------------------------------


def projection(id: str, **params) -> ProjectionMap:
    key = (id, tuple(sorted(params.items())))
    return _cached(_PROJECTIONS, key, lambda: _make_projection(id, **params))


def _delta_to(z: Var, pt: Var) -> Delta:
    return Delta(arg_add(arg_of(z), arg_scale(arg_of(pt), Fraction(-1))))


def _comb_moment(lvl, comp, Z, blocks, pts):
    """int dZ x(Z) prod_b delta(block_b - pt_b) as one monomial."""
    factors = [(lvl.eval(comp, *Z), 1)]
    for (b, (pr, pp)) in zip(blocks, zip(pts[::2], pts[1::2])):
        factors.append((_delta_to(Z[2 * b], pr), 1))
        factors.append((_delta_to(Z[2 * b + 1], pp), 1))
    return Expr((Monomial(Fraction(1), tuple(Z), tuple(factors)),))


def _make_projection(id: str, d: int = 3, N: int = 2, Nt: int = 2,
                     K: int = 3, symmetric: bool = False) -> ProjectionMap:
    if id == "one_particle":
        src = level("sym_liouville" if symmetric else "liouville", d=d, N=N)
        tgt = level("boltzmann", d=d)
        comp = "fNs" if symmetric else "fN"
        ar, ap = var("ar", POS, d), var("ap", MOM, d)
        Z = _phase_vars(N, d, "Z")
        comb = ZERO
        for i in range(N):
            comb = comb + _comb_moment(src, comp, Z, [i], [ar, ap])
        return make_projection(
            src, tgt, "comb", {"f": ((ar, ap), comb)},
            meta={"source_comp": comp, "N": N, "targets": [("f", 1, None)]},
            name="one_particle")
    if id == "binary_one_particle":
        src = level("binary_liouville", d=d, N=N, Nt=Nt)
        tgt = level("binary_boltzmann", d=d)
        Z = _phase_vars(N + Nt, d, "Z")
        defs = {}
        ar, ap = var("ar", POS, d), var("ap", MOM, d)
        comb = ZERO
        for i in range(N):
            comb = comb + _comb_moment(src, "fNN", Z, [i], [ar, ap])
        defs["f"] = ((ar, ap), comb)
        br, bp = var("br", POS, d), var("bp", MOM, d)
        combt = ZERO
        for i in range(N, N + Nt):
            combt = combt + _comb_moment(src, "fNN", Z, [i], [br, bp])
        defs["ft"] = ((br, bp), combt)
        return make_projection(
            src, tgt, "comb", defs,
            meta={"source_comp": "fNN", "N": N + Nt,
                  "targets": [("f", 1, list(range(N))),
                              ("ft", 1, list(range(N, N + Nt)))]},
            name="binary_one_particle")
    if id == "symmetrize":
        src = level("liouville", d=d, N=N)
        tgt = level("sym_liouville", d=d, N=N)
        Z = _phase_vars(N, d, "Z")
        pts = _phase_vars(N, d, "a")
        comb = ZERO
        for perm in itertools.permutations(range(N)):
            comb = comb + scale(
                _comb_moment(src, "fN", Z, list(perm), pts),
                Fraction(1, _fact(N)))
        return make_projection(
            src, tgt, "comb", {"fNs": (tuple(pts), comb)},
            meta={"source_comp": "fN", "N": N,
                  "targets": [("fNs", N, None)], "full_sym": True},
            name="symmetrize")
    if id == "two_point_bbgky":
        src = level("sym_liouville", d=d, N=N)
        tgt = level("bbgky_pair", d=d)
        Z = _phase_vars(N, d, "Z")
        ar, ap = var("ar", POS, d), var("ap", MOM, d)
        comb1 = ZERO
        for i in range(N):
            comb1 = comb1 + _comb_moment(src, "fNs", Z, [i], [ar, ap])
        pts2 = _phase_vars(2, d, "a")
        comb2 = ZERO
        for i in range(N):
            for j in range(N):
                if i != j:
                    comb2 = comb2 + _comb_moment(src, "fNs", Z, [i, j], pts2)
        return make_projection(
            src, tgt, "comb",
            {"f1": ((ar, ap), comb1), "f2": (tuple(pts2), comb2)},
            meta={"source_comp": "fNs", "N": N,
                  "targets": [("f1", 1, None), ("f2", 2, None)]},
            name="two_point_bbgky")
    if id == "hydro_moments":
        return _moment_projection(level("boltzmann", d=d), level("hydro", d=d),
                                  d, "f", "sigma", "", name="hydro_moments")
    if id == "binary_hydro_moments":
        src = level("binary_boltzmann", d=d)
        tgt = level("binary_hydro", d=d)
        p1 = _moment_defs(src, d, "f", "sigma", "")
        p2 = _moment_defs(src, d, "ft", "sigmat", "t")
        p1.update(p2)
        return make_projection(src, tgt, "weight", p1,
                               meta={"source_comps": ["f", "ft"]},
                               name="binary_hydro_moments")
    if id == "cit_sums":
        src = level("binary_hydro", d=d)
        tgt = level("cit", d=d)
        x = var("x", POS, d)
        defs = {
            "rho": ((x,), as_expr(src.eval("rho", x))),
            "rhot": ((x,), as_expr(src.eval("rhot", x))),
            "sT": ((x,), as_expr(src.eval("s", x))
                   + as_expr(src.eval("st", x))),
        }
        for i in range(d):
            defs[f"uT.{i}"] = ((x,), as_expr(src.eval(f"u.{i}", x))
                               + as_expr(src.eval(f"ut.{i}", x)))
        return make_projection(src, tgt, "local", defs, name="cit_sums")
    if id == "mech_equilibrium":
        src = level("cit", d=d)
        tgt = level("mech_equilibrium", d=d)
        x = var("x", POS, d)
        defs = {c: ((x,), as_expr(src.eval(c, x)))
                for c in ("rho", "rhot", "sT")}
        return make_projection(src, tgt, "local", defs,
                               name="mech_equilibrium")
    if id == "eit_moments":
        src = level("binary_hydro", d=d)
        tgt = level("eit", d=d)
        x = var("x", POS, d)
        defs = {
            "rho": ((x,), as_expr(src.eval("rho", x))),
            "rhot": ((x,), as_expr(src.eval("rhot", x))),
        }
        for i in range(d):
            defs[f"u.{i}"] = ((x,), as_expr(src.eval(f"u.{i}", x)))
            defs[f"ut.{i}"] = ((x,), as_expr(src.eval(f"ut.{i}", x)))
        kargs = [as_expr(src.eval("rho", x)), as_expr(src.eval("rhot", x))]
        for i in range(d):
            kargs.append(as_expr(src.eval(f"u.{i}", x)))
        for i in range(d):
            kargs.append(as_expr(src.eval(f"ut.{i}", x)))
        kfun = Opaque("K", tuple(0 for _ in kargs), tuple(kargs))
        defs["sT"] = ((x,), as_expr(src.eval("s", x))
                      + as_expr(src.eval("st", x)) + as_expr(kfun))
        return make_projection(src, tgt, "local", defs, name="eit_moments",
                               check_parity=False)
    if id == "gce_rho":
        src = level("gce", d=d, K=K)
        tgt = level("gce_rho", d=d, K=K)
        defs = _family_marginals(src, tgt, d, K, "rho", "e",
                                 alternate=False)
        inv = _family_marginals(tgt, src, d, K, "e", "rho", alternate=True)
        return make_projection(src, tgt, "subst", defs,
                               meta={"subst": inv}, name="gce_rho")
    if id == "gce_rho_inverse":
        src = level("gce_rho", d=d, K=K)
        tgt = level("gce", d=d, K=K)
        defs = _family_marginals(src, tgt, d, K, "e", "rho", alternate=True)
        inv = _family_marginals(tgt, src, d, K, "rho", "e", alternate=False)
        return make_projection(src, tgt, "subst", defs,
                               meta={"subst": inv}, name="gce_rho_inverse")
    if id == "extended_hydro_moments":
        return _extended_hydro_moments(d)
    if id == "correlation_g":
        src = level("two_point_kinetic", d=d)
        tgt = level("correlation", d=d)
        defs = _one_point_moment_defs(src, d, "rho1", "sigma_eff")
        x, R = var("x", POS, d), var("X", POS, d)
        p, P = var("p", MOM, d), var("PP", MOM, d)
        pairpt = _com_args(x, R, p, P)
        g = Expr((Monomial(Fraction(1), (p, P),
                           ((src.eval("rho2", *pairpt), 1),)),))
        defs["g"] = ((x, R), g)
        return make_projection(src, tgt, "weight", defs,
                               meta={"source_comps": ["rho1", "rho2"]},
                               name="correlation_g", check_parity=False)
    raise UnknownId(id)


def _moment_defs(src, d, fcomp, sname, suffix):
    """Hydrodynamic moment definitions over a one-particle distribution."""
    x = var("x" + suffix, POS, d)
    r, p = var("r" + suffix, POS, d), var("p" + suffix, MOM, d)
    f = src.eval(fcomp, r, p)
    dl = _delta_to(r, x)
    defs = {}
    defs["rhot" if suffix else "rho"] = ((x,), Expr((Monomial(
        Fraction(1), (r, p), ((Opaque("m" + suffix), 1), (f, 1), (dl, 1))),)))
    for i in range(d):
        name = (f"ut.{i}" if suffix else f"u.{i}")
        defs[name] = ((x,), Expr((Monomial(
            Fraction(1), (r, p), ((Coord(p, i), 1), (f, 1), (dl, 1))),)))
    sig = Opaque(sname, (0,), (as_expr(f),))
    defs["st" if suffix else "s"] = ((x,), Expr((Monomial(
        Fraction(1), (r, p), ((sig, 1), (dl, 1))),)))
    return defs


def _family_marginals(src, tgt, d, K, out_prefix, in_prefix, alternate):
    """Marginal-sum transforms between distribution families: the n-point
    member of the output family as a sum of marginals of the input family,
    with alternating signs for the inverse direction."""
    defs = {}
    for n in range(1, K + 1):
        pts = _phase_vars(n, d, "a")
        total = ZERO
        for m in range(n, K + 1):
            extra = _phase_vars(m - n, d, f"x{m}_")
            args = list(pts) + list(extra)
            sign = (-1) ** (m - n) if alternate else 1
            term = Expr((Monomial(
                Fraction(sign, _fact(m - n)), tuple(extra),
                ((src.eval(f"{in_prefix}{m}", *args), 1),)),))
            total = total + term
        defs[f"{out_prefix}{n}"] = (tuple(pts), total)
    return defs


def _moment_projection(src, tgt, d, fcomp, sname, suffix, name):
    defs = _moment_defs(src, d, fcomp, sname, suffix)
    return make_projection(src, tgt, "weight", defs,
                           meta={"source_comps": [fcomp]}, name=name)


def _one_point_moment_defs(src, d, comp, sname):
    x = var("x", POS, d)
    p = var("p", MOM, d)
    f = src.eval(comp, x, p)
    defs = {}
    defs["rho"] = ((x,), Expr((Monomial(
        Fraction(1), (p,), ((Opaque("m"), 1), (f, 1))),)))
    for i in range(d):
        defs[f"u.{i}"] = ((x,), Expr((Monomial(
            Fraction(1), (p,), ((Coord(p, i), 1), (f, 1))),)))
    sig = Opaque(sname, (0,), (as_expr(f),))
    defs["s"] = ((x,), Expr((Monomial(Fraction(1), (p,), ((sig, 1),)),)))
    return defs


def _com_args(x, R, p, P):
    """Pair-point arguments in center-of-mass and relative variables."""
    h = Fraction(1, 2)
    r1 = arg_add(arg_of(x), arg_of(R), Fraction(-1, 2))
    p1 = arg_add(arg_scale(arg_of(p), h), arg_of(P), Fraction(-1))
    r2 = arg_add(arg_of(x), arg_of(R), Fraction(1, 2))
    p2 = arg_add(arg_scale(arg_of(p), h), arg_of(P), Fraction(1))
    return (r1, p1, r2, p2)


def _extended_hydro_moments(d: int) -> ProjectionMap:
    """Moments of the pair kinetic theory: hydrodynamic fields from the
    one-point density and second moments of the pair density in
    center-of-mass coordinates.  Used by the experimental derivation."""
    src = level("two_point_kinetic", d=d)
    tgt = level("extended_hydro", d=d)
    x = var("x", POS, d)
    p = var("p", MOM, d)
    f1 = src.eval("rho1", x, p)
    defs = {}
    defs["rho"] = ((x,), Expr((Monomial(
        Fraction(1), (p,), ((Opaque("m"), 1), (f1, 1))),)))
    for i in range(d):
        defs[f"u.{i}"] = ((x,), Expr((Monomial(
            Fraction(1), (p,), ((Coord(p, i), 1), (f1, 1))),)))
    # entropy of the effective one-point density rho1 - int rho2
    y = _phase_vars(1, d, "y")
    inner = Expr((Monomial(Fraction(1), tuple(y),
                           ((src.eval("rho2", arg_of(x), arg_of(p),
                                      arg_of(y[0]), arg_of(y[1])), 1),)),))
    sig = Opaque("sigma", (0,), (as_expr(f1) - inner,))
    defs["s"] = ((x,), Expr((Monomial(Fraction(1), (p,), ((sig, 1),)),)))
    R, P = var("X", POS, d), var("PP", MOM, d)
    pairpt = _com_args(x, R, p, P)
    rho2h = src.eval("rho2", *pairpt)
    for i in range(d):
        for j in range(d):
            if j >= i:
                defs[_sym2("b", i, j)] = ((x,), Expr((Monomial(
                    Fraction(1), (R, p, P),
                    ((Coord(R, i), 1), (Coord(R, j), 1), (rho2h, 1))
                    if i != j else ((Coord(R, i), 2), (rho2h, 1))),)))
                defs[_sym2("c", i, j)] = ((x,), Expr((Monomial(
                    Fraction(1), (R, p, P),
                    ((Coord(P, i), 1), (Coord(P, j), 1), (rho2h, 1))
                    if i != j else ((Coord(P, i), 2), (rho2h, 1))),)))
            defs[f"w.{i}{j}"] = ((x,), Expr((Monomial(
                Fraction(1), (R, p, P),
                ((Coord(R, i), 1), (Coord(P, j), 1), (rho2h, 1))),)))
    return make_projection(src, tgt, "weight", defs,
                           meta={"source_comps": ["rho1", "rho2"]},
                           name="extended_hydro_moments",
                           check_parity=False)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def cit_energy(d: int = 3) -> Expr:
    """int (uT)^2 / 2(rho + rhot) + eps(rho, rhot, sT)."""
    lvl = level("cit", d=d)
    x = var("x", POS, d)
    dens = as_expr(lvl.eval("rho", x)) + as_expr(lvl.eval("rhot", x))
    inv = as_expr(PowNF(dens, -1))
    usq = ZERO
    for i in range(d):
        usq = usq + mul(as_expr(lvl.eval(f"uT.{i}", x)),
                        as_expr(lvl.eval(f"uT.{i}", x)))
    kinetic = scale(mul(usq, inv), Fraction(1, 2))
    eps = Opaque("eps", (0, 0, 0),
                 (as_expr(lvl.eval("rho", x)), as_expr(lvl.eval("rhot", x)),
                  as_expr(lvl.eval("sT", x))))
    return integral([x], kinetic + as_expr(eps))


def liouville_energy(N: int, d: int = 3) -> Expr:
    """int f_N h_N over the N-particle phase space."""
    lvl = level("liouville", d=d, N=N)
    Z = _phase_vars(N, d, "z")
    args = tuple(as_expr(Coord(v, c)) for v in Z for c in range(d))
    h = Opaque("hN", tuple(0 for _ in args), args)
    return Expr((Monomial(Fraction(1), tuple(Z),
                          ((lvl.eval("fN", *Z), 1), (h, 1))),))


def list_entries():
    """Stable identifiers with constructor kinds, for the CLI."""
    brackets = ["liouville", "sym_liouville", "binary_liouville", "canonical",
                "boltzmann", "binary_boltzmann", "hydro", "binary_hydro",
                "cit", "gce", "gce_two_point", "extended_hydro",
                "correlation"]
    projections = ["one_particle", "binary_one_particle", "symmetrize",
                   "two_point_bbgky", "hydro_moments",
                   "binary_hydro_moments", "cit_sums", "mech_equilibrium",
                   "eit_moments", "gce_rho", "gce_rho_inverse",
                   "extended_hydro_moments", "correlation_g"]
    return {"bracket": brackets, "projection": projections}
