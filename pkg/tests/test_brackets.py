from fractions import Fraction

import pytest

from poisproj import catalog
from poisproj.brackets import (Abstract, BilinearTerm, BracketForm, Concrete,
                               Slot, apply_bracket, apply_bracket_raw,
                               bivector_component, bracket_equal,
                               check_antisymmetry, check_jacobi,
                               check_trt_parity, evolution_equations,
                               is_casimir)
from poisproj.errors import IndefiniteParity, LevelMismatch, NonlinearBracket
from poisproj.kernel.expr import (Coord, Opaque, PowNF, as_expr, arg_of,
                                  diff_expr, integral, mul, scale, var, POS,
                                  MOM)
from poisproj.kernel.normalize import equal, is_zero


def test_apply_bracket_self_and_constant():
    b = catalog.bracket("hydro", d=1)
    assert is_zero(apply_bracket_raw(b, Abstract("A"), Abstract("A")))
    const = Concrete(as_expr(Fraction(5)), name="B")
    assert is_zero(apply_bracket_raw(b, Abstract("A"), const))


def test_apply_bracket_level_mismatch():
    b = catalog.bracket("hydro", d=1)
    other = catalog.level("boltzmann", d=1)
    with pytest.raises(LevelMismatch):
        apply_bracket(b, Abstract("A", other), Abstract("B"))


def test_liouville_pairing_is_canonical_transport():
    # the kinetic bracket on two linear functionals reproduces the
    # canonical pairing of their densities against the distribution
    b = catalog.bracket("liouville", d=1, N=1)
    lvl = b.level
    r, p = var("r", POS, 1), var("p", MOM, 1)
    h = Opaque("h", (0, 0), (as_expr(Coord(r, 0)), as_expr(Coord(p, 0))))
    k = Opaque("k", (0, 0), (as_expr(Coord(r, 0)), as_expr(Coord(p, 0))))
    A = Concrete(integral([r, p], mul(as_expr(lvl.eval("fN", r, p)),
                                      as_expr(h))), name="A")
    B = Concrete(integral([r, p], mul(as_expr(lvl.eval("fN", r, p)),
                                      as_expr(k))), name="B")
    got = apply_bracket(b, A, B)
    f = as_expr(lvl.eval("fN", r, p))
    want = integral([r, p], mul(f, mul(diff_expr(as_expr(h), r, 0),
                                       diff_expr(as_expr(k), p, 0))
                                - mul(diff_expr(as_expr(k), r, 0),
                                      diff_expr(as_expr(h), p, 0))))
    assert equal(got, want)


def test_antisymmetry_fail_with_witness():
    b = catalog.bracket("hydro", d=1)
    broken = BracketForm(b.level, b.terms[:-1], name="broken")
    rep = check_antisymmetry(broken)
    assert not rep.passed
    assert rep.witness is not None and rep.witness.terms


@pytest.mark.parametrize("bid,kw", [
    ("hydro", dict(d=2)), ("cit", dict(d=2)), ("boltzmann", dict(d=2)),
    ("canonical", dict(d=2, N=2)), ("binary_hydro", dict(d=1)),
    ("gce_two_point", dict(d=1)), ("sym_liouville", dict(d=1, N=2)),
])
def test_structural_checks_pass(bid, kw):
    b = catalog.bracket(bid, **kw)
    assert check_antisymmetry(b).passed
    assert check_jacobi(b).passed
    assert check_trt_parity(b).passed


def test_jacobi_fails_for_corrupted_bracket():
    b = catalog.bracket("hydro", d=1)
    terms = []
    for t in b.terms:
        if t.left.field == "s" and t.left.deriv:
            terms.append(BilinearTerm(t.binders, scale(t.coeff, -1),
                                      t.left, t.right))
        else:
            terms.append(t)
    broken = BracketForm(b.level, tuple(terms), name="hydro_flipped")
    rep = check_jacobi(broken)
    assert not rep.passed and rep.witness.terms


def test_trt_fails_for_even_even_coupling():
    b = catalog.bracket("hydro", d=1)
    x = var("x", POS, 1)
    bad = BilinearTerm((x,), as_expr(b.level.eval("rho", x)),
                       Slot("rho", (), (arg_of(x),)),
                       Slot("s", (), (arg_of(x),)))
    swap = BilinearTerm((x,), scale(as_expr(b.level.eval("rho", x)), -1),
                        Slot("s", (), (arg_of(x),)),
                        Slot("rho", (), (arg_of(x),)))
    broken = BracketForm(b.level, b.terms + (bad, swap), name="hydro_rs")
    rep = check_trt_parity(broken)
    assert not rep.passed and rep.witness.terms


def test_casimirs_of_fluid_bracket():
    b = catalog.bracket("hydro", d=1)
    x = var("x", POS, 1)
    mass = integral([x], as_expr(b.level.eval("rho", x)))
    entropy = integral([x], as_expr(b.level.eval("s", x)))
    momentum = integral([x], as_expr(b.level.eval("u.0", x)))
    assert is_casimir(b, mass)
    assert is_casimir(b, entropy)
    assert not is_casimir(b, momentum)


def test_evolution_equations_transport():
    # the N-particle bracket with E = int f h generates the transport
    # equation with the Hamiltonian vector field of h
    d = 1
    b = catalog.bracket("liouville", d=d, N=1)
    lvl = b.level
    E = catalog.liouville_energy(1, d=d)
    ((comp, star, rhs),) = evolution_equations(b, E)
    r, p = star
    f = as_expr(lvl.eval("fN", r, p))
    h = Opaque("hN", (0,), (as_expr(Coord(r, 0)),))
    # build dh/dr * df/dp - dh/dp * df/dr with the stored argument packing
    hN = Opaque("hN", (0, 0), (as_expr(Coord(r, 0)), as_expr(Coord(p, 0))))
    want = mul(diff_expr(as_expr(hN), r, 0), diff_expr(f, p, 0)) \
        - mul(diff_expr(as_expr(hN), p, 0), diff_expr(f, r, 0))
    assert equal(rhs, want)


def test_evolution_zero_energy():
    b = catalog.bracket("hydro", d=1)
    for comp, star, rhs in evolution_equations(b, as_expr(Fraction(0))):
        assert rhs.is_syntactic_zero()


def test_jacobi_rejects_nonaffine():
    b = catalog.bracket("hydro", d=1)
    x = var("x", POS, 1)
    rho = as_expr(b.level.eval("rho", x))
    quad = BilinearTerm((x,), mul(rho, rho), Slot("rho", ((0, 0),),
                                                  (arg_of(x),)),
                        Slot("u.0", (), (arg_of(x),)))
    swap = BilinearTerm((x,), scale(mul(rho, rho), -1),
                        Slot("u.0", (), (arg_of(x),)),
                        Slot("rho", ((0, 0),), (arg_of(x),)))
    nb = BracketForm(b.level, b.terms + (quad, swap), name="nl")
    with pytest.raises(NonlinearBracket):
        check_jacobi(nb)


def test_bivector_component_zero_couplings():
    b = catalog.bracket("hydro", d=1)
    assert is_zero(bivector_component(b, "rho", "rho"))
    assert is_zero(bivector_component(b, "rho", "s"))
    assert is_zero(bivector_component(b, "s", "s"))
    assert not is_zero(bivector_component(b, "rho", "u.0"))
