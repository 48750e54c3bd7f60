import pytest

from poisproj.errors import DuplicateField, MissingParity, UnknownField
from poisproj.fields import (EVEN, FieldSpec, INDEFINITE, ODD, define_level,
                             parity_of, phase_space, position_space)
from poisproj.kernel.expr import (Coord, FieldEval, as_expr, arg_of, mul,
                                  var, POS, MOM)


def hydro_fields(d=1):
    return [FieldSpec("rho", position_space(d), EVEN),
            FieldSpec("u", position_space(d), ODD, rank=1),
            FieldSpec("s", position_space(d), EVEN)]


def test_define_level_basic():
    lvl = define_level("t_ch", hydro_fields())
    assert [f.name for f in lvl.fields] == ["rho", "u", "s"]
    assert lvl.components() == ["rho", "u.0", "s"]


def test_two_particle_level():
    lvl = define_level("t_l2", [FieldSpec("f2", phase_space(1, 2), EVEN)])
    assert len(lvl.fields) == 1
    assert len(lvl.fields[0].base.slots) == 4


def test_duplicate_field_rejected():
    with pytest.raises(DuplicateField):
        define_level("t_dup", [FieldSpec("rho", position_space(1), EVEN),
                               FieldSpec("rho", position_space(1), EVEN)])


def test_missing_parity_rejected():
    with pytest.raises(MissingParity):
        define_level("t_par", [FieldSpec("rho", position_space(1), None)])


def test_parity_examples():
    lvl = define_level("t_par2", hydro_fields() + [
        FieldSpec("f", phase_space(1), EVEN)])
    r, p = var("r", POS, 1), var("p", MOM, 1)
    x = var("x", POS, 1)
    f = as_expr(lvl.eval("f", r, p))
    # p_k * f -> odd
    assert parity_of(mul(as_expr(Coord(p, 0)), f), lvl) == ODD
    # rho * s -> even
    rs = mul(as_expr(lvl.eval("rho", x)), as_expr(lvl.eval("s", x)))
    assert parity_of(rs, lvl) == EVEN
    # rho + u -> indefinite
    mixed = as_expr(lvl.eval("rho", x)) + as_expr(lvl.eval("u.0", x))
    assert parity_of(mixed, lvl) is INDEFINITE
    # momentum derivative flips, position derivative preserves
    assert parity_of(as_expr(lvl.eval("f", r, p, deriv=((1, 0),))), lvl) == ODD
    assert parity_of(as_expr(lvl.eval("f", r, p, deriv=((0, 0),))), lvl) == EVEN


def test_parity_unknown_field():
    lvl = define_level("t_par3", hydro_fields())
    other = define_level("t_par4", [FieldSpec("w", position_space(1), ODD)])
    x = var("x", POS, 1)
    with pytest.raises(UnknownField):
        parity_of(as_expr(other.eval("w", x)), lvl)


def test_parity_normalization_stable():
    from poisproj.kernel.normalize import normalize
    lvl = define_level("t_par5", hydro_fields())
    x = var("x", POS, 1)
    e = mul(as_expr(lvl.eval("u.0", x)), as_expr(lvl.eval("u.0", x)))
    assert parity_of(e, lvl) == EVEN
    assert parity_of(normalize(e), lvl) == EVEN
