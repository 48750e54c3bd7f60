"""Levels of description: named fields, base spaces and time-reversal parity.

A level is an ordered set of field declarations.  Tensor fields are expanded
into scalar components with canonical index ordering (so a symmetric rank-2
field stores only the upper triangle), and multi-particle distribution
functions carry a permutation-symmetry tag that the symbolic kernel uses to
sort argument blocks.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field as dfield
from fractions import Fraction
from typing import Optional

from .errors import DuplicateField, MissingParity, UnknownField
from .kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                          PowNF, SlotSym, Var, MOM, POS)

EVEN = 1
ODD = -1
INDEFINITE = None


@dataclass(frozen=True)
class BaseSpace:
    """Coordinate slots of a field's domain.

    `slots` is a tuple of (kind, dim) pairs; `particles` tags a phase space
    made of that many identical (position, momentum) pairs.
    """

    slots: tuple
    particles: Optional[int] = None

    def __post_init__(self):
        if not self.slots:
            raise ValueError("base space needs at least one slot")
        for kind, dim in self.slots:
            if kind not in (POS, MOM) or dim < 1:
                raise ValueError(f"bad slot ({kind}, {dim})")
        if self.particles is not None and self.particles < 1:
            raise ValueError("particle count must be >= 1")

    @property
    def dim(self) -> int:
        return self.slots[0][1]


def position_space(d: int = 3) -> BaseSpace:
    return BaseSpace(((POS, d),))


def phase_space(d: int = 3, particles: int = 1) -> BaseSpace:
    return BaseSpace(((POS, d), (MOM, d)) * particles,
                     particles if particles > 1 else None)


@dataclass(frozen=True)
class FieldSpec:
    """One declared state variable of a level."""

    name: str
    base: BaseSpace
    parity: Optional[int]
    rank: int = 0                  # tensor rank over the position dimension
    index_symmetric: bool = False  # rank-2 symmetric in its indices
    particle_symmetric: bool = False

    def components(self):
        """Scalar component names with canonical index ordering."""
        if self.rank == 0:
            return [self.name]
        d = self.base.dim
        out = []
        for idx in itertools.product(range(d), repeat=self.rank):
            if self.index_symmetric and list(idx) != sorted(idx):
                continue
            out.append(comp_name(self.name, idx))
        return out

    def comp(self, *idx) -> str:
        if len(idx) != self.rank:
            raise ValueError(f"{self.name} has rank {self.rank}")
        if self.index_symmetric:
            idx = tuple(sorted(idx))
        return comp_name(self.name, idx)

    @property
    def sym_blocks(self) -> int:
        return 2 if self.particle_symmetric else 0


def comp_name(name: str, idx) -> str:
    if not idx:
        return name
    return name + "." + "".join(str(i) for i in idx)


@dataclass(frozen=True)
class LevelSpec:
    """An ordered, validated set of fields."""

    name: str
    fields: tuple
    provenance: Optional[str] = None

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise UnknownField(name)

    def component_owner(self, comp: str) -> FieldSpec:
        base = comp.split(".")[0]
        return self.field(base)

    def components(self):
        out = []
        for f in self.fields:
            out.extend(f.components())
        return out

    def eval(self, comp: str, *args, deriv=()) -> FieldEval:
        """Field-evaluation factor for a component at the given point vars."""
        spec = self.component_owner(comp)
        pt = _point_args(spec.base, args)
        return FieldEval(comp, pt, tuple(sorted(deriv)), spec.sym_blocks)

    def slot(self, functional: str, comp: str, *args, deriv=()) -> SlotSym:
        spec = self.component_owner(comp)
        pt = _point_args(spec.base, args)
        return SlotSym(functional, comp, pt, tuple(sorted(deriv)),
                       spec.sym_blocks)

    @property
    def dim(self) -> int:
        return self.fields[0].base.dim


def _point_args(base: BaseSpace, args):
    from .kernel.expr import arg_of
    if len(args) != len(base.slots):
        raise ValueError(f"expected {len(base.slots)} point slots, got {len(args)}")
    out = []
    for a, (kind, dim) in zip(args, base.slots):
        if isinstance(a, Var):
            if a.kind != kind or a.dim != dim:
                raise ValueError(f"slot mismatch: {a} vs ({kind},{dim})")
            out.append(arg_of(a))
        else:
            out.append(a)  # already an Arg
    return tuple(out)


_REGISTRY: dict = {}
_REG_LOCK = threading.Lock()


def define_level(name: str, fields, provenance: Optional[str] = None) -> LevelSpec:
    """Validate and register a level of description."""
    seen = set()
    for f in fields:
        if f.name in seen:
            raise DuplicateField(f.name)
        seen.add(f.name)
        if f.parity not in (EVEN, ODD):
            raise MissingParity(f.name)
    lvl = LevelSpec(name, tuple(fields), provenance)
    with _REG_LOCK:
        _REGISTRY[name] = lvl
    return lvl


def registered_levels():
    with _REG_LOCK:
        return dict(_REGISTRY)


# ---------------------------------------------------------------------------
# Time-reversal parity of expressions
# ---------------------------------------------------------------------------


def _factor_parity(f, level: LevelSpec) -> Optional[int]:
    if isinstance(f, FieldEval):
        try:
            spec = level.component_owner(f.field)
        except UnknownField:
            raise
        par = spec.parity
        for (s, c) in f.deriv:
            kind = spec.base.slots[s][0]
            if kind == MOM:
                par = -par
        return par
    if isinstance(f, Coord):
        return ODD if f.v.kind == MOM else EVEN
    if isinstance(f, Delta):
        kinds = {v.kind for v, _ in f.aarg}
        if kinds == {MOM}:
            return EVEN if len(f.deriv) % 2 == 0 else ODD
        return EVEN
    if isinstance(f, Opaque):
        if not f.args:
            return EVEN
        for sub in f.args:
            p = parity_of(sub, level)
            if p != EVEN:
                return INDEFINITE
        return EVEN
    if isinstance(f, PowNF):
        p = parity_of(f.base, level)
        if p == EVEN:
            return EVEN
        if p == ODD:
            return ODD if f.exp % 2 else EVEN
        return INDEFINITE
    if isinstance(f, SlotSym):
        raise UnknownField(
            "parity is defined for field expressions, not functional slots")
    raise TypeError(f)


def parity_of(expr, level: LevelSpec) -> Optional[int]:
    """Time-reversal parity of an expression, or INDEFINITE.

    Multiplicative over factors; a sum has the common parity of its terms
    when they agree and is indefinite otherwise.
    """
    from .kernel.expr import as_expr
    e = as_expr(expr)
    seen = set()
    for m in e.terms:
        if m.coeff == 0:
            continue
        par = EVEN
        for f, p in m.factors:
            fp = _factor_parity(f, level)
            if fp is INDEFINITE:
                return INDEFINITE
            if p % 2 == 1:
                par *= fp
        seen.add(par)
        if len(seen) > 1:
            return INDEFINITE
    if not seen:
        return EVEN
    return seen.pop()
