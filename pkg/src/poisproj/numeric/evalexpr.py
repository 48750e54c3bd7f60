"""Compile symbolic expressions to grid arrays.

Expressions are evaluated over an environment mapping free variables to
output array axes; integration binders become weighted sums over their own
axes.  Opaque functions are supplied as callables per derivative order.
Deltas are not evaluated here: kernels containing deltas are assembled into
sparse operators by the discretization module instead.
"""

from __future__ import annotations

import numpy as np

from ..errors import GridMismatch, UnsupportedFragment
from ..kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                           PowNF, SlotSym, as_expr)
from .grid import DiscreteLevel


class OpaqueTable:
    """Callables for opaque function families, keyed by derivative order."""

    def __init__(self, table: dict):
        self.table = dict(table)

    def __call__(self, name: str, dorder: tuple, args):
        key = (name, tuple(dorder))
        if key not in self.table:
            raise UnsupportedFragment(f"no numeric rule for {name}^{dorder}")
        return self.table[key](*args)


def scalar_opaque(name: str, derivs) -> dict:
    """Entries for a one-argument family from callables [f, f', f'', ...]."""
    out = {(name, ()): derivs[0]}
    for k, fn in enumerate(derivs):
        out[(name, (k,))] = fn
    return out


def constant_opaque(name: str, value: float) -> dict:
    return {(name, ()): (lambda value=value: np.float64(value))}


class Evaluator:
    def __init__(self, dlevel: DiscreteLevel, state: np.ndarray,
                 opaques: OpaqueTable):
        self.dl = dlevel
        self.x = state
        self.op = opaques
        self._dcache = {}

    # -- field sampling ----------------------------------------------------

    def _axis_deriv(self, arr: np.ndarray, axis: int, ax) -> np.ndarray:
        D = ax.deriv_matrix()
        moved = np.moveaxis(arr, axis, 0)
        flat = moved.reshape(moved.shape[0], -1)
        out = (D @ flat).reshape(moved.shape)
        return np.moveaxis(out, 0, axis)

    def field_array(self, comp: str, deriv: tuple) -> np.ndarray:
        key = (comp, tuple(deriv))
        if key not in self._dcache:
            info = self.dl.fields[comp]
            arr = self.dl.view(self.x, comp).astype(float)
            for (slot, c) in deriv:
                if c != 0:
                    raise GridMismatch("numeric slots are one-dimensional")
                arr = self._axis_deriv(arr, slot, info["axes"][slot])
            self._dcache[key] = arr
        return self._dcache[key]

    # -- evaluation --------------------------------------------------------

    @staticmethod
    def _place(arr: np.ndarray, positions, nall: int) -> np.ndarray:
        """Broadcast arr (axes listed by output positions) into nall axes."""
        if len(set(positions)) != len(positions):
            raise UnsupportedFragment("repeated grid argument")
        order = sorted(range(len(positions)), key=lambda i: positions[i])
        arr_t = np.transpose(arr, order) if arr.ndim > 1 else arr
        shape = [1] * nall
        for pos, size in zip(sorted(positions), arr_t.shape):
            shape[pos] = size
        return arr_t.reshape(shape)

    def eval(self, e, env: dict | None = None) -> np.ndarray:
        """Evaluate with free vars mapped to output axes by env.

        Several variables may share an output axis (identified points).
        """
        env = dict(env or {})
        nall = (max(env.values()) + 1) if env else 0
        out = self._terms(as_expr(e), env, nall)
        return out

    def _terms(self, e: Expr, env: dict, nall: int) -> np.ndarray:
        total = np.zeros((1,) * nall) if nall else np.float64(0.0)
        for m in e.terms:
            total = total + self._monomial(m, env, nall)
        return total

    def _monomial(self, m: Monomial, env: dict, nall: int) -> np.ndarray:
        local = dict(env)
        binder_axes = []
        for b in m.binders:
            local[b] = nall + len(binder_axes)
            binder_axes.append(local[b])
        ntot = nall + len(binder_axes)
        acc = np.float64(float(m.coeff))
        for f, p in m.factors:
            arr = self._factor(f, local, ntot)
            acc = acc * (arr ** p if p != 1 else arr)
        vol = 1.0
        for b in m.binders:
            vol *= self.dl.grid.axis(b.kind).h
        if binder_axes:
            if not isinstance(acc, np.ndarray) or acc.ndim < ntot:
                acc = np.broadcast_to(
                    np.asarray(acc), (1,) * nall
                    + tuple(self.dl.grid.axis(b.kind).n for b in m.binders))
            acc = acc.sum(axis=tuple(binder_axes)) * vol
        return acc

    def _factor(self, f, local: dict, ntot: int) -> np.ndarray:
        if isinstance(f, FieldEval):
            positions = []
            for a in f.args:
                if len(a) != 1 or a[0][1] != 1 or a[0][0] not in local:
                    raise UnsupportedFragment(
                        "numeric evaluation needs plain grid arguments")
                positions.append(local[a[0][0]])
            return self._place(self.field_array(f.field, f.deriv),
                               positions, ntot)
        if isinstance(f, Coord):
            ax = self.dl.grid.axis(f.v.kind)
            return self._place(ax.coords(), [local[f.v]], ntot)
        if isinstance(f, Opaque):
            args = [self._terms(sub, local, ntot) for sub in f.args]
            return self.op(f.name, f.dorder, args)
        if isinstance(f, PowNF):
            return self._terms(f.base, local, ntot) ** float(f.exp)
        if isinstance(f, Delta):
            raise UnsupportedFragment(
                "delta kernels are assembled, not evaluated")
        if isinstance(f, SlotSym):
            raise UnsupportedFragment(
                "abstract functional slots have no numeric value")
        raise TypeError(f)
