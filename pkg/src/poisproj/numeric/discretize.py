"""Discrete bivectors and projections on periodic grids.

A bracket term

    int coeff * [d^a dA/dy_l](pt) [d^b dB/dy_r](pt')

assembles into W_l^T diag(V coeff) W_r on the product space of the term's
integration variables, where W are alignment matrices composed with
centered difference operators and V is the cell volume.  The stored matrix
L pairs plain gradients of discrete functionals: {A, B} = gA^T L gB, and
the induced evolution is xdot = L gE.

Projections evaluate their defining moment expressions by quadrature;
their Jacobians are assembled from the symbolic variational-derivative
kernels (delta factors become index matches with 1/h weights).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import GridMismatch, ShapeMismatch, UnsupportedFragment
from ..brackets import BracketForm
from ..projection import ProjectionMap
from ..kernel.expr import (Coord, Delta, Expr, FieldEval, Monomial, Opaque,
                           PowNF, Var)
from ..kernel.fderiv import functional_derivative
from ..kernel.normalize import normalize
from .evalexpr import Evaluator, OpaqueTable
from .grid import DiscreteLevel


def _flat_axes(binders, grid):
    return [grid.axis(b.kind) for b in binders]


def _alignment(dlevel: DiscreteLevel, comp: str, positions, flat_shape):
    """P maps field samples to the flat product space of a term."""
    info = dlevel.fields[comp]
    if len(positions) != len(info["shape"]):
        raise GridMismatch(f"slot arity mismatch for {comp}")
    flat_n = int(np.prod(flat_shape))
    grids = np.indices(flat_shape)
    field_idx = np.zeros(flat_shape, dtype=np.int64)
    for slot, pos in enumerate(positions):
        field_idx = field_idx * info["shape"][slot] + grids[pos]
    rows = np.arange(flat_n)
    cols = field_idx.ravel()
    P = sp.csr_matrix((np.ones(flat_n), (rows, cols)),
                      shape=(flat_n, int(np.prod(info["shape"]))))
    return P


def _flat_deriv(axes, flat_shape, pos):
    """Centered difference along flat axis `pos`."""
    mats = []
    for i, ax in enumerate(axes):
        mats.append(ax.deriv_matrix() if i == pos else sp.identity(ax.n))
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


class DiscreteBracket:
    """State-dependent bivector matrix of a bracket form on a grid."""

    def __init__(self, form: BracketForm, dlevel: DiscreteLevel,
                 opaques: OpaqueTable | None = None):
        self.form = form
        self.dl = dlevel
        self.op = opaques or OpaqueTable({})
        self._static = []
        for t in form.terms:
            axes = _flat_axes(t.binders, dlevel.grid)
            flat_shape = tuple(ax.n for ax in axes)
            vol = float(np.prod([ax.h for ax in axes]))
            env = {b: i for i, b in enumerate(t.binders)}
            Ws = []
            for slot in (t.left, t.right):
                positions = []
                for a in slot.point:
                    if len(a) != 1 or a[0][1] != 1 or a[0][0] not in env:
                        raise UnsupportedFragment(
                            "discretization needs plain integration points")
                    positions.append(env[a[0][0]])
                P = _alignment(dlevel, slot.field, positions, flat_shape)
                W = P
                for (s, c) in slot.deriv:
                    if c != 0:
                        raise GridMismatch("slots are one-dimensional")
                    W = _flat_deriv(axes, flat_shape, positions[s]) @ W
                vfield = dlevel.fields[slot.field]["volume"]
                Ws.append((slot.field, W, vfield))
            self._static.append((t, env, flat_shape, vol, Ws))
        self._coeffs = [self._coeff_structure(t, env, _flat_axes(t.binders,
                                                                 dlevel.grid),
                                              flat_shape)
                        for (t, env, flat_shape, vol, Ws) in self._static]

    def _coeff_structure(self, t, env, axes, flat_shape):
        """Affine decomposition of a term coefficient for exact gradients."""
        from ..kernel.normalize import normalize as _norm
        out = []
        for m in _norm(t.coeff, strip=False).terms:
            const = float(m.coeff)
            fe = None
            consts = []
            for f, p in m.factors:
                if isinstance(f, FieldEval):
                    if fe is not None or p != 1:
                        return None
                    fe = f
                elif isinstance(f, Opaque) and not f.args:
                    consts.append((f, p))
                else:
                    return None
            if m.binders:
                return None
            op = None
            if fe is not None:
                positions = [env[a[0][0]] for a in fe.args]
                P = _alignment(self.dl, fe.field, positions, flat_shape)
                for (slot, c) in fe.deriv:
                    P = _flat_deriv(axes, flat_shape, positions[slot]) @ P
                op = (fe.field, P)
            out.append((const, consts, op))
        return out

    def gradient_of_pairing(self, u: np.ndarray, w: np.ndarray,
                            x: np.ndarray) -> np.ndarray:
        """Exact gradient of u^T L(x) w for field-affine coefficients."""
        from ..errors import UnsupportedFragment
        ev = Evaluator(self.dl, x, self.op)
        grad = np.zeros(self.dl.size)
        for (t, env, flat_shape, vol, Ws), cs in zip(self._static,
                                                     self._coeffs):
            if cs is None:
                raise UnsupportedFragment(
                    "exact pairing gradient needs affine coefficients")
            (fa, Wa, va), (fb, Wb, vb) = Ws
            alpha = Wa @ (u[self.dl.comp_slice(fa)] / va)
            beta = Wb @ (w[self.dl.comp_slice(fb)] / vb)
            s = vol * alpha * beta
            for const, consts, op in cs:
                cval = const
                for f, p in consts:
                    cval *= float(self.op(f.name, f.dorder, [])) ** p
                if op is None:
                    continue
                comp, P = op
                grad[self.dl.comp_slice(comp)] += cval * (P.T @ s)
        return grad

    def matrix(self, x: np.ndarray) -> sp.csr_matrix:
        n = self.dl.size
        total = sp.csr_matrix((n, n))
        for (t, env, flat_shape, vol, Ws) in self._static:
            ev = Evaluator(self.dl, x, self.op)
            coeff = ev.eval(t.coeff, env)
            coeff = np.broadcast_to(coeff, flat_shape).ravel()
            (fa, Wa, va), (fb, Wb, vb) = Ws
            core = Wa.T @ sp.diags(vol * coeff) @ Wb
            block = (core / (va * vb)).tocoo()
            ia = self.dl.comp_slice(fa)
            ib = self.dl.comp_slice(fb)
            pad = sp.csr_matrix(
                (block.data, (block.row + ia.start, block.col + ib.start)),
                shape=(n, n))
            total = total + pad
        return total


class DiscreteProjection:
    """Moment map between discrete levels with its state Jacobian."""

    def __init__(self, pm: ProjectionMap, dsrc: DiscreteLevel,
                 dtgt: DiscreteLevel, opaques: OpaqueTable | None = None):
        self.pm = pm
        self.src = dsrc
        self.tgt = dtgt
        self.op = opaques or OpaqueTable({})
        self._defs = {comp: (ptvars, normalize(expr, strip=False))
                      for comp, (ptvars, expr) in pm.defs.items()}
        self._kernels = {}
        for comp, (ptvars, expr) in self._defs.items():
            spec = pm.source
            for scomp in pm.source.components():
                from ..kernel.expr import fresh_var
                sspec = pm.source.component_owner(scomp)
                svars = tuple(fresh_var(k, dd, "s")
                              for k, dd in sspec.base.slots)
                ker = functional_derivative(expr, scomp, svars)
                if not ker.is_syntactic_zero():
                    self._kernels[(comp, scomp)] = (ptvars, svars, ker)

    def apply(self, x: np.ndarray) -> np.ndarray:
        ev = Evaluator(self.src, x, self.op)
        out = np.zeros(self.tgt.size)
        for comp, (ptvars, expr) in self._defs.items():
            env = {v: i for i, v in enumerate(ptvars)}
            arr = ev.eval(expr, env)
            info = self.tgt.fields[comp]
            out[self.tgt.comp_slice(comp)] = np.broadcast_to(
                arr, info["shape"]).ravel()
        return out

    def jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        from fractions import Fraction
        ev = Evaluator(self.src, x, self.op)
        rows, cols, vals = [], [], []
        for (comp, scomp), (ptvars, svars, ker) in self._kernels.items():
            tinfo = self.tgt.fields[comp]
            sinfo = self.src.fields[scomp]
            toff = self.tgt.comp_slice(comp).start
            soff = self.src.comp_slice(scomp).start
            tshape = tinfo["shape"]
            sshape = sinfo["shape"]
            for m in ker.terms:
                ident = {}
                weight = float(m.coeff)
                rest = []
                for f, p in m.factors:
                    if isinstance(f, Delta):
                        if f.deriv or p != 1:
                            raise UnsupportedFragment(
                                "derived delta in a projection kernel")
                        if len(f.aarg) != 2 or \
                                {abs(c) for _, c in f.aarg} != {1}:
                            raise UnsupportedFragment(
                                "projection kernels need plain pairings")
                        a, b = f.aarg[0][0], f.aarg[1][0]
                        if a in svars and b in ptvars:
                            a, b = b, a
                        if not (a in ptvars and b in svars):
                            raise UnsupportedFragment(
                                "unmatched delta in projection kernel")
                        ident[b] = a
                        weight /= self.src.grid.axis(a.kind).h
                    else:
                        rest.append((f, p))
                free_s = [v for v in svars if v not in ident]
                env = {v: i for i, v in enumerate(ptvars)}
                for v in free_s:
                    env[v] = len(env)
                for v, tv in ident.items():
                    env[v] = env[tv]
                fshape = tuple(self.src.grid.axis(v.kind).n for v in free_s)
                body = Expr((Monomial(Fraction(1), m.binders, tuple(rest)),))
                arr = ev.eval(body, env)
                # the sample derivative is the kernel times the source cell
                # volume (the quadrature weight of the perturbed sample)
                full = np.broadcast_to(arr, tshape + fshape) \
                    * (weight * sinfo["volume"])
                tgrid = np.indices(tshape + fshape)
                tidx = np.zeros(tshape + fshape, dtype=np.int64)
                for i in range(len(tshape)):
                    tidx = tidx * tshape[i] + tgrid[i]
                sidx = np.zeros(tshape + fshape, dtype=np.int64)
                for slot, v in enumerate(svars):
                    if v in ident:
                        comp_idx = tgrid[ptvars.index(ident[v])]
                    else:
                        comp_idx = tgrid[len(tshape) + free_s.index(v)]
                    sidx = sidx * sshape[slot] + comp_idx
                rows.append(toff + tidx.ravel())
                cols.append(soff + sidx.ravel())
                vals.append(full.ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows),
                                    np.concatenate(cols))),
            shape=(self.tgt.size, self.src.size))


def pushforward(J, L):
    """Dpi L Dpi^T with shape validation."""
    if J.shape[1] != L.shape[0] or L.shape[0] != L.shape[1]:
        raise ShapeMismatch(f"{J.shape} vs {L.shape}")
    return J @ L @ J.T
