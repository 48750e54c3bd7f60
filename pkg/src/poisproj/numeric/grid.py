"""Periodic grids and discrete layouts for levels of description.

Each coordinate slot of a field is sampled on a one-dimensional periodic
axis of its kind; a field's sample space is the product of its slot axes.
Position axes cover [0, L); momentum axes are centered on zero so the
time-reversal reflection is a grid symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import GridMismatch
from ..fields import LevelSpec, MOM, POS


@dataclass(frozen=True)
class Axis:
    kind: str
    n: int
    length: float

    def __post_init__(self):
        if self.n < 8:
            raise GridMismatch("at least 8 cells per active dimension")
        if self.length <= 0:
            raise GridMismatch("axis length must be positive")

    @property
    def h(self) -> float:
        return self.length / self.n

    def coords(self) -> np.ndarray:
        if self.kind == MOM:
            return (np.arange(self.n) - self.n // 2) * self.h
        return np.arange(self.n) * self.h

    def deriv_matrix(self) -> sp.csr_matrix:
        """Centered second-order periodic difference."""
        n, h = self.n, self.h
        idx = np.arange(n)
        rows = np.concatenate([idx, idx])
        cols = np.concatenate([(idx + 1) % n, (idx - 1) % n])
        vals = np.concatenate([np.full(n, 1.0 / (2 * h)),
                               np.full(n, -1.0 / (2 * h))])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def reflection(self) -> np.ndarray:
        """Index permutation realizing x -> -x on the periodic axis."""
        n = self.n
        if self.kind == MOM:
            half = n // 2
            return (2 * half - np.arange(n)) % n
        return np.arange(n)


@dataclass(frozen=True)
class Grid:
    """One axis per coordinate kind, shared by all slots of that kind."""

    pos: Axis
    mom: Axis | None = None

    def axis(self, kind: str) -> Axis:
        if kind == POS:
            return self.pos
        if self.mom is None:
            raise GridMismatch("grid has no momentum axis")
        return self.mom


class DiscreteLevel:
    """Flat-vector layout of a level's fields on a grid."""

    def __init__(self, level: LevelSpec, grid: Grid):
        self.level = level
        self.grid = grid
        self.fields = {}
        offset = 0
        for f in level.fields:
            axes = tuple(grid.axis(kind) for kind, dim in f.base.slots)
            if any(dim != 1 for _, dim in f.base.slots):
                raise GridMismatch("numeric layer samples one-dimensional slots")
            shape = tuple(ax.n for ax in axes)
            size = int(np.prod(shape))
            for comp in f.components():
                self.fields[comp] = {
                    "axes": axes,
                    "shape": shape,
                    "offset": offset,
                    "volume": float(np.prod([ax.h for ax in axes])),
                    "spec": f,
                }
                offset += size
        self.size = offset

    def view(self, x: np.ndarray, comp: str) -> np.ndarray:
        info = self.fields[comp]
        n = int(np.prod(info["shape"]))
        return x[info["offset"]:info["offset"] + n].reshape(info["shape"])

    def pack(self, arrays: dict) -> np.ndarray:
        x = np.zeros(self.size)
        for comp, arr in arrays.items():
            info = self.fields[comp]
            n = int(np.prod(info["shape"]))
            x[info["offset"]:info["offset"] + n] = np.asarray(arr).ravel()
        return x

    def comp_slice(self, comp: str):
        info = self.fields[comp]
        n = int(np.prod(info["shape"]))
        return slice(info["offset"], info["offset"] + n)

    def trt_matrix(self) -> sp.csr_matrix:
        """Signed permutation realizing the time-reversal transform."""
        rows, cols, vals = [], [], []
        for comp, info in self.fields.items():
            spec = info["spec"]
            sign = float(spec.parity)
            perms = [ax.reflection() for ax in info["axes"]]
            idx = np.arange(int(np.prod(info["shape"]))).reshape(info["shape"])
            src = idx
            for axis_i, perm in enumerate(perms):
                src = np.take(src, perm, axis=axis_i)
            rows.append(info["offset"] + idx.ravel())
            cols.append(info["offset"] + src.ravel())
            vals.append(np.full(idx.size, sign))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows),
                                    np.concatenate(cols))),
            shape=(self.size, self.size))
