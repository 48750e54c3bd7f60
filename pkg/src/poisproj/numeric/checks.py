"""Numeric audits of the structural properties of discretized brackets."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ProjectionsDiffer
from .discretize import DiscreteBracket, DiscreteProjection, pushforward


def maxnorm(M) -> float:
    if sp.issparse(M):
        return float(abs(M).max()) if M.nnz else 0.0
    return float(np.abs(M).max()) if np.asarray(M).size else 0.0


def antisymmetry_defect(Ld: DiscreteBracket, x: np.ndarray) -> float:
    L = Ld.matrix(x)
    base = maxnorm(L)
    return maxnorm(L + L.T) / base if base else 0.0


def _test_gradient(dl, seed: int) -> np.ndarray:
    """Gradient vector of a linear functional with a smooth test density."""
    from .states import random_state
    phi = random_state(dl, seed=seed)
    g = phi.copy()
    for comp, info in dl.fields.items():
        g[dl.comp_slice(comp)] *= info["volume"]
    return g


def jacobi_residual(Ld: DiscreteBracket, x: np.ndarray,
                    ntests: int = 3, seed: int = 0) -> float:
    """Max cyclic defect {{A,B},C} + cyc over seeded smooth linear test
    functionals.

    The pointwise index-triple contraction of the defect tensor carries the
    distributional scaling of derivative kernels and does not decay under
    refinement; pairing with smooth test densities is the stable surrogate,
    vanishing at the scheme's order when the continuum identity holds.  The
    inner gradients are exact for field-affine brackets.
    """
    L = Ld.matrix(x).tocsr()
    res = 0.0
    for k in range(ntests):
        gA = _test_gradient(Ld.dl, seed=seed + 7 * k + 1)
        gB = _test_gradient(Ld.dl, seed=seed + 7 * k + 2)
        gC = _test_gradient(Ld.dl, seed=seed + 7 * k + 3)
        val = 0.0
        for (u, w, z) in ((gA, gB, gC), (gB, gC, gA), (gC, gA, gB)):
            gF = Ld.gradient_of_pairing(u, w, x)
            val += float(gF @ (L @ z))
        res = max(res, abs(val))
    return res


def jacobi_order(make, x_of, ns, ntests: int = 3, seed: int = 0):
    """Fit the refinement order of the Jacobi residual over grid halvings.

    `make(n)` returns the DiscreteBracket on an n-cell grid; `x_of(n)` the
    state.  Returns (residuals, orders).
    """
    res = [jacobi_residual(make(n), x_of(n), ntests=ntests, seed=seed)
           for n in ns]
    orders = []
    for i in range(len(res) - 1):
        if res[i + 1] == 0 or res[i] == 0:
            orders.append(float("nan"))
        else:
            orders.append(float(np.log2(res[i] / res[i + 1])))
    return res, orders


def trt_defect(Ld: DiscreteBracket, x: np.ndarray) -> float:
    """Reversibility: L(I(x)) + E L(x) E^T must vanish, with E the signed
    reflection matrix of the time-reversal transform."""
    E = Ld.dl.trt_matrix()
    L = Ld.matrix(x)
    LI = Ld.matrix(E @ x)
    base = maxnorm(L)
    return maxnorm(LI + E @ L @ E.T) / base if base else 0.0


def pushforward_defect(Lhigh: DiscreteBracket, proj: DiscreteProjection,
                       Llow: DiscreteBracket, x: np.ndarray) -> float:
    """Relative gap between Dpi L Dpi^T and the lower bracket at pi(x)."""
    J = proj.jacobian(x)
    pf = pushforward(J, Lhigh.matrix(x))
    low = Llow.matrix(proj.apply(x))
    base = max(maxnorm(low), maxnorm(pf))
    return maxnorm(pf - low) / base if base else 0.0


def nullspace_pair(proj: DiscreteProjection, x: np.ndarray,
                   scale: float = 1.0, seed: int = 0,
                   symmetrize=None) -> np.ndarray:
    """A second state on the same projection fiber: x plus a perturbation
    projected onto the numerical nullspace of the Jacobian."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(x.size)
    if symmetrize is not None:
        v = symmetrize(v)
    J = proj.jacobian(x)
    G = (J @ J.T).todense()
    lam = np.linalg.solve(G + 1e-12 * np.eye(G.shape[0]), J @ v)
    v = v - J.T @ np.asarray(lam).ravel()
    if symmetrize is not None:
        v = symmetrize(v)
        lam = np.linalg.solve(G + 1e-12 * np.eye(G.shape[0]), J @ v)
        v = v - J.T @ np.asarray(lam).ravel()
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ProjectionsDiffer("empty nullspace")
    return x + scale * v / max(nv / np.linalg.norm(x), 1e-12) * 1.0


def closure_discrepancy(Lhigh: DiscreteBracket, proj: DiscreteProjection,
                        x1: np.ndarray, x2: np.ndarray,
                        fiber_tol: float = 1e-10) -> float:
    """Max-norm difference of the pushforward bivector between two states
    on the same fiber of the projection."""
    p1 = proj.apply(x1)
    p2 = proj.apply(x2)
    rel = np.max(np.abs(p1 - p2)) / max(np.max(np.abs(p1)), 1e-300)
    if rel > fiber_tol:
        raise ProjectionsDiffer(f"fiber mismatch {rel:.2e}")
    J1 = proj.jacobian(x1)
    J2 = proj.jacobian(x2)
    A = pushforward(J1, Lhigh.matrix(x1))
    B = pushforward(J2, Lhigh.matrix(x2))
    return maxnorm(A - B)
