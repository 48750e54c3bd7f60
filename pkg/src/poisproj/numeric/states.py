"""Seeded smooth random states for the numeric audits.

Position profiles are low-mode Fourier syntheses kept strictly positive;
kinetic profiles decay in the momentum coordinate inside the periodic box
so that moment closures hold to the quadrature accuracy.
"""

from __future__ import annotations

import numpy as np

from ..fields import MOM
from .grid import DiscreteLevel


def _smooth_profile(ax, rng, modes: int = 3, amp: float = 0.35,
                    offset: float = 1.0) -> np.ndarray:
    z = ax.coords()
    out = np.full(ax.n, offset)
    for k in range(1, modes + 1):
        a = rng.uniform(-amp, amp) / k
        b = rng.uniform(-amp, amp) / k
        out += a * np.cos(2 * np.pi * k * z / ax.length) \
            + b * np.sin(2 * np.pi * k * z / ax.length)
    return out


def _mom_envelope(ax, width_frac: float = 1.0 / 12.0) -> np.ndarray:
    p = ax.coords()
    sig = ax.length * width_frac
    return np.exp(-0.5 * (p / sig) ** 2)


def random_state(dlevel: DiscreteLevel, seed: int = 0,
                 positive=None, momentum_envelope: bool = True,
                 envelope_width: float = 1.0 / 13.0,
                 modes: int = 3) -> np.ndarray:
    """Band-limited random state; distribution-like fields decay in momentum
    and stay positive, declared-positive densities stay above zero."""
    rng = np.random.default_rng(seed)
    positive = set(positive or ())
    arrays = {}
    for comp, info in dlevel.fields.items():
        axes = info["axes"]
        spec = info["spec"]
        arr = np.ones(info["shape"])
        for i, ax in enumerate(axes):
            prof = _smooth_profile(ax, rng, modes=modes)
            if ax.kind == MOM and momentum_envelope:
                prof = prof * _mom_envelope(ax, envelope_width)
            shape = [1] * len(axes)
            shape[i] = ax.n
            arr = arr * prof.reshape(shape)
        base = comp.split(".")[0]
        kinetic = any(ax.kind == MOM for ax in axes)
        if kinetic or base in positive or comp in positive:
            arr = np.abs(arr) + (0.0 if kinetic else 0.2)
        elif spec.parity == -1:
            arr = arr - arr.mean()
        arrays[comp] = arr
    return dlevel.pack(arrays)


def symmetrizer(dlevel: DiscreteLevel, comp: str):
    """Symmetrize a state's pair/triple distribution over particle blocks."""
    import itertools
    info = dlevel.fields[comp]
    nblocks = len(info["axes"]) // 2
    sl = dlevel.comp_slice(comp)

    def apply(x):
        x = x.copy()
        arr = x[sl].reshape(info["shape"])
        acc = np.zeros_like(arr)
        count = 0
        for perm in itertools.permutations(range(nblocks)):
            axes = []
            for b in perm:
                axes.extend([2 * b, 2 * b + 1])
            acc += np.transpose(arr, axes)
            count += 1
        x[sl] = (acc / count).ravel()
        return x
    return apply


def kinetic_fiber_perturbation(dlevel: DiscreteLevel, comp: str = "f",
                               seed: int = 0, scale: float = 1.0):
    """A smooth momentum-decaying perturbation with vanishing mass and
    momentum moments at every position, i.e. tangent to the moment fibers
    when the entropy weight is linear in the distribution."""
    rng = np.random.default_rng(seed)
    info = dlevel.fields[comp]
    rax, pax = info["axes"]
    g = _smooth_profile(rax, rng, offset=0.0)
    p = pax.coords()
    env = _mom_envelope(pax, width_frac=1.0 / 18.0)
    basis = np.stack([env, env * p, env * p * p])
    mom = np.stack([np.ones_like(p), p])
    M = mom @ basis.T * pax.h
    # choose coefficients in the null space of the moment conditions
    _, _, vt = np.linalg.svd(M)
    c = vt[-1]
    phi = c @ basis
    arr = scale * np.outer(g, phi)
    out = np.zeros(dlevel.size)
    out[dlevel.comp_slice(comp)] = arr.ravel()
    return out
