"""Function calculus on S, S^2 and S^3.

Functions are plain numpy arrays: a state function has shape ``(m,)``, a pair
function ``(m, m)`` indexed ``(daughter0, daughter1)`` and a triangle function
``(m, m, m)`` indexed ``(mother, daughter0, daughter1)``.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch
from .kernel_core import SpectralData, TriangleKernel


def as_triangle(values, m: int | None = None) -> np.ndarray:
    """Validate a real triangle function (the boundary used by simulations)."""
    f = np.asarray(values)
    if np.iscomplexobj(f):
        if np.max(np.abs(f.imag), initial=0.0) > 1e-12:
            raise ValueError("triangle functions entering simulations must be real")
        f = f.real
    f = np.asarray(f, dtype=float)
    if f.ndim != 3 or not (f.shape[0] == f.shape[1] == f.shape[2]):
        raise DimensionMismatch(f"triangle function must be m x m x m, got {f.shape}")
    if m is not None and f.shape[0] != m:
        raise DimensionMismatch(f"expected m={m}, got {f.shape[0]}")
    if not np.all(np.isfinite(f)):
        raise ValueError("triangle function has non-finite entries")
    return f


def apply_P(P: TriangleKernel, f) -> np.ndarray:
    """Conditional expectation given the mother: ``(P f)(x)``.

    Accepts a triangle function ``f(x, y, z)`` or a pair function ``h(y, z)``.
    """
    f = np.asarray(f)
    m = P.m
    if f.shape == (m, m, m):
        return np.einsum("xyz,xyz->x", P.probs, f)
    if f.shape == (m, m):
        return np.einsum("xyz,yz->x", P.probs, f)
    raise DimensionMismatch(f"cannot apply kernel of size {m} to shape {f.shape}")


def apply_Q_power(Q, h, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError("n must be non-negative")
    Q = np.asarray(getattr(Q, "entries", Q))
    out = np.asarray(h)
    if out.shape != (Q.shape[0],):
        raise DimensionMismatch("state function does not match Q")
    for _ in range(n):
        out = Q @ out
    return out


def oplus(g, h) -> np.ndarray:
    """``(g (+) h)(x, x0, x1) = g(x0) + h(x1)``, constant in the mother."""
    g, h = np.asarray(g), np.asarray(h)
    if g.shape != h.shape or g.ndim != 1:
        raise DimensionMismatch("oplus needs two state functions of equal size")
    m = g.shape[0]
    return np.broadcast_to(g[:, None] + h[None, :], (m, m, m)).copy()


def tensor(a, b, mode: str = "otimes") -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch("tensor needs two state functions of equal size")
    if mode == "otimes":
        return np.outer(a, b)
    if mode == "otimes_sym":
        return 0.5 * (np.outer(a, b) + np.outer(b, a))
    if mode == "otimes_sq":
        return np.outer(a, a)
    if mode == "oplus":
        return oplus(a, b)
    raise ValueError(f"unknown tensor mode {mode!r}")


def lift_mother(g) -> np.ndarray:
    g = np.asarray(g)
    m = g.shape[0]
    return np.broadcast_to(g[:, None, None], (m, m, m)).copy()


def lift_pair(h) -> np.ndarray:
    h = np.asarray(h)
    m = h.shape[0]
    return np.broadcast_to(h[None, :, :], (m, m, m)).copy()


def mu_triangle(sd: SpectralData, P: TriangleKernel, f) -> float:
    """``<mu^triangle, f> = sum_x mu(x) (P f)(x)``."""
    return float(sd.mu @ apply_P(P, f))


def center(f, sd: SpectralData, P: TriangleKernel):
    """Return ``(f - <mu, P f>, <mu, P f>)``."""
    f = np.asarray(f, dtype=float)
    c = mu_triangle(sd, P, f)
    return f - c, c


def triangle_mean_step(P: TriangleKernel, f) -> np.ndarray:
    """One application of the triangle chain's mean operator, straight from
    its kernel: move to either daughter with probability 1/2 and redraw that
    daughter's own daughters."""
    f = np.asarray(f)
    m = P.m
    # (Q^tri f)(x, x0, x1) = 1/2 sum_{y0,y1} [P(x0,y0,y1) f(x0,y0,y1) + P(x1,y0,y1) f(x1,y0,y1)]
    step = np.einsum("yab,yab->y", P.probs, f)
    return 0.5 * (np.broadcast_to(step[None, :, None], (m, m, m)) + np.broadcast_to(step[None, None, :], (m, m, m)))


def triangle_mean_matrix(P: TriangleKernel) -> np.ndarray:
    """The mean operator of the triangle chain as an ``(m^3, m^3)`` matrix,
    states flattened in C order."""
    m = P.m
    M = np.zeros((m, m, m, m, m, m))
    for x in range(m):
        for x0 in range(m):
            for x1 in range(m):
                M[x, x0, x1, x0] += 0.5 * P.probs[x0]
                M[x, x0, x1, x1] += 0.5 * P.probs[x1]
    return M.reshape(m ** 3, m ** 3)


def apply_Q_triangle_power(P: TriangleKernel, f, n: int, check: bool = True) -> np.ndarray:
    """``(Q^tri)^n f`` via the closed form ``1/2 (Q^{n-1} P f (+) Q^{n-1} P f)``.

    With ``check`` the direct iterate of the kernel definition is computed as
    well and must agree to 1e-12 (relative to the size of ``f``).
    """
    f = np.asarray(f, dtype=float)
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return f.copy()
    g = apply_Q_power(P.Q, apply_P(P, f), n - 1)
    closed = 0.5 * oplus(g, g)
    if check:
        direct = f
        for _ in range(n):
            direct = triangle_mean_step(P, direct)
        scale = max(1.0, float(np.max(np.abs(f))))
        gap = float(np.max(np.abs(direct - closed)))
        if gap > 1e-12 * scale:
            raise AssertionError(f"triangle iterate mismatch {gap:.3g}")
    return closed


# -- named families ----------------------------------------------------------------

def affine(m: int, a: float, b: float, c: float, values=None) -> np.ndarray:
    """``f(x, x0, x1) = a x + b x0 + c x1`` with states valued by ``values``
    (default ``0, ..., m-1``)."""
    v = np.arange(m, dtype=float) if values is None else np.asarray(values, dtype=float)
    return a * v[:, None, None] + b * v[None, :, None] + c * v[None, None, :]


def conditionally_centered(P: TriangleKernel, h) -> np.ndarray:
    """``h - P h`` (mother-lifted), which satisfies ``P(.) = 0``."""
    return np.asarray(h, dtype=float) - lift_mother(apply_P(P, h))


def standardized_innovation(P: TriangleKernel, h) -> np.ndarray:
    """``(h - P h) / sqrt(P h^2 - (P h)^2)``.

    Conditionally centered with conditional second moment identically one, so
    ``<mu, P f^2> = 1`` whatever the kernel.
    """
    h = np.asarray(h, dtype=float)
    d = conditionally_centered(P, h)
    var = apply_P(P, d * d)
    if np.any(var <= 1e-14):
        raise ValueError("h has zero conditional variance at some mother state")
    return d / np.sqrt(var)[:, None, None]


def jointly_centered(kernels, which: int = 0) -> np.ndarray:
    """A triangle function with ``P f = 0`` under every kernel in ``kernels``.

    ``f(x, ., .)`` is the ``which``-th vector of the joint null space of the
    daughter laws at ``x``, scaled so that the conditional second moment
    averaged over the kernels is one at every mother state.
    """
    from scipy.linalg import null_space

    kernels = list(kernels)
    m = kernels[0].m
    if any(K.m != m for K in kernels):
        raise DimensionMismatch("kernels must share the state space")
    f = np.zeros((m, m, m))
    for x in range(m):
        rows = np.vstack([K.probs[x].ravel() for K in kernels])
        N = null_space(rows)
        if N.shape[1] <= which:
            raise ValueError(f"joint null space at state {x} has dimension {N.shape[1]}")
        v = N[:, which] * np.sign(N[np.argmax(np.abs(N[:, which])), which])
        second = np.mean(rows @ (v * v))
        f[x] = (v / np.sqrt(second)).reshape(m, m)
    return f


class FunctionSequence:
    """Finitely supported sequence ``(f_0, ..., f_L, 0, 0, ...)`` of triangle
    functions."""

    def __init__(self, terms: Iterable):
        terms = [as_triangle(t) for t in terms]
        if not terms:
            raise ValueError("a function sequence needs at least one term")
        m = terms[0].shape[0]
        for t in terms:
            if t.shape[0] != m:
                raise DimensionMismatch("all terms must share the state space")
        self.terms = tuple(terms)
        self.m = m

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def L(self) -> int:
        return len(self.terms) - 1

    def __getitem__(self, ell: int) -> np.ndarray:
        if ell < 0:
            raise IndexError(ell)
        if ell < len(self.terms):
            return self.terms[ell]
        return np.zeros((self.m,) * 3)

    def __iter__(self):
        return iter(self.terms)

    def __mul__(self, c: float) -> "FunctionSequence":
        return FunctionSequence([c * t for t in self.terms])

    __rmul__ = __mul__

    def __add__(self, other: "FunctionSequence") -> "FunctionSequence":
        n = max(len(self), len(other))
        return FunctionSequence([self[i] + other[i] for i in range(n)])

    def __repr__(self) -> str:
        return f"FunctionSequence(m={self.m}, L={self.L})"

    @classmethod
    def single(cls, f) -> "FunctionSequence":
        return cls([f])

    def centered(self, sd: SpectralData, P: TriangleKernel) -> list:
        return [center(t, sd, P)[0] for t in self.terms]

    def conditional_means(self, P: TriangleKernel) -> list:
        return [apply_P(P, t) for t in self.terms]

    def is_conditionally_centered(self, P: TriangleKernel, atol: float = 1e-12) -> bool:
        return all(np.max(np.abs(apply_P(P, t))) <= atol for t in self.terms)
