"""Finite-state triangle kernels, their marginal/mean operators and spectra.

A triangle kernel is stored as an ``(m, m, m)`` array ``probs`` with
``probs[x, y, z]`` the probability that a mother in state ``x`` has first
daughter in state ``y`` and second daughter in state ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    NegativeEntry,
    NonDiagonalizable,
    NonStochastic,
    ReducibleChain,
)

ROW_TOL = 1e-12
CRITICAL_TOL = 1e-9

SUB_CRITICAL = "sub_critical"
CRITICAL = "critical"
SUPER_CRITICAL = "super_critical"


@dataclass(frozen=True)
class StateSpace:
    m: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if int(self.m) < 1:
            raise DimensionMismatch(f"state space needs m >= 1, got {self.m}")
        if self.labels is not None and len(self.labels) != self.m:
            raise DimensionMismatch("labels must have length m")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MarkovMatrix:
    entries: np.ndarray
    tag: str = "Q"

    def __post_init__(self):
        e = _frozen(self.entries)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise DimensionMismatch(f"Markov matrix must be square, got {e.shape}")
        _check_probabilities(e, axes=(1,))
        object.__setattr__(self, "entries", e)

    @property
    def m(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class TriangleKernel:
    """Validated transition probability of a bifurcating Markov chain."""

    probs: np.ndarray
    space: Optional[StateSpace] = None

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 3 or not (p.shape[0] == p.shape[1] == p.shape[2]):
            raise DimensionMismatch(f"kernel must be m x m x m, got {p.shape}")
        _check_probabilities(p, axes=(1, 2))
        object.__setattr__(self, "probs", p)
        if self.space is None:
            object.__setattr__(self, "space", StateSpace(p.shape[0]))
        elif self.space.m != p.shape[0]:
            raise DimensionMismatch("state space size does not match kernel")

    @property
    def m(self) -> int:
        return self.probs.shape[0]

    @property
    def P0(self) -> np.ndarray:
        return self.probs.sum(axis=2)

    @property
    def P1(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    @property
    def Q(self) -> np.ndarray:
        return 0.5 * (self.P0 + self.P1)


def _check_probabilities(a: np.ndarray, axes) -> None:
    if not np.all(np.isfinite(a)):
        raise NonStochastic("non-finite probability entries")
    if np.any(a < 0):
        raise NegativeEntry(f"negative entry {a.min():.3g}")
    if np.any(a > 1 + ROW_TOL):
        raise NonStochastic("probability entry above one")
    sums = a.sum(axis=axes)
    worst = np.max(np.abs(sums - 1.0))
    if worst > ROW_TOL:
        raise NonStochastic(f"row sums deviate from 1 by {worst:.3g}")


# -- constructors -----------------------------------------------------------

def product_kernel(P0, P1) -> TriangleKernel:
    """Daughters conditionally independent: ``P(x,y,z) = P0(x,y) P1(x,z)``."""
    P0 = MarkovMatrix(P0, "P0").entries
    P1 = MarkovMatrix(P1, "P1").entries
    if P0.shape != P1.shape:
        raise DimensionMismatch("P0 and P1 must have the same shape")
    return TriangleKernel(P0[:, :, None] * P1[:, None, :])


def qq_kernel(Q) -> TriangleKernel:
    Q = MarkovMatrix(Q, "Q").entries
    return TriangleKernel(Q[:, :, None] * Q[:, None, :])


def symmetric_two_state(p: float) -> np.ndarray:
    return np.array([[p, 1.0 - p], [1.0 - p, p]])


def random_kernel(m: int, seed: int, concentration: float = 1.0) -> TriangleKernel:
    rng = np.random.default_rng(seed)
    rows = rng.dirichlet(np.full(m * m, concentration), size=m)
    rows /= rows.sum(axis=1, keepdims=True)
    return TriangleKernel(rows.reshape(m, m, m))


def build_triangle_kernel(spec) -> TriangleKernel:
    """Build a kernel from a descriptor.

    ``spec`` is either a ``TriangleKernel``, an ``(m, m, m)`` array-like, or a
    mapping with a ``type`` key among ``table``, ``product``, ``QQ`` and
    ``random``. ``QQ`` accepts either a full matrix ``Q`` or the parameter
    ``p`` of the symmetric two-state chain.
    """
    if isinstance(spec, TriangleKernel):
        return spec
    if not isinstance(spec, dict):
        return TriangleKernel(np.asarray(spec, dtype=float))
    kind = str(spec.get("type", "table")).lower()
    labels = spec.get("labels")
    if kind == "table":
        k = TriangleKernel(np.asarray(spec["probs"], dtype=float))
    elif kind == "product":
        k = product_kernel(spec["P0"], spec["P1"])
    elif kind == "qq":
        Q = spec.get("Q")
        if Q is None:
            Q = symmetric_two_state(_number(spec["p"]))
        k = qq_kernel(Q)
    elif kind == "random":
        k = random_kernel(int(spec["m"]), int(spec["seed"]), float(spec.get("concentration", 1.0)))
    else:
        raise ValueError(f"unknown kernel type {kind!r}")
    if labels is not None:
        k = TriangleKernel(k.probs, StateSpace(k.m, tuple(labels)))
    return k


def _number(v) -> float:
    # allow a couple of symbolic constants so the critical kernel is exact
    if isinstance(v, str):
        table = {"critical": (1 + 2 ** -0.5) / 2}
        if v in table:
            return table[v]
        return float(v)
    return float(v)


def k1() -> TriangleKernel:
    """Sub-critical product kernel with alpha = 1/2."""
    return product_kernel([[0.8, 0.2], [0.3, 0.7]], [[0.9, 0.1], [0.4, 0.6]])


def k2() -> TriangleKernel:
    """Critical symmetric kernel with alpha = 1/sqrt(2)."""
    return qq_kernel(symmetric_two_state((1 + 2 ** -0.5) / 2))


def k3() -> TriangleKernel:
    """Super-critical symmetric kernel with alpha = 0.8."""
    return qq_kernel(symmetric_two_state(0.9))


def circulant_kernel(modulus: float) -> TriangleKernel:
    """Three-state QQ kernel whose mean operator has a conjugate pair of
    eigenvalues of the given modulus (requires 1/2 <= modulus**2 < 1 for a
    two-band circulant ``a I + b C``)."""
    # |a + b w|^2 = 3a^2 - 3a + 1 with a + b = 1
    disc = 1 - 4 * (1 - modulus ** 2) / 3
    if disc < 0:
        raise ValueError("modulus too small for a two-band circulant")
    a = (1 + np.sqrt(disc)) / 2
    C = np.roll(np.eye(3), 1, axis=1)
    return qq_kernel(a * np.eye(3) + (1 - a) * C)


# -- operators and spectra ------------------------------------------------------

def derive_operators(P: TriangleKernel) -> dict:
    return {
        "P0": MarkovMatrix(P.P0, "P0"),
        "P1": MarkovMatrix(P.P1, "P1"),
        "Q": MarkovMatrix(P.Q, "Q"),
    }


@dataclass(frozen=True)
class SpectralData:
    """Spectral decomposition of the mean operator ``Q``.

    ``eigenvalues``/``projectors`` list every distinct non-unit eigenvalue and
    its spectral projector; ``J`` indexes the ones of maximal modulus
    ``alpha``.
    """

    Q: np.ndarray
    mu: np.ndarray
    alpha: float
    eigenvalues: np.ndarray
    projectors: tuple
    J: tuple
    beta_rate: float
    regime: str
    residual: float = field(default=0.0)

    @property
    def alphas_j(self) -> np.ndarray:
        return self.eigenvalues[list(self.J)]

    @property
    def thetas_j(self) -> np.ndarray:
        if not self.J:
            return np.zeros(0, dtype=complex)
        return self.alphas_j / self.alpha

    @property
    def projectors_j(self) -> tuple:
        return tuple(self.projectors[j] for j in self.J)

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    def mean(self, h) -> float:
        return float(self.mu @ np.asarray(h))


def classify_regime(alpha: float, tol: float = CRITICAL_TOL) -> str:
    d = 2 * alpha * alpha - 1
    if abs(d) < tol:
        return CRITICAL
    return SUB_CRITICAL if d < 0 else SUPER_CRITICAL


def spectral_analysis(Q, tol: float = 1e-9) -> SpectralData:
    """Eigen-decompose a row-stochastic matrix into stationary law and
    spectral projectors.

    Raises ``ReducibleChain`` when more than one eigenvalue lies on the unit
    circle and ``NonDiagonalizable`` when the projector expansion fails to
    reproduce ``Q``.
    """
    if isinstance(Q, MarkovMatrix):
        Q = Q.entries
    elif isinstance(Q, TriangleKernel):
        Q = Q.Q
    Q = MarkovMatrix(Q).entries
    m = Q.shape[0]
    lam, V = np.linalg.eig(Q)
    if np.linalg.cond(V) > 1e10:
        raise NonDiagonalizable("eigenvector matrix is numerically singular")
    W = np.linalg.inv(V)

    unit = np.flatnonzero(np.abs(lam) > 1 - 1e-8)
    if len(unit) != 1 or abs(lam[unit[0]] - 1) > 1e-8:
        raise ReducibleChain(f"{len(unit)} eigenvalues on the unit circle")
    u = unit[0]
    mu = np.real(W[u]) / np.real(W[u]).sum()
    mu = np.where(np.abs(mu) < 1e-15, 0.0, mu)

    # group equal eigenvalues so that each projector covers a whole eigenspace
    rest = [k for k in range(m) if k != u]
    rest.sort(key=lambda k: (-abs(lam[k]), -lam[k].imag, -lam[k].real))
    values, projs = [], []
    for k in rest:
        Rk = np.outer(V[:, k], W[k])
        for i, v in enumerate(values):
            if abs(lam[k] - v) <= tol * max(1.0, abs(v)):
                projs[i] = projs[i] + Rk
                break
        else:
            values.append(lam[k])
            projs.append(Rk)
    values = np.array(values, dtype=complex)
    for i, v in enumerate(values):
        if abs(v.imag) < 1e-14:
            values[i] = v.real
            projs[i] = projs[i].real.astype(complex)

    recon = np.outer(np.ones(m), mu) + sum((v * R for v, R in zip(values, projs)), np.zeros((m, m)))
    residual = float(np.max(np.abs(Q - recon)))
    if residual > tol:
        raise NonDiagonalizable(f"projector expansion residual {residual:.3g}")

    alpha = float(np.max(np.abs(values))) if len(values) else 0.0
    if alpha < 1e-12:
        alpha, J = 0.0, ()
    else:
        J = tuple(i for i, v in enumerate(values) if abs(v) >= alpha * (1 - tol))
        # tighten onto the exact modulus so |alpha_j| = alpha to rounding
        alpha = float(np.max(np.abs(values[list(J)])))
    others = [abs(v) for i, v in enumerate(values) if i not in J]
    beta_rate = float(max(others) / alpha) if (others and alpha > 0) else 0.0

    for P_ in projs:
        P_.setflags(write=False)
    return SpectralData(
        Q=Q,
        mu=_frozen(mu),
        alpha=alpha,
        eigenvalues=values,
        projectors=tuple(projs),
        J=J,
        beta_rate=beta_rate,
        regime=classify_regime(alpha),
        residual=residual,
    )


def analyze(P: TriangleKernel, tol: float = 1e-9) -> SpectralData:
    return spectral_analysis(P.Q, tol)


def reconstruct(sd: SpectralData) -> np.ndarray:
    """``1 mu^T + sum_k lambda_k R_k`` as a complex matrix."""
    out = np.outer(np.ones(sd.m), sd.mu).astype(complex)
    for v, R in zip(sd.eigenvalues, sd.projectors):
        out = out + v * R
    return out


def projector_bound(sd: SpectralData, g) -> float:
    """Constant ``C`` with ``max|Q^k g| <= C alpha^k`` for centered ``g``.

    Exact consequence of the projector expansion; used to certify the tails
    of the variance series.
    """
    g = np.asarray(g)
    sup = float(np.max(np.abs(g))) if g.size else 0.0
    # k >= 1: Q^k g = sum_k lambda^k R g, and the lambda = 0 part vanishes
    total = sum(float(np.max(np.abs(R @ g))) for v, R in zip(sd.eigenvalues, sd.projectors) if abs(v) > 0)
    return max(sup, total)
