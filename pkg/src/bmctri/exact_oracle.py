"""Exact ground truth for small trees.

Two independent exact routes:

* ``enumerate_expectation`` sums over every state assignment of the tree
  (mixed-radix order, probability weights built node by node);
* ``recursive_moments`` propagates first and second moments of additive
  statistics from the leaves to the root, which is exact for any depth.

Neither route uses the spectral decomposition.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import BudgetExceeded
from .function_algebra import FunctionSequence, apply_P, apply_Q_power, lift_mother, tensor
from .kernel_core import SpectralData, TriangleKernel

DEFAULT_BUDGET = 10 ** 8


@dataclass(frozen=True)
class ExactReport:
    label: str
    formula: float
    enumeration: float

    @property
    def gap(self) -> float:
        return abs(self.formula - self.enumeration)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gap"] = self.gap
        d["provenance"] = "oracle"
        return d


def tree_size(depth: int) -> int:
    return 2 ** (depth + 1) - 1


def generation_slots(k: int) -> slice:
    return slice(2 ** k - 1, 2 ** (k + 1) - 1)


def _as_law(nu, m: int) -> np.ndarray:
    if np.isscalar(nu):
        law = np.zeros(m)
        law[int(nu)] = 1.0
        return law
    law = np.asarray(nu, dtype=float)
    if law.shape != (m,) or abs(law.sum() - 1) > 1e-12 or np.any(law < 0):
        raise ValueError("initial law must be a probability vector of length m")
    return law


def enumerate_expectation(P: TriangleKernel, nu, depth: int, functional, budget: int = DEFAULT_BUDGET,
                          chunk: int = 1 << 15, return_mass: bool = False):
    """``E[functional(X)]`` by summing over all assignments of ``T_depth``.

    ``functional`` maps an integer array of shape ``(B, |T_depth|)`` (slot
    ``s`` has daughters ``2s+1, 2s+2``) to values of shape ``(B,)`` or
    ``(B, K)``.
    """
    m = P.m
    law = _as_law(nu, m)
    N = tree_size(depth)
    total = m ** N
    if total > budget:
        raise BudgetExceeded(f"{m}^{N} = {total:.3g} assignments exceed budget {budget:.3g}")
    internal = tree_size(depth - 1) if depth >= 1 else 0
    radix = m ** np.arange(N - 1, -1, -1, dtype=np.int64)
    acc = None
    mass = 0.0
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        states = (idx[:, None] // radix[None, :]) % m
        w = law[states[:, 0]]
        for s in range(internal):
            w = w * P.probs[states[:, s], states[:, 2 * s + 1], states[:, 2 * s + 2]]
        vals = np.asarray(functional(states), dtype=float)
        part = w @ vals
        acc = part if acc is None else acc + part
        mass += w.sum()
    if return_mass:
        return acc, mass
    return acc


# -- functionals on enumerated trees ---------------------------------------------------

def state_generation_sum(f, k: int):
    f = np.asarray(f)

    def fn(states):
        return f[states[:, generation_slots(k)]].sum(axis=1)
    return fn


def triangle_generation_sum(f, k: int):
    f = np.asarray(f)
    slots = np.arange(2 ** k - 1, 2 ** (k + 1) - 1)

    def fn(states):
        return f[states[:, slots], states[:, 2 * slots + 1], states[:, 2 * slots + 2]].sum(axis=1)
    return fn


def statistic_functional(centered_terms, n: int):
    """``N_n = 2^{-n/2} sum_l M_{G_{n-l}}(f_l)`` for already centered terms."""
    parts = [triangle_generation_sum(t, n - ell) for ell, t in enumerate(centered_terms) if ell <= n]

    def fn(states):
        out = np.zeros(states.shape[0])
        for p in parts:
            out += p(states)
        return out * 2.0 ** (-n / 2)
    return fn


# -- many-to-one formulas ---------------------------------------------------------------

def many_to_one_first(P: TriangleKernel, f, n: int) -> np.ndarray:
    return 2.0 ** n * apply_Q_power(P.Q, f, n)


def many_to_one_second(P: TriangleKernel, f, n: int) -> np.ndarray:
    """``E_x[M_{G_n}(f)^2]`` for a state function, as a function of ``x``."""
    f = np.asarray(f, dtype=float)
    out = 2.0 ** n * apply_Q_power(P.Q, f * f, n)
    Qk = f
    for k in range(n):
        pair = apply_P(P, tensor(Qk, Qk))
        out = out + 2.0 ** (n + k) * apply_Q_power(P.Q, pair, n - k - 1)
        Qk = P.Q @ Qk
    return out


def triangle_second_moment(P: TriangleKernel, f, n: int) -> np.ndarray:
    """``E_x[M_{G_n}(f)^2]`` for a triangle function, by splitting it into its
    conditional mean and the conditionally centered remainder."""
    f = np.asarray(f, dtype=float)
    g = apply_P(P, f)
    cond_var = apply_P(P, f * f) - g * g
    return 2.0 ** n * apply_Q_power(P.Q, cond_var, n) + many_to_one_second(P, g, n)


def verify_many_to_one(P: TriangleKernel, x: int, f, n: int, budget: int = DEFAULT_BUDGET):
    """Compare both many-to-one formulas with enumeration over ``T_n``."""
    f = np.asarray(f, dtype=float)
    gsum = state_generation_sum(f, n)

    def fn(states):
        s = gsum(states)
        return np.stack([s, s * s], axis=1)

    first, second = enumerate_expectation(P, x, n, fn, budget=budget)
    return (
        ExactReport(f"Q1 n={n} x={x}", float(many_to_one_first(P, f, n)[x]), float(first)),
        ExactReport(f"Q2 n={n} x={x}", float(many_to_one_second(P, f, n)[x]), float(second)),
    )


# -- statistic moments --------------------------------------------------------------------

def recursive_moments(P: TriangleKernel, seq_a, seq_b, n: int, shifted: bool = False):
    """Per-root-state moments of ``S^a = sum_l M_{G_{n-l}}(a_l)`` and ``S^b``.

    Returns ``(E_x S^a, E_x S^b, Cov_x(S^a, S^b))`` as arrays over ``x``.  The
    statistic of depth ``d`` at a node is its own triangle term ``a_d`` plus
    the depth ``d-1`` statistics of its two (conditionally independent)
    daughter subtrees, so by the law of total covariance

        Cov_x = P(c(y) + c(z))(x) + Cov_{(y,z) ~ P(x)}(T^a, T^b),
        T^a(x, y, z) = a_d(x, y, z) + E_y S^a + E_z S^a.

    Working with covariances (each ``T`` centered per mother before the
    product) keeps the recursion stable even when means grow like ``2^n``.
    Covariances ignore constant shifts of the means, so a constant is split
    off at every level; with ``shifted`` the means come back without it
    (exact up to an additive constant, and free of its rounding).
    """
    m = P.m
    ma, mb, cab = np.zeros(m), np.zeros(m), np.zeros(m)
    Ca = Cb = 0.0
    for d in range(n + 1):
        Ta = _term(seq_a, d, m) + ma[None, :, None] + ma[None, None, :]
        Tb = _term(seq_b, d, m) + mb[None, :, None] + mb[None, None, :]
        na, nb = apply_P(P, Ta), apply_P(P, Tb)
        Da, Db = Ta - na[:, None, None], Tb - nb[:, None, None]
        cab = apply_P(P, Da * Db + cab[None, :, None] + cab[None, None, :])
        sa, sb = float(na.mean()), float(nb.mean())
        ma, mb = na - sa, nb - sb
        Ca, Cb = 2 * Ca + sa, 2 * Cb + sb
    if shifted:
        return ma, mb, cab
    return ma + Ca, mb + Cb, cab


def _term(seq, d: int, m: int) -> np.ndarray:
    if isinstance(seq, FunctionSequence):
        return seq[d]
    if d < len(seq):
        return np.asarray(seq[d], dtype=float)
    return np.zeros((m, m, m))


def recursive_covariance(P: TriangleKernel, nu, seq_a, seq_b, n: int) -> float:
    """Exact ``Cov(S^a, S^b)`` (unnormalized) under initial law ``nu``."""
    law = _as_law(nu, P.m)
    ma, mb, cab = recursive_moments(P, seq_a, seq_b, n, shifted=True)
    return float(law @ cab + law @ ((ma - law @ ma) * (mb - law @ mb)))


def exact_statistic_moments(P: TriangleKernel, nu, seq: FunctionSequence, n: int, sd: SpectralData,
                            method: str = "enumerate", budget: int = DEFAULT_BUDGET) -> dict:
    """Exact mean and variance of ``N_{n,root}(seq)``.

    ``method="enumerate"`` sums over ``T_{n+1}``; ``method="recursive"`` uses
    the moment recursion. The mean vanishes when ``nu`` is the stationary law.
    """
    from .function_algebra import center

    terms = [center(t, sd, P)[0] for t in seq]
    if method == "enumerate":
        fn = statistic_functional(terms, n)
        m1, m2 = enumerate_expectation(P, nu, n + 1, lambda s: np.stack([fn(s), fn(s) ** 2], axis=1), budget=budget)
        m1, var = float(m1), float(m2 - m1 * m1)
    elif method == "recursive":
        law = _as_law(nu, P.m)
        ma, _, _ = recursive_moments(P, terms, terms, n)
        m1 = float(law @ ma) * 2.0 ** (-n / 2)
        var = recursive_covariance(P, law, terms, terms, n) * 2.0 ** (-n)
    else:
        raise ValueError(f"unknown method {method!r}")
    return {"mean": m1, "variance": var, "second_moment": var + m1 * m1}


def special_finite_variance(P: TriangleKernel, nu, seq: FunctionSequence, n: int) -> float:
    """Finite-n variance of ``N_n`` for a conditionally centered sequence:
    ``sum_l 2^{-l} nu Q^{n-l} P(f_l^2)``, since cross terms vanish."""
    law = _as_law(nu, P.m)
    total = 0.0
    for ell, f in enumerate(seq):
        if ell > n:
            break
        total += 2.0 ** -ell * float(law @ apply_Q_power(P.Q, apply_P(P, f * f), n - ell))
    return total


def triangle_chain_expectation(P: TriangleKernel, start, f, n: int, budget: int = DEFAULT_BUDGET) -> float:
    """``E[f(Y_n^tri) | Y_0^tri = start]`` for the triangle chain, enumerated by
    following a uniformly chosen lineage through a tree of depth ``n+1``.

    Uses ``E[f(Y_n)] = 2^{-n} E[M_{G_n}(f)]`` with the root triangle fixed.
    """
    x, x0, x1 = start
    if n == 0:
        return float(np.asarray(f)[x, x0, x1])
    # condition on the root triangle: enumerate the subtrees below both daughters
    total = 0.0
    for root in (x0, x1):
        total += enumerate_expectation(P, root, n, triangle_generation_sum(f, n - 1), budget=budget)
    return float(total) / 2.0 ** n
