"""Asymptotic variances of the normalized triangle statistics.

Every infinite series is truncated with a certified tail: for a
``mu``-centered state function ``g`` the projector expansion gives
``max|Q^k g| <= C alpha^k`` with an explicit ``C`` (see
``kernel_core.projector_bound``), so each discarded tail is dominated by a
geometric series.

Cross-generation terms. The exact finite-tree recursion in ``exact_oracle``
shows that the limit variance of ``N_n`` is ``Sigma1 + 2 (Sigma21 + Sigma22)``
with ``Sigma21``/``Sigma22`` written with the weights ``2^{-l-1}`` and
``2^{r-l}``; the same factor two applies to the critical cross term. Reports
carry that total and keep the single-weight sums under ``printed``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ImagResidueExceeded, NonConvergent, NotConditionallyCentered, WrongRegime
from .function_algebra import FunctionSequence, apply_P, center, lift_mother, oplus, tensor
from .kernel_core import CRITICAL, SUB_CRITICAL, SpectralData, TriangleKernel, projector_bound

DEFAULT_TOL = 1e-12
MAX_TERMS = 100_000
IMAG_TOL = 1e-10


@dataclass
class VarianceReport:
    label: str
    total: float
    components: dict
    truncation_depth: dict = field(default_factory=dict)
    tail_bound: float = 0.0
    imag_residue: float = 0.0
    printed: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "provenance": "formula",
            "total": self.total,
            "components": dict(self.components),
            "truncation_depth": dict(self.truncation_depth),
            "tail_bound": self.tail_bound,
            "imag_residue": self.imag_residue,
            "printed": dict(self.printed),
        }


def _require(sd: SpectralData, regime: str) -> None:
    if sd.regime != regime:
        raise WrongRegime(f"needs {regime} regime, kernel is {sd.regime} (alpha={sd.alpha:.6g})")


def _depth(amplitude: float, rate: float, tol: float, factor: int = 1) -> tuple:
    """Smallest K with ``amplitude * rate^K / (1 - rate) <= tol``; returns
    ``(K * factor, tail bound at that depth)``."""
    if amplitude == 0 or rate == 0:
        K = 1
    else:
        if rate >= 1:
            raise NonConvergent(f"geometric rate {rate:.6g} >= 1")
        K = max(1, math.ceil(math.log(tol * (1 - rate) / amplitude) / math.log(rate)))
        if K > MAX_TERMS:
            raise NonConvergent(f"series needs {K} terms")
    K *= factor
    tail = amplitude * rate ** K / (1 - rate) if rate > 0 else 0.0
    return K, tail


class _Iterates:
    """Cached ``Q^k g`` with the ``mu``-component removed at every step, so
    rounding in the centering is not amplified by the ``2^k`` weights."""

    def __init__(self, sd: SpectralData, g):
        self.Q = sd.Q
        self.mu = sd.mu
        g = np.asarray(g, dtype=float)
        self.seq = [g - self.mu @ g]

    def __getitem__(self, k: int) -> np.ndarray:
        while len(self.seq) <= k:
            h = self.Q @ self.seq[-1]
            self.seq.append(h - self.mu @ h)
        return self.seq[k]


def _pair(P, sd, a, b, mode="otimes") -> float:
    return float(sd.mu @ apply_P(P, tensor(a, b, mode)))


def sigma_sub(sd: SpectralData, P: TriangleKernel, seq: FunctionSequence, tol: float = DEFAULT_TOL,
              depth_factor: int = 1) -> VarianceReport:
    """Limit variance of ``N_{n,root}(seq)`` when ``2 alpha^2 < 1``."""
    _require(sd, SUB_CRITICAL)
    ft = seq.centered(sd, P)
    L = len(ft)
    its = [_Iterates(sd, apply_P(P, f)) for f in ft]
    C = [projector_bound(sd, it[0]) for it in its]
    rho = 2 * sd.alpha ** 2
    n_series = L + L * (L - 1) // 2
    share = tol / max(1, n_series) / 2

    diag = sum(2.0 ** -ell * float(sd.mu @ apply_P(P, ft[ell] ** 2)) for ell in range(L))
    s1_tree, tail, K_max = 0.0, 0.0, 0
    for ell in range(L):
        amp = 2.0 ** -ell * C[ell] ** 2
        K, t = _depth(amp, rho, share, depth_factor)
        tail += t
        K_max = max(K_max, K)
        h = its[ell]
        s1_tree += sum(2.0 ** (k - ell) * _pair(P, sd, h[k], h[k]) for k in range(K))

    s21 = 0.0
    s22, R_max = 0.0, 0
    for k in range(L):
        for ell in range(k):
            h = its[ell][k - ell - 1]
            s21 += 2.0 ** (-ell - 1) * float(sd.mu @ apply_P(P, ft[k] * oplus(h, h)))
            amp = 2.0 ** -ell * C[k] * C[ell] * sd.alpha ** (k - ell)
            R, t = _depth(amp, rho, share, depth_factor)
            tail += 2 * t
            R_max = max(R_max, R)
            s22 += sum(2.0 ** (r - ell) * _pair(P, sd, its[k][r], its[ell][r + k - ell], "otimes_sym")
                       for r in range(R))

    s1 = diag + s1_tree
    comps = {"Sigma1": s1, "Sigma2_1": 2 * s21, "Sigma2_2": 2 * s22}
    return VarianceReport(
        label="sigma_sub",
        total=s1 + 2 * s21 + 2 * s22,
        components=comps,
        truncation_depth={"k": K_max, "r": R_max},
        tail_bound=tail,
        printed={"Sigma1": s1, "Sigma2_1": s21, "Sigma2_2": s22, "total": s1 + s21 + s22},
    )


def sigma_special(sd: SpectralData, P: TriangleKernel, seq: FunctionSequence, atol: float = 1e-12) -> VarianceReport:
    """``sum_l 2^{-l} <mu, P f_l^2>`` for conditionally centered sequences
    (any regime)."""
    for ell, f in enumerate(seq):
        worst = float(np.max(np.abs(apply_P(P, f))))
        if worst > atol:
            raise NotConditionallyCentered(f"term {ell}: max|P f| = {worst:.3g}")
    terms = [2.0 ** -ell * float(sd.mu @ apply_P(P, f * f)) for ell, f in enumerate(seq)]
    total = float(sum(terms))
    return VarianceReport(
        label="sigma_special",
        total=total,
        components={"Sigma": total},
        truncation_depth={"l": len(terms)},
        printed={"total": total},
    )


def crit_pair(sd: SpectralData, P: TriangleKernel, gk, gl, k: int, ell: int) -> complex:
    """``<mu, P(P f*_{k,l})>`` with ``P f*_{k,l} = sum_j theta_j^{l-k}
    R_j(g_k) (x)_sym conj(R_j)(g_l)``."""
    total = 0j
    for theta, R in zip(sd.thetas_j, sd.projectors_j):
        a = R @ gk
        b = np.conj(R) @ gl
        pair = 0.5 * (np.outer(a, b) + np.outer(b, a))
        total += theta ** (ell - k) * complex(sd.mu @ np.einsum("xyz,yz->x", P.probs, pair))
    return total


def sigma_crit(sd: SpectralData, P: TriangleKernel, seq: FunctionSequence, tol: float = DEFAULT_TOL) -> VarianceReport:
    """Limit variance of ``n^{-1/2} N_{n,root}(seq)`` when ``2 alpha^2 = 1``."""
    _require(sd, CRITICAL)
    g = seq.conditional_means(P)
    L = len(g)
    s1 = sum(2.0 ** -ell * crit_pair(sd, P, g[ell], g[ell], ell, ell) for ell in range(L))
    s2 = 0j
    for k in range(L):
        for ell in range(k):
            s2 += 2.0 ** (-(k + ell) / 2) * crit_pair(sd, P, g[k], g[ell], k, ell)
    total = complex(s1) + 2 * s2
    imag = abs(total.imag) + abs(complex(s1).imag)
    if imag > IMAG_TOL:
        raise ImagResidueExceeded(f"imaginary residue {imag:.3g}")
    return VarianceReport(
        label="sigma_crit",
        total=float(total.real),
        components={"Sigma1": float(complex(s1).real), "Sigma2": float(2 * s2.real)},
        truncation_depth={"l": L},
        imag_residue=float(imag),
        printed={"Sigma1": float(complex(s1).real), "Sigma2": float(s2.real),
                 "total": float(complex(s1).real + s2.real)},
    )


def _tree_series(sd, P, b, tol, depth_factor=1):
    """``sum_{k>=0} 2^k <mu, P(Q^k b (x) Q^k b)>`` and its tail bound."""
    it = _Iterates(sd, b)
    C = projector_bound(sd, it[0])
    K, tail = _depth(C * C, 2 * sd.alpha ** 2, tol, depth_factor)
    return sum(2.0 ** k * _pair(P, sd, it[k], it[k]) for k in range(K)), tail, K


def sigma_G_sub(sd: SpectralData, P: TriangleKernel, f, tol: float = DEFAULT_TOL) -> float:
    """Limit variance of ``|G_n|^{-1/2} M_{G_n}(P f~)``."""
    _require(sd, SUB_CRITICAL)
    ft, _ = center(f, sd, P)
    b = apply_P(P, ft)
    b = b - sd.mu @ b
    series, _, _ = _tree_series(sd, P, b, tol / 2)
    return float(sd.mu @ (b * b)) + series


@dataclass
class PairCovariances:
    """Covariance matrices of the pair ``(f - P f, P f~)``.

    ``SigmaG2``, ``SigmaT2`` and ``SigmaG2prime`` follow the closed forms as
    written; ``derived`` holds the matrices recomputed from the pair-counting
    of the tree, which is what the exact recursion and simulation reproduce.
    """

    SigmaG2: np.ndarray
    SigmaT2: np.ndarray
    SigmaG2prime: np.ndarray
    derived: dict
    tail_bound: float

    def to_dict(self) -> dict:
        return {
            "provenance": "formula",
            "SigmaG2": self.SigmaG2.tolist(),
            "SigmaT2": self.SigmaT2.tolist(),
            "SigmaG2prime": self.SigmaG2prime.tolist(),
            "derived": {k: v.tolist() for k, v in self.derived.items()},
            "tail_bound": self.tail_bound,
        }


def covariance_pair_matrices(sd: SpectralData, P: TriangleKernel, f, tol: float = DEFAULT_TOL) -> PairCovariances:
    _require(sd, SUB_CRITICAL)
    f = np.asarray(f, dtype=float)
    ft, _ = center(f, sd, P)
    a = ft - lift_mother(apply_P(P, ft))
    b = apply_P(P, ft)
    b = b - sd.mu @ b
    it = _Iterates(sd, b)
    Cb = projector_bound(sd, b)
    alpha, rho = sd.alpha, 2 * sd.alpha ** 2
    share = tol / 8

    innov = float(sd.mu @ apply_P(P, a * a))          # <mu, P f^2 - (P f)^2>
    sG = sigma_G_sub(sd, P, f, tol=share)

    # h(d) = <mu, P(a (Q^{d-1} b (+) Q^{d-1} b))>, |h(d)| <= 2 |a|_inf Cb alpha^{d-1}
    amp = 2 * float(np.max(np.abs(a))) * Cb
    D, tail_h = _depth(amp, alpha, share)
    h_sum = sum(float(sd.mu @ apply_P(P, a * oplus(it[d - 1], it[d - 1]))) for d in range(1, D + 1))
    # sum_{d>=1} <mu, b Q^d b>
    D2, tail_q = _depth(Cb * Cb * alpha, alpha, share)
    bq_sum = sum(float(sd.mu @ (b * it[d])) for d in range(1, D2 + 1))
    # sum_{d>=1, r>=0} 2^r <mu, P(Q^r b (x)_sym Q^{r+d} b)>
    D3, tail_d = _depth(Cb * Cb * alpha / (1 - rho), alpha, share)
    R3, tail_r = _depth(Cb * Cb * alpha / (1 - alpha) if alpha < 1 else 0.0, rho, share)
    cous = 0.0
    for d in range(1, D3 + 1):
        cous += sum(2.0 ** r * _pair(P, sd, it[r], it[r + d], "otimes_sym") for r in range(R3))

    t22 = sG + 2 * bq_sum + 2 * cous
    printed_T = np.array([[innov, 2 * h_sum], [2 * h_sum, t22]])
    derived_T = np.array([[innov, 0.5 * h_sum], [0.5 * h_sum, t22]])
    G2 = np.diag([innov, sG])
    G2p = np.array([[innov, 2 * innov], [2 * innov, sG]])
    G2p_derived = np.array([[innov, innov], [innov, innov + sG]])
    tail = 2 * tail_h + 2 * tail_q + 2 * (tail_d + tail_r) + 2 * share
    return PairCovariances(
        SigmaG2=G2,
        SigmaT2=printed_T,
        SigmaG2prime=G2p,
        derived={"SigmaG2": G2.copy(), "SigmaT2": derived_T, "SigmaG2prime": G2p_derived},
        tail_bound=tail,
    )


def sigma_for_regime(sd: SpectralData, P: TriangleKernel, seq: FunctionSequence, tol: float = DEFAULT_TOL) -> VarianceReport:
    """Dispatch: special formula when ``P f_l = 0``, else by regime. In the
    super-critical regime the limit of ``(2 alpha^2)^{-n/2} N_n`` minus its
    projection is 0."""
    if seq.is_conditionally_centered(P):
        return sigma_special(sd, P, seq)
    if sd.regime == SUB_CRITICAL:
        return sigma_sub(sd, P, seq, tol)
    if sd.regime == CRITICAL:
        return sigma_crit(sd, P, seq, tol)
    return VarianceReport(label="super_critical_residual", total=0.0, components={"residual": 0.0})
