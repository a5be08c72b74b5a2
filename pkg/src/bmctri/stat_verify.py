"""Verdicts for the limit theorems built from replicate sets."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import LengthMismatch, TooFewReplicates
from .exact_oracle import _as_law, triangle_second_moment
from .function_algebra import FunctionSequence, center
from .kernel_core import CRITICAL, SUB_CRITICAL, SpectralData, TriangleKernel
from .tree_simulator import pn

AD_CRITICAL_1PCT = 1.092


@dataclass(frozen=True)
class MomentSummary:
    R: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    skewness: float
    skewness_se: float
    excess_kurtosis: float
    kurtosis_se: float
    second_moment: float
    second_moment_se: float

    @property
    def se_valid(self) -> bool:
        return self.R >= 30


@dataclass
class Verdict:
    label: str
    observed: float
    expected: float
    tolerance: float
    passed: bool = field(init=False)
    status: str = "checked"
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.passed = bool(abs(self.observed - self.expected) <= self.tolerance) and self.status != "degenerate"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["provenance"] = "monte_carlo" if self.details.get("sampled", True) else "formula"
        return d


def _values(s) -> np.ndarray:
    return np.asarray(getattr(s, "statistics", s), dtype=float)


def moment_summary(s) -> MomentSummary:
    """Unbiased sample moments with their usual standard errors."""
    x = _values(s)
    R = len(x)
    if R < 2:
        raise TooFewReplicates("need at least two replicates")
    mean = float(x.mean())
    var = float(x.var(ddof=1))
    sq = x * x
    if var > 0 and R >= 4:
        skew = float(stats.skew(x, bias=False))
        kurt = float(stats.kurtosis(x, bias=False))
    else:
        skew = kurt = 0.0
    se_skew = math.sqrt(6.0 * R * (R - 1) / ((R - 2) * (R + 1) * (R + 3))) if R > 2 else math.inf
    se_kurt = 2 * se_skew * math.sqrt((R * R - 1) / ((R - 3) * (R + 5))) if R > 3 else math.inf
    return MomentSummary(
        R=R, mean=mean, mean_se=math.sqrt(var / R),
        variance=var, variance_se=var * math.sqrt(2.0 / (R - 1)),
        skewness=skew, skewness_se=se_skew, excess_kurtosis=kurt, kurtosis_se=se_kurt,
        second_moment=float(sq.mean()), second_moment_se=float(sq.std(ddof=1) / math.sqrt(R)),
    )


def gaussian_fit_test(s, label: str = "gaussian_fit") -> Verdict:
    """Skewness and kurtosis within 4 SE of zero and Anderson-Darling
    (parameters estimated) below the 1% critical value.

    ``observed`` is the largest of the three ratios to their thresholds, so
    the verdict passes when it is at most one.
    """
    x = _values(s)
    R = len(x)
    if R < 100:
        raise TooFewReplicates(f"gaussian fit needs R >= 100, got {R}")
    ms = moment_summary(x)
    if ms.variance <= 0.0:
        return Verdict(label, 0.0, 0.0, 1.0, status="degenerate", details={"reason": "DegenerateSample"})
    a2 = float(stats.anderson(x, dist="norm").statistic)
    a_star = a2 * (1 + 0.75 / R + 2.25 / R ** 2)
    ratios = {
        "skewness": abs(ms.skewness) / (4 * ms.skewness_se),
        "kurtosis": abs(ms.excess_kurtosis) / (4 * ms.kurtosis_se),
        "anderson_darling": a_star / AD_CRITICAL_1PCT,
    }
    return Verdict(label, max(ratios.values()), 0.0, 1.0,
                   details={"ratios": ratios, "A_star": a_star, "skewness": ms.skewness,
                            "excess_kurtosis": ms.excess_kurtosis})


def _target_value(t) -> float:
    return float(getattr(t, "total", t))


def variance_convergence(sets: Sequence, target, n_se: float = 3.0, slack: float = 1.0,
                         label: str = "variance_convergence") -> list:
    """Per-depth variance checks plus a trend check on ``|observed - target|``.

    A zero target means convergence to 0: the second moment is tracked and
    only the trend is judged. ``target`` may be a single value or one per set.
    """
    if len(sets) < 2:
        raise ValueError("need at least two depths")
    targets = list(target) if isinstance(target, (list, tuple)) else [target] * len(sets)
    targets = [_target_value(t) for t in targets]
    out, gaps, ses = [], [], []
    for s, t in zip(sets, targets):
        ms = moment_summary(s)
        depth = getattr(s, "depth", None)
        if t == 0.0:
            obs, se = ms.second_moment, ms.second_moment_se
        else:
            obs, se = ms.variance, ms.variance_se
            out.append(Verdict(f"{label}[n={depth}]", obs, t, n_se * se, details={"se": se, "depth": depth}))
        gaps.append(abs(obs - t))
        ses.append(se)
    excess = max(gaps[i + 1] - gaps[i] - slack * max(ses[i], ses[i + 1]) for i in range(len(gaps) - 1))
    out.append(Verdict(f"{label}[trend]", max(0.0, excess), 0.0, 0.0,
                       details={"gaps": gaps, "se": ses}))
    return out


def independence_check(a, b, target: float = 0.0, n_se: float = 3.0, label: str = "independence") -> Verdict:
    """Paired sample covariance against ``target`` with ``n_se`` standard errors."""
    x, y = _values(a), _values(b)
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)} replicates")
    R = len(x)
    if R < 2:
        raise TooFewReplicates("need at least two replicates")
    prod = (x - x.mean()) * (y - y.mean())
    cov = float(prod.sum() / (R - 1))
    se = float(prod.std(ddof=1) / math.sqrt(R))
    return Verdict(label, cov, float(target), n_se * se, details={"se": se})


# -- deterministic remainder bound --------------------------------------------------------

def remainder_bound(sd: SpectralData, P: TriangleKernel, seq, n: int, nu=None) -> float:
    """``|G_n|^{-1/2} sum_{k < n-p} E[M_{G_k}(f~_{n-k})^2]^{1/2}``, exact.

    A single triangle function stands for the constant sequence ``(f, f, ...)``;
    a finitely supported sequence gives 0 once ``p`` exceeds its support.
    ``nu`` defaults to the stationary law.
    """
    law = sd.mu.real if nu is None else _as_law(nu, P.m)
    if isinstance(seq, FunctionSequence):
        term = lambda ell: seq[ell]
    else:
        f0 = np.asarray(seq, dtype=float)
        term = lambda ell: f0
    total = 0.0
    for k in range(n - pn(n)):
        f = term(n - k)
        ft = center(f, sd, P)[0]
        if np.max(np.abs(ft)) <= 1e-12 * max(1.0, float(np.max(np.abs(f)))):
            continue    # centering left only rounding
        total += math.sqrt(max(0.0, float(law @ triangle_second_moment(P, ft, k))))
    return total * 2.0 ** (-n / 2)


def remainder_envelope(sd: SpectralData, n: int) -> float:
    p = pn(n)
    if sd.regime == SUB_CRITICAL:
        return 2.0 ** (-p / 2)
    if sd.regime == CRITICAL:
        return math.sqrt(n - p) * 2.0 ** (-p / 2)
    return (2 * sd.alpha ** 2) ** ((n - p) / 2) * 2.0 ** (-p / 2)


def remainder_diagnostic(sd: SpectralData, P: TriangleKernel, seq, ns: Sequence[int] = (9, 16, 25),
                         nu=None, label: str = "remainder") -> Verdict:
    """Exact remainder bounds along ``ns``; passes when they strictly decrease.

    ``observed`` is the largest ratio of consecutive bounds (0 when the bound
    vanishes identically). The ratio of each bound to its regime envelope is
    reported alongside.
    """
    ns = sorted(ns)
    bounds = [remainder_bound(sd, P, seq, n, nu) for n in ns]
    env = [remainder_envelope(sd, n) for n in ns]
    if max(bounds) == 0.0 or len(bounds) < 2:
        worst = 0.0
    else:
        worst = max((b1 / b0 if b0 > 0 else math.inf) for b0, b1 in zip(bounds, bounds[1:]))
    return Verdict(label, worst, 0.0, 1.0 - 1e-15, details={
        "n": ns, "bounds": bounds, "envelope": env,
        "bound_over_envelope": [b / e for b, e in zip(bounds, env)], "sampled": False,
    })
