"""Sampling bifurcating Markov chains on the complete binary tree and
evaluating additive triangle statistics on the samples.

Node ``u`` lives in slot ``s`` of a flat array; its daughters are slots
``2s+1`` and ``2s+2`` and generation ``k`` occupies ``[2^k - 1, 2^{k+1} - 1)``.
The daughters of slot ``s`` are drawn from one uniform that is a pure
function of ``(seed, s)`` (Philox counter ``s // 4``, lane ``s % 4``), so a tree
does not depend on how the work is split.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import SubsetOutOfRange, SupportExceedsDepth, WrongRegime, NotConditionallyCentered
from .function_algebra import FunctionSequence, apply_P, apply_Q_power, center, lift_mother
from .kernel_core import SUPER_CRITICAL, SpectralData, TriangleKernel

_BRANCH_STREAM = 0
_ROOT_STREAM = 1
_MASK64 = (1 << 64) - 1


def slot_uniforms(seed: int, start: int, count: int, stream: int = _BRANCH_STREAM) -> np.ndarray:
    """Uniforms in [0, 1) for slots ``start, ..., start + count - 1``."""
    key = np.array([seed & _MASK64, stream], dtype=np.uint64)
    bg = np.random.Philox(key=key, counter=np.array([start // 4, 0, 0, 0], dtype=np.uint64))
    lane = start % 4
    raw = bg.random_raw(count + lane)[lane:]
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def _categorical(u: np.ndarray, cum: np.ndarray) -> np.ndarray:
    """Index of the first cumulative entry exceeding ``u``, row by row."""
    idx = np.zeros(u.shape[0], dtype=np.int64)
    for j in range(cum.shape[1] - 1):
        idx += u >= cum[:, j]
    return idx


@dataclass(frozen=True)
class TreeSample:
    depth: int
    states: np.ndarray
    rng_seed: int

    def generation(self, k: int) -> np.ndarray:
        if k < 0 or k > self.depth + 1:
            raise SubsetOutOfRange(f"generation {k} outside 0..{self.depth + 1}")
        return self.states[2 ** k - 1: 2 ** (k + 1) - 1]

    def triangles(self, k: int):
        """``(X_u, X_u0, X_u1)`` for ``u`` in generation ``k``."""
        if k < 0 or k > self.depth:
            raise SubsetOutOfRange(f"generation {k} outside 0..{self.depth}")
        lo, hi = 2 ** k - 1, 2 ** (k + 1) - 1
        kids = self.states[2 * lo + 1: 2 * hi + 1]
        return self.states[lo:hi], kids[0::2], kids[1::2]


def sample_tree(P: TriangleKernel, nu, n: int, seed: int) -> TreeSample:
    """Sample ``X`` on ``T_{n+1}`` (so every triangle of ``T_n`` is complete)."""
    m = P.m
    law = _law(nu, m)
    dtype = np.uint8 if m <= 255 else np.int32
    states = np.empty(2 ** (n + 2) - 1, dtype=dtype)
    root_cum = np.cumsum(law)
    root_cum[-1] = 1.0
    u0 = slot_uniforms(seed, 0, 1, stream=_ROOT_STREAM)
    states[0] = _categorical(u0, root_cum[None, :])[0]

    cum = np.cumsum(P.probs.reshape(m, m * m), axis=1)
    cum[:, -1] = 1.0
    mothers_total = 2 ** (n + 1) - 1
    u_all = slot_uniforms(seed, 0, mothers_total)
    for g in range(n + 1):
        lo, hi = 2 ** g - 1, 2 ** (g + 1) - 1
        c = _categorical(u_all[lo:hi], cum[states[lo:hi]])
        kids = states[2 * lo + 1: 2 * hi + 1]
        kids[0::2] = c // m
        kids[1::2] = c % m
    states.setflags(write=False)
    return TreeSample(depth=n, states=states, rng_seed=int(seed))


def _law(nu, m: int) -> np.ndarray:
    if np.isscalar(nu):
        law = np.zeros(m)
        law[int(nu)] = 1.0
        return law
    law = np.asarray(nu, dtype=float)
    if law.shape != (m,) or abs(law.sum() - 1) > 1e-12 or np.any(law < 0):
        raise ValueError("initial law must be a probability vector of length m")
    return law


def additive_functional(tree: TreeSample, f, k: int, cumulative: bool = False) -> float:
    """``M_{G_k}(f)``, or ``M_{T_k}(f)`` when ``cumulative``."""
    if k > tree.depth or k < 0:
        raise SubsetOutOfRange(f"subset depth {k} exceeds tree depth {tree.depth}")
    f = np.asarray(f)
    gens = range(k + 1) if cumulative else (k,)
    total = 0.0
    for g in gens:
        x, y, z = tree.triangles(g)
        total += float(f[x, y, z].sum())
    return total


def pn(n: int) -> int:
    return n - math.ceil(math.sqrt(n))


def normalized_statistic(tree: TreeSample, seq: FunctionSequence, sd: SpectralData, P: TriangleKernel,
                         scaling: str = "none", centered_terms=None) -> float:
    """``N_{n,root}(seq) = |G_n|^{-1/2} sum_l M_{G_{n-l}}(f~_l)``, optionally
    times ``n^{-1/2}`` (critical) or ``(2 alpha^2)^{-n/2}`` (supercritical)."""
    n = tree.depth
    if seq.L > n:
        raise SupportExceedsDepth(f"sequence support {seq.L} exceeds depth {n}")
    terms = centered_terms if centered_terms is not None else seq.centered(sd, P)
    total = sum(additive_functional(tree, t, n - ell) for ell, t in enumerate(terms))
    out = total * 2.0 ** (-n / 2)
    if scaling == "critical":
        out *= n ** -0.5 if n > 0 else 1.0
    elif scaling == "supercritical":
        out *= (2 * sd.alpha ** 2) ** (-n / 2)
    elif scaling != "none":
        raise ValueError(f"unknown scaling {scaling!r}")
    return float(out)


def martingale_projection(tree: TreeSample, g, j: int, sd: SpectralData, level: Optional[int] = None) -> complex:
    """``M_{n,j}(g) = (2 alpha_j)^{-n} sum_{u in G_n} (R_j g)(X_u)``; ``j``
    indexes ``sd.J``."""
    if sd.regime != SUPER_CRITICAL:
        raise WrongRegime("martingale projections need the super-critical regime")
    n = tree.depth if level is None else level
    Rg = sd.projectors_j[j] @ np.asarray(g, dtype=float)
    return complex(Rg[tree.generation(n)].sum() / (2 * sd.alphas_j[j]) ** n)


def supercritical_residual(tree: TreeSample, seq: FunctionSequence, sd: SpectralData, P: TriangleKernel) -> float:
    """``(2 alpha^2)^{-n/2} N_n - sum_l (2 alpha)^{-l} sum_j theta_j^{n-l} M_{n,j}(P f_l)``."""
    n = tree.depth
    scaled = normalized_statistic(tree, seq, sd, P, scaling="supercritical")
    proj = 0j
    for ell, f in enumerate(seq):
        g = apply_P(P, f)
        for j, theta in enumerate(sd.thetas_j):
            proj += (2 * sd.alpha) ** -ell * theta ** (n - ell) * martingale_projection(tree, g, j, sd)
    return float(scaled - proj.real)


def bracket_weights(seq: FunctionSequence, P: TriangleKernel, p: int) -> np.ndarray:
    """``sum_{l<=p} 2^{-l} Q^{p-l} P f_l^2`` as a state function."""
    w = np.zeros(P.m)
    for ell, f in enumerate(seq):
        if ell > p:
            break
        w += 2.0 ** -ell * apply_Q_power(P.Q, apply_P(P, f * f), p - ell)
    return w


def empirical_bracket(tree: TreeSample, seq: FunctionSequence, sd: SpectralData, P: TriangleKernel,
                      weights=None, n: Optional[int] = None) -> float:
    """``V_n = |G_{n-p}|^{-1} sum_{i in G_{n-p}} sum_l 2^{-l} Q^{p-l} P f_l^2 (X_i)``
    with ``p = n - ceil(sqrt n)``.

    ``n`` defaults to the tree depth; a shallower tree is enough since only
    generation ``n - p`` is read, and slot-keyed draws make it a prefix of the
    deeper tree.
    """
    n = tree.depth if n is None else n
    if weights is None:
        if not seq.is_conditionally_centered(P):
            raise NotConditionallyCentered("the bracket needs P f_l = 0 for every l")
        weights = bracket_weights(seq, P, pn(n))
    return float(np.mean(weights[tree.generation(n - pn(n))]))


# -- Monte Carlo --------------------------------------------------------------------------

STATISTICS = (
    "N",                 # N_n
    "N_critical",        # n^{-1/2} N_n
    "N_supercritical",   # (2 alpha^2)^{-n/2} N_n
    "supercritical_residual",
    "bracket",           # V_n
    "pair_G_innovation", "pair_G_mean",   # |G_n|^{-1/2} M_{G_n}(f - P f), |G_n|^{-1/2} M_{G_n}(P f~)
    "pair_T_innovation", "pair_T_mean",   # same over T_n with |T_n|^{-1/2}
    "pair_G_full",       # |G_n|^{-1/2} M_{G_n}(f~)
    "generation_sum",    # M_{G_n}(f_0), uncentered
)


@dataclass(frozen=True)
class SimulationConfig:
    kernel: TriangleKernel
    nu: object
    depth: int
    replicates: int
    seed: int
    sequence: FunctionSequence
    statistic: str = "N"
    threads: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        _law(self.nu, self.kernel.m)
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")

    def digest(self, statistic: Optional[str] = None) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.kernel.probs).tobytes())
        h.update(np.ascontiguousarray(_law(self.nu, self.kernel.m)).tobytes())
        for t in self.sequence:
            h.update(np.ascontiguousarray(t).tobytes())
        h.update(json.dumps([self.depth, self.replicates, self.seed, statistic or self.statistic]).encode())
        return h.hexdigest()[:16]


@dataclass
class ReplicateSet:
    statistics: np.ndarray
    seeds: np.ndarray
    label: str
    depth: int
    config_hash: str

    def __len__(self) -> int:
        return len(self.statistics)

    def csv_rows(self):
        for r, (s, v) in enumerate(zip(self.seeds, self.statistics)):
            yield r, int(s), format(float(v), ".17g"), self.label


def replicate_seed(base_seed: int, r: int) -> int:
    return int(np.random.SeedSequence([base_seed & _MASK64, r]).generate_state(1, np.uint64)[0])


def _evaluators(seq: FunctionSequence, sd: SpectralData, P: TriangleKernel, depth: int) -> dict:
    terms = seq.centered(sd, P)
    f0 = terms[0]
    b = apply_P(P, f0)
    b = b - sd.mu @ b
    innov = f0 - lift_mother(apply_P(P, f0))
    mean_part = lift_mother(b)
    norm_G = 2.0 ** (-depth / 2)
    norm_T = (2.0 ** (depth + 1) - 1) ** -0.5
    cache = {}

    def bracket(tree):
        if "w" not in cache:
            if not seq.is_conditionally_centered(P):
                raise NotConditionallyCentered("the bracket needs P f_l = 0 for every l")
            cache["w"] = bracket_weights(seq, P, pn(depth))
        return empirical_bracket(tree, seq, sd, P, weights=cache["w"], n=depth)

    return {
        "N": lambda t: normalized_statistic(t, seq, sd, P, "none", terms),
        "N_critical": lambda t: normalized_statistic(t, seq, sd, P, "critical", terms),
        "N_supercritical": lambda t: normalized_statistic(t, seq, sd, P, "supercritical", terms),
        "supercritical_residual": lambda t: supercritical_residual(t, seq, sd, P),
        "bracket": bracket,
        "pair_G_innovation": lambda t: norm_G * additive_functional(t, innov, depth),
        "pair_G_mean": lambda t: norm_G * additive_functional(t, mean_part, depth),
        "pair_T_innovation": lambda t: norm_T * additive_functional(t, innov, depth, cumulative=True),
        "pair_T_mean": lambda t: norm_T * additive_functional(t, mean_part, depth, cumulative=True),
        "pair_G_full": lambda t: norm_G * additive_functional(t, f0, depth),
        "generation_sum": lambda t: additive_functional(t, seq[0], depth),
    }


def monte_carlo_many(config: SimulationConfig, sd: SpectralData, labels: Sequence[str]) -> dict:
    """Evaluate several statistics on the same ``R`` trees (paired sampling)."""
    for lab in labels:
        if lab not in STATISTICS:
            raise ValueError(f"unknown statistic {lab!r}")
    if config.sequence.L > config.depth:
        raise SupportExceedsDepth(f"sequence support {config.sequence.L} exceeds depth {config.depth}")
    evals = _evaluators(config.sequence, sd, config.kernel, config.depth)
    seeds = np.array([replicate_seed(config.seed, r) for r in range(config.replicates)], dtype=np.uint64)

    # the bracket only reads generation n - p
    sample_depth = config.depth - pn(config.depth) if list(labels) == ["bracket"] else config.depth

    def one(r):
        tree = sample_tree(config.kernel, config.nu, sample_depth, int(seeds[r]))
        return [evals[lab](tree) for lab in labels]

    if config.threads == 1:
        rows = [one(r) for r in range(config.replicates)]
    else:
        workers = None if config.threads <= 0 else config.threads
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(config.replicates)))
    values = np.array(rows, dtype=float).reshape(config.replicates, len(labels))
    return {
        lab: ReplicateSet(values[:, i].copy(), seeds, lab, config.depth, config.digest(lab))
        for i, lab in enumerate(labels)
    }


def monte_carlo(config: SimulationConfig, sd: SpectralData) -> ReplicateSet:
    return monte_carlo_many(config, sd, [config.statistic])[config.statistic]
