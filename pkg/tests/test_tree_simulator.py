import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bmctri import FunctionSequence, TriangleKernel, affine, analyze, k1, k2, k3, random_kernel
from bmctri.errors import NotConditionallyCentered, SubsetOutOfRange, SupportExceedsDepth, WrongRegime
from bmctri.function_algebra import apply_P, apply_Q_power, standardized_innovation
from bmctri.tree_simulator import (
    SimulationConfig, additive_functional, bracket_weights, empirical_bracket, martingale_projection,
    monte_carlo, monte_carlo_many, normalized_statistic, pn, replicate_seed, sample_tree, slot_uniforms,
    supercritical_residual,
)


def test_layout_and_generations():
    t = sample_tree(k1(), 0, 4, 1)
    assert t.states.shape == (2 ** 6 - 1,)
    assert t.states[0] == 0
    for k in range(6):
        assert len(t.generation(k)) == 2 ** k
    x, y, z = t.triangles(4)
    assert len(x) == 16
    assert np.array_equal(y, t.states[2 * np.arange(15, 31) + 1])
    with pytest.raises(SubsetOutOfRange):
        t.triangles(5)


def test_slot_uniforms_are_slot_keyed():
    full = slot_uniforms(9, 0, 40)
    for start in (0, 1, 3, 5, 17):
        np.testing.assert_array_equal(slot_uniforms(9, start, 40 - start), full[start:])
    assert np.all((full >= 0) & (full < 1))


def test_deterministic_kernel():
    probs = np.zeros((3, 3, 3))
    probs[0, 1, 2] = probs[1, 2, 0] = probs[2, 0, 1] = 1.0
    P = TriangleKernel(probs)
    t = sample_tree(P, 2, 3, 123)
    u = sample_tree(P, 2, 3, 999)
    assert np.array_equal(t.states, u.states)
    assert t.states[0] == 2 and t.states[1] == 0 and t.states[2] == 1


@given(seed=st.integers(0, 2 ** 64 - 1))
def test_bit_identical_per_seed(seed):
    a = sample_tree(random_kernel(3, 1), 1, 6, seed)
    b = sample_tree(random_kernel(3, 1), 1, 6, seed)
    assert np.array_equal(a.states, b.states)


def test_prefix_property():
    # shallower trees are prefixes of deeper ones with the same seed
    deep = sample_tree(k3(), 0, 10, 4)
    shallow = sample_tree(k3(), 0, 5, 4)
    assert np.array_equal(deep.states[: len(shallow.states)], shallow.states)


def test_generation_frequencies_k1():
    t = sample_tree(k1(), 0, 20, 2024)
    freq = np.bincount(t.generation(20), minlength=2) / 2 ** 20
    target = np.linalg.matrix_power(k1().Q, 20)[0]
    assert np.all(np.abs(freq - target) < 3 / 2 ** 10)


def test_additive_functional_counts():
    t = sample_tree(k1(), 0, 6, 5)
    one = np.ones((2, 2, 2))
    assert additive_functional(t, one, 4) == 16
    assert additive_functional(t, one, 4, cumulative=True) == 31
    with pytest.raises(SubsetOutOfRange):
        additive_functional(t, one, 7)
    probs = np.zeros((2, 2, 2))
    probs[:, 0, 0] = 1.0
    z = sample_tree(TriangleKernel(probs), 0, 5, 0)
    ind = np.zeros((2, 2, 2))
    ind[0] = 1.0
    assert additive_functional(z, ind, 5, cumulative=True) == 63


def test_normalized_statistic_properties():
    P = k1()
    sd = analyze(P)
    t = sample_tree(P, sd.mu, 8, 77)
    const = FunctionSequence([np.full((2, 2, 2), 2.5), np.full((2, 2, 2), -1.0)])
    assert abs(normalized_statistic(t, const, sd, P)) < 1e-12
    f, g = affine(2, 1, 2, 3), affine(2, -1, 0, 2)
    a = FunctionSequence([f, g])
    b = FunctionSequence([g, f, f])
    ab = normalized_statistic(t, a + b, sd, P)
    assert ab == pytest.approx(normalized_statistic(t, a, sd, P) + normalized_statistic(t, b, sd, P), abs=1e-10)
    single = normalized_statistic(t, FunctionSequence([f]), sd, P)
    ft = f - sd.mu @ apply_P(P, f)
    assert single == pytest.approx(additive_functional(t, ft, 8) / 2 ** 4, abs=1e-12)
    assert normalized_statistic(t, a, sd, P, "critical") == pytest.approx(
        normalized_statistic(t, a, sd, P) / np.sqrt(8))
    with pytest.raises(SupportExceedsDepth):
        normalized_statistic(sample_tree(P, 0, 1, 0), b, sd, P)
    with pytest.raises(ValueError):
        normalized_statistic(t, a, sd, P, "weird")


def test_martingale_projection():
    P = k3()
    sd = analyze(P)
    t = sample_tree(P, 0, 6, 3)
    assert abs(martingale_projection(t, np.ones(2), 0, sd)) < 1e-14
    R = sd.projectors_j[0]
    g = np.array([1.0, -1.0])
    assert martingale_projection(t, g, 0, sd, level=0) == pytest.approx((R @ g)[t.states[0]])
    with pytest.raises(WrongRegime):
        martingale_projection(t, g, 0, analyze(k1()))


def test_martingale_cauchy_decay_k3():
    P = k3()
    sd = analyze(P)
    g = np.array([1.0, -1.0])
    diffs = {n: [] for n in range(8, 16)}
    for s in range(60):
        t = sample_tree(P, sd.mu, 16, replicate_seed(5, s))
        M = [martingale_projection(t, g, 0, sd, level=n).real for n in range(8, 17)]
        for i, n in enumerate(range(8, 16)):
            diffs[n].append(abs(M[i + 1] - M[i]))
    means = [np.mean(diffs[n]) for n in range(8, 16)]
    assert means[-1] < means[0] / 2


def test_bracket():
    P = k1()
    sd = analyze(P)
    t = sample_tree(P, sd.mu, 10, 1)
    zero = FunctionSequence([np.zeros((2, 2, 2))])
    assert empirical_bracket(t, zero, sd, P) == 0.0
    with pytest.raises(NotConditionallyCentered):
        empirical_bracket(t, FunctionSequence([affine(2, 1, 2, 3)]), sd, P)
    f = standardized_innovation(P, affine(2, 1, 2, 3)) * np.array([1.0, 2.0])[:, None, None]
    seq = FunctionSequence([f])
    w = bracket_weights(seq, P, 30)
    np.testing.assert_allclose(w, sd.mu @ apply_P(P, f * f), atol=1e-12)
    p = pn(10)
    expect = np.mean(apply_Q_power(P.Q, apply_P(P, f * f), p)[t.generation(10 - p)])
    assert empirical_bracket(t, seq, sd, P) == pytest.approx(expect)


def test_pn():
    assert [pn(n) for n in (1, 4, 9, 10, 18, 25)] == [0, 2, 6, 6, 13, 20]


def test_monte_carlo_determinism_and_threads():
    P = k1()
    sd = analyze(P)
    seq = FunctionSequence([affine(2, 1, 2, 3)])
    cfg = SimulationConfig(P, sd.mu, 7, 24, 42, seq, "N")
    a = monte_carlo(cfg, sd)
    b = monte_carlo(cfg, sd)
    c = monte_carlo(SimulationConfig(P, sd.mu, 7, 24, 42, seq, "N", threads=4), sd)
    assert np.array_equal(a.statistics, b.statistics) and np.array_equal(a.statistics, c.statistics)
    assert np.array_equal(a.seeds, c.seeds) and a.config_hash == c.config_hash
    rows = list(a.csv_rows())
    assert len(rows) == 24 and float(rows[3][2]) == a.statistics[3]
    d = monte_carlo(SimulationConfig(P, sd.mu, 7, 24, 43, seq, "N"), sd)
    assert not np.array_equal(a.statistics, d.statistics)


def test_monte_carlo_constant_sequence_is_zero():
    P = k2()
    sd = analyze(P)
    cfg = SimulationConfig(P, sd.mu, 6, 10, 1, FunctionSequence([np.full((2, 2, 2), 4.0)]), "N")
    assert np.all(np.abs(monte_carlo(cfg, sd).statistics) < 1e-12)


def test_config_validation():
    P = k1()
    seq = FunctionSequence([affine(2, 1, 2, 3)])
    with pytest.raises(ValueError):
        SimulationConfig(P, [0.5, 0.6], 3, 5, 0, seq)
    with pytest.raises(ValueError):
        SimulationConfig(P, 0, 3, 0, 0, seq)
    with pytest.raises(ValueError):
        SimulationConfig(P, 0, 3, 5, 0, seq, "nonsense")


def test_mean_check_many_to_one():
    P = k1()
    sd = analyze(P)
    f = affine(2, 1, 2, 3)
    cfg = SimulationConfig(P, 0, 6, 2000, 8, FunctionSequence([f]), "generation_sum")
    s = monte_carlo(cfg, sd).statistics
    target = 2 ** 6 * apply_Q_power(P.Q, apply_P(P, f), 6)[0]
    assert abs(s.mean() - target) < 3 * s.std(ddof=1) / np.sqrt(len(s))


def test_centered_statistic_mean_zero():
    P = k3()
    sd = analyze(P)
    seq = FunctionSequence([affine(2, 1, 2, 3), affine(2, 0, 1, -1)])
    s = monte_carlo(SimulationConfig(P, sd.mu, 8, 400, 3, seq, "N"), sd).statistics
    assert abs(s.mean()) < 3 * s.std(ddof=1) / np.sqrt(len(s))


def test_supercritical_residual_removes_projection():
    P = k3()
    sd = analyze(P)
    f = affine(2, 0, 0, 0) + np.array([1.0, -1.0])[:, None, None]
    seq = FunctionSequence([f])
    t = sample_tree(P, sd.mu, 6, 3)
    # f depends on the mother only and R f = f, so the residual is exactly 0
    assert abs(supercritical_residual(t, seq, sd, P)) < 1e-10


def test_performance_depth_20():
    P = k1()
    sample_tree(P, 0, 10, 0)
    t0 = time.perf_counter()
    sample_tree(P, 0, 20, 1)
    assert time.perf_counter() - t0 < 1.0
