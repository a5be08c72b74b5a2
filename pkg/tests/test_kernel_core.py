import numpy as np
import pytest
from hypothesis import given, strategies as st

from bmctri import (
    CRITICAL, SUB_CRITICAL, SUPER_CRITICAL, MarkovMatrix, TriangleKernel, analyze, build_triangle_kernel,
    circulant_kernel, classify_regime, k1, k2, k3, product_kernel, qq_kernel, random_kernel,
    spectral_analysis, symmetric_two_state,
)
from bmctri.errors import DimensionMismatch, NegativeEntry, NonDiagonalizable, NonStochastic, ReducibleChain
from bmctri.kernel_core import derive_operators, projector_bound, reconstruct


def test_k1_marginals_and_spectrum():
    P = k1()
    ops = derive_operators(P)
    np.testing.assert_allclose(ops["P0"].entries, [[0.8, 0.2], [0.3, 0.7]], atol=1e-15)
    np.testing.assert_allclose(ops["P1"].entries, [[0.9, 0.1], [0.4, 0.6]], atol=1e-15)
    np.testing.assert_allclose(P.Q, [[0.85, 0.15], [0.35, 0.65]], atol=1e-15)
    sd = analyze(P)
    np.testing.assert_allclose(sd.mu, [0.7, 0.3], atol=1e-14)
    assert sd.alpha == pytest.approx(0.5, abs=1e-14)
    assert sd.regime == SUB_CRITICAL


def test_named_regimes():
    assert analyze(k2()).regime == CRITICAL
    assert analyze(k2()).alpha == pytest.approx(2 ** -0.5, abs=1e-14)
    sd3 = analyze(k3())
    assert sd3.regime == SUPER_CRITICAL and sd3.alpha == pytest.approx(0.8, abs=1e-14)


def test_classify_boundaries():
    assert classify_regime(2 ** -0.5) == CRITICAL
    assert classify_regime(0.7) == SUB_CRITICAL
    assert classify_regime(0.71) == SUPER_CRITICAL


def test_circulant_conjugate_pair():
    sd = analyze(circulant_kernel(0.9))
    assert sd.alpha == pytest.approx(0.9, abs=1e-12)
    assert len(sd.J) == 2
    a, b = sd.alphas_j
    assert a == pytest.approx(np.conj(b), abs=1e-12)
    np.testing.assert_allclose(sd.mu, np.full(3, 1 / 3), atol=1e-13)


def test_validation_errors():
    with pytest.raises(NonStochastic):
        MarkovMatrix([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(NegativeEntry):
        MarkovMatrix([[1.2, -0.2], [0.5, 0.5]])
    with pytest.raises(DimensionMismatch):
        MarkovMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    with pytest.raises(NonStochastic):
        TriangleKernel(np.full((2, 2, 2), 0.3))


def test_reducible_and_defective():
    with pytest.raises(ReducibleChain):
        spectral_analysis(np.eye(2))
    with pytest.raises(ReducibleChain):
        spectral_analysis([[0.0, 1.0], [1.0, 0.0]])
    # eigenvalue 0.6 carries a 2x2 Jordan block
    defective = np.array([[0.6, 0.4, 0.0], [0.0, 0.6, 0.4], [0.0, 0.0, 1.0]])
    with pytest.raises(NonDiagonalizable):
        spectral_analysis(defective)


def test_build_from_descriptors():
    a = build_triangle_kernel({"type": "product", "P0": [[0.8, 0.2], [0.3, 0.7]], "P1": [[0.9, 0.1], [0.4, 0.6]]})
    np.testing.assert_array_equal(a.probs, k1().probs)
    b = build_triangle_kernel({"type": "QQ", "p": "critical"})
    np.testing.assert_array_equal(b.probs, k2().probs)
    c = build_triangle_kernel({"type": "random", "m": 3, "seed": 4})
    np.testing.assert_array_equal(c.probs, random_kernel(3, 4).probs)
    d = build_triangle_kernel(k3().probs.tolist())
    np.testing.assert_array_equal(d.probs, k3().probs)
    with pytest.raises(ValueError):
        build_triangle_kernel({"type": "nope"})


def test_deterministic_kernel_spectrum():
    # state 1 always sends both daughters to 0; state 0 keeps both at 0
    probs = np.zeros((2, 2, 2))
    probs[:, 0, 0] = 1.0
    sd = analyze(TriangleKernel(probs))
    np.testing.assert_allclose(sd.mu, [1.0, 0.0])
    assert sd.alpha == 0.0 and sd.J == ()


def _check_projectors(sd, tol=1e-9):
    m = sd.m
    one_mu = np.outer(np.ones(m), sd.mu)
    total = one_mu.astype(complex)
    for i, Ri in enumerate(sd.projectors):
        total = total + Ri
        for j, Rj in enumerate(sd.projectors):
            target = Ri if i == j else np.zeros_like(Ri)
            assert np.max(np.abs(Ri @ Rj - target)) < tol
        assert np.max(np.abs(sd.mu @ Ri)) < tol
        assert np.max(np.abs(Ri @ np.ones(m))) < tol
    assert np.max(np.abs(total - np.eye(m))) < tol
    assert np.max(np.abs(reconstruct(sd) - sd.Q)) < tol


@given(m=st.integers(2, 5), seed=st.integers(0, 10_000), conc=st.sampled_from([0.5, 1.0, 3.0]))
def test_random_kernel_projector_algebra(m, seed, conc):
    P = random_kernel(m, seed, conc)
    sd = analyze(P)
    np.testing.assert_allclose(sd.mu @ P.Q, sd.mu, atol=1e-12)
    assert abs(sd.mu.sum() - 1) < 1e-12
    _check_projectors(sd)
    assert 0 <= sd.beta_rate < 1 or sd.alpha == 0


@given(p=st.floats(0.05, 0.95), q=st.floats(0.05, 0.95))
def test_product_kernel_marginals(p, q):
    P0 = symmetric_two_state(p)
    P1 = [[q, 1 - q], [0.3, 0.7]]
    K = product_kernel(P0, P1)
    np.testing.assert_allclose(K.P0, P0, atol=1e-15)
    np.testing.assert_allclose(K.P1, P1, atol=1e-15)
    np.testing.assert_allclose(K.Q.sum(axis=1), 1.0, atol=1e-15)


def test_projector_bound_dominates_iterates():
    for P in (k1(), k3(), circulant_kernel(0.85), random_kernel(4, 9)):
        sd = analyze(P)
        g = np.arange(P.m, dtype=float)
        g = g - sd.mu @ g
        C = projector_bound(sd, g)
        h = g.copy()
        for k in range(40):
            assert np.max(np.abs(h)) <= C * sd.alpha ** k * (1 + 1e-9) + 1e-13
            h = sd.Q @ h
