"""Bifurcating Markov chains on the binary tree: spectral data, variance
series for triangle statistics, exact small-tree oracles and Monte Carlo
checks of the limit theorems."""
from .errors import *  # noqa: F401,F403
from .kernel_core import (
    CRITICAL, SUB_CRITICAL, SUPER_CRITICAL, MarkovMatrix, SpectralData, StateSpace, TriangleKernel,
    analyze, build_triangle_kernel, circulant_kernel, classify_regime, k1, k2, k3, product_kernel,
    qq_kernel, random_kernel, spectral_analysis, symmetric_two_state,
)
from .function_algebra import FunctionSequence, affine, apply_P, center, conditionally_centered, standardized_innovation
from .variance_engine import VarianceReport, covariance_pair_matrices, sigma_crit, sigma_for_regime, sigma_special, sigma_sub
from .tree_simulator import ReplicateSet, SimulationConfig, TreeSample, monte_carlo, monte_carlo_many, sample_tree

__version__ = "0.1.0"
