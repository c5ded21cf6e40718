import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crvae.numcore import ContractError, Rng
from crvae.transfer_entropy import (GramSpec, delay_embed, gram, joint_entropy, renyi_entropy,
                                    te_matrix, transfer_entropy)

HALF_I = np.eye(2) / 2
HALF_ONES = np.full((2, 2), 0.5)


# -- Gram matrices -------------------------------------------------------------------------


def test_gram_examples():
    np.testing.assert_array_equal(gram([3.0], 0.5), [[1.0]])
    np.testing.assert_array_equal(gram([1.0, 1.0], 0.5), HALF_ONES)
    np.testing.assert_allclose(gram([0.0, 100.0], 0.5), HALF_I, atol=1e-300)
    with pytest.raises(ContractError):
        gram([1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 5))
def test_gram_symmetric_trace_one_psd(seed, sigma):
    a = gram(Rng(seed).normal((7, 2)), sigma)
    assert np.array_equal(a, a.T)
    assert np.trace(a) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.eigvalsh(a).min() > -1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_gram_affine_homogeneity(seed, c, shift):
    x = Rng(seed).normal((6, 2))
    np.testing.assert_allclose(gram(c * x + shift, 0.7 * c), gram(x, 0.7), rtol=1e-9, atol=1e-14)


# -- entropies --------------------------------------------------------------------------------


def test_renyi_spectra():
    assert renyi_entropy([[1.0]], 1.01) == 0.0
    assert renyi_entropy(HALF_ONES, 1.01) == pytest.approx(0.0, abs=1e-12)
    for alpha in (0.5, 1.01, 2.0, 5.0):
        assert renyi_entropy(HALF_I, alpha) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ContractError):
        renyi_entropy(HALF_I, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8), st.sampled_from([0.5, 1.01, 2.0]))
def test_renyi_within_bounds(seed, n, alpha):
    a = gram(Rng(seed).normal((n, 2)), 1.0)
    h = renyi_entropy(a, alpha)
    assert -1e-12 <= h <= math.log2(n) + 1e-12


def test_joint_entropy_examples():
    a = gram(Rng(0).normal((5, 1)), 1.0)
    assert joint_entropy(a, np.full((5, 5), 0.2), alpha=1.01) == pytest.approx(
        renyi_entropy(a, 1.01), abs=1e-12)
    assert joint_entropy(HALF_I, HALF_I, alpha=2.0) == pytest.approx(1.0, abs=1e-12)
    b = gram(Rng(1).normal((5, 1)), 1.0)
    assert joint_entropy(a, b, alpha=1.01) == pytest.approx(joint_entropy(b, a, alpha=1.01),
                                                            abs=1e-12)
    with pytest.raises(ContractError):
        joint_entropy(a, HALF_I, alpha=1.01)


# -- transfer entropy ------------------------------------------------------------------------------


def test_delay_embed_rows():
    np.testing.assert_array_equal(delay_embed(np.arange(5.0), 2), [[1, 0], [2, 1], [3, 2]])


def test_constant_series_carry_no_information():
    x = np.full(30, 2.0)
    assert transfer_entropy(x, x, GramSpec(0.5)) == pytest.approx(0.0, abs=1e-12)


def test_symmetric_inputs():
    x = Rng(0).normal((80,))
    spec = GramSpec(0.5)
    assert transfer_entropy(x, x, spec) == transfer_entropy(x, x, spec)


def test_driven_direction_dominates():
    rng = Rng(3)
    x = rng.normal((400,))
    y = np.zeros(400)
    y[1:] = 0.8 * x[:-1] + 0.2 * rng.normal((399,))
    spec = GramSpec(sigma=0.5, lag=1)
    assert transfer_entropy(x, y, spec) > transfer_entropy(y, x, spec)


def test_too_short_series():
    with pytest.raises(ContractError):
        transfer_entropy(np.zeros(3), np.zeros(3), GramSpec(lag=2))


def test_te_matrix_chain_and_noise():
    rng = Rng(5)
    T = 300
    x = rng.normal((T, 3))
    x[1:, 1] = 0.9 * x[:-1, 0] + 0.2 * rng.normal((T - 1,))
    scores = te_matrix(x, GramSpec(sigma=0.5, lag=1))
    assert np.all(np.diag(scores) == 0)
    assert np.unravel_index(np.argmax(scores), scores.shape) == (1, 0)
    noise = te_matrix(rng.normal((T, 3)), GramSpec(sigma=0.5, lag=1))
    assert np.abs(noise).max() < 0.5 * scores[1, 0]
