import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsvi.regression import CHUNK, BasisSpec, build_design, conditional_expectation


def test_polynomial_targets_are_reproduced():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5000, 1))
    y = 1 + 2 * x - x ** 3
    assert np.allclose(conditional_expectation(x, y, BasisSpec(degree=3)), y, atol=1e-8)


def test_conditional_expectation_of_noise():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20_000, 1))
    y = np.sin(x) + rng.normal(size=x.shape)
    fit = conditional_expectation(x, y, BasisSpec("hat", knots=16))
    assert np.sqrt(np.mean((fit - np.sin(x)) ** 2)) < 0.05


def test_residual_orthogonality():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3 * CHUNK + 11, 2))
    d = build_design(x, BasisSpec(degree=3))
    _, orth = d.project(np.exp(x[:, :1]))
    assert orth < 1e-10


def test_constant_state_gives_mean():
    x = np.zeros((100, 1))
    y = np.arange(100.0)[:, None]
    assert np.allclose(conditional_expectation(x, y), 49.5)


def test_degree_lowered_with_warning():
    x = np.repeat([[-1.0], [1.0]], 50, axis=0)
    d = build_design(x, BasisSpec(degree=3))
    assert d.degree == 1 and d.warnings


def test_thread_count_does_not_change_bits():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5 * CHUNK, 1))
    y = np.cos(x)
    a = build_design(x, BasisSpec(degree=4), threads=1).project(y)[0]
    b = build_design(x, BasisSpec(degree=4), threads=4).project(y)[0]
    assert np.array_equal(a, b)


@given(st.integers(2, 40))
@settings(max_examples=10, deadline=None)
def test_hat_reproduces_linear(knots):
    x = np.linspace(-2, 2, 400)[:, None]
    y = 3 * x - 1
    assert np.allclose(conditional_expectation(x, y, BasisSpec("hat", knots=knots)), y, atol=1e-8)


def test_basis_validation():
    with pytest.raises(ValueError):
        BasisSpec("spline")
    with pytest.raises(ValueError):
        BasisSpec("hat", knots=1)
    with pytest.raises(ValueError):
        build_design(np.random.default_rng(0).normal(size=(50, 2)), BasisSpec("hat"))
