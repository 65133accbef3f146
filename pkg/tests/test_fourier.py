import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori.errors import AliasError, FitError
from kamtori.fourier import (FourierTaylor, action_nodes, angle_grid, derivative, fit_from_grid, mean_part,
                             monomials, sup_norm_estimate, tilde_part, truncate_action, truncate_modes)


def sample_series(n, K, d, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    P = monomials(n, d).shape[0]
    table = {}
    for k in np.ndindex(*(2 * K + 1,) * n):
        k = tuple(x - K for x in k)
        if sum(map(abs, k)) <= K and k >= tuple([0] * n):
            c = scale * (rng.normal(size=P) + 1j * rng.normal(size=P))
            if not any(k):
                c = c.real
            table[k] = c
    return FourierTaylor.from_modes(n, np.full(n, 0.5), K, d, table, r=0.1)


def test_monomials_degree_prefix():
    full = monomials(2, 3)
    assert full.shape == (10, 2)
    np.testing.assert_array_equal(full[:6], monomials(2, 2))
    assert list(full.sum(axis=1)) == sorted(full.sum(axis=1))


def test_closed_form_evaluation():
    # f = (2 + 3u) cos(theta) + 0.5 sin(2 theta) + 1, u = I - 0.5
    f = FourierTaylor.from_modes(1, [0.5], 2, 1, {(0,): [1.0, 0.0], (1,): [1.0, 1.5], (2,): [-0.25j, 0.0]})
    I = np.array([[0.7], [0.4]])
    th = np.array([[0.3], [2.1]])
    u = I[:, 0] - 0.5
    expected = (2 + 3 * u) * np.cos(th[:, 0]) + 0.5 * np.sin(2 * th[:, 0]) + 1
    np.testing.assert_allclose(f(I, th), expected, atol=1e-14)
    np.testing.assert_allclose(derivative(f, "angle", 0)(I, th),
                               -(2 + 3 * u) * np.sin(th[:, 0]) + np.cos(2 * th[:, 0]), atol=1e-14)
    np.testing.assert_allclose(derivative(f, "action", 0)(I, th), 3 * np.cos(th[:, 0]), atol=1e-14)
    assert mean_part(f)(np.array([[0.9]]))[0] == pytest.approx(1.0)


def test_split_and_truncations():
    f = sample_series(2, 4, 2, 1)
    np.testing.assert_allclose((mean_part(f)(np.array([[0.6, 0.4]])) + tilde_part(f)([0.6, 0.4], [[1.0, 2.0]])),
                               f([0.6, 0.4], [[1.0, 2.0]]), atol=1e-13)
    g = truncate_modes(f, 2)
    assert np.abs(g.modes).sum(axis=1).max() <= 2
    h = truncate_action(f, 0)
    assert h.d == 0
    np.testing.assert_allclose(h([0.5, 0.5], [[0.3, 0.1]]), f([0.5, 0.5], [[0.3, 0.1]]), atol=1e-13)
    with pytest.raises(ValueError):
        truncate_modes(f, 9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(0, 5), st.integers(0, 2), st.integers(0, 10 ** 6))
def test_values_are_real_and_periodic(n, K, d, seed):
    f = sample_series(n, K, d, seed)
    rng = np.random.default_rng(seed)
    I = 0.5 + 0.1 * rng.uniform(-1, 1, (5, n))
    th = rng.uniform(0, 2 * np.pi, (5, n))
    a = f(I, th)
    assert a.dtype.kind == "f"
    np.testing.assert_allclose(a, f(I, th + 2 * np.pi), atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(1, 4), st.integers(1, 2), st.integers(0, 10 ** 6))
def test_fit_recovers_series(n, K, d, seed):
    f = sample_series(n, K, d, seed)
    N = 2 * K + 3
    actions = action_nodes(f.xi_star, 0.1, d + 2)
    theta = angle_grid(N, n)
    samples = np.stack([f(np.broadcast_to(a, theta.shape), theta) for a in actions])
    g = fit_from_grid(samples, actions, K, d, f.xi_star, N=N, r=0.1)
    for k in f.modes:
        np.testing.assert_allclose(g.coefficient(k), f.coefficient(k), atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2), st.integers(0, 4), st.integers(0, 2), st.integers(0, 10 ** 6))
def test_sup_norm_dominates_samples(n, K, d, seed):
    f = sample_series(n, K, d, seed)
    rng = np.random.default_rng(seed)
    I = f.xi_star + f.r * rng.uniform(-1, 1, (64, n))
    th = rng.uniform(0, 2 * np.pi, (64, n))
    assert np.max(np.abs(f(I, th))) <= sup_norm_estimate(f) * (1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_linear_structure(seed):
    f = sample_series(1, 3, 1, seed)
    g = sample_series(1, 3, 1, seed + 1)
    I, th = np.array([[0.55]]), np.array([[1.3]])
    np.testing.assert_allclose((f + g * 2.0)(I, th), f(I, th) + 2 * g(I, th), atol=1e-12)
    assert (f - f).is_zero


def test_json_round_trip():
    f = sample_series(2, 3, 1, 7)
    g = FourierTaylor.from_json(f.to_json())
    np.testing.assert_array_equal(g.modes, f.modes)
    np.testing.assert_allclose(g.coeffs, f.coeffs)


def test_alias_and_degenerate_fits():
    theta = angle_grid(8, 1)
    samples = np.cos(theta[:, 0])[None, :].repeat(3, axis=0)
    with pytest.raises(AliasError):
        fit_from_grid(samples, [[0.4], [0.5], [0.6]], 4, 1, [0.5], N=8)
    with pytest.raises(FitError):
        fit_from_grid(samples[:1], [[0.5]], 2, 1, [0.5], N=8)
    with pytest.raises(FitError):
        fit_from_grid(samples, [[0.5], [0.5], [0.5]], 2, 1, [0.5], N=8, r=0.1)


def test_empty_series():
    z = FourierTaylor.zeros(2, [0.5, 0.5], 3, 1)
    assert z.is_zero
    assert sup_norm_estimate(z) == 0.0
    np.testing.assert_allclose(z([0.5, 0.5], [[0.1, 0.2]]), 0.0)
