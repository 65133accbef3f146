import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori.errors import ParamError, SmallDivisorViolation, ZeroWavevector
from kamtori.fourier import FourierTaylor, tilde_part
from kamtori.homological import (DiophantineParams, check_diophantine, diophantine_floor, psi_norm_report,
                                 small_divisor, solve_psi, wavevectors)

from test_fourier import sample_series

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def test_single_mode_oracle():
    # W = a cos(theta) with a = 1e-3; psi_1 = -(a/2) / (e^{ix} - 1) by direct complex arithmetic
    a, x = 1e-3, 0.1 * GOLDEN
    W = FourierTaylor.from_modes(1, [GOLDEN], 1, 0, {(1,): [a / 2]})
    psi = solve_psi(W, [x], DiophantineParams(1e-2, 3, 4, 0.1))
    expected = -(a / 2) / (np.exp(1j * x) - 1)
    np.testing.assert_allclose(psi.coefficient([1])[0], expected, rtol=1e-13)
    np.testing.assert_allclose(psi.coefficient([-1])[0], np.conj(expected), rtol=1e-13)


def test_divisor_matches_exponential_form():
    for k in ([1], [3], [-2]):
        direct = abs(np.exp(1j * np.dot(k, [0.37])) - 1)
        assert small_divisor(k, [0.37]) == pytest.approx(direct, rel=1e-13)
    with pytest.raises(ZeroWavevector):
        small_divisor([0, 0], [0.1, 0.2])


def test_wavevector_counts():
    # |k|_1 <= K in 2-d: 2K(K+1) nonzero vectors
    assert wavevectors(2, 5).shape == (60, 2)
    assert wavevectors(2, 5, half=True).shape == (30, 2)
    assert wavevectors(1, 7, half=True).tolist() == [[k] for k in range(1, 8)]


def test_floor_and_params():
    p = DiophantineParams(1e-2, 3, 8, 0.1)
    assert diophantine_floor([1, -1], p) == pytest.approx(1e-3 / 8)
    with pytest.raises(ParamError):
        DiophantineParams(-1e-2, 3, 8, 0.1)
    with pytest.raises(ParamError):
        DiophantineParams(1e-2, 3, 8, 0.1, n=2)
    DiophantineParams(1e-2, 4, 8, 0.1, n=2)
    assert p.with_gamma(0.5).gamma == 0.5


def test_resonant_frequency_rejected():
    t_omega = [2 * np.pi / 5]
    params = DiophantineParams(1e-2, 3, 8, 0.1)
    check = check_diophantine(t_omega, params, 8)
    assert not check.passed and check.worst_k == (5,)
    W = FourierTaylor.from_modes(1, [0.5], 8, 0, {(5,): [1e-3]})
    with pytest.raises(SmallDivisorViolation):
        solve_psi(W, t_omega, params)


def test_mean_is_ignored():
    W = FourierTaylor.from_modes(1, [0.5], 2, 1, {(0,): [1.0, 2.0], (1,): [0.1, 0.0]})
    psi = solve_psi(W, [0.1 * GOLDEN], DiophantineParams(1e-2, 3, 2, 0.1))
    assert not np.any(np.all(psi.modes == 0, axis=1))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 2), st.integers(0, 10 ** 6))
def test_cohomological_identity(n, seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.05, 0.2)
    omega = rng.uniform(0.2, 0.9, n)
    params = DiophantineParams(1e-3, 3 if n == 1 else 4, 6, t)
    if not check_diophantine(t * omega, params, 6):
        return
    W = tilde_part(sample_series(n, 6, 1, seed, scale=1e-3))
    psi = solve_psi(W, t * omega, params)
    I = 0.5 + 0.1 * rng.uniform(-1, 1, (16, n))
    th = rng.uniform(0, 2 * np.pi, (16, n))
    res = psi(I, th + t * omega) - psi(I, th) + W(I, th)
    assert np.max(np.abs(res)) < 1e-12


def test_norm_report_shape():
    W = FourierTaylor.from_modes(1, [GOLDEN], 4, 1, {(1,): [1e-3, 1e-4], (3,): [1e-5, 0.0]}, r=0.1)
    params = DiophantineParams(1e-2, 3, 4, 0.1)
    psi = solve_psi(W, [0.1 * GOLDEN], params)
    rep = psi_norm_report(psi, W, params, 0.25, C=1.0)
    for key in ("d1", "d2"):
        assert rep[key]["measured"] > 0
        assert rep[key]["ratio"] == pytest.approx(rep[key]["measured"] / rep[key]["bound_shape"])
        assert rep[key]["within"]
    with pytest.raises(ParamError):
        psi_norm_report(psi, W, params, 0.0)
