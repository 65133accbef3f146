import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori import gfmaps
from kamtori.errors import DegenerateError, FitError, SkippedNotAdmissible
from kamtori.kamcore import KamConfig, torus_embedding
from kamtori.models import get_model, model_from_config
from kamtori.verify import (TorusEmbedding, compare_step_sizes, conjugacy_residual, frequency_to_action,
                            hausdorff_distance, make_scheme, order_fit, orbit_shadowing)

from conftest import GOLDEN


def test_flat_torus_is_invariant_without_perturbation(rotator):
    emb = TorusEmbedding.flat(1, [GOLDEN], [0.1 * GOLDEN])
    euler = gfmaps.symplectic_euler_step(rotator, 0.0, 0.1)
    assert conjugacy_residual(emb, euler) < 1e-15


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-6, 1e-2))
def test_residual_of_shifted_flat_torus(delta):
    # lifting the action by delta advances the angle by an extra t*delta per step
    rotator = get_model("twist1")
    emb = TorusEmbedding.flat(1, [GOLDEN], [0.1 * GOLDEN]).perturbed(delta)
    euler = gfmaps.symplectic_euler_step(rotator, 0.0, 0.1)
    assert conjugacy_residual(emb, euler) == pytest.approx(0.1 * delta, rel=1e-8)


def test_embedding_fit_and_jacobian(benchmark_run):
    emb = torus_embedding(benchmark_run)
    assert emb.fit_residual < 1e-13
    assert abs(emb.mean_action()[0] - GOLDEN) < 1e-3
    theta = np.array([[0.3], [2.0]])
    h = 1e-6
    fd = (np.concatenate(emb(theta + h), -1) - np.concatenate(emb(theta - h), -1)) / (2 * h)
    np.testing.assert_allclose(emb.jacobian(theta)[:, :, 0], fd, atol=1e-8)


def test_shadowing_on_converged_torus(benchmark_run):
    emb = torus_embedding(benchmark_run)
    rep = orbit_shadowing(benchmark_run.mapping, emb, [0.4], 1000)
    assert rep["max_deviation"] < 1e-10
    assert rep["profile"][-1][0] == 1000


@settings(max_examples=10, deadline=None)
@given(st.floats(0.2, 0.8), st.floats(-0.05, 0.05))
def test_hausdorff_between_flat_tori(a, shift):
    e1 = TorusEmbedding.flat(1, [a], [0.1])
    e2 = TorusEmbedding.flat(1, [a + shift], [0.1])
    assert hausdorff_distance(e1, e2, 64) == pytest.approx(abs(shift), abs=1e-12)


def test_hausdorff_is_parametrization_free(benchmark_run):
    emb = torus_embedding(benchmark_run)
    shifted = TorusEmbedding.from_function(lambda th: emb(th + 0.7), 1, emb.t_omega)
    assert hausdorff_distance(emb, shifted) < 1e-12


def test_order_fit_exact_power_law():
    x = np.array([0.2, 0.1, 0.05])
    slope, intercept, r2 = order_fit(x, 3.0 * x ** 2)
    assert slope == pytest.approx(2.0) and intercept == pytest.approx(np.log(3.0))
    assert r2 == pytest.approx(1.0)
    with pytest.raises(FitError):
        order_fit([0.1, 0.2], [1.0, 2.0])
    with pytest.raises(FitError):
        order_fit([0.1, 0.2, 0.3], [1.0, 0.0, 2.0])


def test_frequency_inversion():
    np.testing.assert_allclose(frequency_to_action(get_model("quartic1"), [0.512], [0.7]), [0.8], atol=1e-13)
    np.testing.assert_allclose(frequency_to_action(get_model("twist2"), [0.3, 0.4], [0.5, 0.5]), [0.3, 0.4])
    cubic = model_from_config({"n": 1, "h0": [{"coeff": 1 / 3, "powers": [3]}], "action_domain": [[0.0, 1.0]]})
    with pytest.raises(DegenerateError):
        frequency_to_action(cubic, [0.1], [0.0])


def test_make_scheme_labels(rotator):
    assert make_scheme(rotator, "euler", 1e-3, 0.1).order == 1
    assert make_scheme(rotator, "midpoint", 1e-3, 0.1).order == 2
    with pytest.raises(ValueError):
        make_scheme(rotator, "rk4", 1e-3, 0.1)


def test_step_pair_skips_resonant_steps():
    m = model_from_config({"name": "twist1", "action_domain": [[0.1, 2.0]]})
    with pytest.raises(SkippedNotAdmissible):
        compare_step_sizes(m, [2 * np.pi / 5], 1e-3, 1.0, 0.5)


def test_step_pair_same_step_is_zero(rotator):
    rec = compare_step_sizes(rotator, [GOLDEN], 1e-3, 0.1, 0.1)
    assert rec["frequency_gap"] == 0.0 and rec["embedding_gap"] == 0.0


def test_midpoint_torus_closer_than_euler(drift):
    # same step, second-order scheme: the torus drift is smaller
    e, m = drift("euler")["rows"], drift("midpoint")["rows"]
    for a, b in zip(e, m):
        assert b["hausdorff"] < a["hausdorff"]
        assert a["matched_frequency_miss"] < 1e-13 and b["matched_frequency_miss"] < 1e-13


def test_euler_frequency_drift_is_second_order(drift):
    # Euler is conjugate to a second-order method and frequencies are conjugacy invariants;
    # the torus itself moves at first order
    rec = drift("euler")
    assert 1.95 < rec["frequency_gap_fit"]["slope"] < 2.05
    assert 0.95 < rec["hausdorff_fit"]["slope"] < 1.05
