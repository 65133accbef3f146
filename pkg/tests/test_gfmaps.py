import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori import gfmaps
from kamtori.errors import InconsistentGradient, NonConvergence
from kamtori.gfmaps import MapEvaluator
from kamtori.models import get_model, sample_points

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def euler_rotator_closed_form(p, q, eps, t):
    # cos q does not depend on p, so the implicit step is explicit
    ph = p + t * eps * np.sin(q)
    return ph, q + t * ph


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([0.2, 0.1, 0.05]))
def test_euler_matches_closed_form(seed, t):
    m = get_model("twist1")
    p, q = sample_points(m, 8, np.random.default_rng(seed), shrink=0.1)
    ph, qh = gfmaps.symplectic_euler_step(m, 1e-3, t).apply(p, q)
    eph, eqh = euler_rotator_closed_form(p, q, 1e-3, t)
    np.testing.assert_allclose(ph, eph, atol=1e-15)
    np.testing.assert_allclose(qh, eqh, atol=1e-14)


@pytest.mark.parametrize("name", ["twist1", "twist1_asym", "quartic1", "twist2"])
def test_generating_form_equals_direct_euler(name):
    m = get_model(name)
    xi = m.action_domain.mean(axis=1)
    gf = gfmaps.from_symplectic_euler(m, xi, 1e-3, 0.1, d=4)
    rng = np.random.default_rng(3)
    p = xi + 0.02 * rng.uniform(-1, 1, (20, m.n))
    q = rng.uniform(0, 2 * np.pi, (20, m.n))
    direct = gfmaps.symplectic_euler_step(m, 1e-3, 0.1)
    assert gfmaps.reproduction_error(direct, gf, p, q) < 1e-13


def test_fixed_point_solver_reports():
    m = get_model("twist1")
    gf = gfmaps.from_symplectic_euler(m, [GOLDEN], 1e-3, 0.1)
    assert gf.lipschitz_estimate() < 1
    ph, it, res = gf.solve_phat([[GOLDEN]], [[1.0]], full_output=True)
    assert res < 1e-12 and it >= 1
    with pytest.raises(NonConvergence):
        gf.solve_phat([[GOLDEN]], [[1.0]], tol=0.0, max_iter=3)


@pytest.mark.parametrize("scheme", ["euler", "midpoint", "flow"])
def test_schemes_are_symplectic(scheme):
    from kamtori.verify import make_scheme
    m = get_model("twist1_asym")
    p, q = sample_points(m, 6, np.random.default_rng(0), shrink=0.1)
    assert gfmaps.symplectic_defect(make_scheme(m, scheme, 1e-2, 0.1), p, q) < 1e-8


def test_non_symplectic_map_is_detected():
    shear = MapEvaluator(lambda p, q: (1.01 * p, q + p), 1, 0.1, 1, "dilation")
    assert gfmaps.symplectic_defect(shear, [[0.5]], [[0.2]]) > 1e-3


def test_flow_without_perturbation_is_rigid():
    m = get_model("twist1")
    flow = gfmaps.reference_flow(m, 0.0, 0.1)
    p, q = np.array([[0.3], [0.8]]), np.array([[0.0], [5.0]])
    ph, qh = flow(p, q)
    np.testing.assert_allclose(ph, p, atol=1e-15)
    np.testing.assert_allclose(qh, q + 0.1 * p, atol=1e-14)


def test_local_error_orders():
    # one-step error against the flow: O(t^2) for Euler, O(t^3) for midpoint
    m = get_model("twist1_asym")
    p, q = sample_points(m, 16, np.random.default_rng(1), shrink=0.1)
    errs = {"euler": [], "midpoint": []}
    ts = [0.1, 0.05, 0.025]
    for t in ts:
        ref = np.concatenate(gfmaps.reference_flow(m, 0.1, t)(p, q), axis=-1)
        for name, step in (("euler", gfmaps.symplectic_euler_step), ("midpoint", gfmaps.midpoint_step)):
            z = np.concatenate(step(m, 0.1, t)(p, q), axis=-1)
            errs[name].append(np.max(np.abs(z - ref)))
    slope_e = np.polyfit(np.log(ts), np.log(errs["euler"]), 1)[0]
    slope_m = np.polyfit(np.log(ts), np.log(errs["midpoint"]), 1)[0]
    assert 1.8 < slope_e < 2.2
    assert 2.8 < slope_m < 3.2


def test_extraction_reproduces_euler():
    m = get_model("twist1")
    xi = np.array([GOLDEN])
    euler = gfmaps.symplectic_euler_step(m, 1e-3, 0.1)
    W, info = gfmaps.extract_generating(euler, 0.1 * xi, xi, 0.1, 4, 2, full_output=True)
    gf = gfmaps.GFMap(1, 0.1, 0.1 * xi, W)
    rng = np.random.default_rng(5)
    p = xi + 0.03 * rng.uniform(-1, 1, (30, 1))
    q = rng.uniform(0, 2 * np.pi, (30, 1))
    assert gfmaps.reproduction_error(euler, gf, p, q) < 1e-12
    assert info["consistency"] < 1e-12


def test_extraction_reproduces_midpoint():
    m = get_model("twist1")
    xi = np.array([GOLDEN])
    mid = gfmaps.midpoint_step(m, 1e-3, 0.1)
    W = gfmaps.extract_generating(mid, 0.1 * xi, xi, 0.1, 8, 2)
    gf = gfmaps.GFMap(1, 0.1, 0.1 * xi, W)
    rng = np.random.default_rng(6)
    p = xi + 0.03 * rng.uniform(-1, 1, (30, 1))
    q = rng.uniform(0, 2 * np.pi, (30, 1))
    assert gfmaps.reproduction_error(mid, gf, p, q) < 1e-6


def test_inconsistent_gradients_raise():
    # the twist correction does not integrate the momentum kick: no generating function
    bad = MapEvaluator(lambda p, q: (p + 1e-3 * np.cos(q), q + 0.1 * GOLDEN + 1e-3 * np.cos(q)),
                       1, 0.1, 1, "bad")
    with pytest.raises(InconsistentGradient):
        gfmaps.extract_generating(bad, [0.1 * GOLDEN], [GOLDEN], 0.1, 4, 1, tol=1e-10)
    with pytest.raises(ValueError):
        gfmaps.extract_generating(bad, [0.1 * GOLDEN], [GOLDEN], 0.1, 4, 0)
