import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori.errors import DegenerateError, FitError, ParamError
from kamtori.models import get_model, model_from_config
from kamtori.sieve import kolmogorov_bounds, measure_vs_gamma, ruessmann_index, sieve_actions, sieve_steps


def unit_rotator():
    return model_from_config({"name": "twist1", "action_domain": [[0.0, 1.0]]})


def low_band(gamma, t):
    # |2 sin(t xi / 2)| >= t gamma for k = 1 cuts out xi < (2/t) asin(t gamma / 2)
    return 2 / t * np.arcsin(t * gamma / 2)


@pytest.mark.parametrize("gamma", [0.1, 0.025, 0.003125])
def test_low_band_measure(gamma):
    res = sieve_actions(unit_rotator(), 0.1, gamma, 3, Kmax=100)
    assert res.excluded_measure == pytest.approx(low_band(gamma, 0.1), abs=2e-4)
    assert set(res.ledger()) == {"1|0"}


def test_no_exclusion_inside_catalog_domain():
    # at t = 0.1 the frequencies in V stay far from every resonance up to |k| = 100
    res = sieve_actions(get_model("twist1"), 0.1, 1e-2, 3, Kmax=100)
    assert res.excluded_fraction == 0.0


def test_resonance_neighbourhood():
    m = model_from_config({"name": "twist1", "action_domain": [[0.1, 2.0]]})
    res = sieve_actions(m, 1.0, 1e-2, 3, Kmax=100)
    assert "5|1" in res.ledger()
    bad = res.coords[~res.admissible, 0]
    assert np.min(np.abs(bad - 2 * np.pi / 5)) < 1e-3


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e-1), st.floats(1e-3, 1e-1))
def test_exclusion_is_monotone_in_gamma(g1, g2):
    lo, hi = sorted((g1, g2))
    m = unit_rotator()
    a = sieve_actions(m, 0.1, lo, 3, Kmax=30, cells=2000)
    b = sieve_actions(m, 0.1, hi, 3, Kmax=30, cells=2000)
    assert np.all(b.admissible <= a.admissible)


def test_gamma_sweep_slope():
    rec = measure_vs_gamma(unit_rotator(), 0.1, 3, [0.1 * 2.0 ** -j for j in range(6)], Kmax=100)
    assert 0.99 < rec["slope"] < 1.01
    with pytest.raises(ParamError):
        measure_vs_gamma(unit_rotator(), 0.1, 3, [])
    with pytest.raises(FitError):
        measure_vs_gamma(get_model("twist1"), 0.1, 3, [1e-2, 5e-3, 1e-3], Kmax=10)


def test_sieve_parameters():
    with pytest.raises(ParamError):
        sieve_actions(get_model("twist1"), 0.1, 1e-2, 3, cells=10)
    with pytest.raises(ParamError):
        sieve_steps(get_model("twist1"), [1.0], 1e-2, 3, delta=2.0)
    with pytest.raises(ParamError):
        sieve_steps(get_model("twist1"), [1.0], 1e-2, 3, resolution=100)


def test_step_density():
    res = sieve_steps(get_model("twist1"), [1.0], 1e-3, 3)
    dens = {round(1 / d["delta_prime"]): d["density"] for d in res.extra["density"]}
    assert dens[100] > 0.98
    assert res.extra["trend_ok"]


def test_csv_columns(tmp_path):
    res = sieve_actions(get_model("twist2"), 1.0, 1e-2, 4, Kmax=10, cells=100)
    path = tmp_path / "s.csv"
    res.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi1", "xi2", "admissible", "k1", "k2", "l", "margin"]
    assert len(rows) == 1 + 100 ** 2


def test_ruessmann_rotator():
    nbar, beta = ruessmann_index(get_model("twist1"))
    assert nbar == 0
    assert beta == pytest.approx(0.1, rel=1e-6)


def test_ruessmann_index_one_on_resonant_curve():
    # <(1, -2), omega> = xi1 (1 - 2 xi2) + xi2^2 / 2 vanishes inside V, its gradient does not
    nbar, beta = ruessmann_index(get_model("ruessmann2"))
    assert nbar == 1 and beta > 1e-3
    flat = model_from_config({"n": 2, "h0": [{"coeff": 1.0, "powers": [1, 0]}, {"coeff": -1.0, "powers": [0, 1]}],
                              "action_domain": [[0.1, 0.9], [0.1, 0.9]]})
    with pytest.raises(DegenerateError):
        ruessmann_index(flat)


def test_kolmogorov_bounds():
    assert kolmogorov_bounds(get_model("twist2")) == pytest.approx((1.0, 1.0), abs=1e-12)
    t1, t2 = kolmogorov_bounds(get_model("quartic1"))
    assert t1 == pytest.approx(0.75) and t2 == pytest.approx(3.0)
    cubic = model_from_config({"n": 1, "h0": [{"coeff": 1 / 3, "powers": [3]}], "action_domain": [[0.0, 1.0]]})
    with pytest.raises(DegenerateError):
        kolmogorov_bounds(cubic)
