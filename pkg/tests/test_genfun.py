import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gwgenealogy.genfun import (
    MAX_ORDER,
    SpecError,
    birth_death,
    birth_death_closed_form,
    extinction_probability,
    finite_pmf,
    geometric,
    parse_spec,
    pgf_on_jet,
    population_pmf,
    semigroup_coeffs,
    semigroup_jet,
    survival_tail,
)
from gwgenealogy.jets import TaylorJet, variable

SPECS = ["bd:0,1", "bd:0.25,0.75", "bd:0.75,0.25", "pmf:0:0.5,2:0.5", "geom:0.6", "pmf:0:0.2,1:0.3,3:0.5"]


def test_parse_forms():
    assert parse_spec("bd:0.25,0.75").probs == (0.25, 0.0, 0.75)
    assert parse_spec("geom:0.6").kind == "geom"
    s = parse_spec("pmf:0:0.25,1:0.25,2:0.5")
    assert s.mean == pytest.approx(1.25)
    assert str(parse_spec(str(s))) == str(s)


@pytest.mark.parametrize(
    "text",
    ["bd:0.5,0.6", "pmf:0:0.5,1:0.5", "pmf:1:1", "geom:1.5", "geom:1", "poisson:2", "pmf:0:-0.1,2:1.1", "bd:x,y"],
)
def test_bad_specs_rejected(text):
    with pytest.raises(SpecError):
        parse_spec(text)


def test_regimes():
    assert parse_spec("bd:0,1").regime == "super"
    assert parse_spec("pmf:0:0.5,2:0.5").regime == "crit"
    assert parse_spec("bd:0.75,0.25").regime == "sub"
    assert parse_spec("geom:0.5").regime == "crit"


def test_geometric_pgf():
    g = geometric(0.3)
    s = 0.4
    assert g.pgf(s) == pytest.approx(0.3 / (1 - 0.7 * s))
    assert g.mean == pytest.approx(0.7 / 0.3)
    assert g.second_factorial_moment == pytest.approx(2 * 0.7**2 / 0.3**2)


@pytest.mark.parametrize(
    "spec,q",
    [("bd:0,1", 0.0), ("bd:0.25,0.75", 1 / 3), ("geom:0.3", 3 / 7), ("bd:0.75,0.25", 1.0), ("pmf:0:0.5,2:0.5", 1.0)],
)
def test_extinction_probability(spec, q):
    assert extinction_probability(parse_spec(spec)) == pytest.approx(q, abs=1e-12)


def test_pgf_on_jet_matches_direct_derivatives():
    spec = parse_spec("pmf:0:0.2,1:0.3,3:0.5")
    jet = pgf_on_jet(spec, TaylorJet(0.4, variable(0.4, 3)))
    for r in range(4):
        assert jet.derivative(r) == pytest.approx(spec.pgf_derivative(0.4, r))


@pytest.mark.parametrize("spec", SPECS)
def test_time_zero_is_identity(spec):
    j = semigroup_jet(parse_spec(spec), 0.0, 0.3, 3)
    assert np.allclose(j.coeffs, [0.3, 1.0, 0.0, 0.0])


@pytest.mark.parametrize("a,b", [(0.0, 1.0), (0.25, 0.75), (0.75, 0.25), (0.5, 0.5)])
def test_ode_matches_closed_form_relative(a, b):
    # entries reach 1e10 for the Yule law at t=5, so accuracy is judged relative to magnitude
    spec = birth_death(a, b)
    ts = np.round(np.arange(1, 51) * 0.1, 10)
    ss = np.round(np.arange(11) * 0.1, 10)
    c = semigroup_coeffs(spec, ts, s=ss, order=4)
    for i, t in enumerate(ts):
        for j, s in enumerate(ss):
            ref = birth_death_closed_form(a, b, t, s, 4).coeffs
            assert np.allclose(c[i, j], ref, rtol=1e-11, atol=1e-13)


@given(st.sampled_from(SPECS), st.floats(0, 3), st.floats(0, 3), st.floats(0, 1))
def test_semigroup_property(spec, t1, t2, s):
    spec = parse_spec(spec)
    inner = semigroup_jet(spec, t2, s, 0).value
    lhs = semigroup_jet(spec, t1, inner, 0).value
    rhs = semigroup_jet(spec, t1 + t2, s, 0).value
    assert abs(lhs - rhs) <= 1e-8


@given(st.sampled_from(SPECS), st.floats(0.1, 3), st.floats(0.05, 0.95))
def test_jets_match_finite_differences(spec, t, s):
    spec = parse_spec(spec)
    h = 1e-4
    j = semigroup_jet(spec, t, s, 2)
    f = lambda x: semigroup_jet(spec, t, x, 0).value
    d1 = (f(s + h) - f(s - h)) / (2 * h)
    d2 = (f(s + h) - 2 * f(s) + f(s - h)) / h**2
    assert j.derivative(1) == pytest.approx(d1, rel=1e-5)
    assert j.derivative(2) == pytest.approx(d2, rel=1e-5, abs=1e-7)


@given(st.sampled_from(SPECS), st.floats(0.1, 3))
def test_monotone_with_nonnegative_derivatives(spec, t):
    spec = parse_spec(spec)
    s = np.linspace(0, 1, 21)
    c = semigroup_coeffs(spec, [t], s=s, order=4)[0]
    assert np.all(np.diff(c[:, 0]) >= -1e-15)
    assert np.all(c >= -1e-13)


def test_order_cap():
    with pytest.raises(ValueError):
        semigroup_jet(parse_spec("bd:0,1"), 1.0, 0.5, MAX_ORDER + 1)


def test_population_pmf_yule():
    p = population_pmf(parse_spec("bd:0,1"), 1.0, 40)
    assert p[1] == pytest.approx(math.exp(-1), abs=1e-12)
    assert abs(p[0]) <= 1e-10
    geom = [math.exp(-1) * (1 - math.exp(-1)) ** (j - 1) for j in range(1, 41)]
    assert np.allclose(p[1:], geom, atol=1e-12)
    assert 1 - p[:2].sum() == pytest.approx(1 - math.exp(-1), abs=1e-12)


@pytest.mark.parametrize("spec", SPECS)
def test_population_pmf_is_subprobability(spec):
    p = population_pmf(parse_spec(spec), 1.5, 30)
    assert np.all(p >= -1e-14)
    assert p.sum() <= 1 + 1e-12
    assert population_pmf(parse_spec(spec), 0.0, 3) == pytest.approx([0, 1, 0, 0])


def test_survival_tail_matches_pmf():
    spec = parse_spec("bd:0.25,0.75")
    p = population_pmf(spec, 2.0, 4)
    assert survival_tail(spec, 2.0, 3) == pytest.approx(1 - p[:3].sum(), abs=1e-13)
    # frozen: closed form for birth-death (sympy series, 20 digits)
    assert survival_tail(spec, 2.0, 3) == pytest.approx(0.39441643540667062441, abs=1e-12)


def test_finite_pmf_from_dict():
    s = finite_pmf({0: 0.5, 2: 0.5})
    assert s.is_binary and s.regime == "crit"
