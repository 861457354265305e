import math

import numpy as np
import pytest

from equistop.discounting import exponential, generalized_hyperbolic, hyperbolic, pseudo_exponential
from equistop.examples import gbm_identity_problem, kappa, put_problem
from equistop.processes import gbm, reflected_bm
from equistop.regions import RegionSet
from equistop.valuation import (
    DIVERGENT,
    DivergenceError,
    NoClosedFormError,
    PayoffFunction,
    StoppingProblem,
    check_integrability,
    counterexample_payoff,
    default_horizon,
    identity,
    put,
    tabulated,
    value_closed_form,
    value_monte_carlo,
    value_V,
)

from oracles import J_BESSEL_HALF, KAPPA_HALF

INF = math.inf


def R(*ivs):
    return RegionSet(tuple(ivs))


def agrees(p, x, region, n=20_000, seed=0):
    cf = value_closed_form(p, x, region)
    mc = value_monte_carlo(p, x, region, n=n, seed=seed)
    tol = 3 * mc.stderr + mc.bias_bound + 1e-12
    return abs(cf - mc.estimate) <= tol, cf, mc


# --- payoffs and problems ---------------------------------------------------


def test_payoff_values():
    assert identity()(2.5) == 2.5
    assert list(put(10)(np.array([3.0, 10.0, 12.0]))) == [7.0, 0.0, 0.0]
    t = tabulated([0, 1, 2], [0, 1, 0])
    assert t(0.5) == 0.5 and t(5.0) == 0.0 and t.zero_set_above == 2.0
    c = counterexample_payoff(1.0, 0.9, 2.0)
    assert c(1.5) == 1.5 and c(2.0) == 2.0
    assert 0 < c(3.0) < 2.0


def test_counterexample_branch_continuous_and_decreasing():
    c = counterexample_payoff(1.0, 0.9, 2.0)
    assert c(2.0 + 1e-9) == pytest.approx(2.0, abs=1e-7)
    xs = np.linspace(2.01, 8, 50)
    assert np.all(np.diff(c(xs)) < 0)


@pytest.mark.parametrize(
    "kind, params",
    [("put", {"K": -1}), ("put", {}), ("foo", {}), ("counterexample", {"beta": 1, "a_star": 2, "b_star": 1}),
     ("tabulated", {"xs": (0, 0), "ys": (1, 1)}), ("tabulated", {"xs": (0, 1), "ys": (1, -1)})],
)
def test_payoff_validation(kind, params):
    with pytest.raises(ValueError):
        PayoffFunction(kind, params)


def test_payoff_round_trip():
    for f in (identity(), put(3.0), counterexample_payoff(1, 0.9, 2), tabulated([0, 1], [2, 3])):
        assert PayoffFunction.from_dict(f.to_dict()) == f


def test_problem_window_validation():
    with pytest.raises(ValueError):
        StoppingProblem(gbm(0, 1), identity(), hyperbolic(1), window=(2.0, 1.0))
    with pytest.raises(ValueError):
        StoppingProblem(gbm(0, 1), identity(), hyperbolic(1), window=(1.0, INF))


# --- closed form ------------------------------------------------------------


def test_inside_region_is_payoff(bessel, put10, counter):
    for p in (bessel, put10, counter):
        r = R((1.0, 3.0))
        xs = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(value_closed_form(p, xs, r), p.payoff(xs))


def test_gbm_nu_positive_empty_region_diverges():
    p = gbm_identity_problem(1.0, 1.0, 1.0)
    assert value_closed_form(p, 1.0, RegionSet.empty()) == DIVERGENT
    assert value_V(p, 1.0, RegionSet.empty()) == DIVERGENT
    with pytest.raises(DivergenceError):
        value_monte_carlo(p, 1.0, RegionSet.empty())
    # a bounded gap stays finite
    assert math.isfinite(value_closed_form(p, 1.0, R((0, 0.5), (2.0, INF))))


def test_nu_nonpositive_empty_region_is_zero():
    p = gbm_identity_problem(0.0, 1.0, 1.0)
    assert value_closed_form(p, 1.0, RegionSet.empty()) == 0.0
    mc = value_monte_carlo(p, 1.0, RegionSet.empty(), n=1000)
    assert abs(mc.estimate) <= 3 * mc.stderr + 1e-15


def test_bessel_values(bessel):
    assert value_closed_form(bessel, 1.0, R((1.0, INF))) == 1.0
    assert value_closed_form(bessel, 0.5, R((1.0, INF))) == pytest.approx(J_BESSEL_HALF, rel=1e-10)


def test_kappa_frozen():
    assert kappa(0.5, 1.0, 0.0, 1.0, 1.0) == pytest.approx(KAPPA_HALF, rel=1e-10)
    p = gbm_identity_problem(0.5, 1.0, 1.0)  # nu = 0
    assert value_closed_form(p, 0.5, R((1.0, INF))) == pytest.approx(KAPPA_HALF, rel=1e-10)


def test_generalized_hyperbolic_has_no_closed_form():
    p = StoppingProblem(reflected_bm(), identity(), generalized_hyperbolic(1.0, 2.0))
    with pytest.raises(NoClosedFormError):
        value_closed_form(p, 0.5, R((1.0, INF)))


def test_mc_whole_space_is_immediate(bessel):
    mc = value_monte_carlo(bessel, 0.7, R((0.0, INF)))
    assert (mc.estimate, mc.stderr) == (0.7, 0.0)


def test_mc_needs_paths(bessel):
    with pytest.raises(ValueError):
        value_monte_carlo(bessel, 0.5, R((1.0, INF)), n=50)


def test_bessel_mc_oracle_full_paths(bessel):
    ok, cf, mc = agrees(bessel, 0.5, R((1.0, INF)), n=100_000, seed=1)
    assert ok, (cf, mc)
    assert mc.seed == 1 and mc.n == 100_000


@pytest.mark.parametrize(
    "build, x, region",
    [
        (lambda: gbm_identity_problem(0.0, 1.0, 1.0), 1.5, R((0, 1.0), (3.0, INF))),
        (lambda: gbm_identity_problem(0.2, 0.8, 0.5), 0.6, R((1.2, INF))),
        (lambda: gbm_identity_problem(-0.3, 1.2, 2.0), 2.0, R((0, 1.0))),
        (lambda: put_problem(0.0, 1.0, 1.0, 10.0), 6.0, R((0, 4.67))),
        (lambda: put_problem(0.1, 0.6, 0.7, 5.0), 3.0, R((0, 2.0), (9.0, INF))),
        (lambda: StoppingProblem(reflected_bm(), identity(), hyperbolic(2.0)), 0.3, R((0.0, 0.1), (1.0, INF))),
        (lambda: StoppingProblem(reflected_bm(), identity(), hyperbolic(1.0)), 2.0, R((0.0, 1.0))),
        (lambda: StoppingProblem(reflected_bm(), identity(), exponential(0.5)), 0.5, R((1.0, INF))),
        (lambda: StoppingProblem(reflected_bm(), identity(), pseudo_exponential(0.5, 0.01, 1.0)), 0.5, R((1.0, INF))),
        (lambda: StoppingProblem(gbm(0.0, 1.0), put(2.0), exponential(0.3)), 2.5, R((0, 1.5))),
    ],
)
def test_closed_form_matches_mc(build, x, region):
    ok, cf, mc = agrees(build(), x, region)
    assert ok, (cf, mc)


def test_counterexample_mc(counter):
    a, b = counter.payoff.params["a_star"], counter.payoff.params["b_star"]
    for x in (0.5 * a, 0.5 * (a + b), 1.5 * b):
        ok, cf, mc = agrees(counter, x, R((a, b)))
        assert ok, (x, cf, mc)


def test_value_V_cases(put10):
    r = R((0, 4.0))
    assert value_V(put10, 3.0, r) == 7.0
    # the put pays nothing beyond K, so V is J there
    J = value_closed_form(put10, 12.0, r)
    assert J > 0 and value_V(put10, 12.0, r) == J
    with pytest.raises(ValueError):
        value_V(put10, 5.0, r, engine="magic")


def test_value_V_monte_carlo_engine(put10):
    v = value_V(put10, np.array([3.0, 6.0]), R((0, 4.0)), engine="monte-carlo", n=500)
    assert v.shape == (2,) and v[0] == 7.0


def test_default_horizon():
    assert default_horizon(hyperbolic(1.0), 1.0) == pytest.approx(9999.0)
    assert default_horizon(hyperbolic(1e-3), 100.0) == 1e5
    h = default_horizon(exponential(1.0), 1.0)
    assert math.exp(-h) == pytest.approx(1e-4, rel=1e-3)


# --- integrability --------------------------------------------------------------


@pytest.mark.parametrize(
    "mu, decays, sup_integrable", [(1.0, False, False), (0.5, True, False), (0.25, True, False), (0.0, True, True)]
)
def test_integrability_gbm_identity(mu, decays, sup_integrable):
    rep = check_integrability(gbm_identity_problem(mu, 1.0, 1.0))
    assert (rep.decays, rep.sup_integrable, rep.basis) == (decays, sup_integrable, "analytic")


@pytest.mark.parametrize("mu", [-1.0, 0.0, 2.0])
def test_integrability_put(mu):
    rep = check_integrability(put_problem(mu, 1.0, 1.0, 10.0))
    assert rep.decays and rep.sup_integrable and rep.basis == "analytic"


def test_integrability_bessel(bessel):
    rep = check_integrability(bessel)
    assert rep.decays and rep.sup_integrable and rep.basis == "analytic"


def test_integrability_empirical_fallback():
    ok = check_integrability(StoppingProblem(gbm(-1.0, 1.0), identity(), generalized_hyperbolic(1.0, 2.0)))
    assert ok.basis == "empirical" and ok.decays


# --- structural properties ------------------------------------------------------


def test_dominance_over_supersets(bessel, a_star):
    xs = np.linspace(0.01, 5.0, 200)
    eq = R((a_star, INF))
    J_eq = value_closed_form(bessel, xs, eq)
    for T in (R((0.5, INF)), R((0.1, 0.3), (a_star, INF)), R((0.0, INF))):
        assert np.all(J_eq >= value_closed_form(bessel, xs, T) - 1e-12)


def test_dominance_with_mc_noise(bessel, a_star):
    eq, T = R((a_star, INF)), R((0.5, INF))
    for x in (0.2, 0.4):
        a = value_monte_carlo(bessel, x, eq, n=5000, seed=1)
        b = value_monte_carlo(bessel, x, T, n=5000, seed=2)
        assert a.estimate >= b.estimate - 3 * math.hypot(a.stderr, b.stderr)


def test_intersection_dominance(counter, put10, put_c):
    a, b = counter.payoff.params["a_star"], counter.payoff.params["b_star"]
    xs = np.linspace(0.01, 3 * b, 300)
    Rr, Tt = R((a, b)), R((a, INF))
    both = value_closed_form(counter, xs, Rr & Tt)
    assert np.all(both >= np.maximum(value_closed_form(counter, xs, Rr), value_closed_form(counter, xs, Tt)) - 1e-12)
    xs = np.linspace(0.05, 15, 300)
    Rr, Tt = R((0, put_c)), R((0, 1.3 * put_c))
    both = value_closed_form(put10, xs, Rr & Tt)
    assert np.all(both >= np.maximum(value_closed_form(put10, xs, Rr), value_closed_form(put10, xs, Tt)) - 1e-12)


@pytest.mark.parametrize("alpha", [0.01, 0.5, 3.0, 200.0])
@pytest.mark.parametrize("mu, sigma, beta", [(0.0, 1.0, 1.0), (0.2, 0.7, 0.3), (-0.5, 1.5, 2.0)])
def test_gbm_scaling(alpha, mu, sigma, beta):
    p = gbm_identity_problem(mu, sigma, beta)
    xs = np.array([0.3, 1.5, 2.2, 5.0])
    region = R((0, 0.5), (1.0, 2.0), (4.0, INF))
    scaled = R(*((alpha * lo, alpha * hi) for lo, hi in region))
    assert np.allclose(value_closed_form(p, alpha * xs, scaled), alpha * value_closed_form(p, xs, region), rtol=1e-10)


@pytest.mark.parametrize("mu, sigma", [(0.0, 1.0), (-0.5, 1.0), (-1.0, 2.0)])
def test_kappa_increasing_convex(mu, sigma):
    p = gbm_identity_problem(mu, sigma, 1.0)
    a = 2.0
    xs = np.linspace(0.02, a - 0.02, 300)
    J = value_closed_form(p, xs, R((a, INF)))
    assert np.all(np.diff(J) > 0)
    assert np.all(np.diff(J, 2) > 0)


@pytest.mark.parametrize("mu, sigma, beta", [(0.0, 1.0, 1.0), (0.3, 0.5, 0.6), (-0.4, 1.3, 2.0)])
def test_eta_decreasing_convex(mu, sigma, beta):
    p = put_problem(mu, sigma, beta, 10.0)
    a = 4.0
    xs = np.linspace(a + 0.05, 40.0, 300)
    J = value_closed_form(p, xs, R((0, a)))
    assert np.all(np.diff(J) < 0)
    assert np.all(np.diff(J, 2) > 0)
