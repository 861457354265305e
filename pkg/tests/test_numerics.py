import math

import numpy as np
import pytest

from equistop.numerics import (
    BracketError,
    ConvergenceError,
    QuadratureError,
    find_root,
    get_rule,
    integrate_exp,
    laguerre_rule,
    sqrt_gauss_rule,
)
from oracles import A_STAR_1, A_STAR_1_GL256


@pytest.mark.parametrize("kind", ["sqrt-gauss", "laguerre"])
@pytest.mark.parametrize("order", [64, 128])
def test_rule_invariants(kind, order):
    rule = get_rule(order, kind)
    assert rule.order == order
    assert abs(rule.weights.sum() - 1.0) < 1e-12
    assert np.all(rule.nodes > 0) and np.all(np.diff(rule.nodes) > 0)
    assert np.all(rule.weights > 0)


def test_constant_and_linear():
    assert integrate_exp(lambda s: np.ones_like(s)) == pytest.approx(1.0, abs=1e-12)
    assert integrate_exp(lambda s: s) == pytest.approx(1.0, abs=1e-12)


def test_sqrt_integrand():
    assert integrate_exp(lambda s: np.sqrt(2 * s)) == pytest.approx(math.sqrt(math.pi / 2), abs=1e-12)


def test_sqrt_rule_is_exact_on_half_integer_powers():
    # int e^{-s} s^{k/2} ds = Gamma(k/2 + 1)
    rule = sqrt_gauss_rule(64)
    for k in range(0, 20):
        assert rule.apply(rule.nodes ** (k / 2)) == pytest.approx(math.gamma(k / 2 + 1), rel=1e-12)


def test_plain_laguerre_struggles_on_sqrt():
    rule = laguerre_rule(64)
    err = abs(rule.apply(np.sqrt(rule.nodes)) - math.gamma(1.5))
    assert err > 1e-6  # why the default rule is in sqrt(s)


def test_vectorised_trailing_axes():
    xs = np.array([0.1, 0.5, 0.9])
    out = integrate_exp(lambda s: np.exp(np.outer(-np.sqrt(s), xs)))
    single = [integrate_exp(lambda s, x=x: np.exp(-np.sqrt(s) * x)) for x in xs]
    assert np.allclose(out, single, rtol=0, atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_linearity(seed):
    rng = np.random.default_rng(seed)
    a, b, c, alpha = rng.uniform(0.1, 2.0, 4)
    h1 = lambda s: np.tanh(a * np.sqrt(s))
    h2 = lambda s: np.cos(b * s) * np.exp(-c * np.sqrt(s))
    lhs = integrate_exp(lambda s: alpha * h1(s) + h2(s))
    assert lhs == pytest.approx(alpha * integrate_exp(h1) + integrate_exp(h2), abs=1e-10)


@pytest.mark.parametrize(
    "h",
    [
        lambda s: np.sqrt(0.25 + 2 * s) - 0.5,
        lambda s: np.tanh(0.9 * np.sqrt(2 * s)) * np.sqrt(2 * s),
        lambda s: 0.5 ** (np.sqrt(0.04 + 0.8 * s) + 0.2),
        lambda s: np.cosh(0.3 * np.sqrt(2 * s)) / np.cosh(np.sqrt(2 * s)),
    ],
)
def test_order_doubling_is_stable(h):
    assert abs(integrate_exp(h, 64, None) - integrate_exp(h, 128, None)) < 1e-8


def test_adaptive_fallback_on_disagreement():
    # oscillation defeats both Gauss rules; the fallback still gets it right
    # int e^{-s} cos(w s) ds = 1 / (1 + w^2)
    w = 40.0
    assert integrate_exp(lambda s: np.cos(w * s)) == pytest.approx(1 / (1 + w**2), abs=1e-9)


def test_nonfinite_integrand_carries_node():
    with pytest.raises(QuadratureError) as info:
        integrate_exp(lambda s: np.where(s > 5, np.inf, 1.0))
    assert info.value.node > 5


def test_find_root_examples():
    assert find_root(lambda x: x - 2, 0, 5) == pytest.approx(2, abs=1e-10)
    assert find_root(lambda x: x * x - 2, 1, 2) == pytest.approx(math.sqrt(2), abs=1e-10)


def test_find_root_bracket_invariance():
    g = lambda x: math.exp(x) - 3
    roots = [find_root(g, lo, hi) for lo, hi in [(0, 2), (-5, 5), (1, 1.5), (-50, 10)]]
    assert max(roots) - min(roots) < 1e-9


def test_find_root_errors():
    with pytest.raises(BracketError):
        find_root(lambda x: x * x + 1, -1, 1)
    with pytest.raises(ConvergenceError) as info:
        find_root(lambda x: x**3 - 0.3, 0, 1, tol=0.0, maxiter=5)
    lo, hi = info.value.bracket
    assert lo <= 0.3 ** (1 / 3) <= hi


def test_bessel_root_against_frozen_oracle():
    g = lambda a: a * integrate_exp(lambda s: np.sqrt(2 * s) * np.tanh(a * np.sqrt(2 * s))) - 1
    assert find_root(g, 0.5, 2.0) == pytest.approx(A_STAR_1, abs=1e-10)
    assert A_STAR_1_GL256 == pytest.approx(A_STAR_1, abs=1e-10)
