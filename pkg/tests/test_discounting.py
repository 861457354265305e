import math

import numpy as np
import pytest

from equistop.discounting import (
    DiscountFunction,
    check_log_subadditive,
    default_pairs,
    evaluate,
    exponential,
    generalized_hyperbolic,
    hyperbolic,
    pseudo_exponential,
)

FAMILIES = [
    exponential(0.7),
    hyperbolic(1.0),
    hyperbolic(3.0),
    generalized_hyperbolic(1.0, 2.0),
    generalized_hyperbolic(0.5, 0.3),
    pseudo_exponential(0.5, 0.01, 1.0),
    pseudo_exponential(0.2, 0.3, 0.05),
]


def test_examples():
    assert evaluate(hyperbolic(1), 0) == 1
    assert evaluate(hyperbolic(1), 1) == 0.5
    assert evaluate(exponential(1), math.log(2)) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
def test_shape(d):
    t = np.linspace(0, 50, 501)
    w = evaluate(d, t)
    assert w[0] == 1.0
    assert np.all(np.diff(w) <= 0)
    assert np.all((w > 0) & (w <= 1))
    assert evaluate(d, 1e12) < 1e-3
    assert evaluate(d, math.inf) == 0.0


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
def test_monotone_random_pairs(d, seed):
    t = np.sort(np.random.default_rng(seed).exponential(5.0, size=(200, 2)), axis=1)
    assert np.all(evaluate(d, t[:, 0]) >= evaluate(d, t[:, 1]))


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        evaluate(hyperbolic(1), -0.1)
    with pytest.raises(ValueError):
        evaluate(hyperbolic(1), np.nan)


@pytest.mark.parametrize(
    "kind, params",
    [
        ("hyperbolic", {"beta": 0}),
        ("hyperbolic", {"beta": 1, "k": 2}),
        ("pseudo-exponential", {"lam": 1.0, "r1": 1, "r2": 2}),
        ("quadratic", {"a": 1}),
        ("generalized-hyperbolic", {"beta": 1}),
    ],
)
def test_bad_params(kind, params):
    with pytest.raises(ValueError):
        DiscountFunction(kind, params)


def test_margin_example():
    rep = check_log_subadditive(hyperbolic(1), [(1.0, 1.0)])
    assert rep.worst_margin == pytest.approx(1 / 3 - 1 / 4, abs=1e-15)
    assert rep.holds and rep.strict_everywhere


def test_exponential_equality():
    rep = check_log_subadditive(exponential(2.0))
    assert rep.holds and not rep.strict_everywhere
    assert abs(rep.worst_margin) < 1e-12


def test_generalized_hyperbolic_hundred_pairs():
    rep = check_log_subadditive(generalized_hyperbolic(1.0, 2.0), default_pairs(10))
    assert rep.n_pairs == 100 and rep.holds and rep.strict_everywhere


@pytest.mark.parametrize("d", FAMILIES, ids=lambda d: d.kind)
def test_every_family_holds(d):
    rep = check_log_subadditive(d)
    assert rep.holds and rep.analytic


def test_only_exponential_is_not_strict():
    # decay slow enough that the 1e-12 margin does not underflow on the grid
    slow = FAMILIES[:-1]
    strict = {d: check_log_subadditive(d).strict_everywhere for d in slow}
    assert [d.kind for d, s in strict.items() if not s] == ["exponential"]


def test_degenerate_pseudo_exponential_flag():
    assert not pseudo_exponential(0.5, 1.0, 1.0).known_strict


def test_check_rejects_bad_grids():
    with pytest.raises(ValueError):
        check_log_subadditive(hyperbolic(1), [])
    with pytest.raises(ValueError):
        check_log_subadditive(hyperbolic(1), [(0.0, 1.0)])


def test_round_trip_and_hash():
    for d in FAMILIES:
        again = DiscountFunction.from_dict(d.to_dict())
        assert again == d and hash(again) == hash(d)
