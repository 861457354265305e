"""Closed-form solvers for the worked examples.

Three problems have explicit answers under hyperbolic discounting
``1/(1 + beta t)``:

* reflected Brownian motion with ``f(x) = x`` (threshold ``a*``);
* geometric Brownian motion with ``f(x) = x``, classified by ``nu`` and
  ``sqrt(beta pi / 2 sigma^2)``;
* the perpetual put on GBM, threshold ``lambda K / (1 + lambda)``.

A fourth, the counterexample, modifies the reflected problem above ``b*``
so that two distinct closed optimal equilibria exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discounting import hyperbolic
from .numerics import ROOT_TOL, find_root, integrate_exp
from .processes import gbm, reflected_bm
from .regions import RegionSet
from .valuation import StoppingProblem, counterexample_payoff, identity, put

BOUNDARY_BAND = 1e-10
GBM_WINDOW_SIGMAS = 6.0
BESSEL_WINDOW = 10.0


def _check_positive(**kw):
    for name, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be positive and finite, got {v}")


def g_exponent(s, nu: float, beta: float, sigma: float):
    """``sqrt(nu^2 + 2 beta s / sigma^2) - nu``; positive for every ``s > 0``."""
    s = np.asarray(s, dtype=float)
    out = np.sqrt(nu**2 + 2.0 * beta * s / sigma**2) - nu
    return out[()] if out.ndim == 0 else out


def kappa(x, a: float, nu: float, beta: float, sigma: float):
    """``E^x[a / (1 + beta T_a)]`` for GBM started below ``a``."""
    _check_positive(a=a, beta=beta, sigma=sigma)
    xs = np.asarray(x, dtype=float)
    if np.any(xs <= 0) or np.any(xs > a):
        raise ValueError("kappa needs 0 < x <= a")
    logr = np.log(np.atleast_1d(xs) / a)
    out = a * integrate_exp(lambda s: np.exp(np.outer(g_exponent(s, nu, beta, sigma), logr)))
    return float(out[0]) if xs.ndim == 0 else out


def eta(x, a: float, K: float, nu: float, beta: float, sigma: float):
    """``E^x[(K - a) / (1 + beta T_a)]`` for GBM started above ``a``."""
    _check_positive(a=a, beta=beta, sigma=sigma)
    xs = np.asarray(x, dtype=float)
    if not a < K:
        raise ValueError("eta needs a < K")
    if np.any(xs < a) or not np.all(np.isfinite(xs)):
        raise ValueError("eta needs a <= x < inf")
    logr = np.log(a / np.atleast_1d(xs))
    # sqrt(nu^2 + 2 beta s / sigma^2) + nu = g + 2 nu
    out = (K - a) * integrate_exp(lambda s: np.exp(np.outer(g_exponent(s, nu, beta, sigma) + 2.0 * nu, logr)))
    return float(out[0]) if xs.ndim == 0 else out


def eta_crossing(a: float, K: float, nu: float, beta: float, sigma: float, tol: float = ROOT_TOL) -> float:
    """The single point in ``(a, K)`` where ``eta(., a)`` meets ``(K - .)^+``.

    Exists when ``a`` lies below the put threshold.
    """
    lam = put_lambda_nu(nu, beta, sigma)
    if not a < lam * K / (1.0 + lam):
        raise ValueError("a crossing in (a, K) exists only below the put threshold")
    gap = lambda x: eta(x, a, K, nu, beta, sigma) - (K - x)
    # eta starts at K - a with slope -(K - a) lam / a < -1, so the gap is
    # negative just right of a; eta(K) > 0 = f(K) closes the bracket
    lo = a + 1e-3 * (K - a)
    while gap(lo) >= 0:
        lo = a + 0.5 * (lo - a)
        if lo - a < 1e-14 * K:
            raise ValueError("could not bracket the crossing")
    return find_root(gap, lo, K, tol=tol)


def bessel_threshold(beta: float = 1.0, tol: float = ROOT_TOL) -> float:
    """``a*``: root of ``a int e^{-s} sqrt(2 beta s) tanh(a sqrt(2 beta s)) ds = 1``."""
    _check_positive(beta=beta)
    return find_root(lambda a: bessel_residual(a, beta), 1e-3 / math.sqrt(beta), 1e3 / math.sqrt(beta), tol=tol)


def bessel_residual(a: float, beta: float = 1.0) -> float:
    return float(a * integrate_exp(lambda s: np.sqrt(2 * beta * s) * np.tanh(a * np.sqrt(2 * beta * s))) - 1.0)


def put_lambda_nu(nu: float, beta: float, sigma: float) -> float:
    return float(integrate_exp(lambda s: np.sqrt(nu**2 + 2.0 * beta * s / sigma**2) + nu))


def put_lambda(mu: float, sigma: float, beta: float) -> float:
    """``int e^{-s} (sqrt(nu^2 + 2 beta s / sigma^2) + nu) ds`` with ``nu = mu/sigma^2 - 1/2``."""
    _check_positive(sigma=sigma, beta=beta)
    return put_lambda_nu(mu / sigma**2 - 0.5, beta, sigma)


def put_threshold(mu: float, sigma: float, beta: float, K: float) -> float:
    """``lambda K / (1 + lambda)``."""
    _check_positive(K=K)
    lam = put_lambda(mu, sigma, beta)
    return lam * K / (1.0 + lam)


def slope_boundary(sigma: float, beta: float) -> float:
    """``sqrt(beta pi / (2 sigma^2))``, the slope at ``a`` of ``kappa(., a)/a`` when ``nu = 0``."""
    return math.sqrt(beta * math.pi / (2.0 * sigma**2))


def nu_star_residual(nu: float, sigma: float, beta: float) -> float:
    return float(integrate_exp(lambda s: g_exponent(s, nu, beta, sigma)) - 1.0)


def gbm_nu_star(sigma: float, beta: float, tol: float = ROOT_TOL) -> float:
    """Root in ``(-1/2, 0)`` of ``int e^{-s} g(s, nu) ds = 1``.

    Raises:
        ValueError: ``sqrt(beta pi / 2 sigma^2) >= 1``, where no such root exists.
    """
    _check_positive(sigma=sigma, beta=beta)
    if slope_boundary(sigma, beta) >= 1.0:
        raise ValueError("nu* exists only when sqrt(beta pi / (2 sigma^2)) < 1")
    return find_root(lambda v: nu_star_residual(v, sigma, beta), -0.5 + 1e-9, -1e-9, tol=tol)


NU_POSITIVE = "NuPositive"
NU_LE_MINUS_HALF = "NuLeMinusHalf"
CASE1 = "Case1"
CASE2I = "Case2i"
CASE2II = "Case2ii"
CASE3I = "Case3i"
CASE3II = "Case3ii"

NO_OPTIMUM = "no optimal equilibrium"


@dataclass(frozen=True)
class GbmCase:
    case: str
    nu: float
    boundary: float
    nu_star: float | None
    verdict: str
    optimal_region: RegionSet | None
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "nu": self.nu,
            "boundary": self.boundary,
            "nu_star": self.nu_star,
            "verdict": self.verdict,
            "note": self.note,
        }


def gbm_classify(mu: float, sigma: float, beta: float) -> GbmCase:
    """Which regions are optimal equilibria for ``f(x) = x`` on GBM under hyperbolic discounting."""
    _check_positive(sigma=sigma, beta=beta)
    v = mu / sigma**2 - 0.5
    b = slope_boundary(sigma, beta)
    whole = RegionSet.interval(0.0)
    # nu is a ratio of user inputs; round-off below the band is not a sign
    if v > BOUNDARY_BAND:
        return GbmCase(NU_POSITIVE, v, b, None, "empty set", RegionSet.empty())
    if v <= -0.5 + BOUNDARY_BAND:
        return GbmCase(NU_LE_MINUS_HALF, v, b, None, "(0,inf)", whole)
    if b - 1.0 > BOUNDARY_BAND:
        return GbmCase(CASE1, v, b, None, "(0,inf)", whole)
    if abs(b - 1.0) <= BOUNDARY_BAND:
        note = "" if b == 1.0 else f"boundary within band {BOUNDARY_BAND:g}"
        if abs(v) <= BOUNDARY_BAND:
            return GbmCase(CASE2I, v, b, None, NO_OPTIMUM, None, note)
        return GbmCase(CASE2II, v, b, None, "(0,inf)", whole, note)
    vs = gbm_nu_star(sigma, beta)
    if v - vs >= -BOUNDARY_BAND:
        note = f"nu within band {BOUNDARY_BAND:g} of nu*" if abs(v - vs) <= BOUNDARY_BAND else ""
        return GbmCase(CASE3I, v, b, vs, NO_OPTIMUM, None, note)
    return GbmCase(CASE3II, v, b, vs, "(0,inf)", whole)


# --- problem builders -----------------------------------------------------------


def bessel_problem(beta: float = 1.0) -> StoppingProblem:
    a = bessel_threshold(beta)
    return StoppingProblem(reflected_bm(), identity(), hyperbolic(beta), (0.0, BESSEL_WINDOW * a), "bessel")


def gbm_window(sigma: float, ref: float) -> tuple[float, float]:
    return (ref * math.exp(-GBM_WINDOW_SIGMAS * sigma), ref * math.exp(GBM_WINDOW_SIGMAS * sigma))


def gbm_identity_problem(mu: float, sigma: float, beta: float) -> StoppingProblem:
    return StoppingProblem(gbm(mu, sigma), identity(), hyperbolic(beta), gbm_window(sigma, 1.0), "gbm")


def put_problem(mu: float, sigma: float, beta: float, K: float) -> StoppingProblem:
    return StoppingProblem(gbm(mu, sigma), put(K), hyperbolic(beta), gbm_window(sigma, K), "put")


def build_counterexample(beta: float = 1.0, b_multiplier: float = 2.0) -> StoppingProblem:
    """Reflected-BM problem whose payoff is ``x`` up to ``b* = b_multiplier a*``.

    Above ``b*`` the payoff equals the discounted value of waiting for ``b*``,
    which makes the whole ray above ``b*`` indifferent under ``[a*, b*]``.
    """
    if not b_multiplier > 1.0:
        raise ValueError("b_multiplier must exceed 1")
    a = bessel_threshold(beta)
    b = b_multiplier * a
    f = counterexample_payoff(beta, a, b)
    return StoppingProblem(reflected_bm(), f, hyperbolic(beta), (0.0, max(BESSEL_WINDOW * a, 2.0 * b)), "counterexample")
