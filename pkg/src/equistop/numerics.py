"""Quadrature for exponentially weighted half-line integrals and bracketed root finding.

Every valuation in the package reduces to an integral of the form
``int_0^inf e^{-s} h(s) ds``.  The integrands that show up (powers with
exponent ``sqrt(nu^2 + c s)``, ``tanh`` and ``cosh`` of ``sqrt(s)``) are smooth
functions of ``u = sqrt(s)`` but not of ``s``, so the default rule is the
Gauss rule for the weight ``2 u exp(-u^2)`` on ``[0, inf)``, mapped back to
``s = u^2``.  Plain Gauss-Laguerre is kept as an alternative.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import mpmath
import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import eigh_tridiagonal
from scipy.special import roots_laguerre

DEFAULT_ORDER = 64
CHECK_ORDER = 128
DEFAULT_RTOL = 1e-8
SPLIT_POINT = 40.0
ROOT_TOL = 1e-10


class QuadratureError(ArithmeticError):
    """The integrand produced a non-finite value at a quadrature node."""

    def __init__(self, node: float, value):
        super().__init__(f"integrand is not finite at node s={node!r} (value {value!r})")
        self.node = node
        self.value = value


class BracketError(ValueError):
    """The root bracket has no sign change."""


class ConvergenceError(RuntimeError):
    """Root finding ran out of iterations."""

    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(f"{message}; last bracket {bracket}")
        self.bracket = bracket


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights approximating ``int_0^inf e^{-s} h(s) ds``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    @property
    def order(self) -> int:
        return len(self.nodes)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=1)


def _sqrt_recurrence(n: int) -> tuple[np.ndarray, np.ndarray, float]:
    # Chebyshev algorithm on the moments Gamma(k/2 + 1) of 2u exp(-u^2); the
    # moment problem is badly conditioned, hence the extended precision.
    with mpmath.workdps(60 + 3 * n):
        m = 2 * n
        mom = [mpmath.gamma(mpmath.mpf(k) / 2 + 1) for k in range(m)]
        alpha = [mpmath.mpf(0)] * n
        beta = [mpmath.mpf(0)] * n
        alpha[0] = mom[1] / mom[0]
        beta[0] = mom[0]
        prev = [mpmath.mpf(0)] * m
        cur = list(mom)
        for k in range(1, n):
            nxt = [mpmath.mpf(0)] * m
            for j in range(k, m - k):
                nxt[j] = cur[j + 1] - alpha[k - 1] * cur[j] - beta[k - 1] * prev[j]
            alpha[k] = nxt[k + 1] / nxt[k] - cur[k] / cur[k - 1]
            beta[k] = nxt[k] / cur[k - 1]
            prev, cur = cur, nxt
        return (
            np.array([float(a) for a in alpha]),
            np.array([float(mpmath.sqrt(b)) for b in beta[1:]]),
            float(beta[0]),
        )


@lru_cache(maxsize=None)
def sqrt_gauss_rule(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Gauss rule in ``u = sqrt(s)``; exact for polynomials in ``sqrt(s)`` up to degree ``2*order-1``."""
    diag, off, mass = _sqrt_recurrence(order)
    u = eigh_tridiagonal(diag, off, eigvals_only=True)
    # w_i = 1 / sum_k p_k(u_i)^2 over the orthonormal polynomials; the
    # eigenvector route underflows for the far-tail weights
    p_prev = np.zeros_like(u)
    p_cur = np.full_like(u, 1.0 / np.sqrt(mass))
    total = p_cur**2
    for k in range(order - 1):
        p_next = ((u - diag[k]) * p_cur - (off[k - 1] if k else 0.0) * p_prev) / off[k]
        p_prev, p_cur = p_cur, p_next
        total += p_cur**2
    weights = 1.0 / total
    nodes = u**2
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, "sqrt-gauss")


@lru_cache(maxsize=None)
def laguerre_rule(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Classical Gauss-Laguerre rule."""
    nodes, weights = roots_laguerre(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, "laguerre")


_RULES = {"sqrt-gauss": sqrt_gauss_rule, "laguerre": laguerre_rule}


def get_rule(order: int = DEFAULT_ORDER, kind: str = "sqrt-gauss") -> QuadratureRule:
    try:
        return _RULES[kind](order)
    except KeyError:
        raise ValueError(f"unknown quadrature kind {kind!r}") from None


def _evaluate(h: Callable, rule: QuadratureRule) -> np.ndarray:
    values = np.asarray(h(rule.nodes), dtype=float)
    if values.shape[:1] != rule.nodes.shape:
        raise ValueError("integrand must return an array whose leading axis matches the nodes")
    finite = np.isfinite(values)
    if not finite.all():
        idx = np.argwhere(~finite)[0]
        raise QuadratureError(float(rule.nodes[idx[0]]), values[tuple(idx)])
    return rule.apply(values)


def _adaptive(h: Callable, split: float) -> np.ndarray:
    def f(s):
        return np.exp(-s) * np.asarray(h(np.array([s])), dtype=float)[0]

    head, _ = quad_vec(f, 0.0, split, epsabs=1e-14, epsrel=1e-12)
    tail, _ = quad_vec(f, split, np.inf, epsabs=1e-14, epsrel=1e-12)
    return np.asarray(head + tail)


def integrate_exp(
    h: Callable[[np.ndarray], np.ndarray],
    order: int = DEFAULT_ORDER,
    check_order: int | None = CHECK_ORDER,
    rtol: float = DEFAULT_RTOL,
    kind: str = "sqrt-gauss",
    split: float = SPLIT_POINT,
):
    """Approximate ``int_0^inf e^{-s} h(s) ds``.

    ``h`` receives the 1-d array of nodes and returns an array whose leading
    axis runs over the nodes; trailing axes are integrated independently, so
    one call can value a whole grid of states.  The result is cross-checked
    against a rule of order ``check_order``; components where the two
    estimates differ by more than ``rtol`` (relative, floored at 1) are
    recomputed adaptively on ``[0, split]`` plus the tail.

    Raises:
        QuadratureError: ``h`` is not finite at some node.
    """
    primary = _evaluate(h, get_rule(order, kind))
    if check_order is None:
        return primary[()] if np.ndim(primary) == 0 else primary
    check = _evaluate(h, get_rule(check_order, kind))
    bad = np.abs(primary - check) > rtol * np.maximum(1.0, np.abs(check))
    if np.any(bad):
        fallback = _adaptive(h, split)
        primary = np.where(bad, fallback, primary)
    return primary[()] if np.ndim(primary) == 0 else primary


def find_root(
    g: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = ROOT_TOL,
    maxiter: int = 200,
) -> float:
    """Root of ``g`` in ``[lo, hi]`` by safeguarded regula falsi (Illinois) with bisection.

    Stops once ``|g(x)| <= tol`` or the bracket is narrower than ``tol``.

    Raises:
        BracketError: ``g(lo)`` and ``g(hi)`` have the same sign.
        ConvergenceError: ``maxiter`` exhausted.
    """
    if not lo < hi:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    flo, fhi = float(g(lo)), float(g(hi))
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"no sign change on [{lo}, {hi}]: g={flo:.3g}, {fhi:.3g}")
    side = 0
    for it in range(maxiter):
        width = hi - lo
        if width <= tol:
            return 0.5 * (lo + hi)
        if it % 3 == 2:
            x = 0.5 * (lo + hi)
        else:
            x = hi - fhi * (hi - lo) / (fhi - flo)
            if not lo < x < hi:
                x = 0.5 * (lo + hi)
        fx = float(g(x))
        if abs(fx) <= tol:
            return x
        if np.sign(fx) == np.sign(flo):
            lo, flo = x, fx
            if side == -1:
                fhi *= 0.5
            side = -1
        else:
            hi, fhi = x, fx
            if side == 1:
                flo *= 0.5
            side = 1
    raise ConvergenceError(f"no convergence after {maxiter} iterations", (lo, hi))
