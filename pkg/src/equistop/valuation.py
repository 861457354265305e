"""Payoffs, stopping problems and the value of a region policy.

``J(x, R)`` is the expected discounted payoff collected at the first entry
into ``R``.  Two engines compute it:

* closed form, for discounts that are mixtures of exponentials in time.
  Hyperbolic discounting is one through ``1/(1+bt) = int_0^inf e^{-s} e^{-bts} ds``,
  so ``J`` becomes a quadrature over first-passage Laplace transforms;
* Monte Carlo over simulated first hits, valid for every discount.

The value ``+inf`` (``math.inf``) is a genuine result, decided analytically
and never produced by numerics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .discounting import DiscountFunction, check_log_subadditive, evaluate
from .numerics import find_root, integrate_exp
from .processes import GBM, REFLECTED_BM, DiffusionModel, laplace_exit_two_sided, nu, simulate_first_hits
from .regions import RegionSet, contains, gaps

DIVERGENT = math.inf

# Monte Carlo defaults
MC_PATHS = 100_000
MC_STEP = 1e-3
TRUNCATION_TARGET = 1e-4
HORIZON_CAP = 1e5


class NoClosedFormError(NotImplementedError):
    """No closed form for this discount/model pair; use the Monte Carlo engine."""


class DivergenceError(ArithmeticError):
    """The value is infinite, so a sample mean would be meaningless."""


# --- payoffs -----------------------------------------------------------------

_PAYOFF_PARAMS = {
    "identity": (),
    "put": ("K",),
    "counterexample": ("beta", "a_star", "b_star"),
    "tabulated": ("xs", "ys"),
}


@dataclass(frozen=True)
class PayoffFunction:
    """Continuous nonnegative payoff ``f``.

    Kinds: ``identity`` (``f(x) = x``), ``put`` (``(K - x)^+``),
    ``counterexample`` (``x`` up to ``b_star``, then the discounted value of
    travelling back to ``b_star`` under reflected Brownian motion) and
    ``tabulated`` (piecewise linear through ``(xs, ys)``, constant outside).
    """

    kind: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PAYOFF_PARAMS:
            raise ValueError(f"unknown payoff kind {self.kind!r}")
        if set(self.params) != set(_PAYOFF_PARAMS[self.kind]):
            raise ValueError(f"{self.kind} payoff takes {_PAYOFF_PARAMS[self.kind]}, got {sorted(self.params)}")
        if self.kind == "tabulated":
            xs = tuple(float(v) for v in self.params["xs"])
            ys = tuple(float(v) for v in self.params["ys"])
            if len(xs) < 2 or len(xs) != len(ys) or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("tabulated payoff needs >= 2 strictly increasing knots with matching values")
            if min(ys) < 0 or not all(map(math.isfinite, ys)):
                raise ValueError("tabulated payoff values must be finite and nonnegative")
            params = {"xs": xs, "ys": ys}
        else:
            params = {k: float(v) for k, v in self.params.items()}
            if any(not (v > 0 and math.isfinite(v)) for v in params.values()):
                raise ValueError(f"{self.kind} payoff parameters must be positive")
            if self.kind == "counterexample" and not params["b_star"] > params["a_star"]:
                raise ValueError("counterexample payoff needs b_star > a_star")
        object.__setattr__(self, "params", MappingProxyType(params))

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def __eq__(self, other):
        if not isinstance(other, PayoffFunction):
            return NotImplemented
        return self.kind == other.kind and dict(self.params) == dict(other.params)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "identity":
            out = x.copy()
        elif self.kind == "put":
            out = np.maximum(p["K"] - x, 0.0)
        elif self.kind == "tabulated":
            out = np.interp(x, p["xs"], p["ys"])
        else:
            out = _counterexample_payoff(x, p["beta"], p["b_star"])
        return out[()] if out.ndim == 0 else out

    @property
    def bounded(self) -> bool:
        return self.kind != "identity"

    @property
    def sup(self) -> float:
        p = self.params
        return {"identity": math.inf, "put": p.get("K"), "counterexample": p.get("b_star")}.get(
            self.kind, max(p.get("ys", (0.0,)))
        )

    @property
    def kinks(self) -> tuple[float, ...]:
        """States where ``f`` is not smooth; natural candidate region endpoints."""
        p = self.params
        if self.kind == "put":
            return (p["K"],)
        if self.kind == "counterexample":
            return (p["b_star"],)
        if self.kind == "tabulated":
            return tuple(p["xs"])
        return ()

    @property
    def zero_set_above(self) -> float:
        """Infimum of an upper ray on which ``f`` vanishes, or ``inf``."""
        if self.kind == "put":
            return self.params["K"]
        if self.kind == "tabulated" and self.params["ys"][-1] == 0.0:
            ys = self.params["ys"]
            k = len(ys) - 1
            while k > 0 and ys[k - 1] == 0.0:
                k -= 1
            return self.params["xs"][k]
        return math.inf

    def to_dict(self) -> dict:
        params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, data) -> "PayoffFunction":
        return cls(data["kind"], dict(data.get("params", {})))


def _counterexample_payoff(x, beta, b_star):
    x = np.asarray(x, dtype=float)
    out = x.copy()
    above = x > b_star
    if np.any(above):
        d = x[above] - b_star
        # E^x[e^{-lam T_b}] = exp(-(x-b) sqrt(2 lam)) for |W| started above b
        out[above] = b_star * integrate_exp(lambda s: np.exp(-np.outer(np.sqrt(2.0 * beta * s), d)))
    return out


def identity() -> PayoffFunction:
    return PayoffFunction("identity", {})


def put(K: float) -> PayoffFunction:
    return PayoffFunction("put", {"K": K})


def counterexample_payoff(beta: float, a_star: float, b_star: float) -> PayoffFunction:
    return PayoffFunction("counterexample", {"beta": beta, "a_star": a_star, "b_star": b_star})


def tabulated(xs, ys) -> PayoffFunction:
    return PayoffFunction("tabulated", {"xs": tuple(xs), "ys": tuple(ys)})


# --- problems ----------------------------------------------------------------


@dataclass(frozen=True)
class StoppingProblem:
    """A model, a payoff and a discount; ``window`` suggests default grid bounds."""

    model: DiffusionModel
    payoff: PayoffFunction
    discount: DiscountFunction
    window: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        report = check_log_subadditive(self.discount)
        if not report.holds:
            raise ValueError(
                f"discount is not log-subadditive: margin {report.worst_margin:.3g} at {report.worst_pair}"
            )
        if self.window is not None:
            lo, hi = (float(v) for v in self.window)
            if not (lo < hi) or lo < self.model.space_lo or not math.isfinite(hi):
                raise ValueError(f"window {self.window} must be a finite interval inside the state space")
            object.__setattr__(self, "window", (lo, hi))

    @property
    def payoff_scale(self) -> float:
        """Typical payoff size, used to scale tolerances."""
        if self.payoff.bounded:
            return float(self.payoff.sup) or 1.0
        if self.window is not None:
            return max(abs(self.window[1]), 1.0)
        return 1.0


# --- escape and divergence ---------------------------------------------------


def escape_value(p: StoppingProblem) -> float:
    """``limsup delta(t) f(X_t)`` on paths that never stop: 0 or ``inf``.

    Bounded payoffs give 0.  For the identity payoff the answer follows from
    the growth of the state against the decay of the discount.  For GBM at
    ``nu = 0`` under polynomial discounting the convention is 0.
    """
    if p.payoff.bounded:
        return 0.0
    d = p.discount
    m = p.model
    if m.kind == GBM:
        if d.kind in ("hyperbolic", "generalized-hyperbolic"):
            return DIVERGENT if nu(m) > 0 else 0.0
        rate = d.params["alpha"] if d.kind == "exponential" else min(d.params["r1"], d.params["r2"])
        return DIVERGENT if m.mu - 0.5 * m.sigma**2 - rate >= 0 else 0.0
    if d.kind == "generalized-hyperbolic" and d.params["k"] <= 0.5:
        return DIVERGENT
    return 0.0


def _escape_possible(p: StoppingProblem, lo_in: bool, hi: float) -> bool:
    # paths in the gap avoid R forever with positive probability
    m = p.model
    if m.kind == REFLECTED_BM:
        return not lo_in and hi == math.inf
    v = nu(m)
    if hi == math.inf and (v > 0 or not lo_in):
        return True
    return not lo_in and v < 0


def is_divergent(p: StoppingProblem, x: float, R: RegionSet) -> bool:
    if contains(R, x):
        return False
    _, hi, lo_in = _gap_of(p, x, R)
    return escape_value(p) == DIVERGENT and _escape_possible(p, lo_in, hi)


def _gap_of(p: StoppingProblem, x: float, R: RegionSet):
    """Gap ``(lo, hi)`` of ``R`` around ``x`` and whether ``lo`` belongs to ``R``."""
    m = p.model
    for glo, ghi in gaps(R, m.space_lo, m.space_hi):
        if glo < x < ghi or x == glo == m.space_lo:
            return glo, ghi, _lower_in(p, R, glo)
    raise AssertionError(f"{x} lies in no gap of {R}")


def _lower_in(p: StoppingProblem, R: RegionSet, glo: float) -> bool:
    # the lower boundary marker of an open state space is never a region point
    return bool(contains(R, glo)) and (glo > p.model.space_lo or p.model.lower_closed)


# --- closed form -------------------------------------------------------------


def _laplace_integral(d: DiscountFunction, h):
    """``int_0^inf d(t) dF(t)`` for an ``F`` whose Laplace transform is ``h(lam)``.

    ``h`` maps a 1-d array of rates to an array with the rates on axis 0.
    """
    if d.kind == "hyperbolic":
        beta = d.params["beta"]
        return integrate_exp(lambda s: h(beta * s))
    if d.kind == "exponential":
        return h(np.array([d.params["alpha"]]))[0]
    if d.kind == "pseudo-exponential":
        lam, r1, r2 = d.params["lam"], d.params["r1"], d.params["r2"]
        vals = h(np.array([r1, r2]))
        return lam * vals[0] + (1.0 - lam) * vals[1]
    raise NoClosedFormError(
        f"no closed form for {d.kind} discounting; use the Monte Carlo engine (value_monte_carlo)"
    )


def _gap_value(p: StoppingProblem, xs: np.ndarray, lo: float, hi: float, lo_in: bool) -> np.ndarray:
    m, f = p.model, p.payoff
    f_lo = float(f(lo)) if lo_in else 0.0
    f_hi = float(f(hi)) if math.isfinite(hi) else 0.0
    if m.kind == GBM:
        v = nu(m)

        def root(lam):
            return np.sqrt(v**2 + 2.0 * lam / m.sigma**2)[:, None]

        if lo_in and math.isfinite(hi):
            def h(lam):
                w_lo, w_hi = laplace_exit_two_sided(m, xs[None, :], lo, hi, lam[:, None])
                return f_lo * w_lo + f_hi * w_hi
        elif math.isfinite(hi):
            def h(lam):
                return f_hi * np.exp((root(lam) - v) * np.log(xs / hi)[None, :])
        elif lo_in:
            def h(lam):
                return f_lo * np.exp(-(root(lam) + v) * np.log(xs / lo)[None, :])
        else:
            return np.zeros_like(xs)
    else:
        if lo_in and math.isfinite(hi):
            def h(lam):
                w_lo, w_hi = laplace_exit_two_sided(m, xs[None, :], lo, hi, lam[:, None])
                return f_lo * w_lo + f_hi * w_hi
        elif math.isfinite(hi):
            def h(lam):
                q = np.sqrt(2.0 * lam)[:, None]
                x, a = xs[None, :], hi
                return f_hi * np.exp((x - a) * q) * (1.0 + np.exp(-2.0 * x * q)) / (1.0 + np.exp(-2.0 * a * q))
        elif lo_in:
            def h(lam):
                return f_lo * np.exp(-np.sqrt(2.0 * lam)[:, None] * (xs - lo)[None, :])
        else:
            return np.zeros_like(xs)
    return np.asarray(_laplace_integral(p.discount, h), dtype=float)


def value_closed_form(p: StoppingProblem, x, R: RegionSet):
    """``J(x, R)`` from first-passage transforms; vectorised over ``x``.

    Returns ``inf`` where the value diverges.

    Raises:
        NoClosedFormError: the discount is not a finite or integral mixture of exponentials.
    """
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(p.model.in_space(arr)):
        raise ValueError("states outside the state space")
    if p.discount.kind == "generalized-hyperbolic":
        _laplace_integral(p.discount, None)
    out = np.empty_like(arr)
    inside = np.asarray(contains(R, arr), dtype=bool)
    out[inside] = p.payoff(arr[inside])
    esc = escape_value(p)
    space_lo = p.model.space_lo
    for glo, ghi in gaps(R, space_lo, p.model.space_hi):
        sel = ~inside & (arr > glo) & (arr < ghi)
        if glo == space_lo:
            sel |= ~inside & (arr == glo)
        if not np.any(sel):
            continue
        lo_in = _lower_in(p, R, glo)
        if esc == DIVERGENT and _escape_possible(p, lo_in, ghi):
            out[sel] = DIVERGENT
        else:
            out[sel] = _gap_value(p, arr[sel], glo, ghi, lo_in)
    return float(out[0]) if np.ndim(x) == 0 else out


# --- Monte Carlo -------------------------------------------------------------


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    bias_bound: float
    seed: int
    n: int
    horizon: float
    step: float


def default_horizon(d: DiscountFunction, f_max: float, target: float = TRUNCATION_TARGET, cap: float = HORIZON_CAP) -> float:
    """Time after which ``delta(t) * f_max`` has dropped below ``target``, capped."""
    f_max = max(float(f_max), target)
    if d.kind == "hyperbolic":
        return min(max((f_max / target - 1.0) / d.params["beta"], 1.0), cap)

    def g(t):
        w = evaluate(d, t)
        return math.log(w * f_max / target) if w > 0 else -math.inf

    if g(cap) >= 0:
        return cap
    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    return max(find_root(g, 0.0, hi, tol=1e-6 * hi), 1.0) if hi > 1.0 else 1.0


def value_monte_carlo(
    p: StoppingProblem,
    x: float,
    R: RegionSet,
    n: int = MC_PATHS,
    seed: int = 0,
    step: float = MC_STEP,
    horizon: float | None = None,
) -> MCEstimate:
    """Sample mean of ``delta(rho) f(X_rho)`` over ``n`` simulated first hits.

    Paths that have not hit by the horizon contribute 0; ``bias_bound`` bounds
    what they could have contributed.

    Raises:
        DivergenceError: the value is ``+inf``.
    """
    if n < 100:
        raise ValueError("Monte Carlo needs n >= 100 paths")
    x = float(x)
    if contains(R, x):
        return MCEstimate(float(p.payoff(x)), 0.0, 0.0, seed, n, 0.0, step)
    if is_divergent(p, x, R):
        raise DivergenceError(f"J({x}, {R}) is infinite for this problem")
    lo, hi, lo_in = _gap_of(p, x, R)
    f_max = max(float(p.payoff(lo)) if lo_in else 0.0, float(p.payoff(hi)) if math.isfinite(hi) else 0.0)
    if horizon is None:
        horizon = default_horizon(p.discount, f_max)
    sample = simulate_first_hits(p.model, x, R, n, horizon, step, seed)
    hit = sample.hit
    vals = np.zeros(n)
    vals[hit] = evaluate(p.discount, sample.time[hit]) * p.payoff(sample.state[hit])
    bias = float(np.mean(~hit)) * float(evaluate(p.discount, horizon)) * f_max
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)), bias, seed, n, horizon, step)


# --- V and integrability -----------------------------------------------------


def value_V(p: StoppingProblem, x, R: RegionSet, engine: str = "closed-form", **mc):
    """``max(f(x), J(x, R))``; ``engine`` is ``closed-form`` or ``monte-carlo``."""
    if engine == "closed-form":
        J = value_closed_form(p, x, R)
    elif engine == "monte-carlo":
        if np.ndim(x):
            J = np.array([value_monte_carlo(p, xi, R, **mc).estimate for xi in np.asarray(x, dtype=float)])
        else:
            J = value_monte_carlo(p, x, R, **mc).estimate
    else:
        raise ValueError(f"unknown engine {engine!r}")
    out = np.maximum(p.payoff(x), J)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class IntegrabilityReport:
    decays: bool  # delta(t) f(X_t) -> 0
    sup_integrable: bool  # E[sup_t delta(t) f(X_t)] < inf
    basis: str
    detail: str = ""


def check_integrability(p: StoppingProblem, n_paths: int = 2000, seed: int = 0) -> IntegrabilityReport:
    """Decide the decay and uniform integrability conditions for ``delta(t) f(X_t)``."""
    m, d, f = p.model, p.discount, p.payoff
    if f.bounded:
        return IntegrabilityReport(True, True, "analytic", "bounded payoff")
    if m.kind == REFLECTED_BM:
        if d.kind == "generalized-hyperbolic":
            k = d.params["k"]
            return IntegrabilityReport(k > 0.5, k > 0.5, "analytic", f"|W_t| t^-{k}")
        return IntegrabilityReport(True, True, "analytic", "|W_t| against decaying discount")
    v = nu(m)
    if d.kind == "hyperbolic":
        return IntegrabilityReport(v <= 0, v <= -0.5, "analytic", f"nu={v:.6g}")
    if d.kind in ("exponential", "pseudo-exponential"):
        rate = d.params["alpha"] if d.kind == "exponential" else min(d.params["r1"], d.params["r2"])
        return IntegrabilityReport(
            m.mu - 0.5 * m.sigma**2 < rate, m.mu < rate, "analytic", f"mu={m.mu:.6g}, rate={rate:.6g}"
        )
    return _empirical_integrability(p, n_paths, seed)


def _empirical_integrability(p: StoppingProblem, n_paths: int, seed: int) -> IntegrabilityReport:
    # simulate log X exactly at geometric checkpoints; compare the running sup
    # and the terminal level over two horizons an order of magnitude apart
    m = p.model
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    times = np.concatenate([[0.0], np.geomspace(1e-3, 1e4, 400)])
    dts = np.diff(times)
    inc = (m.mu - 0.5 * m.sigma**2) * dts + m.sigma * np.sqrt(dts) * rng.standard_normal((n_paths, dts.size))
    logx = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    with np.errstate(over="ignore"):
        y = evaluate(p.discount, times)[None, :] * np.exp(logx)
    mid = np.searchsorted(times, 1e3)
    sup_mid = np.max(y[:, : mid + 1], axis=1).mean()
    sup_end = np.max(y, axis=1).mean()
    tail = np.median(y[:, -1])
    decays = bool(tail < 1e-3)
    sup_integrable = bool(np.isfinite(sup_end) and sup_end <= 1.05 * sup_mid)
    return IntegrabilityReport(decays, sup_integrable, "empirical", f"median terminal {tail:.3g}, sup growth {sup_end / sup_mid:.3g}")
