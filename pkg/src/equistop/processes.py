"""Diffusion models, first-passage Laplace transforms and first-hit simulation.

Two models are built in: geometric Brownian motion on ``(0, inf)`` and
reflected Brownian motion ``|W|`` on ``[0, inf)``.  Both are strong Markov
with continuous paths, so the first entry into a closed region from a point
outside it is the exit time of the gap ``(l, r)`` around the point, and the
entry state is ``l`` or ``r``.  All transforms below are functions of that
gap.

Simulation works in the natural scale of each model (log-price for GBM, the
underlying ``W`` for ``|W|``), where paths are Brownian with constant drift.
Barrier crossings between grid times are detected with the exact
Brownian-bridge crossing probability.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .regions import RegionSet, contains, neighbors

GBM = "gbm"
REFLECTED_BM = "reflected_bm"

PATH_BLOCK = 4096
STEP_BLOCK = 256
# late steps grow like STEP_GROWTH * t; the bridge test keeps crossings exact,
# only the hit time is coarsened, by a relative amount of order STEP_GROWTH
STEP_GROWTH = 1e-3


class UnsupportedModelError(ValueError):
    """The operation is not defined for this model."""


@dataclass(frozen=True)
class DiffusionModel:
    """State process. ``mu``/``sigma`` are used by GBM only."""

    kind: str
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (GBM, REFLECTED_BM):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == GBM and not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("GBM volatility must be positive")
        if not math.isfinite(self.mu):
            raise ValueError("drift must be finite")

    @property
    def space_lo(self) -> float:
        return 0.0

    @property
    def space_hi(self) -> float:
        return math.inf

    @property
    def lower_closed(self) -> bool:
        """Whether the lower boundary point belongs to the state space."""
        return self.kind == REFLECTED_BM

    def in_space(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= 0) & np.isfinite(x) if self.lower_closed else (x > 0) & np.isfinite(x)

    def to_dict(self) -> dict:
        if self.kind == GBM:
            return {"kind": GBM, "mu": self.mu, "sigma": self.sigma}
        return {"kind": REFLECTED_BM}

    @classmethod
    def from_dict(cls, data) -> "DiffusionModel":
        kind = data["kind"]
        if kind == GBM:
            return cls(GBM, float(data["mu"]), float(data["sigma"]))
        return cls(REFLECTED_BM)


def gbm(mu: float, sigma: float) -> DiffusionModel:
    return DiffusionModel(GBM, mu, sigma)


def reflected_bm() -> DiffusionModel:
    return DiffusionModel(REFLECTED_BM)


def nu(model: DiffusionModel) -> float:
    """GBM index ``mu / sigma^2 - 1/2``."""
    if model.kind != GBM:
        raise UnsupportedModelError("nu is defined for geometric Brownian motion only")
    return model.mu / model.sigma**2 - 0.5


def _check_states(model, *xs):
    for x in xs:
        if not np.all(model.in_space(x)):
            raise ValueError(f"state {x} is outside the state space of {model.kind}")


def _root(model, lam):
    # sqrt(nu^2 + 2 lam / sigma^2), the positive root of the GBM characteristic equation
    return np.sqrt(nu(model) ** 2 + 2.0 * lam / model.sigma**2)


def laplace_hit_one_sided(model: DiffusionModel, x, a, lam):
    """``E^x[exp(-lam T_a)]`` for the first passage to level ``a``; broadcasts."""
    _check_states(model, x, a)
    x, a, lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, a, lam)))
    if np.any(lam <= 0):
        raise ValueError("Laplace rate must be positive")
    up = x <= a
    if model.kind == GBM:
        v = nu(model)
        p = _root(model, lam)
        with np.errstate(divide="ignore"):
            logratio = np.log(x) - np.log(a)
        out = np.where(up, np.exp((p - v) * logratio), np.exp(-(p + v) * logratio))
    else:
        q = np.sqrt(2.0 * lam)
        out = np.where(up, _cosh_ratio(x, a, q), np.exp(-np.abs(x - a) * q))
    return out[()] if out.ndim == 0 else out


def _cosh_ratio(x, a, q):
    # cosh(x q) / cosh(a q) without overflow, for 0 <= x <= a
    return np.exp((x - a) * q) * (1.0 + np.exp(-2.0 * x * q)) / (1.0 + np.exp(-2.0 * a * q))


def _sinh_ratio(num, den):
    # sinh(num) / sinh(den) for 0 <= num <= den, den > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(num - den) * (-np.expm1(-2.0 * num)) / (-np.expm1(-2.0 * den))
    return np.where(num <= 0, 0.0, out)


def laplace_exit_two_sided(model: DiffusionModel, y, lo, hi, lam):
    """Discounted exit weights ``(E^y[e^{-lam tau}; X_tau = lo], E^y[e^{-lam tau}; X_tau = hi])``.

    ``tau`` is the exit time of ``(lo, hi)``.  For GBM this is the classical
    log-scale formula with the drift factor ``(y/lo)^{-nu}``, ``(y/hi)^{-nu}``;
    reflected BM uses the Brownian formula (``lo = 0`` is allowed and means
    the region contains the reflecting point; the gap ``[0, hi)`` with 0
    outside the region is a one-sided problem).
    """
    y, lo, hi, lam = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (y, lo, hi, lam)))
    if np.any(~((lo < y) & (y < hi))):
        raise ValueError("two-sided exit needs lo < y < hi")
    _check_states(model, lo, hi)
    if np.any(lam <= 0):
        raise ValueError("Laplace rate must be positive")
    if model.kind == GBM:
        v = nu(model)
        p = _root(model, lam)
        ly, ll, lh = np.log(y), np.log(lo), np.log(hi)
        w_lo = np.exp(-v * (ly - ll)) * _sinh_ratio(p * (lh - ly), p * (lh - ll))
        w_hi = np.exp(-v * (ly - lh)) * _sinh_ratio(p * (ly - ll), p * (lh - ll))
    else:
        q = np.sqrt(2.0 * lam)
        w_lo = _sinh_ratio(q * (hi - y), q * (hi - lo))
        w_hi = _sinh_ratio(q * (y - lo), q * (hi - lo))
    if w_lo.ndim == 0:
        return float(w_lo), float(w_hi)
    return w_lo, w_hi


# --- simulation --------------------------------------------------------------


@dataclass(frozen=True)
class PathSample:
    """One simulated path on the step grid, with its first hit if any."""

    times: np.ndarray
    states: np.ndarray
    hit: tuple[float, float] | None


@dataclass(frozen=True)
class HitSample:
    """First hits of many paths; ``time`` is ``inf`` and ``state`` NaN when a path never hits."""

    time: np.ndarray
    state: np.ndarray
    seed: int
    horizon: float
    step: float

    @property
    def hit(self) -> np.ndarray:
        return np.isfinite(self.time)


@dataclass(frozen=True)
class _Barriers:
    # natural-scale start, drift, volatility, barriers and the states they map to
    z0: float
    drift: float
    vol: float
    lower: float
    upper: float
    lower_state: float
    upper_state: float


def _barriers(model: DiffusionModel, x: float, region: RegionSet) -> _Barriers | None:
    lo, hi = neighbors(region, x, model.space_lo, model.space_hi)
    lo_in = bool(contains(region, lo)) if math.isfinite(lo) else False
    if model.kind == GBM:
        lower = math.log(lo) if (lo > 0 and lo_in) else -math.inf
        upper = math.log(hi) if math.isfinite(hi) else math.inf
        z0 = math.log(x)
        drift, vol = model.mu - 0.5 * model.sigma**2, model.sigma
        lower_state, upper_state = lo, hi
    else:
        z0, drift, vol = x, 0.0, 1.0
        upper = hi
        if lo_in:
            lower, lower_state = lo, lo
        else:
            # |W| reflects at 0: the walk leaves through -hi as well as hi
            lower, lower_state = -hi, hi
        upper_state = hi
    if lower == -math.inf and upper == math.inf:
        return None
    return _Barriers(z0, drift, vol, lower, upper, lower_state, upper_state)


def _simulate_block(b: _Barriers, n: int, horizon: float, step: float, rng: np.random.Generator):
    time = np.full(n, np.inf)
    state = np.full(n, np.nan)
    z = np.full(n, b.z0)
    active = np.arange(n)
    t0 = 0.0
    while active.size and t0 < horizon:
        dt = max(step, STEP_GROWTH * t0)
        m = min(STEP_BLOCK, max(1, int(math.ceil((horizon - t0) / dt - 1e-9))))
        inc = rng.standard_normal((active.size, m)) * (b.vol * math.sqrt(dt)) + b.drift * dt
        path = z[active, None] + np.cumsum(inc, axis=1)
        prev = np.concatenate([z[active, None], path[:, :-1]], axis=1)
        u = rng.random((active.size, m, 2))
        two_over_var = 2.0 / (b.vol**2 * dt)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            p_up = np.where(path >= b.upper, 1.0, np.exp(-two_over_var * (b.upper - prev) * (b.upper - path)))
            p_lo = np.where(path <= b.lower, 1.0, np.exp(-two_over_var * (prev - b.lower) * (path - b.lower)))
        up = u[..., 0] < p_up
        down = u[..., 1] < p_lo
        # both barriers inside one step: keep the more likely one
        both = up & down
        up = np.where(both, p_up >= p_lo, up)
        down = np.where(both, ~up, down)
        crossed = up | down
        any_cross = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        rows = np.flatnonzero(any_cross)
        if rows.size:
            k = first[rows]
            idx = active[rows]
            time[idx] = t0 + (k + 0.5) * dt
            state[idx] = np.where(up[rows, k], b.upper_state, b.lower_state)
        z[active] = path[:, -1]
        active = active[~any_cross]
        t0 += m * dt
    return time, state


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EQUISTOP_THREADS", "1")))
    except ValueError:
        return 1


def simulate_first_hits(
    model: DiffusionModel,
    x: float,
    region: RegionSet,
    n_paths: int,
    horizon: float,
    step: float = 1e-3,
    seed: int = 0,
) -> HitSample:
    """First entry of ``n_paths`` independent paths from ``x`` into ``region``.

    Paths are simulated in blocks of ``PATH_BLOCK``; block ``i`` draws from a
    Philox stream keyed by ``(seed, i)``, so results do not depend on the
    number of worker threads (``EQUISTOP_THREADS``).
    """
    if horizon <= 0 or step <= 0:
        raise ValueError("horizon and step must be positive")
    _check_states(model, x)
    x = float(x)
    if contains(region, x):
        return HitSample(np.zeros(n_paths), np.full(n_paths, x), seed, horizon, step)
    barriers = _barriers(model, x, region)
    if barriers is None:
        return HitSample(np.full(n_paths, np.inf), np.full(n_paths, np.nan), seed, horizon, step)
    sizes = [min(PATH_BLOCK, n_paths - i) for i in range(0, n_paths, PATH_BLOCK)]
    streams = np.random.SeedSequence(seed).spawn(len(sizes))

    def run(i):
        rng = np.random.Generator(np.random.Philox(streams[i]))
        return _simulate_block(barriers, sizes[i], horizon, step, rng)

    workers = min(_threads(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]
    time = np.concatenate([p[0] for p in parts])
    state = np.concatenate([p[1] for p in parts])
    return HitSample(time, state, seed, horizon, step)


def sample_first_hit(
    model: DiffusionModel,
    x: float,
    region: RegionSet,
    horizon: float,
    step: float,
    rng: np.random.Generator,
) -> tuple[float, float] | None:
    """First hit of a single path within ``horizon``, or ``None``."""
    if horizon <= 0 or step <= 0:
        raise ValueError("horizon and step must be positive")
    _check_states(model, x)
    if contains(region, x):
        return (0.0, float(x))
    barriers = _barriers(model, float(x), region)
    if barriers is None:
        return None
    time, state = _simulate_block(barriers, 1, horizon, step, rng)
    if not np.isfinite(time[0]):
        return None
    return float(time[0]), float(state[0])


def simulate_path(model: DiffusionModel, x: float, horizon: float, step: float, rng: np.random.Generator) -> PathSample:
    """Exact path on the step grid (log-normal increments, or ``|W|`` for reflected BM)."""
    _check_states(model, x)
    n = int(math.ceil(horizon / step))
    times = np.arange(n + 1) * step
    if model.kind == GBM:
        inc = (model.mu - 0.5 * model.sigma**2) * step + model.sigma * math.sqrt(step) * rng.standard_normal(n)
        states = x * np.exp(np.concatenate([[0.0], np.cumsum(inc)]))
    else:
        w = x + np.concatenate([[0.0], np.cumsum(math.sqrt(step) * rng.standard_normal(n))])
        states = np.abs(w)
    return PathSample(times, states, None)
