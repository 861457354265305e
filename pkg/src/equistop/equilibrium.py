"""Region classification, the best-response operator and equilibrium search on a grid.

For a closed region ``R`` every state is labelled by comparing stopping now
with following ``R``:

* ``S`` where ``f(x) > J(x, R)`` (stopping now is strictly better),
* ``I`` where they tie (within the indifference tolerance),
* ``C`` where ``f(x) < J(x, R)``.

Under a diffusive state process the best response to ``R`` is
``theta(R) = S_R | R`` and an equilibrium is a fixed point, which is the same
as having no ``S`` points.  Everything here works on masks over a finite
:class:`Grid`, with the region recovered as closed intervals in between.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .discounting import check_log_subadditive
from .processes import GBM
from .regions import RegionSet, absorb_small_gaps, contains, from_mask, gaps, intersect_all, is_subset, to_mask
from .valuation import StoppingProblem, is_divergent, value_closed_form, value_monte_carlo

log = logging.getLogger(__name__)

CLOSED_FORM = "closed-form"
MONTE_CARLO = "monte-carlo"
EPS_SCALE = 1e-6
MERGE_GAP = 1


class NonConvergenceError(RuntimeError):
    """Iteration hit ``max_iter``; ``trace`` holds the regions visited."""

    def __init__(self, message: str, trace: list[RegionSet]):
        super().__init__(message)
        self.trace = trace


class NotAnEquilibriumError(ValueError):
    """A precondition asked for a verified equilibrium and got something else."""

    def __init__(self, message: str, report: "EquilibriumReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Grid:
    """``n`` states between ``lo`` and ``hi``, log-spaced when ``log`` is set.

    ``truncated_lo``/``truncated_hi`` say whether an edge lies strictly inside
    the state space; cells on truncated edges are censored.
    """

    lo: float
    hi: float
    n: int
    log: bool
    space_lo: float
    space_hi: float
    truncated_lo: bool
    truncated_hi: bool
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.n < 16:
            raise ValueError("grid needs at least 16 points")
        if self.log and self.lo <= 0:
            raise ValueError("a log grid needs lo > 0")
        pts = np.geomspace(self.lo, self.hi, self.n) if self.log else np.linspace(self.lo, self.hi, self.n)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def censored(self) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        mask[0] = self.truncated_lo
        mask[-1] = self.truncated_hi
        return mask

    def index_near(self, x: float) -> int:
        return int(np.argmin(np.abs(self.points - x)))

    def cells_between(self, a: float, b: float) -> float:
        """Distance between two states measured in grid cells."""
        if self.log:
            return abs(math.log(a) - math.log(b)) / (math.log(self.hi) - math.log(self.lo)) * (self.n - 1)
        return abs(a - b) / (self.hi - self.lo) * (self.n - 1)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n": self.n, "log": self.log}


def make_grid(p: StoppingProblem, n: int = 2000, lo: float | None = None, hi: float | None = None) -> Grid:
    """Grid over ``[lo, hi]``, defaulting to the problem window; log-spaced for GBM."""
    if p.window is None and (lo is None or hi is None):
        raise ValueError("problem has no default window; pass lo and hi")
    lo = p.window[0] if lo is None else float(lo)
    hi = p.window[1] if hi is None else float(hi)
    m = p.model
    if lo < m.space_lo or (lo == m.space_lo and not m.lower_closed):
        raise ValueError(f"grid lower bound {lo} is outside the state space")
    return Grid(lo, hi, n, m.kind == GBM, m.space_lo, m.space_hi, lo > m.space_lo, hi < m.space_hi)


@dataclass(frozen=True)
class Classification:
    region: RegionSet
    points: np.ndarray
    f: np.ndarray
    J: np.ndarray
    residual: np.ndarray
    labels: np.ndarray
    stderr: np.ndarray
    eps: np.ndarray
    censored: np.ndarray
    engine: str
    seed: int | None = None

    @property
    def V(self) -> np.ndarray:
        return np.maximum(self.f, self.J)

    def mask(self, label: str) -> np.ndarray:
        return self.labels == label

    @property
    def outside(self) -> np.ndarray:
        return ~np.asarray(contains(self.region, self.points), dtype=bool)

    def counts(self) -> dict[str, int]:
        live = ~self.censored
        return {k: int(np.count_nonzero(self.mask(k) & live)) for k in "SIC"}


@dataclass(frozen=True)
class EquilibriumReport:
    region: RegionSet
    is_equilibrium: bool
    max_s_residual: float
    worst_point: float | None
    classification: Classification
    trace: tuple[RegionSet, ...]
    eps: float
    engine: str
    seed: int | None
    converged: bool = True
    monotone: bool = True

    @property
    def iterations(self) -> int:
        return len(self.trace) - 1


def default_eps(p: StoppingProblem) -> float:
    return EPS_SCALE * p.payoff_scale


def _values(p, R, pts, engine, n_paths, seed):
    if engine == CLOSED_FORM:
        return np.asarray(value_closed_form(p, pts, R), dtype=float), np.zeros(len(pts))
    if engine != MONTE_CARLO:
        raise ValueError(f"unknown engine {engine!r}")
    J = np.empty(len(pts))
    se = np.empty(len(pts))
    for i, x in enumerate(pts):
        if not contains(R, x) and is_divergent(p, x, R):
            J[i], se[i] = math.inf, 0.0
            continue
        # one seed per grid point keeps rows independent and reproducible
        est = value_monte_carlo(p, x, R, n=n_paths, seed=seed + i)
        J[i], se[i] = est.estimate, est.stderr
    return J, se


def classify(
    p: StoppingProblem,
    R: RegionSet,
    grid: Grid,
    eps: float | None = None,
    engine: str = CLOSED_FORM,
    n_paths: int = 10_000,
    seed: int = 0,
) -> Classification:
    """Label every grid point ``S``, ``I`` or ``C`` relative to ``R``.

    Points in ``R`` have ``J = f`` and are labelled ``I``; an infinite ``J``
    gives ``C``.  The indifference band is ``eps`` for the closed form and
    ``3 * stderr`` per point for Monte Carlo.
    """
    pts = grid.points
    f = np.asarray(p.payoff(pts), dtype=float)
    J, se = _values(p, R, pts, engine, n_paths, seed)
    inside = np.asarray(contains(R, pts), dtype=bool)
    J = np.where(inside, f, J)
    with np.errstate(invalid="ignore"):
        residual = np.where(inside, 0.0, f - J)
    if engine == CLOSED_FORM:
        band = np.full(len(pts), default_eps(p) if eps is None else float(eps))
    else:
        band = 3.0 * se if eps is None else np.maximum(float(eps), 3.0 * se)
    labels = np.where(residual > band, "S", np.where(residual < -band, "C", "I"))
    return Classification(R, pts, f, J, residual, labels, se, band, grid.censored, engine, seed if engine == MONTE_CARLO else None)


def theta(
    p: StoppingProblem,
    R: RegionSet,
    grid: Grid,
    eps: float | None = None,
    classification: Classification | None = None,
    **engine,
) -> RegionSet:
    """Best response ``S_R | R`` as a closed region."""
    cls = classification or classify(p, R, grid, eps, **engine)
    out = absorb_small_gaps(R | from_mask(grid, cls.mask("S"), MERGE_GAP), grid, MERGE_GAP)
    assert is_subset(R, out), "theta must contain its argument"
    return out


def _report(p, R, cls, trace, converged=True, monotone=True) -> EquilibriumReport:
    live = cls.outside & ~cls.censored
    s_pts = live & cls.mask("S")
    if np.any(live):
        res = np.where(live, cls.residual, -np.inf)
        k = int(np.argmax(res))
        worst, worst_x = float(res[k]), float(cls.points[k])
    else:
        worst, worst_x = -math.inf, None
    eps = float(np.max(cls.eps)) if cls.eps.size else 0.0
    return EquilibriumReport(
        R, not bool(np.any(s_pts)), worst, worst_x, cls, tuple(trace), eps, cls.engine, cls.seed, converged, monotone
    )


def verify_equilibrium(p: StoppingProblem, R: RegionSet, grid: Grid, eps: float | None = None, **engine) -> EquilibriumReport:
    """Equilibrium test: no uncensored grid point outside ``R`` is labelled ``S``."""
    return _report(p, R, classify(p, R, grid, eps, **engine), [R])


def iterate_to_equilibrium(
    p: StoppingProblem,
    R0: RegionSet,
    grid: Grid,
    eps: float | None = None,
    max_iter: int | None = None,
    **engine,
) -> EquilibriumReport:
    """Apply ``theta`` from ``R0`` until the grid mask stops changing.

    Raises:
        NonConvergenceError: after ``max_iter`` steps (default ``grid.n + 1``).
    """
    max_iter = grid.n + 1 if max_iter is None else max_iter
    R = R0
    trace = [R0]
    mask = to_mask(grid, R)
    monotone = True
    for _ in range(max_iter):
        cls = classify(p, R, grid, eps, **engine)
        nxt = theta(p, R, grid, eps, classification=cls)
        nmask = to_mask(grid, nxt)
        monotone &= bool(np.all(nmask >= mask))
        if np.array_equal(nmask, mask):
            return _report(p, R, cls, trace, True, monotone)
        R, mask = nxt, nmask
        trace.append(R)
    raise NonConvergenceError(f"no fixed point after {max_iter} iterations", trace)


# --- optimality --------------------------------------------------------------


@dataclass(frozen=True)
class DominanceReport:
    candidates: tuple[RegionSet, ...]
    accepted: tuple[int, ...]
    rejected: dict
    margins: np.ndarray  # margins[i, j] = min over grid of V_i - V_j (accepted only)
    dominates: np.ndarray
    optimal: int | None
    note: str = ""


def _pairwise_min(Va, Vb):
    both_inf = np.isinf(Va) & np.isinf(Vb) & (np.sign(Va) == np.sign(Vb))
    with np.errstate(invalid="ignore"):
        d = np.where(both_inf, 0.0, Va - Vb)
    return d


def compare_optimality(
    p: StoppingProblem,
    candidates: list[RegionSet],
    grid: Grid,
    eps: float | None = None,
    **engine,
) -> DominanceReport:
    """Pairwise comparison of ``V`` over verified equilibria.

    ``A`` dominates ``B`` when ``V(., A) >= V(., B) - tol`` at every uncensored
    grid point, with ``tol = eps + 3 sqrt(se_A^2 + se_B^2)``.
    """
    reports = [verify_equilibrium(p, R, grid, eps, **engine) for R in candidates]
    accepted = tuple(i for i, r in enumerate(reports) if r.is_equilibrium)
    rejected = {
        i: f"S-residual {r.max_s_residual:.3g} at x={r.worst_point:.6g}" for i, r in enumerate(reports) if not r.is_equilibrium
    }
    live = ~grid.censored
    k = len(accepted)
    margins = np.zeros((k, k))
    dom = np.ones((k, k), dtype=bool)
    for a, ia in enumerate(accepted):
        ca = reports[ia].classification
        for b, ib in enumerate(accepted):
            if a == b:
                continue
            cb = reports[ib].classification
            d = _pairwise_min(ca.V, cb.V)[live]
            tol = np.maximum(ca.eps, cb.eps)[live] + 3.0 * np.sqrt(ca.stderr**2 + cb.stderr**2)[live]
            margins[a, b] = float(np.min(d)) if d.size else 0.0
            dom[a, b] = bool(np.all(d >= -tol))
    optimal = next((accepted[a] for a in range(k) if dom[a].all()), None)
    return DominanceReport(tuple(candidates), accepted, rejected, margins, dom, optimal, _no_optimum_note(p))


def _no_optimum_note(p: StoppingProblem) -> str:
    if p.model.kind != GBM or p.payoff.kind != "identity" or p.discount.kind != "hyperbolic":
        return ""
    from .examples import NO_OPTIMUM, gbm_classify

    case = gbm_classify(p.model.mu, p.model.sigma, p.discount.params["beta"])
    if case.verdict == NO_OPTIMUM:
        return f"{case.case}: no optimal equilibrium exists over the whole state space"
    return ""


@dataclass(frozen=True)
class UniquenessVerdict:
    condition_holds: bool
    indifference_points_outside: np.ndarray
    classification: Classification


def uniqueness_check(p: StoppingProblem, R_star: RegionSet, grid: Grid, eps: float | None = None, **engine) -> UniquenessVerdict:
    """Whether every uncensored grid point outside ``R_star`` is strictly continuation."""
    rep = verify_equilibrium(p, R_star, grid, eps, **engine)
    if not rep.is_equilibrium:
        raise NotAnEquilibriumError("uniqueness check needs a verified equilibrium", rep)
    cls = rep.classification
    live = cls.outside & ~cls.censored
    ipts = cls.points[live & cls.mask("I")]
    return UniquenessVerdict(ipts.size == 0, ipts, cls)


@dataclass(frozen=True)
class GapVerdict:
    gap: tuple[float, float]
    case: str
    detail: str
    violation: bool


@dataclass(frozen=True)
class TrichotomyReport:
    gaps: tuple[GapVerdict, ...]
    strict: bool
    warnings: tuple[str, ...]

    @property
    def violations(self) -> tuple[GapVerdict, ...]:
        return tuple(g for g in self.gaps if g.violation)


def _meets_open(T: RegionSet, lo: float, hi: float) -> bool:
    return any(a < hi and b > lo for a, b in T.intervals)


def gap_trichotomy(
    p: StoppingProblem,
    R_star: RegionSet,
    T_star: RegionSet,
    grid: Grid,
    eps: float | None = None,
    **engine,
) -> TrichotomyReport:
    """How a second equilibrium ``T_star ⊇ R_star`` can sit in each gap of ``R_star``.

    Case ``i``: the gap meets ``C``, and ``T_star`` must miss it.
    Case ``ii``: the gap is indifferent and ``f`` is not identically 0 there;
    ``T_star`` either misses the gap or swallows all of it.
    Case ``iii``: ``f`` vanishes on the gap; any extension is allowed.

    A broken expectation is a violation (a bug signal) unless the discount is
    not strictly log-subadditive, in which case it is only a warning.
    """
    if not is_subset(R_star, T_star):
        raise ValueError("gap trichotomy needs R_star ⊆ T_star")
    for R in (R_star, T_star):
        rep = verify_equilibrium(p, R, grid, eps, **engine)
        if not rep.is_equilibrium:
            raise NotAnEquilibriumError(f"{R} is not an equilibrium", rep)
    strict = p.discount.known_strict and check_log_subadditive(p.discount).strict_everywhere
    cls = classify(p, R_star, grid, eps, **engine)
    pts, live = cls.points, ~cls.censored
    out, warns = [], []
    for lo, hi in gaps(R_star, p.model.space_lo, p.model.space_hi):
        sel = (pts > lo) & (pts < hi) & live
        if lo == p.model.space_lo == pts[0]:
            sel |= (pts == lo) & live
        if not np.any(sel):
            continue
        meets = _meets_open(T_star, lo, hi)
        swallowed = T_star.covers(lo, hi) if math.isfinite(hi) else any(a <= lo and b == math.inf for a, b in T_star)
        if np.any(cls.mask("C") & sel):
            case, ok = "i", not meets
            detail = "gap missed" if ok else "T* enters a gap that meets C"
        elif np.all(cls.f[sel] == 0.0):
            case, ok, detail = "iii", True, "f vanishes on the gap; arbitrary extension allowed"
        else:
            case = "ii"
            if not meets:
                ok, detail = True, "gap missed"
            elif swallowed:
                ok, detail = True, "whole gap swallowed"
            else:
                ok, detail = False, "T* covers the gap only partially"
        violation = not ok and strict
        if not ok and not strict:
            warns.append(f"gap ({lo:.6g}, {hi:.6g}) case {case}: {detail} (discount not strictly log-subadditive)")
        out.append(GapVerdict((lo, hi), case, detail, violation))
    return TrichotomyReport(tuple(out), strict, tuple(warns))


# --- intersection of equilibria ----------------------------------------------


@dataclass(frozen=True)
class OptimalReport:
    region: RegionSet
    report: EquilibriumReport
    equilibria: tuple[RegionSet, ...]
    starts: int


def _sweep_starts(grid: Grid, stride: int) -> list[tuple[str, int]]:
    idx = list(range(0, grid.n, stride))
    if idx[-1] != grid.n - 1:
        idx.append(grid.n - 1)
    return [(kind, i) for kind in ("upper", "lower") for i in idx]


def _start_region(grid: Grid, kind: str, i: int) -> RegionSet:
    # built from a mask so that rays reaching a truncated edge run on past it
    mask = np.zeros(grid.n, dtype=bool)
    if kind == "upper":
        mask[i:] = True
    else:
        mask[: i + 1] = True
    return from_mask(grid, mask, 0)


def _shrunk(grid: Grid, R: RegionSet, k: int, side: str) -> RegionSet | None:
    # R with the outermost grid cell on one side of its k-th interval removed
    lo, hi = R.intervals[k]
    end = lo if side == "lo" else hi
    if not math.isfinite(end) or end <= grid.space_lo:
        return None
    mask = to_mask(grid, R)
    cells = np.flatnonzero((grid.points >= lo) & (grid.points <= hi))
    if cells.size < 2:
        return None
    mask[cells[0] if side == "lo" else cells[-1]] = False
    return from_mask(grid, mask, 0)


def solve_optimal(
    p: StoppingProblem,
    grid: Grid,
    eps: float | None = None,
    stride: int | None = None,
    extra: list[RegionSet] | None = None,
    box_points: int = 24,
    **engine,
) -> OptimalReport:
    """Intersection of all equilibria reachable from a sweep of starting regions.

    Starts: the empty set, the whole space, every ray ``[x, inf)`` and
    ``[lo, x]`` at grid points spaced ``stride`` apart (refined to every
    point wherever neighbouring starts reach different fixed points), the
    bounded intervals between ``box_points`` evenly spaced grid points and
    the kinks of the payoff, and ``extra``.  Each start is iterated to its fixed point and the verified
    fixed points are intersected.  The intersection is then shrunk one grid
    cell at a time from each finite endpoint for as long as the shrunk
    region iterates to an equilibrium that keeps the removed cell out.
    """
    stride = max(1, grid.n // 64) if stride is None else stride
    found: dict[bytes, RegionSet] = {}
    n_starts = 0

    def run(R0: RegionSet) -> RegionSet:
        nonlocal n_starts
        n_starts += 1
        rep = iterate_to_equilibrium(p, R0, grid, eps, **engine)
        if rep.is_equilibrium:
            found[to_mask(grid, rep.region).tobytes()] = rep.region
        return rep.region

    for R0 in [RegionSet.empty(), RegionSet.interval(grid.space_lo, grid.space_hi), *(extra or [])]:
        run(R0)
    for kind in ("upper", "lower"):
        coarse = [i for k, i in _sweep_starts(grid, stride) if k == kind]
        fixed = {i: to_mask(grid, run(_start_region(grid, kind, i))).tobytes() for i in coarse}
        for a, b in zip(coarse, coarse[1:]):
            if fixed[a] != fixed[b]:
                for i in range(a + 1, b):
                    run(_start_region(grid, kind, i))
    box = grid.points[np.unique(np.linspace(1, grid.n - 2, box_points).astype(int))]
    kinks = [x for x in p.payoff.kinks if grid.lo < x < grid.hi]
    ends = np.unique(np.concatenate([box, kinks]))
    for a_i, lo in enumerate(ends):
        for hi in ends[a_i:]:
            run(RegionSet.interval(float(lo), float(hi)))

    R_star = intersect_all(found.values())
    changed = True
    while changed and R_star:
        changed = False
        for k in range(len(R_star)):
            for side in ("lo", "hi"):
                cand = _shrunk(grid, R_star, k, side)
                if cand is None:
                    continue
                smaller = R_star & run(cand)
                if to_mask(grid, smaller).sum() < to_mask(grid, R_star).sum() and verify_equilibrium(
                    p, smaller, grid, eps, **engine
                ).is_equilibrium:
                    found[to_mask(grid, smaller).tobytes()] = smaller
                    R_star, changed = smaller, True
                    break
            if changed:
                break
    rep = verify_equilibrium(p, R_star, grid, eps, **engine)
    if not rep.is_equilibrium:
        log.warning("intersection of %d equilibria does not verify: %s", len(found), R_star)
    return OptimalReport(R_star, rep, tuple(found.values()), n_starts)
