"""Closed stopping regions as finite unions of disjoint closed intervals.

A region lives inside a one-dimensional state space.  Unbounded ends are
written with ``-inf`` / ``inf``; for a state space that is open at its lower
end (the positive half-line for geometric Brownian motion) an interval that
starts at the lower boundary marker, such as ``[0, a]``, stands for ``(0, a]``.
"""

from __future__ import annotations

import ast
import math
import operator
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

INF = math.inf


@dataclass(frozen=True)
class RegionSet:
    """Sorted, pairwise disjoint, non-adjacent closed intervals."""

    intervals: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "intervals", _canonical(self.intervals))

    @classmethod
    def empty(cls) -> "RegionSet":
        return cls(())

    @classmethod
    def interval(cls, lo: float, hi: float = INF) -> "RegionSet":
        return cls(((lo, hi),))

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def __bool__(self):
        return bool(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self):
        return len(self.intervals)

    def __or__(self, other: "RegionSet") -> "RegionSet":
        return union(self, other)

    def __and__(self, other: "RegionSet") -> "RegionSet":
        return intersect(self, other)

    def __le__(self, other: "RegionSet") -> bool:
        return is_subset(self, other)

    def contains(self, x):
        return contains(self, x)

    def covers(self, lo: float, hi: float) -> bool:
        """Whether the region contains the whole closed interval ``[lo, hi]``."""
        return any(a <= lo and hi <= b for a, b in self.intervals)

    @property
    def lower(self) -> float:
        return self.intervals[0][0] if self.intervals else math.nan

    @property
    def upper(self) -> float:
        return self.intervals[-1][1] if self.intervals else math.nan

    def endpoints(self) -> list[float]:
        return [e for iv in self.intervals for e in iv if math.isfinite(e)]

    def clip(self, lo: float, hi: float) -> "RegionSet":
        return intersect(self, RegionSet.interval(lo, hi))

    def __str__(self):
        return format_region(self)


def _canonical(intervals: Iterable[Sequence[float]]) -> tuple[tuple[float, float], ...]:
    cleaned = []
    for iv in intervals:
        lo, hi = (float(v) for v in iv)
        if math.isnan(lo) or math.isnan(hi):
            raise ValueError("interval endpoints must not be NaN")
        if lo > hi:
            raise ValueError(f"interval [{lo}, {hi}] has lo > hi")
        cleaned.append((lo, hi))
    cleaned.sort()
    merged: list[list[float]] = []
    for lo, hi in cleaned:
        # closed intervals that touch are merged: gaps must have positive length
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return tuple((lo, hi) for lo, hi in merged)


def contains(region: RegionSet, x):
    """Membership test, vectorised over ``x``."""
    arr = np.asarray(x, dtype=float)
    out = np.zeros(arr.shape, dtype=bool)
    for lo, hi in region.intervals:
        out |= (arr >= lo) & (arr <= hi)
    return bool(out) if out.ndim == 0 else out


def intersect(a: RegionSet, b: RegionSet) -> RegionSet:
    out = []
    i = j = 0
    A, B = a.intervals, b.intervals
    while i < len(A) and j < len(B):
        lo = max(A[i][0], B[j][0])
        hi = min(A[i][1], B[j][1])
        if lo <= hi:
            out.append((lo, hi))
        if A[i][1] < B[j][1]:
            i += 1
        else:
            j += 1
    return RegionSet(tuple(out))


def union(a: RegionSet, b: RegionSet) -> RegionSet:
    return RegionSet(a.intervals + b.intervals)


def intersect_all(regions: Iterable[RegionSet], start: RegionSet | None = None) -> RegionSet:
    out = start
    for r in regions:
        out = r if out is None else intersect(out, r)
    if out is None:
        raise ValueError("intersection of no regions is undefined")
    return out


def is_subset(a: RegionSet, b: RegionSet) -> bool:
    return intersect(a, b) == a


def gaps(region: RegionSet, space_lo: float, space_hi: float = INF) -> list[tuple[float, float]]:
    """Open components of the complement within ``[space_lo, space_hi]``."""
    out = []
    cursor = space_lo
    for lo, hi in region.intervals:
        if lo > cursor:
            out.append((cursor, lo))
        cursor = max(cursor, hi)
    if cursor < space_hi:
        out.append((cursor, space_hi))
    return out


def neighbors(region: RegionSet, x: float, space_lo: float, space_hi: float = INF) -> tuple[float, float]:
    """Flanking region points ``(sup{y in R: y < x}, inf{y in R: y > x})`` of a point outside ``R``.

    Missing sides are reported as the state-space bounds.
    """
    if contains(region, x):
        raise ValueError(f"x={x} lies in the region; neighbours are defined outside it only")
    left, right = space_lo, space_hi
    for lo, hi in region.intervals:
        if hi < x:
            left = hi
        elif lo > x:
            right = lo
            break
    return left, right


def from_mask(grid, mask, merge_gap: int = 1) -> RegionSet:
    """Closed intervals spanned by runs of ``True`` cells of a grid.

    Runs separated by at most ``merge_gap`` false cells are joined.  A run that
    touches a truncated edge of the grid is extended to the corresponding
    boundary of the state space, since the grid cannot see past its edges.
    """
    mask = np.asarray(mask, dtype=bool)
    points = np.asarray(grid.points)
    if mask.shape != points.shape:
        raise ValueError(f"mask has {mask.size} cells, grid has {points.size}")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return RegionSet.empty()
    breaks = np.flatnonzero(np.diff(idx) > merge_gap + 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    stops = np.concatenate([idx[breaks], [idx[-1]]])
    intervals = []
    for a, b in zip(starts, stops):
        lo, hi = points[a], points[b]
        if a == 0 and grid.truncated_lo:
            lo = grid.space_lo
        if b == len(points) - 1 and grid.truncated_hi:
            hi = grid.space_hi
        intervals.append((lo, hi))
    return RegionSet(tuple(intervals))


def to_mask(grid, region: RegionSet) -> np.ndarray:
    return contains(region, grid.points)


def absorb_small_gaps(region: RegionSet, grid, merge_gap: int = 1) -> RegionSet:
    """Close gaps between consecutive intervals that hold at most ``merge_gap`` grid points."""
    if len(region) < 2:
        return region
    points = np.asarray(grid.points)
    out = [list(region.intervals[0])]
    for lo, hi in region.intervals[1:]:
        inside = np.count_nonzero((points > out[-1][1]) & (points < lo))
        if inside <= merge_gap:
            out[-1][1] = hi
        else:
            out.append([lo, hi])
    return RegionSet(tuple(tuple(iv) for iv in out))


# --- text form -------------------------------------------------------------

_UNION = re.compile(r"\s*(?:∪|\bU\b|\bu\b|\|)\s*")
_INTERVAL = re.compile(r"^\s*([\[(])\s*(.+?)\s*,\s*(.+?)\s*([\])])\s*$")

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv, ast.Pow: operator.pow}


class RegionSyntaxError(ValueError):
    """A region literal could not be parsed."""


def _eval_endpoint(text: str, macros: Mapping[str, float]) -> float:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise RegionSyntaxError(f"bad endpoint expression {text!r}") from exc

    env = {"inf": INF, "infinity": INF, **{k: float(v) for k, v in macros.items()}}

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in env:
                raise RegionSyntaxError(f"unknown name {node.id!r} in {text!r}; known: {sorted(env)}")
            return env[node.id]
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        raise RegionSyntaxError(f"unsupported expression {text!r}")

    return float(ev(tree))


def parse_region(
    text: str,
    space_lo: float = -INF,
    space_hi: float = INF,
    macros: Mapping[str, float] | None = None,
) -> RegionSet:
    """Parse ``"[1,2]∪[4,inf)"``, ``"empty"`` or ``"all"``.

    Endpoints may be arithmetic expressions over ``macros`` (for example
    ``"[0.5*a_star, inf)"``).  Brackets are informational: regions are closed,
    and an open bracket at the lower state-space boundary or at infinity is
    the natural way to write those ends.
    """
    macros = macros or {}
    body = text.strip()
    if body.lower() in {"empty", "∅", "{}"}:
        return RegionSet.empty()
    if body.lower() == "all":
        return RegionSet.interval(space_lo, space_hi)
    parts = [p for p in _UNION.split(body) if p.strip()]
    intervals = []
    for part in parts:
        m = _INTERVAL.match(part)
        if not m:
            raise RegionSyntaxError(f"cannot parse interval {part!r} in {text!r}")
        lo = _eval_endpoint(m.group(2), macros)
        hi = _eval_endpoint(m.group(3), macros)
        if lo > hi:
            raise RegionSyntaxError(f"interval {part!r} has lower end above upper end")
        intervals.append((max(lo, space_lo), min(hi, space_hi)))
    return RegionSet(tuple(intervals))


def _fmt(v: float) -> str:
    if v == INF:
        return "inf"
    if v == -INF:
        return "-inf"
    return repr(float(v))


def format_region(region: RegionSet, space_lo: float | None = None, open_lo: bool = False) -> str:
    """Text form accepted by :func:`parse_region`; round-trips exactly."""
    if region.is_empty:
        return "empty"
    parts = []
    for lo, hi in region.intervals:
        left = "(" if (lo == -INF or (open_lo and lo == space_lo)) else "["
        right = ")" if hi == INF else "]"
        parts.append(f"{left}{_fmt(lo)}, {_fmt(hi)}{right}")
    return "∪".join(parts)
