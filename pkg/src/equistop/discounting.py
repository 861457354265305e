"""Parametric discount functions and the log-subadditivity check."""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

MARGIN_TOL = 1e-12

_REQUIRED = {
    "exponential": ("alpha",),
    "hyperbolic": ("beta",),
    "generalized-hyperbolic": ("beta", "k"),
    "pseudo-exponential": ("lam", "r1", "r2"),
}


@dataclass(frozen=True)
class DiscountFunction:
    """A discount function ``delta: [0, inf) -> (0, 1]`` from one of four families.

    Parameters (all rates in inverse time units):

    * ``exponential``: ``alpha > 0``, ``delta(t) = exp(-alpha t)``
    * ``hyperbolic``: ``beta > 0``, ``delta(t) = 1 / (1 + beta t)``
    * ``generalized-hyperbolic``: ``beta, k > 0``, ``delta(t) = (1 + beta t)^{-k}``
    * ``pseudo-exponential``: ``lam`` in (0, 1), ``r1, r2 > 0``,
      ``delta(t) = lam exp(-r1 t) + (1 - lam) exp(-r2 t)``
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _REQUIRED:
            raise ValueError(f"unknown discount kind {self.kind!r}; expected one of {sorted(_REQUIRED)}")
        missing = [p for p in _REQUIRED[self.kind] if p not in self.params]
        extra = [p for p in self.params if p not in _REQUIRED[self.kind]]
        if missing or extra:
            raise ValueError(f"{self.kind} discount takes parameters {_REQUIRED[self.kind]}, got {sorted(self.params)}")
        params = {k: float(v) for k, v in self.params.items()}
        for name, value in params.items():
            if name == "lam":
                if not 0.0 < value < 1.0:
                    raise ValueError("pseudo-exponential weight lam must lie in (0, 1)")
            elif not (value > 0.0 and np.isfinite(value)):
                raise ValueError(f"discount parameter {name} must be positive and finite, got {value}")
        object.__setattr__(self, "params", MappingProxyType(params))

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def __eq__(self, other):
        if not isinstance(other, DiscountFunction):
            return NotImplemented
        return self.kind == other.kind and dict(self.params) == dict(other.params)

    def __call__(self, t):
        return evaluate(self, t)

    @property
    def known_log_subadditive(self) -> bool:
        """Analytic flag: every built-in family satisfies delta(s)delta(t) <= delta(s+t)."""
        return True

    @property
    def known_strict(self) -> bool:
        """Analytic flag for strict inequality at every s, t > 0."""
        if self.kind == "exponential":
            return False
        if self.kind == "pseudo-exponential":
            return self.params["r1"] != self.params["r2"]
        return True

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DiscountFunction":
        return cls(data["kind"], dict(data.get("params", {})))


def exponential(alpha: float) -> DiscountFunction:
    return DiscountFunction("exponential", {"alpha": alpha})


def hyperbolic(beta: float) -> DiscountFunction:
    return DiscountFunction("hyperbolic", {"beta": beta})


def generalized_hyperbolic(beta: float, k: float) -> DiscountFunction:
    return DiscountFunction("generalized-hyperbolic", {"beta": beta, "k": k})


def pseudo_exponential(lam: float, r1: float, r2: float) -> DiscountFunction:
    return DiscountFunction("pseudo-exponential", {"lam": lam, "r1": r1, "r2": r2})


def evaluate(d: DiscountFunction, t):
    """Discount weight at time(s) ``t >= 0``; scalar in, scalar out."""
    arr = np.asarray(t, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise ValueError("discount functions are defined for t >= 0 only")
    p = d.params
    # inf is allowed and maps to the limiting weight 0
    with np.errstate(over="ignore", divide="ignore"):
        if d.kind == "exponential":
            out = np.exp(-p["alpha"] * arr)
        elif d.kind == "hyperbolic":
            out = 1.0 / (1.0 + p["beta"] * arr)
        elif d.kind == "generalized-hyperbolic":
            out = (1.0 + p["beta"] * arr) ** (-p["k"])
        else:
            out = p["lam"] * np.exp(-p["r1"] * arr) + (1.0 - p["lam"]) * np.exp(-p["r2"] * arr)
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class SubadditivityReport:
    holds: bool
    strict_everywhere: bool
    worst_pair: tuple[float, float]
    worst_margin: float
    analytic: bool
    n_pairs: int


def default_pairs(n: int = 40, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    """``n x n`` log-spaced (s, t) pairs, returned as an array of shape (n*n, 2)."""
    ts = np.geomspace(lo, hi, n)
    s, t = np.meshgrid(ts, ts, indexing="ij")
    return np.column_stack([s.ravel(), t.ravel()])


def check_log_subadditive(
    d: DiscountFunction,
    pairs=None,
    tol: float = MARGIN_TOL,
) -> SubadditivityReport:
    """Check ``delta(s) delta(t) <= delta(s + t)`` on a finite set of pairs.

    The margin is ``delta(s+t) - delta(s) delta(t)``.  ``holds`` allows a
    slack of ``tol``; ``strict_everywhere`` demands every margin exceed ``tol``.
    """
    pairs = default_pairs() if pairs is None else np.asarray(pairs, dtype=float).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("subadditivity check needs at least one (s, t) pair")
    if np.any(pairs <= 0) or not np.all(np.isfinite(pairs)):
        raise ValueError("all pairs must have s, t > 0 and finite")
    s, t = pairs[:, 0], pairs[:, 1]
    margin = evaluate(d, s + t) - evaluate(d, s) * evaluate(d, t)
    worst = int(np.argmin(margin))
    return SubadditivityReport(
        holds=bool(np.all(margin >= -tol)),
        strict_everywhere=bool(np.all(margin > tol)),
        worst_pair=(float(s[worst]), float(t[worst])),
        worst_margin=float(margin[worst]),
        analytic=d.known_log_subadditive,
        n_pairs=len(pairs),
    )
