"""JSON run configuration, presets and region-literal macros."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .discounting import DiscountFunction
from .equilibrium import CLOSED_FORM, MONTE_CARLO
from .examples import BESSEL_WINDOW, bessel_threshold, gbm_nu_star, gbm_window, put_lambda, slope_boundary
from .processes import GBM, REFLECTED_BM, DiffusionModel
from .regions import RegionSet, parse_region
from .valuation import PayoffFunction, StoppingProblem, counterexample_payoff

ENGINES = (CLOSED_FORM, MONTE_CARLO, "both")


class ConfigError(ValueError):
    """The configuration is malformed or inconsistent."""


@dataclass
class GridSpec:
    n: int = 2000
    lo: float | None = None
    hi: float | None = None


@dataclass
class MCSpec:
    paths: int = 100_000
    step: float = 1e-3
    seed: int = 0
    horizon: float | None = None


@dataclass
class SolveSpec:
    start: str = "empty"
    stride: int | None = None
    box_points: int = 24
    max_iter: int | None = None


@dataclass
class RunConfig:
    """Everything a run needs; only ``problem`` lacks a default."""

    problem: dict
    grid: GridSpec = field(default_factory=GridSpec)
    engine: str = CLOSED_FORM
    eps: float | None = None
    mc: MCSpec = field(default_factory=MCSpec)
    solve: SolveSpec = field(default_factory=SolveSpec)
    regions: list[str] = field(default_factory=list)
    x: list[float] = field(default_factory=list)
    out: str = "out"

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        for key in ("model", "payoff", "discount"):
            if key not in self.problem:
                raise ConfigError(f"problem is missing {key!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = copy.deepcopy(data)
        known = {"problem", "grid", "engine", "eps", "mc", "solve", "regions", "x", "out"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "problem" not in data:
            raise ConfigError("config needs a 'problem' section")
        try:
            return cls(
                problem=data["problem"],
                grid=GridSpec(**data.get("grid", {})),
                engine=data.get("engine", CLOSED_FORM),
                eps=data.get("eps"),
                mc=MCSpec(**data.get("mc", {})),
                solve=SolveSpec(**data.get("solve", {})),
                regions=list(data.get("regions", [])),
                x=[float(v) for v in data.get("x", [])],
                out=data.get("out", "out"),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.loads(text)


def preset_names() -> list[str]:
    files = resources.files("equistop").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def load_preset(name: str) -> RunConfig:
    path = resources.files("equistop").joinpath("presets", f"{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return RunConfig.loads(path.read_text())


# --- building the problem ------------------------------------------------------


def build_problem(data: dict) -> StoppingProblem:
    """Problem from its config dict.

    The counterexample payoff may give ``b_multiplier`` instead of
    ``a_star``/``b_star``; both are then derived from the discount rate.
    """
    try:
        model = DiffusionModel.from_dict(data["model"])
        discount = DiscountFunction.from_dict(data["discount"])
        payoff_spec = dict(data["payoff"])
        params = dict(payoff_spec.get("params", {}))
        if payoff_spec["kind"] == "counterexample" and "b_multiplier" in params:
            beta = float(params.get("beta", discount.params.get("beta", 1.0)))
            a = bessel_threshold(beta)
            payoff = counterexample_payoff(beta, a, float(params["b_multiplier"]) * a)
        else:
            payoff = PayoffFunction.from_dict({"kind": payoff_spec["kind"], "params": params})
        window = data.get("window")
        if window is None:
            window = _default_window(model, payoff, discount)
        return StoppingProblem(model, payoff, discount, tuple(window) if window else None, data.get("name", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad problem config: {exc}") from exc


def _default_window(model, payoff, discount):
    if model.kind == GBM:
        ref = payoff.params["K"] if payoff.kind == "put" else 1.0
        return gbm_window(model.sigma, ref)
    if discount.kind == "hyperbolic":
        a = bessel_threshold(discount.params["beta"])
        hi = BESSEL_WINDOW * a
        if payoff.kind == "counterexample":
            hi = max(hi, 2.0 * payoff.params["b_star"])
        return (0.0, hi)
    return None


def macros(p: StoppingProblem) -> dict[str, float]:
    """Named constants usable in region literals for this problem."""
    out: dict[str, float] = {}
    d, m, f = p.discount, p.model, p.payoff
    hyper = d.kind == "hyperbolic"
    if m.kind == REFLECTED_BM and hyper:
        out["a_star"] = bessel_threshold(d.params["beta"])
    if f.kind == "counterexample":
        out["a_star"] = f.params["a_star"]
        out["b_star"] = f.params["b_star"]
    if m.kind == GBM:
        out["nu"] = m.mu / m.sigma**2 - 0.5
        if hyper:
            beta = d.params["beta"]
            out["lambda"] = put_lambda(m.mu, m.sigma, beta)
            out["boundary"] = slope_boundary(m.sigma, beta)
            if out["boundary"] < 1.0:
                out["nu_star"] = gbm_nu_star(m.sigma, beta)
    if f.kind == "put":
        out["K"] = f.params["K"]
        if "lambda" in out:
            out["threshold"] = out["lambda"] * f.params["K"] / (1.0 + out["lambda"])
    return out


def parse_region_for(p: StoppingProblem, text: str) -> RegionSet:
    try:
        return parse_region(text, p.model.space_lo, p.model.space_hi, macros(p))
    except ValueError as exc:
        raise ConfigError(f"bad region {text!r}: {exc}") from exc

