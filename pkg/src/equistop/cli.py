"""Command-line front end: ``equistop solve|verify|classify-gbm|compare|oracle``.

Exit codes: 0 success, 2 verification failed, 3 no convergence, 4 bad config
or usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_problem, load_config, load_preset, macros, parse_region_for, preset_names
from .equilibrium import (
    CLOSED_FORM,
    MONTE_CARLO,
    NonConvergenceError,
    classify,
    compare_optimality,
    iterate_to_equilibrium,
    make_grid,
    solve_optimal,
    verify_equilibrium,
)
from .examples import gbm_classify
from .regions import format_region
from .valuation import NoClosedFormError, value_closed_form, value_monte_carlo

log = logging.getLogger("equistop")

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_NONCONVERGENCE = 3
EXIT_CONFIG = 4

CLASSIFICATION_COLUMNS = ("x", "f", "J", "V", "label", "residual", "stderr")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _num(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _write_dat(path: Path, header, rows):
    with path.open("w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in rows:
            fh.write(" ".join(_num(v) for v in row) + "\n")


def _write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _classification_rows(cls):
    return [
        (x, f, J, V, lab, r, se)
        for x, f, J, V, lab, r, se in zip(cls.points, cls.f, cls.J, cls.V, cls.labels, cls.residual, cls.stderr)
    ]


def _versions() -> dict:
    import scipy

    try:
        own = metadata.version("equistop")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"equistop": own, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


class Run:
    """A resolved config: problem, grid, engine options and output directory."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.problem = build_problem(cfg.problem)
        try:
            self.grid = make_grid(self.problem, cfg.grid.n, cfg.grid.lo, cfg.grid.hi)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.engine = self._resolve_engine(cfg.engine)
        self.out = Path(cfg.out)

    def _resolve_engine(self, engine: str) -> str:
        if engine != "both":
            return engine
        try:
            value_closed_form(self.problem, self.grid.points[:1], parse_region_for(self.problem, "empty"))
            return CLOSED_FORM
        except NoClosedFormError:
            return MONTE_CARLO

    @property
    def engine_kw(self) -> dict:
        if self.engine == MONTE_CARLO:
            return {"engine": MONTE_CARLO, "n_paths": self.cfg.mc.paths, "seed": self.cfg.mc.seed}
        return {"engine": CLOSED_FORM}

    def region(self, text: str):
        return parse_region_for(self.problem, text)

    def fmt(self, R) -> str:
        return format_region(R, self.problem.model.space_lo, not self.problem.model.lower_closed)

    def manifest(self, outputs: list[str], extra: dict | None = None) -> None:
        data = {
            "command": self.command,
            "config": self.cfg.to_dict(),
            "engine": self.engine,
            "eps": self.cfg.eps,
            "seed": self.cfg.mc.seed,
            "grid": self.grid.to_dict(),
            "constants": macros(self.problem),
            "versions": _versions(),
            "outputs": sorted(outputs),
        }
        data.update(extra or {})
        _write_json(self.out / "manifest.json", data)

    def write_classification(self, cls) -> list[str]:
        rows = _classification_rows(cls)
        _write_csv(self.out / "classification.csv", CLASSIFICATION_COLUMNS, rows)
        _write_dat(self.out / "classification.dat", CLASSIFICATION_COLUMNS, rows)
        return ["classification.csv", "classification.dat"]


def cmd_solve(run: Run) -> int:
    """Iterate from the configured start, then intersect the equilibria of a sweep."""
    run.out.mkdir(parents=True, exist_ok=True)
    p, g, kw, cfg = run.problem, run.grid, run.engine_kw, run.cfg
    start = run.region(cfg.solve.start)
    try:
        fix = iterate_to_equilibrium(p, start, g, cfg.eps, cfg.solve.max_iter, **kw)
        trace, converged = fix.trace, True
    except NonConvergenceError as exc:
        trace, converged = exc.trace, False
    _write_csv(
        run.out / "trace.csv",
        ("step", "region", "points_in_region"),
        [(i, run.fmt(R), int(np.count_nonzero(R.contains(g.points)))) for i, R in enumerate(trace)],
    )
    outputs = ["trace.csv"]
    if not converged:
        run.manifest(outputs, {"converged": False})
        print(f"no convergence after {len(trace) - 1} steps; trace in {run.out / 'trace.csv'}")
        return EXIT_NONCONVERGENCE
    opt = solve_optimal(p, g, cfg.eps, cfg.solve.stride, None, cfg.solve.box_points, **kw)
    outputs += run.write_classification(opt.report.classification)
    region = {
        "optimal": run.fmt(opt.region),
        "optimal_is_equilibrium": opt.report.is_equilibrium,
        "fixpoint_from_start": run.fmt(fix.region),
        "start": cfg.solve.start,
        "iterations": fix.iterations,
        "monotone": fix.monotone,
        "equilibria_found": len(opt.equilibria),
        "starts": opt.starts,
        "intervals": [[_num(a), _num(b)] for a, b in opt.region.intervals],
    }
    _write_json(run.out / "region.json", region)
    outputs.append("region.json")
    run.manifest(outputs, {"converged": True})
    print(f"fixpoint from {cfg.solve.start}: {run.fmt(fix.region)} after {fix.iterations} steps")
    print(f"intersection of {len(opt.equilibria)} equilibria: {run.fmt(opt.region)}")
    if np.any(np.isinf(opt.report.classification.J)):
        print("J is infinite on part of the grid (marked inf in classification.csv)")
    return EXIT_OK if opt.report.is_equilibrium else EXIT_FAILED


def cmd_verify(run: Run, literal: str) -> int:
    run.out.mkdir(parents=True, exist_ok=True)
    R = run.region(literal)
    rep = verify_equilibrium(run.problem, R, run.grid, run.cfg.eps, **run.engine_kw)
    outputs = run.write_classification(rep.classification)
    report = {
        "region": run.fmt(R),
        "literal": literal,
        "is_equilibrium": rep.is_equilibrium,
        "max_s_residual": _num(rep.max_s_residual),
        "worst_point": None if rep.worst_point is None else _num(rep.worst_point),
        "counts": rep.classification.counts(),
    }
    _write_json(run.out / "verify.json", report)
    run.manifest(outputs + ["verify.json"])
    verdict = "equilibrium" if rep.is_equilibrium else "NOT an equilibrium"
    where = "" if rep.worst_point is None else f" (largest f - J outside: {rep.max_s_residual:.3g} at x={rep.worst_point:.6g})"
    print(f"{run.fmt(R)}: {verdict}{where}")
    return EXIT_OK if rep.is_equilibrium else EXIT_FAILED


def cmd_compare(run: Run, literals: list[str]) -> int:
    if len(literals) < 2:
        raise ConfigError("compare needs at least two regions")
    run.out.mkdir(parents=True, exist_ok=True)
    regions = [run.region(t) for t in literals]
    rep = compare_optimality(run.problem, regions, run.grid, run.cfg.eps, **run.engine_kw)
    names = [run.fmt(regions[i]) for i in rep.accepted]
    rows = [[names[a]] + [float(v) for v in rep.margins[a]] for a in range(len(names))]
    _write_csv(run.out / "dominance.csv", ["region"] + names, rows)
    summary = {
        "accepted": names,
        "rejected": {run.fmt(regions[i]): why for i, why in rep.rejected.items()},
        "dominates": rep.dominates.tolist(),
        "optimal": None if rep.optimal is None else run.fmt(regions[rep.optimal]),
        "note": rep.note,
    }
    _write_json(run.out / "compare.json", summary)
    run.manifest(["dominance.csv", "compare.json"])
    for i, why in rep.rejected.items():
        print(f"rejected {run.fmt(regions[i])}: not an equilibrium, {why}")
    print("optimal among candidates:", summary["optimal"] or "none among candidates")
    if rep.note:
        print(rep.note)
    return EXIT_OK if not rep.rejected else EXIT_FAILED


def cmd_oracle(run: Run, literal: str, xs: list[float]) -> int:
    run.out.mkdir(parents=True, exist_ok=True)
    R = run.region(literal)
    mc = run.cfg.mc
    rows = []
    for i, x in enumerate(xs):
        try:
            jc = float(value_closed_form(run.problem, x, R))
        except NoClosedFormError:
            jc = math.nan
        if math.isinf(jc):
            rows.append((x, jc, math.inf, 0.0, "divergent"))
            continue
        est = value_monte_carlo(run.problem, x, R, n=mc.paths, seed=mc.seed + i, step=mc.step, horizon=mc.horizon)
        agree = abs(jc - est.estimate) <= 3.0 * est.stderr
        rows.append((x, jc, est.estimate, est.stderr, "1" if agree else "0"))
    _write_csv(run.out / "oracle.csv", ("x", "J_closed", "J_mc", "stderr", "agree"), rows)
    run.manifest(["oracle.csv"])
    flags = [r[4] for r in rows if r[4] in ("0", "1")]
    share = flags.count("1") / len(flags) if flags else 1.0
    print(f"{flags.count('1')}/{len(flags)} rows agree within 3 stderr ({share:.0%})")
    return EXIT_OK if share >= 0.95 else EXIT_FAILED


def cmd_classify_gbm(mu: float, sigma: float, beta: float, out: Path | None) -> int:
    case = gbm_classify(mu, sigma, beta)
    data = case.to_dict()
    for k, v in data.items():
        print(f"{k}: {v}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "gbm_case.json", data)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="equistop", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        src = sp.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="JSON run configuration")
        src.add_argument("--preset", choices=preset_names(), help="built-in configuration")
        sp.add_argument("--seed", type=int, help="Monte Carlo seed (overrides config)")
        sp.add_argument("--out", type=Path, help="output directory (overrides config)")
        sp.add_argument("--engine", choices=("closed-form", "monte-carlo", "both"))
        sp.add_argument("--n", type=int, help="grid size (overrides config)")
        return sp

    common(sub.add_parser("solve", help="iterate to an equilibrium and intersect equilibria"))
    v = common(sub.add_parser("verify", help="test whether a region is an equilibrium"))
    v.add_argument("--region", help="region literal, e.g. '[0.5*a_star, inf)'")
    c = common(sub.add_parser("compare", help="dominance among candidate equilibria"))
    c.add_argument("--region", action="append", help="region literal (repeat)")
    o = common(sub.add_parser("oracle", help="closed form against Monte Carlo"))
    o.add_argument("--region", help="region literal")
    o.add_argument("--x", type=float, nargs="+", help="states to value")
    o.add_argument("--paths", type=int, help="Monte Carlo paths per state")
    g = sub.add_parser("classify-gbm", help="case analysis for GBM with f(x) = x")
    g.add_argument("--mu", type=float, required=True)
    g.add_argument("--sigma", type=float, required=True)
    g.add_argument("--beta", type=float, required=True)
    g.add_argument("--out", type=Path)
    return ap


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if args.seed is not None:
        cfg.mc.seed = args.seed
    if args.out is not None:
        cfg.out = str(args.out)
    if args.engine is not None:
        cfg.engine = args.engine
    if args.n is not None:
        cfg.grid.n = args.n
    if getattr(args, "paths", None) is not None:
        cfg.mc.paths = args.paths
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "classify-gbm":
            return cmd_classify_gbm(args.mu, args.sigma, args.beta, args.out)
        cfg = _load(args)
        run = Run(cfg, args.command)
        if args.command == "solve":
            return cmd_solve(run)
        if args.command == "verify":
            literal = args.region or (cfg.regions[0] if cfg.regions else None)
            if literal is None:
                raise ConfigError("verify needs --region or a region in the config")
            return cmd_verify(run, literal)
        if args.command == "compare":
            return cmd_compare(run, args.region or cfg.regions)
        if args.command == "oracle":
            literal = args.region or (cfg.regions[0] if cfg.regions else None)
            xs = args.x or cfg.x
            if literal is None or not xs:
                raise ConfigError("oracle needs a region and a list of states")
            return cmd_oracle(run, literal, xs)
    except ConfigError as exc:
        print(f"equistop: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
