"""Command-line harness: validate | solve | value | simulate | verify.

Every command is driven by one scenario file and is deterministic given
the file bytes and the seed; numeric CSV output is written with 17
significant digits.  Exit codes: 0 success, 2 validation failure,
3 numerical failure (no measure / solver), 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .measure import (ChainTilt, DivergenceRates, GirsanovSolution, MarketSolution,
                      NoEquivalentMeasureError, jump_multiplier, solve_market)
from .models import ModelValidationError
from .simulate import (DensityCoefficients, ModelArrays, build_bundle, density_path,
                       map_paths, path_stream, price_paths)
from .strategies import StrategySpec, monte_carlo_value, strategy_wealth, theoretical_value
from .verification import run_verification

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_VERIFICATION = 4


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _write_csv(path: Path, header: List[str], rows: List[List]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def _emit(cfg: ScenarioConfig, out_override: Optional[str], name: str,
          header: List[str], rows: List[List], payload) -> None:
    outdir = Path(out_override or cfg.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.output.formats:
        _write_csv(outdir / f"{name}.csv", header, rows)
    if "json" in cfg.output.formats:
        _write_json(outdir / f"{name}.json", payload)


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.simulation.seed = args.seed
    if getattr(args, "paths", None) is not None:
        cfg.simulation.paths = args.paths
    if getattr(args, "workers", None) is not None:
        cfg.simulation.workers = args.workers
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args)
    issues = cfg.model.validate()
    notes = cfg.model.strategy_features() if not issues else []
    for issue in issues:
        print(f"error: {issue}")
    for note in notes:
        print(f"note: {note}")
    if issues:
        print(f"validation failed with {len(issues)} issue(s)")
        return EXIT_VALIDATION
    print(f"model ok: {cfg.model.n_regimes} regime(s), dimension {cfg.model.dim}, "
          f"horizon {cfg.model.horizon:g}, utility {cfg.utility.label()}")
    return EXIT_OK


def _solve(cfg: ScenarioConfig) -> MarketSolution:
    return solve_market(cfg.model, cfg.utility)


def _apply_beta_overrides(market: MarketSolution, overrides: List[str]) -> MarketSolution:
    """Replace solved tilts for fault injection (verify only).

    Format ``j=v1,v2,...`` with a 1-based regime index; jump multipliers
    and all derived rates are recomputed from the injected tilt, and the
    stored residual reflects the (now violated) martingale condition.
    """
    if not overrides:
        return market
    model = market.model
    solutions = list(market.solutions)
    for spec in overrides:
        try:
            regime_s, values = spec.split("=", 1)
            idx = int(regime_s) - 1
            beta = np.array([float(v) for v in values.split(",")], dtype=float)
        except ValueError:
            raise ConfigError(f"--override-beta expects 'j=v1,v2,...', got {spec!r}") from None
        if not 0 <= idx < model.n_regimes:
            raise ConfigError(f"--override-beta: regime {regime_s} out of range")
        triplet = model.regimes[idx]
        if beta.shape != (model.dim,):
            raise ConfigError(f"--override-beta: expected {model.dim} component(s)")
        rates, atoms = triplet.jump_terms()
        gamma = market.utility.gamma
        mult = jump_multiplier(gamma, atoms @ beta) if rates.size else np.zeros(0)
        a = triplet.mean_rate()
        jump = (rates * (mult - 1.0)) @ atoms if rates.size else 0.0
        residual = float(np.max(np.abs(a + triplet.covariance @ beta + jump)))
        solutions[idx] = GirsanovSolution(regime=idx, beta=beta, multipliers=mult,
                                          gamma=gamma, residual=residual)
    rates = DivergenceRates.from_solutions(model, solutions, market.utility.gamma)
    tilt = ChainTilt.build(market.utility, rates, model)
    return MarketSolution(model=model, utility=market.utility, solutions=solutions,
                          rates=rates, tilt=tilt)


def _solution_rows(market: MarketSolution):
    d = market.model.dim
    header = (["regime"] + [f"beta_{k + 1}" for k in range(d)]
              + ["multipliers", "hellinger_rate", "kl_rate", "residual"])
    rows, payload = [], []
    for idx, sol in enumerate(market.solutions):
        mults = ";".join(_fmt(y) for y in sol.multipliers)
        rows.append([idx + 1, *sol.beta, mults,
                     market.rates.hellinger[idx], market.rates.kl[idx], sol.residual])
        payload.append({
            "regime": idx + 1,
            "beta": sol.beta.tolist(),
            "multipliers": sol.multipliers.tolist(),
            "hellinger_rate": float(market.rates.hellinger[idx]),
            "kl_rate": float(market.rates.kl[idx]),
            "residual": sol.residual,
        })
    return header, rows, payload


def cmd_solve(args) -> int:
    cfg = _load(args)
    try:
        market = _solve(cfg)
    except ModelValidationError as exc:
        print(f"validation failed: {exc}")
        return EXIT_VALIDATION
    except NoEquivalentMeasureError as exc:
        _emit(cfg, args.out, "solutions", ["regime", "error"],
              [[exc.regime + 1, "no-equivalent-martingale-measure"]],
              {"error": str(exc), "flag": "no-equivalent-martingale-measure"})
        print(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    header, rows, payload = _solution_rows(market)
    _emit(cfg, args.out, "solutions", header, rows,
          {"utility": cfg.utility.label(), "regimes": payload,
           "tilt_weights": market.tilt.weights.tolist(),
           "tilt_normalizer": market.tilt.normalizer})
    for row in rows:
        print("regime", row[0], "beta", [f"{b:.10g}" for b in market.solutions[row[0] - 1].beta],
              "residual", _fmt(row[-1]))
    return EXIT_OK


_VALUE_HEADER = ["utility", "strategy", "theory_value", "lagrange_multiplier", "mc_value",
                 "mc_se", "n_paths", "steps_per_unit", "breaches", "gain_floor",
                 "dominance_gap", "combined_se", "dominated"]


def cmd_value(args) -> int:
    cfg = _load(args)
    sim = cfg.simulation
    try:
        market = _solve(cfg)
    except ModelValidationError as exc:
        print(f"validation failed: {exc}")
        return EXIT_VALIDATION
    except NoEquivalentMeasureError as exc:
        print(f"numerical failure: {exc}")
        return EXIT_NUMERICAL

    specs = [StrategySpec("optimal"), StrategySpec("zero")]
    specs += [StrategySpec("scaled-optimal", rho=r) for r in (0.25, 0.5, 2.0, 4.0)]
    reports, table = monte_carlo_value(
        market, specs, sim.paths, sim.seed, sim.steps_per_unit_time,
        workers=sim.workers, return_table=True)

    rows, payload = [], []
    opt_vals = table[:, 0]
    for i, (spec, rep) in enumerate(zip(specs, reports)):
        if spec.kind == "scaled-optimal":
            diff = opt_vals - table[:, 3 * i]
            gap = float(diff.mean())
            comb = float(diff.std(ddof=1) / np.sqrt(sim.paths))
            dominated = gap > 2.0 * comb
        else:
            gap, comb, dominated = "", "", ""
        row = [rep.utility, rep.strategy,
               rep.theory_value if not np.isnan(rep.theory_value) else "",
               rep.lagrange_multiplier, rep.mc_value, rep.mc_se, rep.n_paths,
               rep.steps_per_unit, rep.breaches, rep.gain_floor, gap, comb, dominated]
        rows.append(row)
        entry = rep.as_dict()
        if spec.kind == "scaled-optimal":
            entry.update({"dominance_gap": gap, "combined_se": comb,
                          "dominated": bool(dominated)})
        payload.append(entry)
        print(f"{rep.strategy:>28s}: mc {rep.mc_value:.6f} (se {rep.mc_se:.2g})"
              + (f", theory {rep.theory_value:.6f}" if spec.kind == "optimal" else ""))
    _emit(cfg, args.out, "value", _VALUE_HEADER, rows, payload)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    sim = cfg.simulation
    try:
        market = _solve(cfg)
    except ModelValidationError as exc:
        print(f"validation failed: {exc}")
        return EXIT_VALIDATION
    except NoEquivalentMeasureError as exc:
        print(f"numerical failure: {exc}")
        return EXIT_NUMERICAL

    n_traces = args.paths if args.paths is not None else min(sim.paths, 5)
    model = cfg.model
    arrays = ModelArrays.build(model)
    coeffs = DensityCoefficients.build(model, market.solutions)
    d = model.dim
    header = (["path", "time", "regime"] + [f"x_{k + 1}" for k in range(d)]
              + [f"s_{k + 1}" for k in range(d)] + ["z", "v"])
    rows = []
    for i in range(n_traces):
        rng = path_stream(sim.seed, i)
        bundle = build_bundle(model, rng, sim.steps_per_unit_time, arrays=arrays)
        prices = price_paths(bundle, model, arrays)
        dens = density_path(bundle, coeffs)
        occ = bundle.occupation_running(model.n_regimes)
        wealth, _, _ = strategy_wealth(StrategySpec("optimal"), market, bundle,
                                       prices, dens, occ)
        labels = np.append(bundle.labels, bundle.labels[-1])
        for m, t in enumerate(bundle.times):
            rows.append([i, t, int(labels[m]) + 1, *bundle.x[m], *prices[m],
                         dens[m], wealth[m]])
    _emit(cfg, args.out, "traces", header, rows,
          {"paths": int(n_traces), "steps_per_unit_time": sim.steps_per_unit_time,
           "seed": sim.seed, "columns": header})
    print(f"wrote {len(rows)} trace rows for {n_traces} path(s)")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    sim = cfg.simulation
    try:
        market = _solve(cfg)
        market = _apply_beta_overrides(market, args.override_beta or [])
    except ModelValidationError as exc:
        print(f"validation failed: {exc}")
        return EXIT_VALIDATION
    except NoEquivalentMeasureError as exc:
        print(f"numerical failure: {exc}")
        return EXIT_NUMERICAL

    checks = run_verification(market, n_paths=sim.paths, n_samples=max(sim.paths, 10 * sim.paths),
                              seed=sim.seed, steps_per_unit=sim.steps_per_unit_time,
                              workers=sim.workers)
    rows = [[c.name, c.status, c.statistic, c.threshold, c.detail] for c in checks]
    payload = [c.__dict__ for c in checks]
    _emit(cfg, args.out, "verify", ["check", "status", "statistic", "threshold", "detail"],
          rows, payload)
    for c in checks:
        print(c.line())
    n_fail = sum(1 for c in checks if c.status == "fail")
    n_warn = sum(1 for c in checks if c.status == "warn")
    print(f"verification: {len(checks) - n_fail - n_warn} pass, {n_warn} warn, {n_fail} fail")
    return EXIT_VERIFICATION if n_fail else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levyswitch",
        description="Regime-switching Levy market models: solve, value, simulate, verify.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("validate", cmd_validate), ("solve", cmd_solve),
                     ("value", cmd_value), ("simulate", cmd_simulate),
                     ("verify", cmd_verify)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario file (YAML or JSON)")
        p.add_argument("--seed", type=int, default=None, help="override simulation seed")
        p.add_argument("--paths", type=int, default=None, help="override path count")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
        if name == "verify":
            p.add_argument("--override-beta", action="append", default=[],
                           metavar="J=V1,V2", help="inject a wrong tilt for regime J")
        p.set_defaults(handler=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
