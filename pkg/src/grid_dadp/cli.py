"""Command-line entry points: ``grid-dadp {dadp,sddp,exact,simulate,compare,tutorial}``.

Every artifact written here is a JSON document carrying ``schema_version``.
Run directories hold ``summary.json`` (method, lower bound, settings) and
``cost_to_go.json``; ``simulate`` adds ``report.json`` and the CSV files.
Wall-clock times go to ``timing.json`` so the other files stay reproducible.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .coordinator import (
    SCHEMA_VERSION,
    AscentConfig,
    BlockScheme,
    PriceProcess,
    SchemeError,
    default_grids,
    improve_prices,
    trace_to_list,
)
from .model import ModelError, load_system
from .policy_sim import (
    GlobalCostToGo,
    SimulationReport,
    dadp_cost_to_go,
    evaluate_reference,
    linearization_error_bound,
    statistical_upper_bound,
)
from .reference import SddpConfig, exact_global_dp, sddp_solve
from .scenarios import ScenarioError, load_chronicles
from .transport import transport_constants

log = logging.getLogger("grid_dadp")

THREADS_ENV = "GRID_DADP_THREADS"
TUTORIAL = "tutorial"

# independent random streams derived from the single --seed
STREAM_SDDP = 0
STREAM_SIMULATION = 1

COMPARE_COLUMNS = (
    "method",
    "lower_bound",
    "upper_bound",
    "ci_low",
    "ci_high",
    "gap_percent",
    "mean_cost",
    "thermal_cost",
    "ens_cost",
    "ens_gwh",
)


class CliError(RuntimeError):
    """A user-facing failure; the message is printed and the exit code is 2."""


# -- configuration and artifacts ---------------------------------------------


def tutorial_dir() -> Path:
    return Path(str(resources.files("grid_dadp") / "data" / "tutorial"))


def load_config(path: str) -> tuple[dict, Path]:
    cfg_path = tutorial_dir() / "config.json" if path == TUTORIAL else Path(path)
    if not cfg_path.exists():
        raise CliError(f"config file not found: {cfg_path}")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{cfg_path}: invalid JSON ({exc})") from exc
    check_version(cfg, cfg_path)
    for key in ("model", "training"):
        if key not in cfg:
            raise CliError(f"{cfg_path}: missing required key {key!r}")
    return cfg, cfg_path.parent


def check_version(doc: dict, path) -> None:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CliError(f"{path}: schema_version {version!r} does not match the supported version {SCHEMA_VERSION}")


def read_artifact(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing artifact: {path}")
    doc = json.loads(path.read_text())
    check_version(doc, path)
    return doc


def write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=2, sort_keys=True) + "\n")


def load_inputs(cfg: dict, base: Path, evaluation: bool = False):
    try:
        model = load_system(base / cfg["model"])
        training = load_chronicles(base / cfg["training"], model, "training")
        ev = None
        if evaluation:
            ev = load_chronicles(base / cfg.get("evaluation", cfg["training"]), model, "evaluation")
    except (ModelError, ScenarioError, OSError) as exc:
        raise CliError(str(exc)) from exc
    return model, training, ev


def resolve_threads(value: Optional[int]) -> int:
    if value is not None:
        threads = value
    else:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError as exc:
            raise CliError(f"{THREADS_ENV}={raw!r} is not an integer") from exc
    if threads < 1:
        raise CliError("thread count must be at least 1")
    return threads


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def stream_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def setting(args, cfg: dict, name: str, default=None):
    """Command-line flag first, then the config file, then ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    return cfg.get(name, default)


# -- commands -----------------------------------------------------------------


def cmd_dadp(args) -> int:
    cfg, base = load_config(args.config)
    model, training, _ = load_inputs(cfg, base)
    H = model.timeline.hours_per_week
    block_hours = setting(args, cfg, "block_hours", H)
    try:
        scheme = BlockScheme(int(block_hours), H)
    except SchemeError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = resolve_threads(args.threads)
    config = AscentConfig(
        max_iters=int(setting(args, cfg, "max_iters", 50)),
        time_limit=setting(args, cfg, "time_limit"),
        tol=float(setting(args, cfg, "tol_euro", 100.0)),
        threads=threads,
        checkpoint=str(out / "checkpoint.json"),
    )
    start = None
    if cfg.get("initial_price"):
        start = PriceProcess.from_dict(read_artifact(base / cfg["initial_price"]))
        if start.scheme != scheme:
            raise CliError("initial price uses a different block scheme")
    grids = default_grids(model, int(cfg.get("grid_points", 51)))
    t0 = time.perf_counter()
    result = improve_prices(model, training, scheme, config, start=start, grids=grids)
    wall = time.perf_counter() - t0
    constants = transport_constants(result.oracle.transport)
    ctg = dadp_cost_to_go(model, result.oracle.value_functions, constants)

    write_json(out / "price.json", result.price.to_dict())
    write_json(out / "value_functions.json", {"nodes": [vf.to_dict() for vf in result.oracle.value_functions]})
    write_json(out / "cost_to_go.json", ctg.to_dict())
    write_json(out / "trace.json", {"trace": [_stable_trace(t) for t in trace_to_list(result.trace)]})
    write_json(
        out / "summary.json",
        {
            "method": f"dadp-{scheme.block_hours}h",
            "lower_bound": result.best_value,
            "transport_constants": constants.tolist(),
            "iterations": result.iterations,
            "stop_reason": result.reason,
            "block_hours": scheme.block_hours,
            "price_dimension": int(result.price.values.size),
            "seed": args.seed,
            "threads": threads,
            "linearization_error_per_hour": linearization_error_bound(model),
        },
    )
    write_json(out / "timing.json", {"wall_time": wall, "trace_wall_time": [t.wall_time for t in result.trace]})
    Path(config.checkpoint).unlink(missing_ok=True)
    print(f"dadp: lower bound {result.best_value:.6g} after {result.iterations} iterations ({result.reason})")
    return 0


def _stable_trace(entry: dict) -> dict:
    return {k: v for k, v in entry.items() if k != "wall_time"}


def cmd_sddp(args) -> int:
    cfg, base = load_config(args.config)
    model, training, _ = load_inputs(cfg, base)
    sub = cfg.get("sddp", {})
    config = SddpConfig(
        max_iters=int(args.max_iters if args.max_iters is not None else sub.get("max_iters", 200)),
        samples=int(sub.get("samples", 1)),
        tol=float(args.tol_euro if args.tol_euro is not None else sub.get("tol", cfg.get("tol_euro", 100.0))),
        patience=int(sub.get("patience", 2)),
        seed=stream_seed(args.seed, STREAM_SDDP),
        time_limit=setting(args, cfg, "time_limit"),
    )
    sd = sddp_solve(model, training, config=config)
    out = Path(args.out)
    write_json(out / "cost_to_go.json", sd.cost_to_go().to_dict())
    write_json(out / "trace.json", {"lower_bound": sd.lb_trace})
    write_json(
        out / "summary.json",
        {
            "method": "sddp",
            "lower_bound": sd.lower_bound,
            "iterations": len(sd.lb_trace),
            "stop_reason": sd.reason,
            "seed": args.seed,
            "threads": resolve_threads(args.threads),
        },
    )
    write_json(out / "timing.json", {"wall_time": sd.wall_time})
    print(f"sddp: lower bound {sd.lower_bound:.6g} after {len(sd.lb_trace)} iterations ({sd.reason})")
    return 0


def cmd_exact(args) -> int:
    cfg, base = load_config(args.config)
    model, training, _ = load_inputs(cfg, base)
    sub = cfg.get("exact", {})
    grids = default_grids(model, int(sub.get("grid_points", cfg.get("grid_points", 11))))
    t0 = time.perf_counter()
    try:
        ex = exact_global_dp(model, training, grids, guard=int(sub.get("guard", 10**6)))
    except RuntimeError as exc:
        raise CliError(str(exc)) from exc
    out = Path(args.out)
    write_json(out / "cost_to_go.json", ex.cost_to_go().to_dict())
    write_json(out / "summary.json", {"method": "exact", "lower_bound": ex.optimum, "seed": args.seed,
                                      "threads": resolve_threads(args.threads)})
    write_json(out / "timing.json", {"wall_time": time.perf_counter() - t0})
    print(f"exact: optimum {ex.optimum:.6g}")
    return 0


def cmd_simulate(args) -> int:
    ctg_path = Path(args.cost_to_go)
    ctg = GlobalCostToGo.from_dict(read_artifact(ctg_path))
    cfg, base = load_config(args.config)
    model, training, evaluation = load_inputs(cfg, base, evaluation=True)
    if args.scenarios:
        try:
            evaluation = load_chronicles(args.scenarios, model, "evaluation")
        except ScenarioError as exc:
            raise CliError(str(exc)) from exc
    if len(ctg) != model.timeline.weeks_count + 1:
        raise CliError(f"{ctg_path}: {len(ctg)} weekly models for a {model.timeline.weeks_count}-week horizon")
    threads = resolve_threads(args.threads)
    samples = args.samples if args.samples is not None else cfg.get("samples")
    t0 = time.perf_counter()
    if samples:
        ub = statistical_upper_bound(model, ctg, evaluation, int(samples), stream_rng(args.seed, STREAM_SIMULATION),
                                     threads)
        report = SimulationReport(ub.records, tuple(model.node_ids))
    else:
        report = evaluate_reference(model, ctg, evaluation, threads)
    out = Path(args.out) if args.out else ctg_path.parent
    report.write(out, {"method": ctg.method, "samples": int(samples or 0), "seed": args.seed, "threads": threads})
    write_json(out / "simulation_timing.json", {"wall_time": time.perf_counter() - t0})
    agg = report.aggregates()
    print(f"simulate: mean cost {agg['mean_operational_cost']:.6g} over {agg['chronicles']} chronicles")
    return 0


def gap_percent(lower: float, upper: float) -> float:
    """Relative statistical gap ``(UB - LB) / LB`` in percent."""
    return 100.0 * (upper - lower) / lower


def compare_rows(run_dirs: Sequence[str]) -> tuple[list[dict], list[dict]]:
    rows, timing = [], []
    for d in run_dirs:
        d = Path(d)
        summary = read_artifact(d / "summary.json")
        report = read_artifact(d / "report.json")
        lb = float(summary["lower_bound"])
        ub = float(report["mean_operational_cost"])
        lo, hi = report["operational_ci95"]
        rows.append(
            {
                "method": summary["method"],
                "lower_bound": lb,
                "upper_bound": ub,
                "ci_low": float(lo),
                "ci_high": float(hi),
                "gap_percent": gap_percent(lb, ub),
                "mean_cost": ub,
                "thermal_cost": float(report["mean_thermal_cost"]),
                "ens_cost": float(report["mean_ens_cost"]),
                "ens_gwh": float(report["mean_ens_gwh"]),
            }
        )
        wall = 0.0
        for name in ("timing.json", "simulation_timing.json"):
            if (d / name).exists():
                wall += float(read_artifact(d / name)["wall_time"])
        timing.append({"method": summary["method"], "wall_time": wall})
    return rows, timing


def cmd_compare(args) -> int:
    rows, timing = compare_rows(args.run_dirs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "compare.json", {"rows": rows})
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    with (out / "compare_timing.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=("method", "wall_time"))
        w.writeheader()
        w.writerows(timing)
    for r in rows:
        print(f"{r['method']:>12}  LB {r['lower_bound']:.6g}  UB {r['upper_bound']:.6g}  gap {r['gap_percent']:.2f}%")
    return 0


def cmd_tutorial(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("config.json", "system.json", "training.csv", "evaluation.csv"):
        shutil.copyfile(tutorial_dir() / name, out / name)
    print(f"tutorial files written to {out}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="grid-dadp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=TUTORIAL, help="JSON config file, or 'tutorial' for the bundled one")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = common(sub.add_parser("dadp", help="price decomposition lower bound and cost-to-go"))
    p.add_argument("--block-hours", dest="block_hours", type=int)
    p.add_argument("--tol-euro", dest="tol_euro", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float)
    p.set_defaults(func=cmd_dadp)

    p = common(sub.add_parser("sddp", help="SDDP baseline"))
    p.add_argument("--tol-euro", dest="tol_euro", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--time-limit", dest="time_limit", type=float)
    p.set_defaults(func=cmd_sddp)

    p = common(sub.add_parser("exact", help="exact dynamic programming on small instances"))
    p.set_defaults(func=cmd_exact)

    p = common(sub.add_parser("simulate", help="Monte Carlo policy evaluation"), out_required=False)
    p.add_argument("--cost-to-go", dest="cost_to_go", required=True)
    p.add_argument("--scenarios", help="chronicle CSV (default: the config's evaluation set)")
    p.add_argument("--samples", type=int, help="product-law samples; 0 simulates each chronicle once")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="tabulate bounds and simulated costs of several runs")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("tutorial", help="copy the bundled 3-node example to a directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tutorial)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
