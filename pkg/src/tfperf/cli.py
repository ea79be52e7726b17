"""Command-line front end: optimize, explain, sweep and comm-curve."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys as _sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from .arch import CollectiveKind, TransformerSpec, resolve_spec
from .config import ParallelConfig, Strategy
from .hwspec import SystemSpec, resolve_system
from .netmodel import GroupLocality, collective_time
from .search import (NoFeasibleConfigError, evaluate_config, optimize,
                     optimize_placement)
from .timemodel import Estimate, TimeBreakdown, training_time

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 2, 3

CONFIG_COLUMNS = ["strategy", "n1", "n2", "n_p", "n_d", "b_m", "m",
                  "a_1", "a_2", "a_p", "a_d", "n_b"]
TIME_COLUMNS = list(TimeBreakdown.COMPONENTS) + ["total", "t_f", "t_b"]
ROW_COLUMNS = CONFIG_COLUMNS + TIME_COLUMNS + ["hbm_gb", "feasible"]
SWEEP_AXES = ("gpu_count", "hbm_bw_cap", "tensor_flops", "nvs_size")


class UsageError(Exception):
    pass


def estimate_row(est: Estimate) -> dict:
    c = est.config
    row = {"strategy": c.strategy.value, "n1": c.n1, "n2": c.n2, "n_p": c.n_p,
           "n_d": c.n_d, "b_m": c.b_m, "m": c.m}
    row.update(zip(("a_1", "a_2", "a_p", "a_d"), c.nvs_assign))
    row["n_b"] = c.n_b
    bd = est.breakdown
    row.update({k: getattr(bd, k) for k in TIME_COLUMNS})
    row["hbm_gb"] = est.footprint.total / 1e9
    row["feasible"] = est.feasible
    return row


def _write_csv(rows: list[dict], columns: list[str], out) -> None:
    writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return value


def _write_json(payload: dict, out) -> None:
    json.dump({"schema_version": SCHEMA_VERSION, **payload}, out, indent=2)
    out.write("\n")


# --- shared argument handling -------------------------------------------------

def _add_common(p: argparse.ArgumentParser, gpus_required=True) -> None:
    p.add_argument("--model", required=True,
                   help="model preset (gpt3-1t, vit-64k) or YAML/JSON file")
    p.add_argument("--system", required=True,
                   help="system preset such as b200:nvs8, or a YAML/JSON file")
    p.add_argument("--gpus", type=int, required=gpus_required, help="total GPU count n")
    p.add_argument("--batch", type=int, default=4096, help="global batch size b")
    p.add_argument("--strategy", default="tp1d", help="tp1d, tp2d or tp2d_summa")


def _add_budget(p: argparse.ArgumentParser) -> None:
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--tokens", type=float,
                        help="training tokens; samples = tokens / sequence length")
    budget.add_argument("--samples", type=float, help="training samples")


def _load(args) -> tuple[TransformerSpec, SystemSpec, Strategy]:
    try:
        spec = resolve_spec(args.model)
        system = resolve_system(args.system)
        strategy = Strategy.parse(args.strategy)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if getattr(args, "gpus", None) is not None and args.gpus < 1:
        raise UsageError("--gpus must be >= 1")
    if args.batch < 1:
        raise UsageError("--batch must be >= 1")
    return spec, system, strategy


def _samples(args, spec: TransformerSpec) -> Optional[float]:
    if getattr(args, "tokens", None) is not None:
        return args.tokens / spec.l
    return getattr(args, "samples", None)


# --- optimize -------------------------------------------------------------

def _text_report(result, spec, system, samples, batch) -> str:
    est = result.best
    c, bd, fp = est.config, est.breakdown, est.footprint
    lines = [f"system {system.name}, strategy {c.strategy.value}, n={c.n}, b={batch}",
             f"configurations evaluated: {result.space_size} "
             f"({result.infeasible_count} exceed HBM)",
             "",
             f"optimal: n1={c.n1} n2={c.n2} n_p={c.n_p} n_d={c.n_d} b_m={c.b_m} m={c.m} "
             f"nvs_assign={c.nvs_assign} n_b={c.n_b}",
             "",
             "time per iteration:"]
    for key, frac in bd.fractions().items():
        lines.append(f"  {key:<16} {getattr(bd, key):12.4f} s  {100 * frac:6.2f} %")
    lines.append(f"  {'total':<16} {bd.total:12.4f} s")
    lines += ["", "HBM per GPU:"]
    for key, value in fp.as_dict().items():
        lines.append(f"  {key:<16} {value / 1e9:10.2f} GB")
    lines.append(f"  capacity         {system.hbm_capacity / 1e9:10.2f} GB")
    if samples is not None:
        lines += ["", f"training time: {training_time(est, samples, batch):.3f} days "
                      f"for {samples:.6g} samples"]
    return "\n".join(lines) + "\n"


def cmd_optimize(args, out) -> int:
    spec, system, strategy = _load(args)
    if args.top_k < 1:
        raise UsageError("--top-k must be >= 1")
    result = optimize(args.gpus, args.batch, spec, strategy, system, top_k=args.top_k)
    samples = _samples(args, spec)
    rows = []
    for rank, est in enumerate(result.ranked, 1):
        row = {"rank": rank, **estimate_row(est)}
        if samples is not None:
            row["days"] = training_time(est, samples, args.batch)
        rows.append(row)
    if args.format == "text":
        out.write(_text_report(result, spec, system, samples, args.batch))
    elif args.format == "csv":
        _write_csv(rows, ["rank"] + ROW_COLUMNS + (["days"] if samples is not None else []), out)
    else:
        _write_json({"command": "optimize", "system": system.name, "gpus": args.gpus,
                     "batch": args.batch, "space_size": result.space_size,
                     "infeasible_count": result.infeasible_count,
                     "memory": result.best.footprint.as_dict(), "ranked": rows}, out)
    return EXIT_OK


# --- explain --------------------------------------------------------------

def _parse_assign(text: str) -> Optional[tuple[int, ...]]:
    if text == "auto":
        return None
    try:
        values = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--nvs-assign expects a1,a2,ap,ad or 'auto', got {text!r}") from None
    if len(values) != 4:
        raise UsageError("--nvs-assign needs four values a1,a2,ap,ad")
    return values


def cmd_explain(args, out) -> int:
    spec, system, strategy = _load(args)
    assign = _parse_assign(args.nvs_assign)
    try:
        base = ParallelConfig.from_batch(strategy, args.n1, args.n2, args.np, args.nd,
                                         args.bm, args.batch, assign or (1, 1, 1, 1),
                                         args.nb or 1)
        if assign is None:
            est = optimize_placement(base, spec, system)
            if args.nb is not None and strategy is Strategy.TP2D_SUMMA:
                est = evaluate_config(dataclasses.replace(est.config, n_b=args.nb), spec, system)
        else:
            est = evaluate_config(base, spec, system)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    row = estimate_row(est)
    if args.format == "csv":
        _write_csv([row], ROW_COLUMNS, out)
    else:
        _write_json({"command": "explain", "system": system.name, "row": row,
                     "memory": est.footprint.as_dict()}, out)
    return EXIT_OK


# --- sweep ----------------------------------------------------------------

def _parse_values(axis: str, text: str) -> list:
    cast = int if axis in ("gpu_count", "nvs_size") else float
    try:
        values = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values for {axis} must be {cast.__name__}s") from None
    if not values:
        raise UsageError("--values must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise UsageError("--values must be strictly increasing")
    if any(v <= 0 for v in values):
        raise UsageError("--values must be positive")
    return values


def sweep_point(axis: str, value, spec: TransformerSpec, system: SystemSpec,
                strategy: Strategy, gpus: Optional[int], batch: int):
    """One optimize run with the swept quantity applied to the base inputs."""
    n = gpus
    if axis == "gpu_count":
        n = value
    elif axis == "nvs_size":
        system = system.with_nvs(value)
    elif axis == "hbm_bw_cap":
        # one factor scales HBM bandwidth and capacity together
        system = dataclasses.replace(system, hbm_bw=system.hbm_bw * value,
                                     hbm_capacity=system.hbm_capacity * value)
    elif axis == "tensor_flops":
        system = dataclasses.replace(system, tensor_flops=system.tensor_flops * value,
                                     vector_flops=system.vector_flops * value)
    try:
        return optimize(n, batch, spec, strategy, system).best
    except NoFeasibleConfigError:
        return None


def _sweep_job(job):
    return sweep_point(*job)


def cmd_sweep(args, out) -> int:
    spec, system, strategy = _load(args)
    axis = args.axis
    if axis != "gpu_count" and args.gpus is None:
        raise UsageError(f"--gpus is required for a {axis} sweep")
    values = _parse_values(axis, args.values)
    if axis == "nvs_size" and any(v & (v - 1) for v in values):
        raise UsageError("nvs_size values must be powers of two")
    jobs = [(axis, v, spec, system, strategy, args.gpus, args.batch) for v in values]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))  # map keeps input order
    else:
        results = [_sweep_job(job) for job in jobs]
    samples = _samples(args, spec)
    rows = []
    for value, est in zip(values, results):
        row = {"axis": axis, "value": value,
               "status": "ok" if est is not None else "no_feasible_config"}
        if est is not None:
            row.update(estimate_row(est))
            if samples is not None:
                row["days"] = training_time(est, samples, args.batch)
        rows.append(row)
    columns = ["axis", "value", "status"] + ROW_COLUMNS
    if samples is not None:
        columns.append("days")
    if args.format == "csv":
        _write_csv(rows, columns, out)
    else:
        _write_json({"command": "sweep", "system": system.name, "axis": axis,
                     "rows": rows}, out)
    return EXIT_OK


# --- comm-curve -------------------------------------------------------------

def cmd_comm_curve(args, out) -> int:
    try:
        system = resolve_system(args.system)
        kind = CollectiveKind(args.collective)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if kind is CollectiveKind.P2P:
        raise UsageError("comm-curve covers group collectives, not p2p")
    try:
        volumes = [float(v) for v in args.volumes.split(",") if v.strip()]
        nvs = [int(g) for g in args.nvs_per_group.split(",") if g.strip()]
        locs = [GroupLocality.for_group(args.group_size, g, system) for g in nvs]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not volumes or any(v < 0 for v in volumes):
        raise UsageError("--volumes must be non-negative byte counts")
    rows = [{"collective": kind.value, "n": args.group_size, "g": loc.gpus_per_nvs,
             "volume_bytes": v, "time_s": collective_time(kind, v, loc, system)}
            for loc in locs for v in volumes]
    columns = ["collective", "n", "g", "volume_bytes", "time_s"]
    if args.format == "csv":
        _write_csv(rows, columns, out)
    else:
        _write_json({"command": "comm-curve", "system": system.name, "rows": rows}, out)
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfperf", description="Performance model and parallel-configuration "
                                   "search for transformer training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="search for the fastest feasible configuration")
    _add_common(p)
    _add_budget(p)
    p.add_argument("--top-k", type=int, default=1)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("explain", help="time and memory breakdown of one configuration")
    _add_common(p, gpus_required=False)
    p.add_argument("--n1", type=int, required=True)
    p.add_argument("--n2", type=int, default=1)
    p.add_argument("--np", type=int, required=True, help="pipeline stages n_p")
    p.add_argument("--nd", type=int, required=True, help="data-parallel replicas n_d")
    p.add_argument("--bm", type=int, default=1, help="microbatch size b_m")
    p.add_argument("--nvs-assign", default="auto",
                   help="GPUs per NVS domain for (tp1, tp2, pp, dp) as a1,a2,ap,ad; "
                        "'auto' picks the fastest")
    p.add_argument("--nb", type=int, help="SUMMA panel count (default: fastest)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("sweep", help="optimize along one axis")
    _add_common(p, gpus_required=False)
    _add_budget(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated, strictly increasing; GPU counts, NVS sizes, "
                        "or scale factors for hbm_bw_cap and tensor_flops")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("comm-curve", help="collective time versus volume")
    p.add_argument("--system", required=True)
    p.add_argument("--collective", default="allgather",
                   choices=[k.value for k in CollectiveKind if k is not CollectiveKind.P2P])
    p.add_argument("--group-size", type=int, required=True, help="GPUs in the group n")
    p.add_argument("--nvs-per-group", default="1",
                   help="comma-separated GPUs of the group per NVS domain g")
    p.add_argument("--volumes", default="1e6,1e7,1e8,1e9",
                   help="comma-separated volumes in bytes")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_comm_curve)
    return parser


def main(argv=None, out=None) -> int:
    out = out or _sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except UsageError as exc:
        parser.print_usage(_sys.stderr)
        print(f"tfperf {args.command}: error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except NoFeasibleConfigError as exc:
        print(f"{NoFeasibleConfigError.code}: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE


def run(argv=None) -> str:
    """Run the CLI and return what it printed (for scripting and tests)."""
    buf = io.StringIO()
    main(argv, buf)
    return buf.getvalue()


if __name__ == "__main__":
    raise SystemExit(main())
