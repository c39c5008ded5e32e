"""Command-line entry point: ``aet <subcommand> ...``.

Exit codes: 0 for any analytical outcome (including infinite or
infeasible thresholds and empty intervals), 1 for I/O, validation or
measurement failures, 2 for usage errors. ``measure`` passes the wrapped
command's exit status through.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import accounting, report, sensitivity
from .model import (
    AETError,
    EnergyReading,
    HardwareTable,
    Scenario,
    SolverMode,
    SolverProfile,
    TrainingProfile,
    Unit,
    ValidationError,
    format_sci,
    load_grid_intensity,
)
from .tracker import TrackerConfig, run_wrapped


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _table_paths(args) -> Dict[str, Optional[str]]:
    return {
        "hardware": args.hardware_table or os.environ.get("AET_HARDWARE_TABLE"),
        "grid": args.grid_table or os.environ.get("AET_GRID_TABLE"),
    }


def _write(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# input files for aet / curves / ratio
# ---------------------------------------------------------------------------

def _load_json(path: str) -> Dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None


def load_training_input(path: str) -> float:
    """PUE-free training energy (Wh) from a reading or a training file.

    A training file holds ``per_seed_energy_wh`` (median taken) or
    ``energy_wh``, with an optional ``pue`` already included.
    """
    data = _load_json(path)
    if "backend_used" in data:
        reading = EnergyReading.from_dict(data)
        return reading.energy_wh / reading.pue
    pue = float(data.get("pue", 1.0))
    if "per_seed_energy_wh" in data:
        return TrainingProfile(tuple(data["per_seed_energy_wh"])).median_wh / pue
    if "energy_wh" in data:
        return float(data["energy_wh"]) / pue
    raise ValidationError(f"{path}: expected a reading, per_seed_energy_wh or energy_wh")


def load_solver_input(path: str, role: str) -> SolverProfile:
    """Solver profile from a reading (energy / n_items) or a profile file."""
    data = _load_json(path)
    mode = SolverMode.BATCHED_ACCELERATOR if role == "nn" else SolverMode.SERIAL_HOST
    if "backend_used" in data:
        reading = EnergyReading.from_dict(data)
        return SolverProfile(
            name=reading.label,
            per_instance_energy_wh=reading.per_item_energy_wh / reading.pue,
            throughput_inst_per_s=reading.throughput_items_per_s,
            hardware_id=reading.hardware_id,
            mode=mode,
        )
    if "per_instance_energy_wh" not in data:
        raise ValidationError(f"{path}: expected a reading or per_instance_energy_wh")
    samples = data.get("cost_samples")
    return SolverProfile(
        name=str(data.get("name", role)),
        per_instance_energy_wh=float(data["per_instance_energy_wh"]) / float(data.get("pue", 1.0)),
        throughput_inst_per_s=float(data.get("throughput_inst_per_s", 1.0)),
        hardware_id=str(data.get("hardware_id", "generic-gpu" if role == "nn" else "generic-cpu")),
        mode=mode,
        batch_size=data.get("batch_size"),
        cost_samples=None if samples is None else tuple(tuple(p) for p in samples),
        gap_override=data.get("gap"),
    )


def _scenario_from_args(args, tables) -> Scenario:
    base: Dict = {}
    if getattr(args, "scenario", None):
        base = _load_json(args.scenario)
    scenario = Scenario.from_dict(base) if base else Scenario()
    updates: Dict = {}
    if getattr(args, "unit", None):
        updates["unit"] = Unit.parse(args.unit)
    if getattr(args, "delta", None) is not None:
        updates["delta"] = args.delta / 100.0
    if getattr(args, "epsilon", None) is not None:
        updates["epsilon"] = args.epsilon
    if getattr(args, "pue", None) is not None:
        updates["pue"] = args.pue
    if getattr(args, "country", None):
        updates["grid_intensity_g_per_kwh"] = load_grid_intensity(args.country, tables["grid"])
    if getattr(args, "ci", None) is not None:
        updates["grid_intensity_g_per_kwh"] = args.ci
    if getattr(args, "price", None) is not None:
        updates["unit_price_per_kwh"] = args.price
    if getattr(args, "embodied", False):
        updates["include_embodied"] = True
    if getattr(args, "n_min", None) is not None or getattr(args, "n_max", None) is not None \
            or getattr(args, "points", None) is not None:
        lo, hi, pts = scenario.n_range
        updates["n_range"] = (args.n_min or lo, args.n_max or hi, args.points or pts)
    return replace(scenario, **updates) if updates else scenario


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_measure(args, tables, command: List[str]) -> int:
    config = TrackerConfig(
        label=args.label,
        pue=args.pue,
        hardware_id=args.hardware,
        report_embodied=args.embodied,
        country_iso_code=args.country,
        sample_interval_ms=args.interval_ms,
    )
    reading, status = run_wrapped(
        config,
        command,
        n_items=args.items,
        hardware=HardwareTable.load(tables["hardware"]),
        grid_table=tables["grid"],
    )
    _write(args.out, reading.to_json(indent=2) + "\n")
    if status != 0:
        print(f"aet measure: command exited with status {status}; reading written", file=sys.stderr)
    return status


def cmd_aet(args, tables) -> int:
    scenario = _scenario_from_args(args, tables)
    e_train = load_training_input(args.train)
    nn = load_solver_input(args.nn, "nn")
    base = load_solver_input(args.base, "base")
    table = HardwareTable.load(tables["hardware"]) if scenario.include_embodied else None
    nn_spec = table[nn.hardware_id] if table else None
    base_spec = table[base.hardware_id] if table else None

    feasible = accounting.feasibility(nn.gap, base.gap, scenario.delta)
    crossover = accounting.aet_in_unit(e_train, nn, base, scenario, nn_spec=nn_spec, base_spec=base_spec)
    e_nn = accounting.per_instance_in_unit(nn, scenario, nn_spec)
    e_base = accounting.per_instance_in_unit(base, scenario, base_spec)

    if not math.isinf(crossover):
        text = format_sci(crossover)
    elif not feasible:
        text = "infinity (infeasible)"
    else:
        text = "infinity (non-amortizing)"
    print(f"crossover: {text}")
    print(f"ratio: {format_sci(e_nn / e_base)}")
    print(f"feasible: {'yes' if feasible else 'no'} (gap_nn={format_sci(nn.gap)}, "
          f"gap_base={format_sci(base.gap)}, delta={format_sci(scenario.delta)})")
    print(f"epsilon: {format_sci(scenario.epsilon_in_unit)} {scenario.unit.value}")
    return 0


def _manifest_scenario(args, manifest, tables) -> Scenario:
    if args.scenario is None and manifest.scenario is not None:
        return manifest.scenario
    return _scenario_from_args(args, tables)


def cmd_sweep(args, tables) -> int:
    manifest = sensitivity.load_manifest(args.manifest)
    scenario = _manifest_scenario(args, manifest, tables)
    axes = dict(manifest.axes)
    if args.axes:
        axes.update(sensitivity.parse_axes_spec(args.axes))
    points = sensitivity.build_grid(axes, manifest.nproc)
    hardware = HardwareTable.load(tables["hardware"]) if scenario.include_embodied else None
    results = sensitivity.evaluate_grid(points, manifest, scenario, hardware, workers=args.workers)
    _write(args.out_csv, sensitivity.results_to_csv(results))
    summary = sensitivity.summary(results, scenario)
    _write(args.out_json, sensitivity.summary_to_json(summary))
    errors = [r for r in results if not r.ok]
    multi = summary["by_thread_mode"].get("multi", {}).get("crossover")
    print(f"points: {len(results)}  errors: {len(errors)}  infeasible: {summary['n_infeasible']}")
    if multi:
        print(f"median crossover (multi): {format_sci(_num(multi['median']))}")
    if errors:
        print(f"aet sweep: {len(errors)} grid points lack manifest data", file=sys.stderr)
        return 1
    return 0


def _num(value) -> float:
    return math.inf if value == "infinity" else float(value)


def _emit_plot(args, data: Dict) -> None:
    if args.data:
        _write(args.data, report.plot_data_to_json(data))
    if args.svg:
        _write(args.svg, report.render_svg(data))
    if not args.data and not args.svg:
        _write("-", report.plot_data_to_json(data))


def cmd_envelope(args, tables) -> int:
    if bool(args.manifest) == bool(args.results):
        raise UsageError("envelope: give exactly one of --manifest or --results")
    if args.manifest:
        manifest = sensitivity.load_manifest(args.manifest)
        scenario = _manifest_scenario(args, manifest, tables)
        points = sensitivity.build_grid(manifest.axes, manifest.nproc)
        hardware = HardwareTable.load(tables["hardware"]) if scenario.include_embodied else None
        results = sensitivity.evaluate_grid(points, manifest, scenario, hardware)
    else:
        scenario = _scenario_from_args(args, tables)
        results = sensitivity.results_from_csv(Path(args.results).read_text(encoding="utf-8"))
    good = [r for r in results if r.ok]
    if not good:
        raise ValidationError("no evaluable grid points")
    env = sensitivity.envelope(good, scenario, thread_mode=args.thread_mode)
    nn_curves, _ = sensitivity.curves_from_results(good)
    _emit_plot(args, report.envelope_plot_data(env, nn_curves))
    if env.aet_interval is None:
        print("AET interval: none", file=sys.stderr)
    else:
        lo, hi = env.aet_interval
        print(f"AET interval: [{format_sci(lo)}, {format_sci(hi)}]  median: {format_sci(env.median_crossover)}",
              file=sys.stderr)
    return 0


def _pair_inputs(args, tables):
    scenario = _scenario_from_args(args, tables)
    e_train = load_training_input(args.train)
    nn = load_solver_input(args.nn, "nn")
    base = load_solver_input(args.base, "base")
    return scenario, e_train, nn, base


def cmd_curves(args, tables) -> int:
    scenario, e_train, nn, base = _pair_inputs(args, tables)
    feasible = accounting.feasibility(nn.gap, base.gap, scenario.delta)
    data = report.curves_plot_data(
        e_train, nn.per_instance_energy_wh, base.per_instance_energy_wh,
        pue=scenario.pue, epsilon=scenario.epsilon_in_unit,
        feasible=feasible, n_range=scenario.n_range,
    )
    _emit_plot(args, data)
    return 0


def cmd_ratio(args, tables) -> int:
    scenario, e_train, nn, base = _pair_inputs(args, tables)
    data = report.ratio_plot_data(
        e_train, nn.per_instance_energy_wh, base.per_instance_energy_wh,
        pue=scenario.pue, n_range=scenario.n_range,
    )
    _emit_plot(args, data)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_scenario_flags(p, unit: bool = True) -> None:
    p.add_argument("--scenario", help="scenario JSON file")
    if unit:
        p.add_argument("--unit", choices=["energy", "carbon", "money", "energy_wh", "carbon_g"])
    p.add_argument("--delta", type=float, help="quality tolerance in percent")
    p.add_argument("--epsilon", type=float, help="regularizer in the scenario unit")
    p.add_argument("--pue", type=float)
    p.add_argument("--country", help="ISO-3166 alpha-3 code for grid intensity")
    p.add_argument("--ci", type=float, help="grid intensity in g/kWh")
    p.add_argument("--price", type=float, help="price per kWh for the money unit")
    p.add_argument("--embodied", action="store_true", help="include embodied carbon (carbon unit)")


def _add_range_flags(p) -> None:
    p.add_argument("--n-min", type=float)
    p.add_argument("--n-max", type=float)
    p.add_argument("--points", type=int)


def _add_plot_flags(p) -> None:
    p.add_argument("--svg", help="write an SVG figure")
    p.add_argument("--data", help="write plot data as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aet", description="Amortized break-even analysis for neural vs heuristic solvers.")
    parser.add_argument("--hardware-table", help="hardware table file (env AET_HARDWARE_TABLE)")
    parser.add_argument("--grid-table", help="grid-intensity override file (env AET_GRID_TABLE)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("measure", help="measure a command: measure [opts] -- CMD ...")
    p.add_argument("--label", required=True)
    p.add_argument("--pue", type=float, default=1.0)
    p.add_argument("--hardware", default="generic-cpu")
    p.add_argument("--embodied", action="store_true")
    p.add_argument("--country")
    p.add_argument("--items", type=int)
    p.add_argument("--interval-ms", type=int, default=100)
    p.add_argument("--out", help="reading JSON path (default stdout)")

    p = sub.add_parser("aet", help="compute the break-even volume for one pair")
    p.add_argument("--train", required=True)
    p.add_argument("--nn", required=True)
    p.add_argument("--base", required=True)
    _add_scenario_flags(p)

    p = sub.add_parser("sweep", help="evaluate the sensitivity grid from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--axes", help='e.g. "batch=512;budget=1,10,120"')
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_scenario_flags(p)

    p = sub.add_parser("envelope", help="envelope bands and AET interval")
    p.add_argument("--manifest")
    p.add_argument("--results", help="sweep CSV")
    p.add_argument("--thread-mode", choices=["mono", "multi"])
    _add_scenario_flags(p)
    _add_range_flags(p)
    _add_plot_flags(p)

    for name, text in (("curves", "cumulative energy curves"), ("ratio", "cumulative energy ratio")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--train", required=True)
        p.add_argument("--nn", required=True)
        p.add_argument("--base", required=True)
        _add_scenario_flags(p, unit=False)
        _add_range_flags(p)
        _add_plot_flags(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command: List[str] = []
        if "measure" in argv and argv.index("measure") < (argv.index("--") if "--" in argv else len(argv)):
            if "--" not in argv:
                raise UsageError("aet measure: missing '--' before the command to run")
            split = argv.index("--")
            argv, command = argv[:split], argv[split + 1:]
            if not command:
                raise UsageError("aet measure: no command after '--'")
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("aet: a subcommand is required")
        tables = _table_paths(args)
        handlers = {
            "aet": cmd_aet, "sweep": cmd_sweep, "envelope": cmd_envelope,
            "curves": cmd_curves, "ratio": cmd_ratio,
        }
        if args.command == "measure":
            return cmd_measure(args, tables, command)
        return handlers[args.command](args, tables)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(exc, file=sys.stderr)
        return 2
    except (AETError, OSError, KeyError, ValueError) as exc:
        print(f"aet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
