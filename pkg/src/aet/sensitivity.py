"""Sensitivity grid, measurement manifests, aggregation and the AET envelope.

A manifest is a JSON document that supplies measured data for every axis
coordinate the grid may visit::

    {
      "nproc": 16,
      "axes": {"batch_size": [512], "baseline_budget_s": [1, 10, 120], ...},
      "training": {"per_seed_energy_wh": [105.2, 104.8, ...]},
      "neural": [
        {"batch_size": 512, "hardware_id": "nvidia-h100",
         "per_instance_energy_wh": 3.53e-5, "throughput_inst_per_s": 8500.0,
         "gap": 0.0}
      ],
      "baseline": [
        {"threads": "nproc", "baseline_budget_s": 10,
         "per_instance_energy_wh": 1.2e-2, "hardware_id": "intel-xeon-8480"}
      ]
    }

Energies may instead come from a saved reading (``"reading": "path.json"``,
divided by its ``n_items``) or from power and time (``power_w`` with
``t_batch_s`` on the neural side, ``power_w`` with the budget on the
baseline side). ``pue`` on an entry records a factor already included in
its energy. Gaps default to zero when neither ``gap`` nor
``cost_samples`` is given.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import accounting
from .asymptotics import sample_n
from .model import (
    UNBOUNDED,
    ConfigurationError,
    EnergyReading,
    EnvelopeResult,
    GridPoint,
    HardwareTable,
    Scenario,
    SolverMode,
    SolverProfile,
    TrainingProfile,
    Unit,
    ValidationError,
    decode_number,
    encode_number,
    iqr,
    median,
)

AXIS_ORDER = ("batch_size", "delta", "threads", "hardware_id", "seed_index", "baseline_budget_s")

DEFAULT_AXES: Dict[str, Tuple] = {
    "batch_size": (1, 32, 128, 512, 1024),
    "delta": (0.0, 0.01, 0.02, 0.05, 0.10),
    "threads": ("1", "nproc/2", "nproc"),
    # laptop CPU, server CPU, consumer GPU, datacenter GPU
    "hardware_id": ("apple-m4", "intel-xeon-8480", "nvidia-rtx-4090", "nvidia-h100"),
    "seed_index": (0, 1, 2, 3, 4),
    "baseline_budget_s": (1.0, 5.0, 10.0, 30.0, 60.0, 120.0),
}

_AXIS_TYPES = {
    "batch_size": int,
    "delta": float,
    "threads": str,
    "hardware_id": str,
    "seed_index": int,
    "baseline_budget_s": float,
}


def resolve_threads(label: str, nproc: int) -> int:
    label = str(label).strip()
    if label == "nproc":
        return nproc
    if label == "nproc/2":
        return max(1, nproc // 2)
    try:
        count = int(label)
    except ValueError:
        raise ConfigurationError(f"unknown thread label {label!r}") from None
    if count < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {count}")
    return count


def _normalize_axes(axes: Optional[Mapping[str, Optional[Sequence]]]) -> Dict[str, Optional[Tuple]]:
    merged: Dict[str, Optional[Tuple]] = dict(DEFAULT_AXES)
    for key, values in (axes or {}).items():
        if key not in AXIS_ORDER:
            raise ConfigurationError(f"unknown axis {key!r}; axes are {', '.join(AXIS_ORDER)}")
        if values is None:
            if key != "baseline_budget_s":
                raise ConfigurationError(f"axis {key!r} cannot be omitted")
            merged[key] = None
            continue
        values = tuple(_AXIS_TYPES[key](v) for v in values)
        if not values:
            raise ConfigurationError(f"axis {key!r} is empty")
        if len(set(values)) != len(values):
            raise ConfigurationError(f"axis {key!r} has repeated values")
        merged[key] = values
    return merged


def build_grid(
    axes: Optional[Mapping[str, Optional[Sequence]]] = None,
    nproc: Optional[int] = None,
) -> List[GridPoint]:
    """Cartesian product of the axes in declared order.

    Axes not given fall back to the defaults; ``baseline_budget_s=None``
    drops the budget axis.
    """
    merged = _normalize_axes(axes)
    nproc = nproc or os.cpu_count() or 1
    budgets = merged["baseline_budget_s"] or (None,)
    points = []
    for batch, delta, threads, hw, seed, budget in itertools.product(
        merged["batch_size"], merged["delta"], merged["threads"],
        merged["hardware_id"], merged["seed_index"], budgets,
    ):
        points.append(GridPoint(
            batch_size=batch,
            delta=delta,
            threads=threads,
            hardware_id=hw,
            seed_index=seed,
            baseline_budget_s=budget,
            thread_count=resolve_threads(threads, nproc),
        ))
    return points


def parse_axes_spec(spec: str) -> Dict[str, Optional[List[str]]]:
    """Parse ``"batch_size=1,512;baseline_budget_s=1,120"``.

    Short names ``batch``, ``hardware``, ``seed``, ``budget`` are
    accepted; ``budget=none`` drops the budget axis.
    """
    aliases = {"batch": "batch_size", "hardware": "hardware_id", "seed": "seed_index",
               "seeds": "seed_index", "budget": "baseline_budget_s", "budgets": "baseline_budget_s"}
    out: Dict[str, Optional[List[str]]] = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        if "=" not in part:
            raise ConfigurationError(f"bad axis spec {part!r}; expected name=v1,v2")
        name, values = (s.strip() for s in part.split("=", 1))
        name = aliases.get(name, name)
        if values.lower() == "none":
            out[name] = None
        else:
            out[name] = [v.strip() for v in values.split(",") if v.strip()]
    return out


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class NeuralEntry:
    batch_size: int
    hardware_id: str
    seed_index: Optional[int]
    profile: SolverProfile
    throughput_known: bool = True


@dataclass
class BaselineEntry:
    threads: str
    baseline_budget_s: Optional[float]
    profile: SolverProfile
    throughput_known: bool = True


@dataclass
class Manifest:
    training: TrainingProfile
    neural: List[NeuralEntry]
    baseline: List[BaselineEntry]
    nproc: int = 1
    axes: Dict[str, Optional[Tuple]] = field(default_factory=lambda: dict(DEFAULT_AXES))
    training_embodied_g: Optional[Tuple[float, ...]] = None
    scenario: Optional[Scenario] = None

    def neural_for(self, batch: int, hardware_id: str, seed: int) -> NeuralEntry:
        fallback = None
        for entry in self.neural:
            if entry.batch_size == batch and entry.hardware_id == hardware_id:
                if entry.seed_index == seed:
                    return entry
                if entry.seed_index is None:
                    fallback = entry
        if fallback is None:
            raise KeyError(f"no neural data for batch_size={batch} hardware_id={hardware_id} seed={seed}")
        return fallback

    def baseline_for(self, threads: str, budget: Optional[float]) -> BaselineEntry:
        for entry in self.baseline:
            if entry.threads == threads and entry.baseline_budget_s == budget:
                return entry
        raise KeyError(f"no baseline data for threads={threads} baseline_budget_s={budget}")

    def training_energy(self, seed: int) -> float:
        values = self.training.per_seed_energy_wh
        if not 0 <= seed < len(values):
            raise KeyError(f"no training energy for seed {seed} ({len(values)} seeds in manifest)")
        return values[seed]


def _entry_energy(entry: Mapping, base_dir: Path, what: str, budget: Optional[float]) -> Tuple[float, Optional[float]]:
    """Raw (PUE-free) per-instance energy and, when known, throughput."""
    sources = [k for k in ("per_instance_energy_wh", "reading", "power_w") if k in entry]
    if len(sources) != 1:
        raise ValidationError(f"{what}: give exactly one of per_instance_energy_wh, reading, power_w")
    tau = entry.get("throughput_inst_per_s")
    tau = None if tau is None else float(tau)
    if "per_instance_energy_wh" in entry:
        energy = float(entry["per_instance_energy_wh"]) / float(entry.get("pue", 1.0))
    elif "reading" in entry:
        reading = EnergyReading.load(base_dir / entry["reading"])
        energy = reading.per_item_energy_wh / reading.pue
        if tau is None:
            tau = reading.throughput_items_per_s
    else:
        power = float(entry["power_w"])
        if "t_batch_s" in entry:
            energy, tau_calc = accounting.nn_per_instance_energy(
                power, int(entry["batch_size"]), float(entry["t_batch_s"]))
            tau = tau if tau is not None else tau_calc
        else:
            t = float(entry.get("t_meta_s", budget if budget is not None else float("nan")))
            energy = accounting.baseline_per_instance_energy(power, t)
            tau = tau if tau is not None else 1.0 / t
    return energy, tau


def _gap_fields(entry: Mapping) -> Dict:
    out = {}
    if "gap" in entry:
        out["gap_override"] = float(entry["gap"])
    if "cost_samples" in entry:
        out["cost_samples"] = tuple(tuple(pair) for pair in entry["cost_samples"])
    return out


def manifest_from_dict(data: Mapping, base_dir: Optional[Path] = None) -> Manifest:
    base_dir = Path(base_dir or ".")
    axes = _normalize_axes(data.get("axes"))

    training = data.get("training")
    if not training:
        raise ValidationError("manifest has no training section")
    if "readings" in training:
        values = []
        for rel in training["readings"]:
            reading = EnergyReading.load(base_dir / rel)
            values.append(reading.energy_wh / reading.pue)
    else:
        pue = float(training.get("pue", 1.0))
        values = [float(v) / pue for v in training["per_seed_energy_wh"]]
    embodied = training.get("embodied_g")

    neural = []
    for i, entry in enumerate(data.get("neural", [])):
        what = f"neural[{i}]"
        batch = int(entry["batch_size"])
        hw = str(entry["hardware_id"])
        if batch not in axes["batch_size"]:
            raise ValidationError(f"{what}: unknown batch_size coordinate {batch}")
        if hw not in axes["hardware_id"]:
            raise ValidationError(f"{what}: unknown hardware_id coordinate {hw!r}")
        seed = entry.get("seed_index")
        if seed is not None and int(seed) not in axes["seed_index"]:
            raise ValidationError(f"{what}: unknown seed_index coordinate {seed}")
        energy, tau = _entry_energy(entry, base_dir, what, None)
        profile = SolverProfile(
            name=f"nn/B={batch}/{hw}" + ("" if seed is None else f"/s={seed}"),
            per_instance_energy_wh=energy,
            throughput_inst_per_s=tau if tau else 1.0,
            hardware_id=hw,
            mode=SolverMode.BATCHED_ACCELERATOR,
            batch_size=batch,
            **_gap_fields(entry),
        )
        neural.append(NeuralEntry(batch, hw, None if seed is None else int(seed), profile, tau is not None))

    baseline = []
    budgets = axes["baseline_budget_s"]
    for i, entry in enumerate(data.get("baseline", [])):
        what = f"baseline[{i}]"
        threads = str(entry["threads"])
        if threads not in axes["threads"]:
            raise ValidationError(f"{what}: unknown threads coordinate {threads!r}")
        budget = entry.get("baseline_budget_s")
        budget = None if budget is None else float(budget)
        if budgets is None and budget is not None or budgets is not None and budget not in budgets:
            raise ValidationError(f"{what}: unknown baseline_budget_s coordinate {budget}")
        energy, tau = _entry_energy(entry, base_dir, what, budget)
        profile = SolverProfile(
            name=f"base/{threads}/t={budget}",
            per_instance_energy_wh=energy,
            throughput_inst_per_s=tau if tau else 1.0,
            hardware_id=str(entry.get("hardware_id", "generic-cpu")),
            mode=SolverMode.SERIAL_HOST,
            **_gap_fields(entry),
        )
        baseline.append(BaselineEntry(threads, budget, profile, tau is not None))

    scenario = Scenario.from_dict(data["scenario"]) if "scenario" in data else None
    return Manifest(
        training=TrainingProfile(tuple(values)),
        neural=neural,
        baseline=baseline,
        nproc=int(data.get("nproc", os.cpu_count() or 1)),
        axes=axes,
        training_embodied_g=None if embodied is None else tuple(float(v) for v in embodied),
        scenario=scenario,
    )


def load_manifest(path) -> Manifest:
    path = Path(path)
    return manifest_from_dict(json.loads(path.read_text(encoding="utf-8")), path.parent)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointResult:
    """Outcome for one grid point; energies are in Wh with the scenario PUE."""

    point: GridPoint
    crossover: float
    ratio: float
    feasible: bool
    e_train_wh: float
    e_nn_wh: float
    e_base_wh: float
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def evaluate_point(
    p: GridPoint,
    manifest: Manifest,
    scenario: Scenario,
    hardware: Optional[HardwareTable] = None,
) -> PointResult:
    nan = float("nan")
    try:
        nn_entry = manifest.neural_for(p.batch_size, p.hardware_id, p.seed_index)
        base_entry = manifest.baseline_for(p.threads, p.baseline_budget_s)
        e_train = manifest.training_energy(p.seed_index)
    except KeyError as exc:
        return PointResult(p, nan, nan, False, nan, nan, nan, error=str(exc.args[0]))
    nn, base = nn_entry.profile, base_entry.profile

    local = replace(scenario, delta=p.delta)
    needs_specs = local.include_embodied and local.unit is Unit.CARBON_G
    nn_spec = base_spec = None
    if needs_specs:
        if not (nn_entry.throughput_known and base_entry.throughput_known):
            return PointResult(p, nan, nan, False, nan, nan, nan,
                               error="embodied accounting needs throughput on both sides")
        table = hardware if hardware is not None else HardwareTable.load()
        nn_spec, base_spec = table[nn.hardware_id], table[base.hardware_id]
    train_embodied = 0.0
    if manifest.training_embodied_g is not None and p.seed_index < len(manifest.training_embodied_g):
        train_embodied = manifest.training_embodied_g[p.seed_index]

    feasible = accounting.feasibility(nn.gap, base.gap, p.delta)
    crossover = accounting.aet_in_unit(
        e_train, nn, base, local,
        nn_spec=nn_spec, base_spec=base_spec, training_embodied_g=train_embodied,
    )
    e_nn_unit = accounting.per_instance_in_unit(nn, local, nn_spec)
    e_base_unit = accounting.per_instance_in_unit(base, local, base_spec)
    return PointResult(
        point=p,
        crossover=crossover,
        ratio=e_nn_unit / e_base_unit,
        feasible=feasible,
        e_train_wh=accounting.effective_energy(e_train, local),
        e_nn_wh=accounting.effective_energy(nn.per_instance_energy_wh, local),
        e_base_wh=accounting.effective_energy(base.per_instance_energy_wh, local),
    )


def evaluate_grid(
    points: Sequence[GridPoint],
    manifest: Manifest,
    scenario: Scenario,
    hardware: Optional[HardwareTable] = None,
    workers: int = 1,
) -> List[PointResult]:
    if hardware is None and scenario.include_embodied:
        hardware = HardwareTable.load()
    def run(item):
        return item[0], evaluate_point(item[1], manifest, scenario, hardware)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, item) for item in enumerate(points)]
            indexed = [f.result() for f in as_completed(futures)]
    else:
        indexed = [run(item) for item in enumerate(points)]
    # completion order is arbitrary; restore the grid's declared order
    return [r for _, r in sorted(indexed, key=lambda pair: pair[0])]


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def _group_value(result: PointResult, key: str):
    if key == "thread_mode":
        return result.point.thread_mode
    return getattr(result.point, key)


def _stats(values: Sequence[float]) -> Dict[str, float]:
    lo, hi = iqr(values)
    return {"median": median(values), "q25": lo, "q75": hi}


def aggregate(
    results: Sequence[PointResult],
    group_by: Sequence[str] = ("thread_mode",),
) -> Dict[Tuple, Dict]:
    """Median and IQR of per-point crossovers and ratios for each group.

    Medians are taken over per-point values; infinite crossovers sort
    above every finite one. Points carrying an error are counted but not
    aggregated.
    """
    if not results:
        raise ValidationError("aggregate needs at least one result")
    groups: Dict[Tuple, List[PointResult]] = {}
    for r in results:
        groups.setdefault(tuple(_group_value(r, k) for k in group_by), []).append(r)
    out: Dict[Tuple, Dict] = {}
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        members = groups[key]
        good = [r for r in members if r.ok]
        entry = {
            "n_points": len(members),
            "n_errors": len(members) - len(good),
            "n_infeasible": sum(1 for r in good if not r.feasible),
        }
        if good:
            entry["crossover"] = _stats([r.crossover for r in good])
            entry["ratio"] = _stats([r.ratio for r in good])
        out[key] = entry
    return out


def summary(results: Sequence[PointResult], scenario: Scenario) -> Dict:
    """JSON-ready digest: medians and IQRs per thread mode and per budget, plus the envelope interval."""

    def encode(obj):
        if isinstance(obj, dict):
            return {k: encode(v) for k, v in obj.items()}
        if isinstance(obj, float):
            return encode_number(obj)
        return obj

    def keyed(agg):
        return {"/".join(str(x) for x in k): encode(v) for k, v in agg.items()}

    good = [r for r in results if r.ok]
    env = envelope(good, scenario) if good else None
    return {
        "n_points": len(results),
        "n_errors": len(results) - len(good),
        "n_infeasible": sum(1 for r in good if not r.feasible),
        "unit": scenario.unit.value,
        "epsilon": scenario.epsilon_in_unit,
        "by_thread_mode": keyed(aggregate(results, ("thread_mode",))),
        "by_thread_mode_budget": keyed(aggregate(results, ("thread_mode", "baseline_budget_s"))),
        "aet_interval": None if env is None or env.aet_interval is None else [encode_number(v) for v in env.aet_interval],
        "median_crossover": None if env is None else encode_number(env.median_crossover),
    }


# ---------------------------------------------------------------------------
# envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Curve:
    """One configuration's cumulative-energy line: intercept + n * slope."""

    key: str
    intercept: float
    slope: float
    feasible: bool = True

    def at(self, n):
        return self.intercept + np.asarray(n, dtype=float) * self.slope


def _nn_key(p: GridPoint) -> str:
    return f"B={p.batch_size}|delta={p.delta:g}|hw={p.hardware_id}|seed={p.seed_index}"


def _base_key(p: GridPoint) -> str:
    budget = "-" if p.baseline_budget_s is None else f"{p.baseline_budget_s:g}"
    return f"threads={p.threads}|t={budget}"


def curves_from_results(results: Sequence[PointResult]) -> Tuple[List[Curve], List[Curve]]:
    nn: Dict[str, Curve] = {}
    base: Dict[str, Curve] = {}
    for r in results:
        if not r.ok:
            continue
        k = _nn_key(r.point)
        prev = nn.get(k)
        feasible = r.feasible and (prev is None or prev.feasible)
        nn[k] = Curve(k, r.e_train_wh, r.e_nn_wh, feasible)
        kb = _base_key(r.point)
        base.setdefault(kb, Curve(kb, 0.0, r.e_base_wh))
    return [nn[k] for k in sorted(nn)], [base[k] for k in sorted(base)]


def envelope_from_curves(
    nn_curves: Sequence[Curve],
    base_curves: Sequence[Curve],
    crossovers: Sequence[Tuple[str, str, float]],
    n: np.ndarray,
) -> EnvelopeResult:
    if not nn_curves or not base_curves:
        raise ValidationError("envelope needs at least one neural and one baseline configuration")
    nn_vals = np.array([c.at(n) for c in nn_curves])
    base_vals = np.array([c.at(n) for c in base_curves])
    finite = [c for _, _, c in crossovers if not math.isinf(c)]
    interval = (min(finite), max(finite)) if finite else None
    all_values = [c for _, _, c in crossovers]
    return EnvelopeResult(
        n=[float(x) for x in n],
        nn_band=list(zip(nn_vals.min(axis=0).tolist(), nn_vals.max(axis=0).tolist())),
        base_band=list(zip(base_vals.min(axis=0).tolist(), base_vals.max(axis=0).tolist())),
        crossovers=list(crossovers),
        aet_interval=interval,
        median_crossover=median(all_values) if all_values else UNBOUNDED,
    )


def envelope(
    results: Sequence[PointResult],
    scenario: Scenario,
    thread_mode: Optional[str] = None,
) -> EnvelopeResult:
    """Per-side min/max bands and the interval spanned by finite crossovers.

    ``thread_mode`` ("mono" or "multi") restricts which baseline
    configurations contribute crossovers; bands always cover every
    configuration.
    """
    good = [r for r in results if r.ok]
    nn_curves, base_curves = curves_from_results(good)
    pairs = [
        (_nn_key(r.point), _base_key(r.point), r.crossover)
        for r in good
        if thread_mode is None or r.point.thread_mode == thread_mode
    ]
    n = sample_n(*scenario.n_range)
    return envelope_from_curves(nn_curves, base_curves, pairs, n)


# ---------------------------------------------------------------------------
# CSV / JSON output
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "batch_size", "delta", "threads", "thread_count", "hardware_id", "seed_index",
    "baseline_budget_s", "feasible", "crossover", "ratio", "e_train_wh", "e_nn_wh",
    "e_base_wh", "error",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return str(encode_number(value)) if math.isinf(value) else repr(value)
    return str(value)


def results_to_csv(results: Sequence[PointResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in results:
        p = r.point
        writer.writerow([_fmt(v) for v in (
            p.batch_size, p.delta, p.threads, p.thread_count, p.hardware_id, p.seed_index,
            p.baseline_budget_s, r.feasible, r.crossover, r.ratio, r.e_train_wh, r.e_nn_wh,
            r.e_base_wh, r.error,
        )])
    return buf.getvalue()


def results_from_csv(text: str) -> List[PointResult]:
    def num(s: str) -> float:
        return float("nan") if s == "" else decode_number(s)

    out = []
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValidationError(f"unexpected sweep CSV header {reader.fieldnames}")
    for row in reader:
        point = GridPoint(
            batch_size=int(row["batch_size"]),
            delta=float(row["delta"]),
            threads=row["threads"],
            hardware_id=row["hardware_id"],
            seed_index=int(row["seed_index"]),
            baseline_budget_s=None if row["baseline_budget_s"] == "" else float(row["baseline_budget_s"]),
            thread_count=int(row["thread_count"]),
        )
        out.append(PointResult(
            point=point,
            crossover=num(row["crossover"]),
            ratio=num(row["ratio"]),
            feasible=row["feasible"] == "true",
            e_train_wh=num(row["e_train_wh"]),
            e_nn_wh=num(row["e_nn_wh"]),
            e_base_wh=num(row["e_base_wh"]),
            error=row["error"] or None,
        ))
    return out


def summary_to_json(data: Dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
