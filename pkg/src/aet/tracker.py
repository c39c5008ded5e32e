"""Energy measurement around a block of code or a child process.

Backends are tried in a fixed order: hardware counters (RAPL powercap
files for the host, NVML power polling for NVIDIA accelerators), then a
TDP estimate of rated power times wall time. A reading reports the
weakest backend that contributed to its energy figure.

Typical use::

    with EnergyTracker(label="train", pue=1.4, hardware_id="nvidia-h100",
                       report_embodied=True, country_iso_code="FRA") as t:
        train_loop()
        t.n_items = 200_000
    t.reading.to_dict()
"""

from __future__ import annotations

import csv
import io
import json
import logging
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .accounting import to_carbon
from .model import (
    BACKEND_QUALITY,
    Backend,
    ConfigurationError,
    EnergyReading,
    HardwareKind,
    HardwareSpec,
    HardwareTable,
    MeasurementError,
    ValidationError,
    load_grid_intensity,
)

log = logging.getLogger(__name__)

POWERCAP_ROOT = "/sys/class/powercap"


@dataclass(frozen=True)
class TrackerConfig:
    label: str
    pue: float = 1.0
    hardware_id: str = "generic-cpu"
    report_embodied: bool = False
    country_iso_code: Optional[str] = None
    sample_interval_ms: int = 100
    backend_preference: Tuple[Backend, ...] = (Backend.HWCOUNTERS, Backend.TDP)

    def __post_init__(self):
        if not self.pue >= 1:
            raise ValidationError(f"pue must be >= 1, got {self.pue}")
        if self.sample_interval_ms < 10:
            raise ValidationError("sample_interval_ms must be >= 10")
        prefs = tuple(Backend(b) for b in self.backend_preference)
        if not prefs or Backend.IMPORTED in prefs:
            raise ValidationError("backend_preference must list hwcounters and/or tdp")
        object.__setattr__(self, "backend_preference", prefs)


# ---------------------------------------------------------------------------
# cumulative counters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CounterSample:
    energy_uj: int
    max_energy_range_uj: Optional[int]


def read_cumulative_counter(source) -> CounterSample:
    """Read a powercap zone directory (or its ``energy_uj`` file).

    Raises ``PermissionError``/``OSError`` when unreadable; callers demote
    to the next backend.
    """
    path = Path(source)
    energy_file = path / "energy_uj" if path.is_dir() else path
    value = int(energy_file.read_text().strip())
    max_file = energy_file.parent / "max_energy_range_uj"
    max_range = int(max_file.read_text().strip()) if max_file.exists() else None
    return CounterSample(value, max_range)


def counter_delta(previous: int, current: int, max_range: Optional[int]) -> int:
    """Increment between two reads, unwrapping a single overflow."""
    if current >= previous:
        return current - previous
    if not max_range:
        raise MeasurementError(
            f"counter went backwards ({previous} -> {current}) and no max range is published"
        )
    return max_range - previous + current


class CounterAccumulator:
    """Monotone total over successive reads of one wrapping counter."""

    def __init__(self, source):
        self.source = source
        first = read_cumulative_counter(source)
        self.max_range = first.max_energy_range_uj
        self.last = first.energy_uj
        self.total_uj = 0

    def sample(self) -> None:
        current = read_cumulative_counter(self.source).energy_uj
        self.total_uj += counter_delta(self.last, current, self.max_range)
        self.last = current


def discover_rapl_zones(root=POWERCAP_ROOT) -> List[Path]:
    """Top-level package zones only; subzones are already counted in them."""
    base = Path(root)
    if not base.is_dir():
        return []
    zones = []
    for path in sorted(base.glob("intel-rapl:*")):
        if path.name.count(":") == 1 and (path / "energy_uj").exists():
            zones.append(path)
    return zones


# ---------------------------------------------------------------------------
# power polling
# ---------------------------------------------------------------------------

def integrate_power_samples(samples: Sequence[Tuple[float, float]]) -> float:
    """Trapezoidal integral of (t_s, watts) samples, in Wh."""
    if len(samples) < 2:
        raise MeasurementError("need at least two power samples to integrate")
    joules = 0.0
    for (t0, p0), (t1, p1) in zip(samples, samples[1:]):
        if not t1 > t0:
            raise MeasurementError(f"power sample timestamps not strictly increasing ({t0} -> {t1})")
        joules += 0.5 * (p0 + p1) * (t1 - t0)
    return joules / 3600.0


def _load_nvml():
    try:
        import pynvml  # type: ignore
    except ImportError:
        return None
    try:
        pynvml.nvmlInit()
        if pynvml.nvmlDeviceGetCount() < 1:
            return None
    except Exception as exc:  # NVML raises its own error hierarchy
        log.info("NVML unavailable: %s", exc)
        return None
    return pynvml


# ---------------------------------------------------------------------------
# backend components
# ---------------------------------------------------------------------------

class _Component:
    backend = Backend.TDP
    name = "component"

    def start(self, t: float) -> None:
        pass

    def sample(self, t: float) -> None:
        pass

    def stop(self, t: float) -> float:
        raise NotImplementedError


class RaplComponent(_Component):
    backend = Backend.HWCOUNTERS
    name = "rapl"

    def __init__(self, zones: Sequence[Path]):
        self.zones = list(zones)
        self.accumulators: List[CounterAccumulator] = []

    def start(self, t: float) -> None:
        self.accumulators = [CounterAccumulator(z) for z in self.zones]

    def sample(self, t: float) -> None:
        for acc in self.accumulators:
            acc.sample()

    def stop(self, t: float) -> float:
        self.sample(t)
        return sum(acc.total_uj for acc in self.accumulators) / 3.6e9


class NvmlComponent(_Component):
    backend = Backend.HWCOUNTERS
    name = "nvml"

    def __init__(self, nvml):
        self.nvml = nvml
        self.handles = [nvml.nvmlDeviceGetHandleByIndex(i) for i in range(nvml.nvmlDeviceGetCount())]
        self.samples: List[Tuple[float, float]] = []

    def _power_w(self) -> float:
        return sum(self.nvml.nvmlDeviceGetPowerUsage(h) for h in self.handles) / 1000.0

    def start(self, t: float) -> None:
        self.samples = [(t, self._power_w())]

    def sample(self, t: float) -> None:
        if t > self.samples[-1][0]:
            self.samples.append((t, self._power_w()))

    def stop(self, t: float) -> float:
        self.sample(t)
        if len(self.samples) < 2:
            # session shorter than clock resolution
            return 0.0
        return integrate_power_samples(self.samples)


class TdpComponent(_Component):
    backend = Backend.TDP
    name = "tdp"

    def __init__(self, spec: HardwareSpec):
        self.spec = spec
        self.t0 = 0.0

    def start(self, t: float) -> None:
        self.t0 = t

    def stop(self, t: float) -> float:
        return self.spec.tdp_w * (t - self.t0) / 3600.0


def select_components(
    config: TrackerConfig,
    spec: Optional[HardwareSpec],
    powercap_root=POWERCAP_ROOT,
    nvml_loader: Callable = _load_nvml,
) -> List[_Component]:
    """Walk the fallback chain for the configured device."""
    prefs = config.backend_preference
    counters_ok = Backend.HWCOUNTERS in prefs
    tdp_ok = Backend.TDP in prefs and spec is not None

    rapl = None
    if counters_ok:
        zones = []
        for zone in discover_rapl_zones(powercap_root):
            try:
                read_cumulative_counter(zone)
            except OSError as exc:
                log.warning("RAPL zone %s unreadable (%s); trying next backend", zone, exc)
                continue
            zones.append(zone)
        rapl = RaplComponent(zones) if zones else None

    if spec is not None and spec.kind is HardwareKind.GPU:
        nvml = nvml_loader() if counters_ok else None
        if nvml is not None:
            device: Optional[_Component] = NvmlComponent(nvml)
        elif tdp_ok:
            device = TdpComponent(spec)
        else:
            device = None
        if device is None:
            raise ConfigurationError(f"no usable backend for accelerator {config.hardware_id!r}")
        return [device] + ([rapl] if rapl is not None else [])

    if rapl is not None:
        return [rapl]
    if tdp_ok:
        return [TdpComponent(spec)]
    raise ConfigurationError(
        f"no energy counters available and hardware id {config.hardware_id!r} has no TDP entry"
    )


def weakest_backend(components: Sequence[_Component]) -> Backend:
    return min((c.backend for c in components), key=BACKEND_QUALITY.__getitem__)


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------

_session_lock = threading.Lock()


class Session:
    """One active measurement; create with :func:`start_session`."""

    def __init__(
        self,
        config: TrackerConfig,
        components: List[_Component],
        spec: Optional[HardwareSpec],
        grid_intensity: Optional[float],
        clock: Callable[[], float],
    ):
        self.config = config
        self.components = components
        self.spec = spec
        self.grid_intensity = grid_intensity
        self.clock = clock
        self.active = False
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._lock = threading.Lock()
        self.t0 = 0.0

    @property
    def backend(self) -> Backend:
        return weakest_backend(self.components)

    def _begin(self) -> None:
        self.t0 = self.clock()
        for c in self.components:
            c.start(self.t0)
        self.active = True
        if any(c.backend is Backend.HWCOUNTERS for c in self.components):
            self._thread = threading.Thread(target=self._run_sampler, name="aet-sampler", daemon=True)
            self._thread.start()

    def _run_sampler(self) -> None:
        interval = self.config.sample_interval_ms / 1000.0
        while not self._stop.wait(interval):
            with self._lock:
                t = self.clock()
                for c in self.components:
                    c.sample(t)

    def _halt(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        self.active = False
        _session_lock.release()

    def abort(self) -> None:
        if self.active:
            self._halt()

    def stop(self, n_items: Optional[int] = None) -> EnergyReading:
        if not self.active:
            raise MeasurementError("session is not active")
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        try:
            t1 = self.clock()
            duration = t1 - self.t0
            if not duration > 0:
                raise MeasurementError(
                    f"non-positive session duration {duration!r} s (start {self.t0!r}, stop {t1!r})"
                )
            with self._lock:
                raw_wh = sum(c.stop(t1) for c in self.components)
        finally:
            self._halt()

        cfg = self.config
        energy_wh = raw_wh * cfg.pue
        co2_op = to_carbon(energy_wh, self.grid_intensity) if self.grid_intensity is not None else 0.0
        co2_emb = 0.0
        if cfg.report_embodied:
            co2_emb = self.spec.embodied_g * duration / self.spec.lifetime_s
        return EnergyReading.build(
            label=cfg.label,
            energy_wh=energy_wh,
            duration_s=duration,
            backend_used=self.backend,
            hardware_id=cfg.hardware_id,
            co2_g_operational=co2_op,
            co2_g_embodied=co2_emb,
            pue=cfg.pue,
            n_items=n_items,
            country_iso_code=cfg.country_iso_code,
            provenance={
                "components": [c.name for c in self.components],
                "raw_energy_wh": raw_wh,
                "grid_intensity_g_per_kwh": self.grid_intensity,
            },
        )


def start_session(
    config: TrackerConfig,
    *,
    hardware: Optional[HardwareTable] = None,
    grid_table=None,
    powercap_root=POWERCAP_ROOT,
    nvml_loader: Callable = _load_nvml,
    clock: Callable[[], float] = time.monotonic,
) -> Session:
    """Pick backends and start measuring. One session per process."""
    table = hardware if hardware is not None else HardwareTable.load()
    spec = table.get(config.hardware_id)
    if config.report_embodied and spec is None:
        raise ConfigurationError(f"report_embodied needs a known hardware id, got {config.hardware_id!r}")
    components = select_components(config, spec, powercap_root, nvml_loader)

    grid_intensity = None
    if config.country_iso_code:
        grid_intensity = load_grid_intensity(config.country_iso_code, grid_table)
    else:
        log.info("no country_iso_code; operational carbon reported as 0")

    if not _session_lock.acquire(blocking=False):
        raise MeasurementError("another measurement session is already active in this process")
    session = Session(config, components, spec, grid_intensity, clock)
    try:
        session._begin()
    except BaseException:
        _session_lock.release()
        raise
    return session


def stop_session(session: Session, n_items: Optional[int] = None) -> EnergyReading:
    return session.stop(n_items)


class EnergyTracker:
    """Context manager producing an :class:`EnergyReading` on exit."""

    def __init__(self, label: str, pue: float = 1.0, hardware_id: str = "generic-cpu",
                 report_embodied: bool = False, country_iso_code: Optional[str] = None,
                 sample_interval_ms: int = 100,
                 backend_preference: Sequence = (Backend.HWCOUNTERS, Backend.TDP),
                 **session_kwargs):
        self.config = TrackerConfig(
            label=label, pue=pue, hardware_id=hardware_id, report_embodied=report_embodied,
            country_iso_code=country_iso_code, sample_interval_ms=sample_interval_ms,
            backend_preference=tuple(backend_preference),
        )
        self.session_kwargs = session_kwargs
        self.n_items: Optional[int] = None
        self.reading: Optional[EnergyReading] = None
        self._session: Optional[Session] = None

    def __enter__(self) -> "EnergyTracker":
        self._session = start_session(self.config, **self.session_kwargs)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        self.reading = self._session.stop(self.n_items)
        return False


def run_wrapped(
    config: TrackerConfig,
    command: Sequence[str],
    n_items: Optional[int] = None,
    **session_kwargs,
) -> Tuple[EnergyReading, int]:
    """Measure a child process; the reading is produced even if it fails."""
    if not command:
        raise ValidationError("command must not be empty")
    session = start_session(config, **session_kwargs)
    try:
        proc = subprocess.Popen(list(command))
    except OSError as exc:
        session.abort()
        raise MeasurementError(f"could not start {command[0]!r}: {exc}") from exc
    try:
        status = proc.wait()
    except BaseException:
        proc.kill()
        proc.wait()
        session.abort()
        raise
    reading = session.stop(n_items)
    reading.provenance["exit_status"] = status
    reading.provenance["failed"] = status != 0
    return reading, status


# ---------------------------------------------------------------------------
# external estimator import
# ---------------------------------------------------------------------------

_ENERGY_FIELDS = ("energy_consumed", "energy_wh")


def _parse_external(path: Path) -> Tuple[Dict[str, str], int]:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
        if isinstance(data, list):
            if not data:
                raise ValidationError(f"{path}: empty record list")
            data = data[-1]
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: expected a JSON object")
        return data, 1
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return rows[-1], len(rows) + 1


def import_external_reading(
    path,
    *,
    label: Optional[str] = None,
    hardware_id: Optional[str] = None,
    pue: float = 1.0,
    country_iso_code: Optional[str] = None,
    grid_intensity: Optional[float] = None,
    report_embodied: bool = False,
    hardware: Optional[HardwareTable] = None,
    grid_table=None,
) -> EnergyReading:
    """Convert an external estimator's output file into a reading.

    Accepted layout (CSV with a header, or a JSON object / list of
    objects; the last record wins): ``duration`` in seconds, energy as
    ``energy_consumed`` in kWh and/or ``energy_wh`` in Wh, optional
    ``emissions`` in kg CO2e, ``country_iso_code``, ``project_name``,
    ``pue``, ``n_items`` and ``hardware_id``.

    A ``pue`` column means the source already applied it, so ``pue`` is
    not applied again. A source ``emissions`` figure is kept as the
    operational carbon; otherwise carbon is computed from the grid
    intensity.
    """
    path = Path(path)
    record, line = _parse_external(path)

    def number(key: str) -> Optional[float]:
        raw = record.get(key)
        if raw is None or raw == "":
            return None
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ValidationError(f"{path}: line {line}: field {key!r}: cannot parse {raw!r}") from None

    duration = number("duration")
    if duration is None:
        raise ValidationError(f"{path}: line {line}: missing field 'duration'")
    kwh, wh = number("energy_consumed"), number("energy_wh")
    if kwh is None and wh is None:
        raise ValidationError(f"{path}: line {line}: missing energy field (one of {_ENERGY_FIELDS})")
    if kwh is not None and wh is not None and abs(kwh * 1000.0 - wh) > 1e-9 * max(abs(wh), 1e-12):
        raise ValidationError(
            f"{path}: line {line}: conflicting energy fields energy_consumed={kwh} kWh and energy_wh={wh} Wh"
        )
    energy_wh = wh if wh is not None else kwh * 1000.0

    source_pue = number("pue")
    applied_pue = source_pue if source_pue is not None else pue
    if source_pue is None:
        energy_wh *= pue

    country = country_iso_code or (record.get("country_iso_code") or None)
    if grid_intensity is None and country:
        grid_intensity = load_grid_intensity(country, grid_table)

    emissions_kg = number("emissions")
    provenance: Dict[str, object] = {"source_file": str(path), "scenario_intensity_g_per_kwh": grid_intensity}
    if emissions_kg is not None:
        co2_op = emissions_kg * 1000.0
        source_kwh = (wh / 1000.0) if wh is not None else kwh
        provenance["source_intensity_g_per_kwh"] = co2_op / source_kwh if source_kwh else None
    else:
        co2_op = to_carbon(energy_wh, grid_intensity) if grid_intensity is not None else 0.0

    hw_id = hardware_id or record.get("hardware_id") or "generic-cpu"
    co2_emb = 0.0
    if report_embodied:
        table = hardware if hardware is not None else HardwareTable.load()
        spec = table[hw_id]
        co2_emb = spec.embodied_g * duration / spec.lifetime_s

    n_items = number("n_items")
    return EnergyReading.build(
        label=label or record.get("project_name") or path.stem,
        energy_wh=energy_wh,
        duration_s=duration,
        backend_used=Backend.IMPORTED,
        hardware_id=hw_id,
        co2_g_operational=co2_op,
        co2_g_embodied=co2_emb,
        pue=applied_pue,
        n_items=None if n_items is None else int(n_items),
        country_iso_code=country,
        provenance=provenance,
    )
