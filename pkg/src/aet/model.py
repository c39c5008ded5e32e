"""Domain types, shipped data tables and unit conventions.

Internal units are fixed: energy in Wh, power in W, time in s, carbon in
g CO2e, grid intensity in g/kWh. Fabrication carbon is stored in kg as
published and exposed in grams through :attr:`HardwareSpec.embodied_g`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

SECONDS_PER_YEAR = 365.25 * 24 * 3600
DEFAULT_PUE = 1.4
DEFAULT_EPSILON_WH = 1e-3
DEFAULT_LIFETIME_YEARS = 5.0

# +inf is the single representation of an unbounded threshold; it sorts
# above every finite value and serializes as the string "infinity".
UNBOUNDED = math.inf
UNBOUNDED_JSON = "infinity"

PathLike = Union[str, Path]


class AETError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(AETError, ValueError):
    """An input violates a documented precondition or invariant."""


class ConfigurationError(AETError):
    """A scenario, table or tracker configuration cannot be used."""


class MeasurementError(AETError):
    """A measurement could not be taken or is internally inconsistent."""


class Backend(str, Enum):
    HWCOUNTERS = "hwcounters"
    TDP = "tdp"
    IMPORTED = "imported"


# Lower rank = weaker measurement quality.
BACKEND_QUALITY = {Backend.TDP: 0, Backend.IMPORTED: 1, Backend.HWCOUNTERS: 2}


class HardwareKind(str, Enum):
    GPU = "gpu"
    CPU = "cpu"
    SOC = "soc"


class Unit(str, Enum):
    ENERGY_WH = "energy_wh"
    CARBON_G = "carbon_g"
    MONEY = "money"

    @classmethod
    def parse(cls, text: str) -> "Unit":
        if isinstance(text, cls):
            return text
        aliases = {"energy": cls.ENERGY_WH, "carbon": cls.CARBON_G, "cost": cls.MONEY}
        key = str(text).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown unit {text!r}") from None


class SolverMode(str, Enum):
    BATCHED_ACCELERATOR = "batched_accelerator"
    SERIAL_HOST = "serial_host"


def _rel_close(a: float, b: float, rel: float = 1e-9) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1e-300)


def is_unbounded(value: float) -> bool:
    return math.isinf(value) and value > 0


def encode_number(value: float) -> Union[float, str]:
    """JSON-safe encoding of a possibly unbounded value."""
    return UNBOUNDED_JSON if is_unbounded(value) else float(value)


def decode_number(value: Union[float, int, str]) -> float:
    if isinstance(value, str):
        if value.strip().lower() in (UNBOUNDED_JSON, "inf", "+inf"):
            return UNBOUNDED
        return float(value)
    return float(value)


def format_sci(value: float) -> str:
    """Three significant digits in scientific notation, "infinity" for +inf."""
    if is_unbounded(value):
        return UNBOUNDED_JSON
    return f"{value:.2e}"


# ---------------------------------------------------------------------------
# order statistics with +inf support
# ---------------------------------------------------------------------------

def quantile(values: Iterable[float], q: float) -> float:
    """Linear-interpolation quantile (numpy's default) tolerant of +inf.

    Infinite values sort above all finite ones. If interpolation touches an
    infinite order statistic the result is +inf rather than nan.
    """
    data = sorted(float(v) for v in values)
    if not data:
        raise ValidationError("quantile of an empty sequence")
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"quantile level {q} outside [0, 1]")
    pos = q * (len(data) - 1)
    lo = math.floor(pos)
    hi = math.ceil(pos)
    frac = pos - lo
    if lo == hi or frac == 0.0:
        return data[lo]
    if math.isinf(data[lo]) or math.isinf(data[hi]):
        return UNBOUNDED
    return data[lo] + (data[hi] - data[lo]) * frac


def median(values: Iterable[float]) -> float:
    """Median; even-length inputs average the central pair."""
    return quantile(values, 0.5)


def iqr(values: Iterable[float]) -> Tuple[float, float]:
    data = list(values)
    return quantile(data, 0.25), quantile(data, 0.75)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

READING_KEYS = (
    "label",
    "energy_wh",
    "co2_g_operational",
    "co2_g_embodied",
    "co2_g_total",
    "duration_s",
    "n_items",
    "throughput_items_per_s",
    "backend_used",
    "hardware_id",
    "pue",
    "country_iso_code",
)
_OPTIONAL_READING_KEYS = ("n_items", "throughput_items_per_s", "country_iso_code")


@dataclass(frozen=True)
class EnergyReading:
    """One measurement session.

    ``energy_wh`` is operational energy with ``pue`` already applied.
    ``provenance`` carries diagnostics (child exit status, imported
    intensities); it is not part of the JSON record and is ignored by
    equality.
    """

    label: str
    energy_wh: float
    co2_g_operational: float
    co2_g_embodied: float
    co2_g_total: float
    duration_s: float
    backend_used: Backend
    hardware_id: str
    pue: float = 1.0
    n_items: Optional[int] = None
    throughput_items_per_s: Optional[float] = None
    country_iso_code: Optional[str] = None
    provenance: Dict[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "backend_used", Backend(self.backend_used))
        if not self.energy_wh >= 0:
            raise ValidationError(f"energy_wh must be >= 0, got {self.energy_wh}")
        if not self.duration_s > 0:
            raise ValidationError(f"duration_s must be > 0, got {self.duration_s}")
        if not self.pue >= 1:
            raise ValidationError(f"pue must be >= 1, got {self.pue}")
        if not _rel_close(self.co2_g_total, self.co2_g_operational + self.co2_g_embodied):
            raise ValidationError("co2_g_total must equal co2_g_operational + co2_g_embodied")
        if (self.n_items is None) != (self.throughput_items_per_s is None):
            raise ValidationError("throughput_items_per_s is present iff n_items is present")
        if self.n_items is not None:
            if self.n_items < 0:
                raise ValidationError("n_items must be >= 0")
            if not _rel_close(self.throughput_items_per_s, self.n_items / self.duration_s):
                raise ValidationError("throughput_items_per_s must equal n_items / duration_s")

    @classmethod
    def build(
        cls,
        label: str,
        energy_wh: float,
        duration_s: float,
        backend_used: Union[Backend, str],
        hardware_id: str,
        *,
        co2_g_operational: float = 0.0,
        co2_g_embodied: float = 0.0,
        pue: float = 1.0,
        n_items: Optional[int] = None,
        country_iso_code: Optional[str] = None,
        provenance: Optional[Dict[str, object]] = None,
    ) -> "EnergyReading":
        """Construct a reading, deriving the total and the throughput."""
        if not duration_s > 0:
            raise ValidationError(f"duration_s must be > 0, got {duration_s!r}")
        throughput = None if n_items is None else n_items / duration_s
        return cls(
            label=label,
            energy_wh=energy_wh,
            co2_g_operational=co2_g_operational,
            co2_g_embodied=co2_g_embodied,
            co2_g_total=co2_g_operational + co2_g_embodied,
            duration_s=duration_s,
            backend_used=Backend(backend_used),
            hardware_id=hardware_id,
            pue=pue,
            n_items=n_items,
            throughput_items_per_s=throughput,
            country_iso_code=country_iso_code,
            provenance=dict(provenance or {}),
        )

    @property
    def per_item_energy_wh(self) -> float:
        if not self.n_items:
            raise ValidationError(f"reading {self.label!r} has no n_items; per-instance energy undefined")
        return self.energy_wh / self.n_items

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {}
        for key in READING_KEYS:
            value = getattr(self, key)
            if value is None and key in _OPTIONAL_READING_KEYS:
                continue
            if isinstance(value, Enum):
                value = value.value
            out[key] = value
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "EnergyReading":
        unknown = set(data) - set(READING_KEYS)
        if unknown:
            raise ValidationError(f"unknown EnergyReading keys: {sorted(unknown)}")
        missing = [k for k in READING_KEYS if k not in data and k not in _OPTIONAL_READING_KEYS]
        if missing:
            raise ValidationError(f"missing EnergyReading keys: {missing}")
        for key in _OPTIONAL_READING_KEYS:
            if key in data and data[key] is None:
                raise ValidationError(f"optional key {key!r} must be omitted, not null")
        n_items = data.get("n_items")
        return cls(
            label=str(data["label"]),
            energy_wh=float(data["energy_wh"]),
            co2_g_operational=float(data["co2_g_operational"]),
            co2_g_embodied=float(data["co2_g_embodied"]),
            co2_g_total=float(data["co2_g_total"]),
            duration_s=float(data["duration_s"]),
            backend_used=Backend(data["backend_used"]),
            hardware_id=str(data["hardware_id"]),
            pue=float(data["pue"]),
            n_items=None if n_items is None else int(n_items),
            throughput_items_per_s=(
                None if data.get("throughput_items_per_s") is None
                else float(data["throughput_items_per_s"])
            ),
            country_iso_code=data.get("country_iso_code"),
        )

    @classmethod
    def from_json(cls, text: str) -> "EnergyReading":
        return cls.from_dict(json.loads(text))

    def save(self, path: PathLike) -> None:
        Path(path).write_text(self.to_json(indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: PathLike) -> "EnergyReading":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class HardwareSpec:
    id: str
    kind: HardwareKind
    embodied_kg: float
    tdp_w: float
    lifetime_years: float = DEFAULT_LIFETIME_YEARS
    source: str = ""

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", HardwareKind(str(self.kind).lower()))
        except ValueError:
            raise ValidationError(f"unknown hardware kind {self.kind!r} for {self.id!r}") from None
        for name in ("embodied_kg", "tdp_w", "lifetime_years"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{self.id}: {name} must be > 0")

    @property
    def embodied_g(self) -> float:
        return self.embodied_kg * 1000.0

    @property
    def lifetime_s(self) -> float:
        return self.lifetime_years * SECONDS_PER_YEAR


@dataclass(frozen=True)
class SolverProfile:
    """Per-instance behaviour of one solver configuration.

    ``pue_applied`` marks energies that already carry a PUE factor, so the
    scenario's PUE is not applied a second time.
    """

    name: str
    per_instance_energy_wh: float
    throughput_inst_per_s: float
    hardware_id: str = "generic-cpu"
    mode: SolverMode = SolverMode.SERIAL_HOST
    batch_size: Optional[int] = None
    cost_samples: Optional[Tuple[Tuple[float, float], ...]] = None
    gap_override: Optional[float] = None
    pue_applied: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", SolverMode(self.mode))
        if not self.per_instance_energy_wh > 0:
            raise ValidationError(f"{self.name}: per_instance_energy_wh must be > 0")
        if not self.throughput_inst_per_s > 0:
            raise ValidationError(f"{self.name}: throughput_inst_per_s must be > 0")
        if self.cost_samples is not None:
            samples = tuple((float(c), float(r)) for c, r in self.cost_samples)
            for _, ref in samples:
                if not ref > 0:
                    raise ValidationError(f"{self.name}: reference_cost must be > 0")
            object.__setattr__(self, "cost_samples", samples)

    @property
    def gap(self) -> float:
        """Mean relative gap; ``gap_override`` wins, no samples means 0."""
        if self.gap_override is not None:
            return float(self.gap_override)
        if not self.cost_samples:
            return 0.0
        from .accounting import optimality_gap

        return optimality_gap(self.cost_samples)


@dataclass(frozen=True)
class TrainingProfile:
    per_seed_energy_wh: Tuple[float, ...]
    pue_applied: bool = False

    def __post_init__(self):
        values = tuple(float(v) for v in self.per_seed_energy_wh)
        if not values:
            raise ValidationError("training profile needs at least one seed")
        if any(not v > 0 for v in values):
            raise ValidationError("every per-seed training energy must be > 0")
        object.__setattr__(self, "per_seed_energy_wh", values)

    @property
    def median_wh(self) -> float:
        return median(self.per_seed_energy_wh)

    @property
    def iqr_wh(self) -> Tuple[float, float]:
        return iqr(self.per_seed_energy_wh)


@dataclass(frozen=True)
class Scenario:
    """Comparison context shared by both solvers.

    ``epsilon`` is expressed in the scenario's unit. Left as ``None`` it
    defaults to 1e-3 Wh converted into that unit.
    """

    unit: Unit = Unit.ENERGY_WH
    delta: float = 0.0
    epsilon: Optional[float] = None
    pue: float = DEFAULT_PUE
    grid_intensity_g_per_kwh: float = 0.0
    unit_price_per_kwh: Optional[float] = None
    n_range: Tuple[float, float, int] = (1e2, 1e8, 200)
    include_embodied: bool = False
    include_training_embodied: bool = False

    def __post_init__(self):
        object.__setattr__(self, "unit", Unit.parse(self.unit) if isinstance(self.unit, str) else self.unit)
        if not self.delta >= 0:
            raise ValidationError("delta must be >= 0")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("epsilon must be > 0")
        if not self.pue >= 1:
            raise ValidationError("pue must be >= 1")
        if not self.grid_intensity_g_per_kwh >= 0:
            raise ValidationError("grid intensity must be >= 0")
        if self.unit_price_per_kwh is not None and not self.unit_price_per_kwh >= 0:
            raise ValidationError("unit price must be >= 0")
        n_min, n_max, points = self.n_range
        if not n_min >= 1 or not n_max > n_min or int(points) < 2:
            raise ValidationError(f"invalid n_range {self.n_range}")
        object.__setattr__(self, "n_range", (float(n_min), float(n_max), int(points)))
        if self.unit is Unit.MONEY and self.unit_price_per_kwh is None:
            raise ConfigurationError("unit=money requires unit_price_per_kwh")

    @property
    def epsilon_in_unit(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        if self.unit is Unit.ENERGY_WH:
            return DEFAULT_EPSILON_WH
        if self.unit is Unit.CARBON_G:
            eps = DEFAULT_EPSILON_WH * self.grid_intensity_g_per_kwh / 1000.0
        else:
            eps = DEFAULT_EPSILON_WH * self.unit_price_per_kwh / 1000.0
        if not eps > 0:
            raise ConfigurationError(
                "default epsilon converts to zero for this scenario; set epsilon explicitly"
            )
        return eps

    @classmethod
    def from_dict(cls, data: Mapping[str, object]) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        kwargs = dict(data)
        if "n_range" in kwargs:
            kwargs["n_range"] = tuple(kwargs["n_range"])
        return cls(**kwargs)


@dataclass(frozen=True, order=True)
class GridPoint:
    """One coordinate of the sensitivity grid.

    ``threads`` is the axis label ("1", "nproc/2", "nproc" or a literal
    count); ``thread_count`` is its resolved value.
    """

    batch_size: int
    delta: float
    threads: str
    hardware_id: str
    seed_index: int
    baseline_budget_s: Optional[float]
    thread_count: int = field(default=1, compare=False)

    @property
    def thread_mode(self) -> str:
        return "mono" if self.threads == "1" else "multi"


@dataclass
class EnvelopeResult:
    n: List[float]
    nn_band: List[Tuple[float, float]]
    base_band: List[Tuple[float, float]]
    crossovers: List[Tuple[str, str, float]]
    aet_interval: Optional[Tuple[float, float]]
    median_crossover: float


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------

def _data_path(name: str) -> Path:
    return Path(str(resources.files("aet") / "data" / name))


def _rows(path: Path) -> List[Dict[str, str]]:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        return list(data) if isinstance(data, list) else [dict(id=k, **v) for k, v in data.items()]
    return list(csv.DictReader(line for line in text.splitlines() if line.strip() and not line.startswith("#")))


def load_hardware_table(path: Optional[PathLike] = None) -> List[HardwareSpec]:
    """Load a hardware table (CSV or JSON); ``None`` loads the shipped one."""
    source = _data_path("hardware.csv") if path is None else Path(path)
    specs: List[HardwareSpec] = []
    seen = set()
    for row in _rows(source):
        spec = HardwareSpec(
            id=str(row["id"]).strip(),
            kind=str(row["kind"]).strip(),
            embodied_kg=float(row["embodied_kg"]),
            tdp_w=float(row["tdp_w"]),
            lifetime_years=float(row.get("lifetime_years") or DEFAULT_LIFETIME_YEARS),
            source=str(row.get("source") or ""),
        )
        if spec.id in seen:
            raise ValidationError(f"duplicate hardware id {spec.id!r}")
        seen.add(spec.id)
        specs.append(spec)
    return specs


class HardwareTable(Mapping[str, HardwareSpec]):
    """Read-only id -> spec mapping whose lookups fail loudly."""

    def __init__(self, specs: Sequence[HardwareSpec]):
        self._specs: Dict[str, HardwareSpec] = {}
        for spec in specs:
            if spec.id in self._specs:
                raise ValidationError(f"duplicate hardware id {spec.id!r}")
            self._specs[spec.id] = spec

    @classmethod
    def load(cls, path: Optional[PathLike] = None) -> "HardwareTable":
        return cls(load_hardware_table(path))

    def __getitem__(self, key: str) -> HardwareSpec:
        try:
            return self._specs[key]
        except KeyError:
            raise ConfigurationError(
                f"unknown hardware id {key!r}; known ids: {', '.join(sorted(self._specs))}"
            ) from None

    def __contains__(self, key) -> bool:
        return key in self._specs

    def get(self, key, default=None):
        return self._specs.get(key, default)

    def __iter__(self):
        return iter(self._specs)

    def __len__(self) -> int:
        return len(self._specs)


def load_grid_table(path: Optional[PathLike] = None) -> Dict[str, float]:
    """Shipped region table, optionally updated by an override file."""
    table: Dict[str, float] = {}
    for row in _rows(_data_path("grid_intensity.csv")):
        table[row["iso_code"].strip().upper()] = float(row["g_per_kwh"])
    if path is not None:
        override = Path(path)
        if override.suffix.lower() == ".json":
            items = json.loads(override.read_text(encoding="utf-8")).items()
        else:
            items = ((r["iso_code"], r["g_per_kwh"]) for r in _rows(override))
        for code, value in items:
            table[str(code).strip().upper()] = float(value)
    for code, value in table.items():
        if not value >= 0:
            raise ValidationError(f"grid intensity for {code} must be >= 0")
    return table


def load_grid_intensity(country_iso_code: str, overrides: Optional[PathLike] = None) -> float:
    table = load_grid_table(overrides)
    code = str(country_iso_code).strip().upper()
    if code not in table:
        raise ConfigurationError(
            f"unknown region {country_iso_code!r}; available: {', '.join(sorted(table))}"
        )
    return table[code]
