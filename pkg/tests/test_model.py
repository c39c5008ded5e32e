import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aet.model import (
    SECONDS_PER_YEAR,
    Backend,
    ConfigurationError,
    EnergyReading,
    HardwareTable,
    Scenario,
    SolverProfile,
    TrainingProfile,
    Unit,
    ValidationError,
    load_grid_intensity,
    load_hardware_table,
    median,
    quantile,
)

PUBLISHED_EMBODIED_KG = {
    "nvidia-v100": 130.0, "nvidia-a100": 150.0, "nvidia-h100": 200.0, "nvidia-h200": 215.0,
    "nvidia-b200": 400.0, "nvidia-gb200": 900.0, "amd-mi250x": 140.0, "amd-mi300x": 250.0,
    "amd-mi350x": 300.0, "nvidia-rtx-4090": 120.0, "intel-xeon-8480": 65.0,
    "amd-epyc-9965": 85.0, "apple-m1": 30.0, "apple-m3-max": 85.0, "apple-m4": 36.0,
    "apple-m5-max": 95.0, "generic-gpu": 150.0, "generic-cpu": 55.0,
}


class TestHardwareTable:
    def test_builtin_contains_every_published_row(self):
        table = HardwareTable.load()
        assert len(PUBLISHED_EMBODIED_KG) == 18
        for hw_id, kg in PUBLISHED_EMBODIED_KG.items():
            assert table[hw_id].embodied_kg == kg
            assert table[hw_id].lifetime_years == 5.0

    def test_published_lookups(self):
        table = HardwareTable.load()
        assert table["nvidia-h100"].embodied_kg == 200.0
        assert table["generic-cpu"].embodied_kg == 55.0

    def test_units_converted(self):
        spec = HardwareTable.load()["nvidia-a100"]
        assert spec.embodied_g == 150000.0
        assert spec.lifetime_s == 5 * 365.25 * 24 * 3600

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "hw.csv"
        path.write_text("id,kind,embodied_kg,tdp_w,lifetime_years,source\n"
                        "x,cpu,10,10,5,a\nx,gpu,20,20,5,b\n")
        with pytest.raises(ValidationError, match="duplicate hardware id 'x'"):
            load_hardware_table(path)

    def test_unknown_kind_rejected(self, tmp_path):
        path = tmp_path / "hw.csv"
        path.write_text("id,kind,embodied_kg,tdp_w,lifetime_years,source\nx,fpga,10,10,5,a\n")
        with pytest.raises(ValidationError, match="unknown hardware kind"):
            load_hardware_table(path)

    def test_json_table(self, tmp_path):
        path = tmp_path / "hw.json"
        path.write_text(json.dumps([{"id": "y", "kind": "soc", "embodied_kg": 40, "tdp_w": 15}]))
        (spec,) = load_hardware_table(path)
        assert spec.lifetime_years == 5.0

    def test_unknown_lookup_fails_loudly(self):
        table = HardwareTable.load()
        with pytest.raises(ConfigurationError, match="unknown hardware id"):
            table["nvidia-zz99"]
        assert table.get("nvidia-zz99") is None
        assert "nvidia-zz99" not in table


class TestGridIntensity:
    def test_regions(self):
        assert load_grid_intensity("FRA") == 60.0
        assert load_grid_intensity("POL") == 700.0
        assert load_grid_intensity("fra") == 60.0

    def test_unknown_region(self):
        with pytest.raises(ConfigurationError, match="unknown region") as exc:
            load_grid_intensity("ZZZ")
        assert "FRA" in str(exc.value) and "POL" in str(exc.value)

    def test_override_file(self, tmp_path):
        path = tmp_path / "grid.csv"
        path.write_text("iso_code,g_per_kwh\nDEU,380\nFRA,55\n")
        assert load_grid_intensity("DEU", path) == 380.0
        assert load_grid_intensity("FRA", path) == 55.0
        jpath = tmp_path / "grid.json"
        jpath.write_text(json.dumps({"SWE": 40}))
        assert load_grid_intensity("SWE", jpath) == 40.0


def test_year_constant():
    assert SECONDS_PER_YEAR == 31557600.0


# ---------------------------------------------------------------------------
# EnergyReading
# ---------------------------------------------------------------------------

def _reading(**kw):
    base = dict(label="x", energy_wh=1.5, duration_s=2.0, backend_used="tdp", hardware_id="generic-cpu",
                co2_g_operational=0.09, co2_g_embodied=0.01, pue=1.4, n_items=10, country_iso_code="FRA")
    base.update(kw)
    return EnergyReading.build(**base)


class TestEnergyReading:
    def test_derived_fields(self):
        r = _reading()
        assert r.co2_g_total == pytest.approx(0.1, rel=1e-12)
        assert r.throughput_items_per_s == 5.0
        assert r.backend_used is Backend.TDP

    def test_json_keys_exact(self):
        keys = set(_reading().to_dict())
        assert keys == {"label", "energy_wh", "co2_g_operational", "co2_g_embodied", "co2_g_total",
                        "duration_s", "n_items", "throughput_items_per_s", "backend_used",
                        "hardware_id", "pue", "country_iso_code"}

    def test_absent_optionals_omitted(self):
        d = _reading(n_items=None, country_iso_code=None).to_dict()
        assert "n_items" not in d and "throughput_items_per_s" not in d and "country_iso_code" not in d
        with pytest.raises(ValidationError, match="omitted"):
            EnergyReading.from_dict({**d, "n_items": None})

    @pytest.mark.parametrize("bad", [
        dict(energy_wh=-1.0),
        dict(duration_s=0.0),
        dict(pue=0.9),
    ])
    def test_invariants(self, bad):
        with pytest.raises(ValidationError):
            _reading(**bad)

    def test_total_must_add_up(self):
        d = _reading().to_dict()
        d["co2_g_total"] = 1.0
        with pytest.raises(ValidationError, match="co2_g_total"):
            EnergyReading.from_dict(d)

    def test_throughput_iff_items(self):
        d = _reading().to_dict()
        del d["throughput_items_per_s"]
        with pytest.raises(ValidationError, match="iff"):
            EnergyReading.from_dict(d)
        d = _reading().to_dict()
        d["throughput_items_per_s"] = 4.0
        with pytest.raises(ValidationError, match="n_items / duration_s"):
            EnergyReading.from_dict(d)

    def test_unknown_key(self):
        with pytest.raises(ValidationError, match="unknown"):
            EnergyReading.from_dict({**_reading().to_dict(), "foo": 1})

    @settings(max_examples=200, deadline=None)
    @given(
        energy=st.floats(0, 1e9, allow_nan=False),
        duration=st.floats(1e-6, 1e9, allow_nan=False),
        op=st.floats(0, 1e9, allow_nan=False),
        emb=st.floats(0, 1e9, allow_nan=False),
        pue=st.floats(1, 3, allow_nan=False),
        items=st.one_of(st.none(), st.integers(0, 10**9)),
        country=st.one_of(st.none(), st.sampled_from(["FRA", "POL"])),
        backend=st.sampled_from(list(Backend)),
        label=st.text(max_size=20),
    )
    def test_json_round_trip(self, energy, duration, op, emb, pue, items, country, backend, label):
        r = EnergyReading.build(label, energy, duration, backend, "generic-cpu",
                                co2_g_operational=op, co2_g_embodied=emb, pue=pue,
                                n_items=items, country_iso_code=country)
        back = EnergyReading.from_json(r.to_json())
        assert back == r
        assert back.to_dict() == r.to_dict()

    def test_save_load(self, tmp_path):
        r = _reading()
        r.save(tmp_path / "r.json")
        assert EnergyReading.load(tmp_path / "r.json") == r


# ---------------------------------------------------------------------------
# profiles and scenario
# ---------------------------------------------------------------------------

def _sorted_oracle_quantile(values, q):
    """Textbook type-7 quantile from a sorted copy."""
    xs = sorted(values)
    h = (len(xs) - 1) * q
    lo = int(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


class TestTrainingProfile:
    def test_reported_seed_median(self):
        tp = TrainingProfile((104.8, 105.2, 105.6, 104.9, 105.2))
        assert tp.median_wh == 105.2

    def test_even_median_is_mean_of_central_pair(self):
        assert TrainingProfile((1.0, 4.0, 2.0, 3.0)).median_wh == 2.5

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(1e-3, 1e6, allow_nan=False), min_size=1, max_size=50))
    def test_median_iqr_match_sort_oracle(self, values):
        tp = TrainingProfile(tuple(values))
        assert tp.median_wh == pytest.approx(_sorted_oracle_quantile(values, 0.5), rel=1e-12)
        lo, hi = tp.iqr_wh
        assert lo == pytest.approx(_sorted_oracle_quantile(values, 0.25), rel=1e-12)
        assert hi == pytest.approx(_sorted_oracle_quantile(values, 0.75), rel=1e-12)

    @pytest.mark.parametrize("values", [(), (1.0, 0.0), (-2.0,)])
    def test_invalid(self, values):
        with pytest.raises(ValidationError):
            TrainingProfile(values)


class TestMedianWithInfinity:
    def test_infinite_sorts_last(self):
        assert median([1.0, math.inf, 3.0]) == 3.0

    def test_lands_on_infinity(self):
        assert median([1.0, math.inf]) == math.inf
        assert median([math.inf, math.inf]) == math.inf
        assert quantile([1.0, 2.0, math.inf, math.inf], 0.75) == math.inf


class TestSolverProfile:
    def test_negative_gap_allowed(self):
        p = SolverProfile("s", 1.0, 1.0, cost_samples=((95.0, 100.0),))
        assert p.gap == pytest.approx(-0.05)

    def test_reference_must_be_positive(self):
        with pytest.raises(ValidationError):
            SolverProfile("s", 1.0, 1.0, cost_samples=((1.0, 0.0),))

    @pytest.mark.parametrize("field", ["per_instance_energy_wh", "throughput_inst_per_s"])
    def test_positive_fields(self, field):
        kw = {"per_instance_energy_wh": 1.0, "throughput_inst_per_s": 1.0, field: 0.0}
        with pytest.raises(ValidationError):
            SolverProfile("s", **kw)


class TestScenario:
    def test_defaults(self):
        s = Scenario()
        assert s.pue == 1.4
        assert s.epsilon_in_unit == 1e-3
        assert s.n_range == (1e2, 1e8, 200)

    def test_money_requires_price(self):
        with pytest.raises(ConfigurationError):
            Scenario(unit=Unit.MONEY)

    def test_epsilon_converted_for_other_units(self):
        assert Scenario(unit="carbon_g", grid_intensity_g_per_kwh=60).epsilon_in_unit == pytest.approx(6e-5)
        assert Scenario(unit="money", unit_price_per_kwh=0.25).epsilon_in_unit == pytest.approx(2.5e-7)

    @pytest.mark.parametrize("kw", [
        dict(epsilon=0.0), dict(pue=0.5), dict(delta=-0.1),
        dict(n_range=(0, 10, 5)), dict(n_range=(10, 10, 5)), dict(n_range=(1, 10, 1)),
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            Scenario(**kw)
