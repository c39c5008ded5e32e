import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aet.model import ConfigurationError, Scenario, ValidationError
from aet.sensitivity import (
    AXIS_ORDER,
    aggregate,
    build_grid,
    curves_from_results,
    envelope,
    evaluate_grid,
    evaluate_point,
    load_manifest,
    manifest_from_dict,
    parse_axes_spec,
    resolve_threads,
    results_from_csv,
    results_to_csv,
    summary,
    summary_to_json,
)

from conftest import E_NN, E_TRAIN, RATIO_1S, anchored_manifest, full_manifest

EPS = 1e-3


class TestGrid:
    def test_default_cardinality(self):
        assert len(build_grid(nproc=8)) == 5 * 5 * 3 * 4 * 5 * 6 == 9000

    def test_without_budgets(self):
        assert len(build_grid({"baseline_budget_s": None}, nproc=8)) == 1500

    def test_single_point(self):
        axes = {k: [v[0]] for k, v in zip(AXIS_ORDER, [[512], [0.0], ["1"], ["apple-m4"], [0], [10]])}
        (p,) = build_grid(axes, nproc=4)
        assert p.batch_size == 512 and p.thread_count == 1 and p.baseline_budget_s == 10.0

    def test_empty_axis(self):
        with pytest.raises(ConfigurationError, match="empty"):
            build_grid({"batch_size": []})

    def test_unknown_axis(self):
        with pytest.raises(ConfigurationError, match="unknown axis"):
            build_grid({"colour": [1]})

    def test_declared_order(self):
        grid = build_grid({"batch_size": [1, 32], "threads": ["1", "nproc/2", "nproc"],
                           "hardware_id": ["apple-m4"], "delta": [0.0], "seed_index": [0],
                           "baseline_budget_s": [1, 5]}, nproc=8)
        keys = [(p.batch_size, p.threads, p.baseline_budget_s) for p in grid]
        assert keys[:6] == [(1, "1", 1.0), (1, "1", 5.0), (1, "nproc/2", 1.0),
                            (1, "nproc/2", 5.0), (1, "nproc", 1.0), (1, "nproc", 5.0)]
        assert [p.thread_count for p in grid[:6:2]] == [1, 4, 8]

    def test_thread_labels(self):
        assert resolve_threads("nproc/2", 1) == 1
        assert resolve_threads("3", 8) == 3
        with pytest.raises(ConfigurationError):
            resolve_threads("many", 8)

    def test_parse_axes_spec(self):
        axes = parse_axes_spec("batch=1,512; budget=none ;delta=0,0.05")
        assert axes == {"batch_size": ["1", "512"], "baseline_budget_s": None, "delta": ["0", "0.05"]}
        assert len(build_grid(axes, nproc=2)) == 2 * 2 * 3 * 4 * 5
        with pytest.raises(ConfigurationError):
            parse_axes_spec("batch")


class TestManifest:
    def test_unknown_coordinate(self):
        data = anchored_manifest()
        data["baseline"][0]["baseline_budget_s"] = 7
        with pytest.raises(ValidationError, match="unknown baseline_budget_s"):
            manifest_from_dict(data)
        data = anchored_manifest()
        data["neural"][0]["hardware_id"] = "apple-m1"
        with pytest.raises(ValidationError, match="unknown hardware_id"):
            manifest_from_dict(data)

    def test_exactly_one_energy_source(self):
        data = anchored_manifest()
        data["neural"][0]["power_w"] = 300
        with pytest.raises(ValidationError, match="exactly one"):
            manifest_from_dict(data)

    def test_power_and_time_sources(self):
        data = anchored_manifest(budgets=[10.0])
        data["neural"][0] = {"batch_size": 512, "hardware_id": "nvidia-h100", "power_w": 300.0, "t_batch_s": 2.17}
        data["baseline"][0] = {"threads": "nproc", "baseline_budget_s": 10, "power_w": 36.0}
        m = manifest_from_dict(data)
        assert m.neural[0].profile.per_instance_energy_wh == pytest.approx(300 * 2.17 / 3600 / 512)
        assert m.neural[0].profile.throughput_inst_per_s == pytest.approx(512 / 2.17)
        assert m.baseline[0].profile.per_instance_energy_wh == pytest.approx(0.1)

    def test_entry_pue_removed(self):
        data = anchored_manifest(budgets=[10.0])
        data["baseline"][0]["per_instance_energy_wh"] = 1.4e-2
        data["baseline"][0]["pue"] = 1.4
        m = manifest_from_dict(data)
        assert m.baseline[0].profile.per_instance_energy_wh == pytest.approx(1e-2)

    def test_reading_source(self, tmp_path):
        from aet.model import EnergyReading

        EnergyReading.build("b", 28.0, 1000.0, "tdp", "generic-cpu", pue=1.4, n_items=1000).save(tmp_path / "b.json")
        data = anchored_manifest(budgets=[10.0])
        data["baseline"][0] = {"threads": "nproc", "baseline_budget_s": 10, "reading": "b.json"}
        (tmp_path / "m.json").write_text(json.dumps(data))
        m = load_manifest(tmp_path / "m.json")
        assert m.baseline[0].profile.per_instance_energy_wh == pytest.approx(0.02)
        assert m.baseline[0].profile.throughput_inst_per_s == pytest.approx(1.0)


class TestEvaluate:
    def _eval(self, budget, threads="nproc"):
        m = manifest_from_dict(anchored_manifest(threads=(threads,)))
        (p,) = build_grid({**m.axes, "baseline_budget_s": [budget]}, nproc=m.nproc)
        return evaluate_point(p, m, m.scenario)

    def test_one_second_anchor(self):
        r = self._eval(1.0)
        assert r.feasible
        assert r.crossover == pytest.approx(5.6e4, rel=0.05)
        assert r.ratio == pytest.approx(RATIO_1S, rel=1e-9)

    def test_infeasible_point(self):
        data = anchored_manifest()
        data["neural"][0]["gap"] = 0.06
        data["axes"]["delta"] = [0.05]
        m = manifest_from_dict(data)
        r = evaluate_point(build_grid(m.axes, nproc=8)[0], m, m.scenario)
        assert r.crossover == math.inf and not r.feasible and r.ratio > 0

    def test_delta_only_filters(self):
        data = anchored_manifest()
        data["neural"][0]["gap"] = 0.03
        data["axes"]["delta"] = [0.0, 0.05]
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        by_delta = {}
        for r in rs:
            by_delta.setdefault(r.point.delta, []).append(r)
        assert all(not r.feasible for r in by_delta[0.0])
        assert all(r.feasible for r in by_delta[0.05])
        for a, b in zip(by_delta[0.0], by_delta[0.05]):
            assert (a.e_nn_wh, a.e_base_wh, a.ratio) == (b.e_nn_wh, b.e_base_wh, b.ratio)

    def test_missing_data_is_explicit(self):
        data = anchored_manifest()
        data["axes"]["threads"] = ["1", "nproc"]
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        errors = [r for r in rs if not r.ok]
        assert len(errors) == 6 and all("no baseline data" in r.error for r in errors)
        agg = aggregate(rs)
        assert agg[("mono",)]["n_errors"] == 6 and "crossover" not in agg[("mono",)]

    def test_embodied_needs_throughput(self):
        data = anchored_manifest(budgets=[10.0])
        data["scenario"] = {"unit": "carbon_g", "grid_intensity_g_per_kwh": 60, "include_embodied": True}
        m = manifest_from_dict(data)
        r = evaluate_point(build_grid(m.axes, nproc=8)[0], m, m.scenario)
        assert not r.ok and "throughput" in r.error

    def test_full_default_grid(self):
        m = manifest_from_dict(full_manifest())
        rs = evaluate_grid(build_grid(nproc=m.nproc), m, Scenario())
        assert len(rs) == 9000 and all(r.ok for r in rs)
        agg = aggregate(rs, ("thread_mode", "baseline_budget_s"))
        assert len(agg) == 12
        # mono costs more per instance, so it amortizes sooner
        assert agg[("mono", 60.0)]["crossover"]["median"] < agg[("multi", 60.0)]["crossover"]["median"]

    def test_workers_and_determinism(self):
        m = manifest_from_dict(full_manifest())
        points = build_grid({"seed_index": [0, 1]}, nproc=m.nproc)
        a = evaluate_grid(points, m, Scenario())
        b = evaluate_grid(points, m, Scenario(), workers=4)
        assert [r.point for r in a] == points
        assert results_to_csv(a) == results_to_csv(b)
        assert summary_to_json(summary(a, Scenario())) == summary_to_json(summary(b, Scenario()))


class TestAggregate:
    def test_all_infinite_slice(self):
        data = anchored_manifest()
        data["neural"][0]["gap"] = 1.0
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        assert aggregate(rs)[("multi",)]["crossover"]["median"] == math.inf

    def test_grouping(self):
        m = manifest_from_dict(anchored_manifest())
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        agg = aggregate(rs, ("baseline_budget_s",))
        assert sorted(k[0] for k in agg) == [1.0, 5.0, 10.0, 30.0, 60.0, 120.0]
        assert all(v["n_points"] == 1 for v in agg.values())

    def test_empty(self):
        with pytest.raises(ValidationError):
            aggregate([])


def _pairwise_manifest(nn_energies, base_energies, e_train):
    batches = [1, 32, 128, 512, 1024][: len(nn_energies)]
    budgets = [1.0, 5.0, 10.0, 30.0, 60.0, 120.0][: len(base_energies)]
    return {
        "nproc": 4,
        "axes": {"batch_size": batches, "delta": [0.0], "threads": ["nproc"],
                 "hardware_id": ["nvidia-h100"], "seed_index": [0], "baseline_budget_s": budgets},
        "training": {"per_seed_energy_wh": [e_train]},
        "neural": [{"batch_size": b, "hardware_id": "nvidia-h100", "per_instance_energy_wh": e}
                   for b, e in zip(batches, nn_energies)],
        "baseline": [{"threads": "nproc", "baseline_budget_s": t, "per_instance_energy_wh": e}
                     for t, e in zip(budgets, base_energies)],
        "scenario": {"pue": 1.0},
    }


def _oracle(e_train, e_nn, e_base):
    if e_base <= e_nn:
        return math.inf
    return e_train / max(e_base - e_nn, EPS)


energies = st.floats(1e-5, 1.0)


class TestEnvelope:
    def _run(self, nn_e, base_e, e_train, pue=1.0):
        data = _pairwise_manifest(nn_e, base_e, e_train)
        data["scenario"]["pue"] = pue
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=4), m, m.scenario)
        return rs, envelope(rs, m.scenario), m.scenario

    def test_degenerate(self):
        _, env, _ = self._run([1e-4], [1e-2], 10.0)
        c = 10.0 / (1e-2 - 1e-4)
        assert env.aet_interval == (pytest.approx(c), pytest.approx(c))
        assert all(lo == hi for lo, hi in env.nn_band)
        assert all(lo == hi for lo, hi in env.base_band)

    def test_no_finite_crossover(self):
        _, env, _ = self._run([1e-2], [1e-3], 10.0)
        assert env.aet_interval is None
        assert env.median_crossover == math.inf

    @settings(max_examples=60, deadline=None)
    @given(nn_e=st.lists(energies, min_size=3, max_size=3),
           base_e=st.lists(energies, min_size=3, max_size=3),
           e_train=st.floats(1e-2, 1e3))
    def test_interval_matches_brute_force(self, nn_e, base_e, e_train):
        _, env, _ = self._run(nn_e, base_e, e_train)
        pairs = [_oracle(e_train, a, b) for a in nn_e for b in base_e]
        finite = [c for c in pairs if not math.isinf(c)]
        if not finite:
            assert env.aet_interval is None
        else:
            lo, hi = env.aet_interval
            assert lo == pytest.approx(min(finite), rel=1e-12)
            assert hi == pytest.approx(max(finite), rel=1e-12)
        assert len(env.crossovers) == 9

    @settings(max_examples=40, deadline=None)
    @given(nn_e=st.lists(energies, min_size=1, max_size=4),
           base_e=st.lists(energies, min_size=1, max_size=4),
           e_train=st.floats(1e-2, 1e3),
           pue=st.floats(1.0, 3.0))
    def test_containment(self, nn_e, base_e, e_train, pue):
        rs, env, _ = self._run(nn_e, base_e, e_train, pue)
        n = np.asarray(env.n)
        nn_curves, base_curves = curves_from_results(rs)
        for curves, band in ((nn_curves, env.nn_band), (base_curves, env.base_band)):
            lo = np.array([b[0] for b in band])
            hi = np.array([b[1] for b in band])
            for c in curves:
                v = c.at(n)
                assert np.all(v >= lo * (1 - 1e-12)) and np.all(v <= hi * (1 + 1e-12))

    @settings(max_examples=60, deadline=None)
    @given(nn_e=st.lists(st.floats(1e-6, 1e-4), min_size=1, max_size=3),
           base_e=st.lists(st.floats(2e-3, 1.0), min_size=1, max_size=3),
           e_train=st.floats(1e-1, 1e3))
    def test_uniform_verdicts_outside_interval(self, nn_e, base_e, e_train):
        # every pair amortizes with epsilon non-binding, so the lines really cross
        rs, env, _ = self._run(nn_e, base_e, e_train)
        lo, hi = env.aet_interval
        nn_curves, base_curves = curves_from_results(rs)
        for n in (lo * 0.999, lo / 10):
            assert min(c.at(n) for c in nn_curves) > max(c.at(n) for c in base_curves)
        for n in (hi * 1.001, hi * 10):
            assert max(c.at(n) for c in nn_curves) < min(c.at(n) for c in base_curves)

    def test_thread_mode_restricts_crossovers(self):
        data = anchored_manifest(threads=("1", "nproc"))
        for entry in data["baseline"]:
            if entry["threads"] == "1":
                entry["per_instance_energy_wh"] *= 5
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        multi = envelope(rs, m.scenario, thread_mode="multi")
        both = envelope(rs, m.scenario)
        assert len(multi.crossovers) == 6 and len(both.crossovers) == 12
        assert both.aet_interval[0] < multi.aet_interval[0]
        assert multi.nn_band == both.nn_band


class TestSerialization:
    def test_csv_round_trip(self):
        data = anchored_manifest()
        data["axes"]["delta"] = [0.0, 0.05]
        data["neural"][0]["gap"] = 0.03
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        text = results_to_csv(rs)
        assert "infinity" in text
        back = results_from_csv(text)
        assert results_to_csv(back) == text
        assert [r.crossover for r in back] == [r.crossover for r in rs]

    def test_summary_encodes_infinity(self):
        data = anchored_manifest()
        data["neural"][0]["gap"] = 1.0
        m = manifest_from_dict(data)
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        s = json.loads(summary_to_json(summary(rs, m.scenario)))
        assert s["median_crossover"] == "infinity"
        assert s["aet_interval"] is None
        assert s["by_thread_mode"]["multi"]["crossover"]["median"] == "infinity"

    def test_summary_fields(self):
        m = manifest_from_dict(anchored_manifest())
        rs = evaluate_grid(build_grid(m.axes, nproc=8), m, m.scenario)
        s = summary(rs, m.scenario)
        assert s["n_points"] == 6 and s["n_errors"] == 0
        assert s["epsilon"] == 1e-3 and s["unit"] == "energy_wh"
        lo, hi = s["aet_interval"]
        assert lo < hi
        assert E_TRAIN / (E_NN / RATIO_1S - E_NN) == pytest.approx(hi)
