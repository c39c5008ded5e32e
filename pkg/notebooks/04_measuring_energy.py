# %% [markdown]
# # Measuring a workload
#
# The tracker reads hardware energy counters when the platform exposes
# them and falls back to rated power times wall time otherwise. Each
# reading records which backend produced its number.

# %%
import sys
import tempfile
from pathlib import Path

from aet.model import EnergyReading
from aet.tracker import EnergyTracker, TrackerConfig, import_external_reading, run_wrapped

# %%
with EnergyTracker(label="toy-loop", pue=1.4, hardware_id="generic-cpu",
                   report_embodied=True, country_iso_code="FRA") as t:
    total = sum(i * i for i in range(2_000_000))
    t.n_items = 2_000_000
r = t.reading
print(r.backend_used.value, f"{r.energy_wh:.3e} Wh", f"{r.co2_g_total:.3e} g", f"{r.throughput_items_per_s:.3e} items/s")

# %% [markdown]
# Wrapping a child process works the same way; its exit status is
# returned next to the reading.

# %%
reading, status = run_wrapped(TrackerConfig("sleep", hardware_id="generic-cpu"),
                              [sys.executable, "-c", "import time; time.sleep(0.5)"])
print(status, reading.to_json(indent=2))

# %% [markdown]
# Files written by an external estimator can be imported. Emission
# figures in the file are kept as they are.

# %%
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "emissions.csv"
    path.write_text("project_name,duration,energy_consumed,emissions,country_iso_code\n"
                    "train,3600,0.1052,0.0063,FRA\n")
    imported = import_external_reading(path, hardware_id="nvidia-h100", report_embodied=True)
    print(imported.to_dict())
    assert EnergyReading.from_json(imported.to_json()) == imported
