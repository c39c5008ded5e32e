# %% [markdown]
# # How the cumulative ratio settles
#
# Cumulative neural energy over cumulative heuristic energy is
# e_nn/e_base plus a training term that shrinks like 1/N. Facility
# overhead multiplies both sides, so it drops out.

# %%
from pathlib import Path

import numpy as np

from aet.asymptotics import (
    asymptotic_ratio,
    carbon_asymptotic_ratio,
    convergence_residual,
    ratio_at_n,
    sample_n,
)
from aet.model import HardwareTable
from aet.report import ratio_plot_data, render_svg

OUT = Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

e_train, e_nn, e_base = 105.2, 3.53e-5, 2.31e-2

# %%
n = sample_n(1e2, 1e8, 7)
for lam in (1.0, 1.4):
    print(lam, np.round(ratio_at_n(n, e_train, e_nn, e_base, lam), 6))
print("limit", asymptotic_ratio(e_nn, e_base))

# %% [markdown]
# The residual halves every time N doubles.

# %%
print(convergence_residual(1e4, e_train, e_base) / convergence_residual(2e4, e_train, e_base))

# %% [markdown]
# With fabrication carbon included, each side adds its own hardware's
# footprint spread over its lifetime at its own throughput. The limit
# is still training-independent but may now exceed one.

# %%
hw = HardwareTable.load()
gpu, cpu = hw["nvidia-h100"], hw["intel-xeon-8480"]
for ci in (0.0, 60.0, 700.0):
    r = carbon_asymptotic_ratio(e_nn, e_base, ci, gpu, cpu, tau_nn=8500.0, tau_base=0.1)
    print(f"CI {ci:5.0f} g/kWh -> carbon ratio {r:.3e}")

# a slow accelerator on a clean grid can lose on carbon
print(carbon_asymptotic_ratio(e_nn, e_base, 20.0, gpu, cpu, tau_nn=0.01, tau_base=1.0))

# %%
(OUT / "ratio.svg").write_text(render_svg(ratio_plot_data(e_train, e_nn, e_base)))
print("wrote", OUT / "ratio.svg")
