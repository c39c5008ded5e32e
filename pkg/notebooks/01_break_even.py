# %% [markdown]
# # Break-even volume for one neural/heuristic pair
#
# A learned solver pays a one-off training bill and then spends very little
# per instance. A heuristic pays nothing up front but more per instance.
# The break-even volume (AET) is where the two cumulative bills meet.

# %%
from pathlib import Path

from aet.accounting import (
    baseline_per_instance_energy,
    compute_aet,
    cumulative_energy,
    nn_per_instance_energy,
    to_carbon,
)
from aet.report import curves_plot_data, render_svg

OUT = Path(__file__).resolve().parent / "out"
OUT.mkdir(exist_ok=True)

# %% [markdown]
# Per-instance energy. The heuristic runs one instance at a time, so its
# cost is power times wall time. The accelerator amortizes its power over
# a whole batch.

# %%
e_base_mono = baseline_per_instance_energy(power_w=33.0, t_meta_s=60.0)
e_nn, tau = nn_per_instance_energy(power_w=300.0, batch=512, t_batch_s=0.0217)
print(f"heuristic, 60 s single thread: {e_base_mono:.3e} Wh per instance")
print(f"neural, B=512: {e_nn:.3e} Wh per instance at {tau:.0f} instances/s")

# %% [markdown]
# The reported medians: 105.2 Wh of training, 3.53e-5 Wh per neural
# instance, 2.31e-2 Wh per heuristic instance on all cores.

# %%
e_train, e_nn, e_base = 105.2, 3.53e-5, 2.31e-2
n_star = compute_aet(e_train, e_base, e_nn, epsilon=1e-3)
print(f"break-even after {n_star:.3e} instances")

# both curves agree at the break-even point, whatever the facility overhead
for pue in (1.0, 1.4, 2.0):
    print(pue, cumulative_energy(n_star, e_train, e_nn, pue), cumulative_energy(n_star, 0.0, e_base, pue))

# %% [markdown]
# When the heuristic is not more expensive per instance, or the neural
# solver misses the quality tolerance, there is no break-even at all.

# %%
print(compute_aet(e_train, e_nn, e_nn, 1e-3))
print(compute_aet(e_train, e_base, e_nn, 1e-3, feasible=False))

# %% [markdown]
# Carbon follows from energy through the grid intensity, so the same
# volume applies in grams when both sides share one grid.

# %%
print(f"training on a 700 g/kWh grid: {to_carbon(e_train, 700.0):.2f} g")

# %%
data = curves_plot_data(e_train, e_nn, e_base, pue=1.4)
(OUT / "curves.svg").write_text(render_svg(data))
print("wrote", OUT / "curves.svg")
