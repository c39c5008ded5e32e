"""Amortized break-even analysis of neural versus heuristic solvers.

Energy, carbon and cost accounting; asymptotic ratios; sensitivity sweeps
with envelope bands; and an energy tracker for measuring workloads.
"""

__version__ = "0.1.0"

from .accounting import (  # noqa: E402
    baseline_per_instance_energy,
    compute_aet,
    cumulative_energy,
    embodied_carbon,
    feasibility,
    nn_per_instance_energy,
    optimality_gap,
    to_carbon,
    to_cost,
    total_carbon,
)
from .asymptotics import (  # noqa: E402
    asymptotic_ratio,
    carbon_asymptotic_ratio,
    convergence_residual,
    ratio_at_n,
)
from .model import (  # noqa: E402
    UNBOUNDED,
    EnergyReading,
    HardwareSpec,
    HardwareTable,
    Scenario,
    SolverProfile,
    TrainingProfile,
    load_grid_intensity,
    load_hardware_table,
)
from .tracker import EnergyTracker  # noqa: E402
