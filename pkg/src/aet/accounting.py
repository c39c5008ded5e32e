"""Per-instance energy models, optimality gap, AET and carbon accounting."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .model import (
    UNBOUNDED,
    ConfigurationError,
    HardwareSpec,
    Scenario,
    SolverProfile,
    Unit,
    ValidationError,
)

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _positive(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if not value > 0:
            raise ValidationError(f"{name} must be > 0, got {value}")


def baseline_per_instance_energy(power_w: float, t_meta_s: float) -> float:
    """Energy of one serial heuristic call, P * t / 3600 Wh."""
    _positive(power_w=power_w, t_meta_s=t_meta_s)
    return power_w * t_meta_s / 3600.0


def nn_per_instance_energy(power_w: float, batch: int, t_batch_s: float) -> Tuple[float, float]:
    """Throughput-amortized energy of batched inference.

    Returns ``(energy_wh, throughput_inst_per_s)``.
    """
    _positive(power_w=power_w, batch=batch, t_batch_s=t_batch_s)
    tau = batch / t_batch_s
    return power_w / (3600.0 * tau), tau


def optimality_gap(samples: Iterable[Tuple[float, float]]) -> float:
    """Mean of (cost - reference) / reference. Negative gaps are allowed."""
    pairs = list(samples)
    if not pairs:
        raise ValidationError("optimality_gap needs at least one (cost, reference) pair")
    total = 0.0
    for cost, ref in pairs:
        if not ref > 0:
            raise ValidationError(f"reference_cost must be > 0, got {ref}")
        total += (cost - ref) / ref
    return total / len(pairs)


def feasibility(gap_nn: float, gap_base: float, delta: float) -> bool:
    if not delta >= 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    return gap_nn <= gap_base + delta


def compute_aet(
    e_train: float,
    e_base_inst: float,
    e_nn_inst: float,
    epsilon: float,
    feasible: bool = True,
) -> float:
    """Deployment volume at which the neural solver breaks even.

    Works in any unit as long as all four quantities share it. Returns
    +inf when the quality constraint fails or the baseline is not more
    expensive per instance.
    """
    _positive(e_train=e_train, epsilon=epsilon)
    if not feasible or e_base_inst <= e_nn_inst:
        return UNBOUNDED
    return e_train / max(e_base_inst - e_nn_inst, epsilon)


def crossover_n(e_train: float, e_base_inst: float, e_nn_inst: float) -> float:
    """Exact intersection of the two cumulative curves, without epsilon."""
    if e_base_inst <= e_nn_inst:
        return UNBOUNDED
    return e_train / (e_base_inst - e_nn_inst)


def to_carbon(energy_wh: float, ci: float) -> float:
    if energy_wh < 0 or ci < 0:
        raise ValidationError("energy and intensity must be >= 0")
    return energy_wh / 1000.0 * ci


def to_cost(energy_wh: float, price_per_kwh: Optional[float]) -> float:
    if price_per_kwh is None:
        raise ConfigurationError("money unit requires unit_price_per_kwh")
    if energy_wh < 0 or price_per_kwh < 0:
        raise ValidationError("energy and price must be >= 0")
    return energy_wh / 1000.0 * price_per_kwh


def embodied_carbon(n: ArrayLike, tau: float, spec: HardwareSpec) -> ArrayLike:
    """Fabrication carbon (g) attributed to ``n`` instances at throughput ``tau``."""
    _positive(tau=tau)
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ValidationError("n must be >= 0")
    # utilization fraction first, so full lifetime gives exactly embodied_g
    out = spec.embodied_g * (n_arr / tau / spec.lifetime_s)
    return float(out) if out.ndim == 0 else out


def embodied_per_instance(tau: float, spec: HardwareSpec) -> float:
    return embodied_carbon(1.0, tau, spec)


def effective_energy(energy_wh: float, scenario: Scenario, pue_applied: bool = False) -> float:
    """Operational energy with the scenario's PUE, unless already applied."""
    return energy_wh if pue_applied else energy_wh * scenario.pue


def energy_to_unit(energy_wh: float, scenario: Scenario) -> float:
    if scenario.unit is Unit.ENERGY_WH:
        return energy_wh
    if scenario.unit is Unit.CARBON_G:
        return to_carbon(energy_wh, scenario.grid_intensity_g_per_kwh)
    return to_cost(energy_wh, scenario.unit_price_per_kwh)


def per_instance_in_unit(
    profile: SolverProfile,
    scenario: Scenario,
    spec: Optional[HardwareSpec] = None,
) -> float:
    """Marginal cost of one instance in the scenario's unit.

    The embodied term is added only for the carbon unit with
    ``include_embodied`` set, and the same rule applies to either side.
    """
    energy = effective_energy(profile.per_instance_energy_wh, scenario, profile.pue_applied)
    value = energy_to_unit(energy, scenario)
    if scenario.unit is Unit.CARBON_G and scenario.include_embodied:
        if spec is None:
            raise ConfigurationError(f"{profile.name}: include_embodied needs a hardware spec")
        value += embodied_per_instance(profile.throughput_inst_per_s, spec)
    return value


def training_in_unit(
    e_train_wh: float,
    scenario: Scenario,
    *,
    pue_applied: bool = False,
    training_embodied_g: float = 0.0,
) -> float:
    value = energy_to_unit(effective_energy(e_train_wh, scenario, pue_applied), scenario)
    if scenario.unit is Unit.CARBON_G and scenario.include_training_embodied:
        value += training_embodied_g
    return value


def aet_in_unit(
    e_train_wh: float,
    nn: SolverProfile,
    base: SolverProfile,
    scenario: Scenario,
    *,
    nn_spec: Optional[HardwareSpec] = None,
    base_spec: Optional[HardwareSpec] = None,
    train_pue_applied: bool = False,
    training_embodied_g: float = 0.0,
) -> float:
    """AET in the scenario's unit, with the feasibility check from the profiles' gaps."""
    feasible = feasibility(nn.gap, base.gap, scenario.delta)
    return compute_aet(
        training_in_unit(
            e_train_wh,
            scenario,
            pue_applied=train_pue_applied,
            training_embodied_g=training_embodied_g,
        ),
        per_instance_in_unit(base, scenario, base_spec),
        per_instance_in_unit(nn, scenario, nn_spec),
        scenario.epsilon_in_unit,
        feasible,
    )


def total_carbon(
    n: ArrayLike,
    profile: SolverProfile,
    scenario: Scenario,
    spec: Optional[HardwareSpec] = None,
) -> ArrayLike:
    """Operational plus (optionally) embodied carbon of ``n`` instances, in g."""
    if scenario.unit is not Unit.CARBON_G:
        raise ConfigurationError("total_carbon needs a carbon_g scenario")
    n_arr = np.asarray(n, dtype=float)
    energy = effective_energy(profile.per_instance_energy_wh, scenario, profile.pue_applied)
    out = n_arr * energy / 1000.0 * scenario.grid_intensity_g_per_kwh
    if scenario.include_embodied:
        if spec is None:
            raise ConfigurationError(f"{profile.name}: include_embodied needs a hardware spec")
        out = out + embodied_carbon(n_arr, profile.throughput_inst_per_s, spec)
    return float(out) if np.ndim(out) == 0 else out


def cumulative_energy(n: ArrayLike, e_train: float, e_inst: float, pue: float = 1.0) -> ArrayLike:
    """pue * (e_train + n * e_inst); baseline callers pass e_train = 0."""
    if not pue >= 1:
        raise ValidationError(f"pue must be >= 1, got {pue}")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ValidationError("n must be >= 0")
    out = pue * (e_train + n_arr * e_inst)
    return float(out) if out.ndim == 0 else out
