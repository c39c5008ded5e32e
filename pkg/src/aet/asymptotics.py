"""Cumulative-energy ratio curves and their limits."""

from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .model import HardwareSpec, ValidationError

ArrayLike = Union[float, np.ndarray]


def ratio_at_n(n: ArrayLike, e_train: float, e_nn: float, e_base: float, lam: float = 1.0) -> ArrayLike:
    """Cumulative neural / baseline energy after ``n`` instances.

    ``lam`` is a symmetric overhead (PUE or a shared grid intensity). It
    multiplies numerator and denominator alike, so it is validated and
    then left out of the arithmetic.
    """
    if not lam > 0:
        raise ValidationError(f"lambda must be > 0, got {lam}")
    if not e_base > 0:
        raise ValidationError("e_base must be > 0")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1):
        raise ValidationError("ratio undefined below one deployed instance")
    out = asymptotic_ratio(e_nn, e_base) + convergence_residual(n_arr, e_train, e_base)
    return float(out) if np.ndim(out) == 0 else out


def asymptotic_ratio(e_nn: float, e_base: float) -> float:
    if not e_base > 0:
        raise ValidationError("e_base must be > 0")
    return e_nn / e_base


def convergence_residual(n: ArrayLike, e_train: float, e_base: float) -> ArrayLike:
    """Distance of the ratio from its limit, e_train / (n * e_base)."""
    if not e_base > 0:
        raise ValidationError("e_base must be > 0")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 1):
        raise ValidationError("n must be >= 1")
    out = e_train / (n_arr * e_base)
    return float(out) if out.ndim == 0 else out


def carbon_asymptotic_ratio(
    e_nn: float,
    e_base: float,
    ci: float,
    spec_nn: Optional[HardwareSpec],
    spec_base: Optional[HardwareSpec],
    tau_nn: float,
    tau_base: float,
    *,
    pue: float = 1.0,
) -> float:
    """Limit of the lifecycle carbon ratio.

    Operational energy (Wh) becomes grams through ``ci`` (g/kWh); each
    side adds its own fabrication carbon spread over lifetime-seconds at
    its own throughput; a ``None`` spec drops that side's embodied term.
    Unlike the energy ratio this one may exceed one.
    """
    if not (tau_nn > 0 and tau_base > 0):
        raise ValidationError("throughputs must be > 0")
    if ci < 0:
        raise ValidationError("ci must be >= 0")
    g_per_wh = ci / 1000.0
    nn = pue * e_nn * g_per_wh + _embodied_rate(spec_nn, tau_nn)
    base = pue * e_base * g_per_wh + _embodied_rate(spec_base, tau_base)
    if not base > 0:
        raise ValidationError("baseline per-instance carbon must be > 0")
    return nn / base


def _embodied_rate(spec: Optional[HardwareSpec], tau: float) -> float:
    return 0.0 if spec is None else spec.embodied_g / (tau * spec.lifetime_s)


def sample_n(n_min: float = 1e2, n_max: float = 1e8, points: int = 200) -> np.ndarray:
    """Log-spaced deployment volumes for plotting."""
    if not (n_min >= 1 and n_max > n_min and points >= 2):
        raise ValidationError(f"invalid sampling range ({n_min}, {n_max}, {points})")
    return np.logspace(np.log10(n_min), np.log10(n_max), int(points))
