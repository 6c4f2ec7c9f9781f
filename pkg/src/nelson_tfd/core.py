"""Physical parameters and closed-form thermal scalars.

Everything thermal depends on the dimensionless inverse temperature
``beta_bar = hbar * omega * beta``.  ``beta = inf`` is a legal value and
stands for zero temperature, so the ground-state limits can be evaluated
exactly rather than approached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PhysicalParams",
    "ThermalPoint",
    "PathDivergedError",
    "GridConvergenceError",
    "InsufficientSamplesError",
    "thermal_occupation",
    "partition_function",
    "coth_half",
    "csch_half",
    "nondimensionalize",
]

# above this beta_bar exp(beta_bar) overflows; switch to exp(-beta_bar) forms
_OVERFLOW_GUARD = 700.0


class PathDivergedError(FloatingPointError):
    """A sample path left the finite domain during integration."""


class GridConvergenceError(ArithmeticError):
    """A finite-difference result changed too much between h and 2h."""


class InsufficientSamplesError(ValueError):
    """Too few samples for a requested estimate."""


@dataclass(frozen=True)
class PhysicalParams:
    """Mass, frequency, action quantum and inverse temperature.

    Units are whatever the caller uses consistently; the defaults
    ``m = omega = hbar = 1`` make coordinates and temperatures coincide with
    the dimensionless ``X`` and ``beta_bar``.
    """

    m: float = 1.0
    omega: float = 1.0
    hbar: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("m", "omega", "hbar"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        if math.isnan(self.beta) or not self.beta > 0:
            raise ValueError(f"beta must be positive (inf allowed), got {self.beta}")

    @classmethod
    def from_beta_bar(cls, beta_bar: float, m: float = 1.0, omega: float = 1.0, hbar: float = 1.0):
        """Build parameters from the dimensionless inverse temperature."""
        return cls(m=m, omega=omega, hbar=hbar, beta=float(beta_bar) / (hbar * omega))

    @property
    def beta_bar(self) -> float:
        return math.inf if math.isinf(self.beta) else self.hbar * self.omega * self.beta

    @property
    def zero_temperature(self) -> bool:
        return math.isinf(self.beta)

    @property
    def length_scale(self) -> float:
        """Oscillator length ``sqrt(hbar / (m omega))``."""
        return math.sqrt(self.hbar / (self.m * self.omega))

    @property
    def noise_strength(self) -> float:
        """Variance rate ``hbar / m`` of every Wiener term."""
        return self.hbar / self.m

    def with_beta_bar(self, beta_bar: float) -> "PhysicalParams":
        return PhysicalParams.from_beta_bar(beta_bar, self.m, self.omega, self.hbar)


@dataclass(frozen=True)
class ThermalPoint:
    """One sample ``(x, x_tilde)`` of the doubled configuration at time ``t``.

    Fields may be floats or equally shaped arrays (a batch of points).
    """

    x: float | np.ndarray
    x_tilde: float | np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.x_tilde))
                and np.all(np.isfinite(self.t))):
            raise ValueError("ThermalPoint fields must be finite")


def thermal_occupation(params: PhysicalParams) -> float:
    """Bose occupation ``n = 1 / (exp(beta_bar) - 1)``; 0 at zero temperature."""
    bb = params.beta_bar
    if math.isinf(bb):
        return 0.0
    if bb > _OVERFLOW_GUARD:
        e = math.exp(-bb)
        return e / (1.0 - e)
    return 1.0 / math.expm1(bb)


def coth_half(params: PhysicalParams) -> float:
    """``coth(beta_bar / 2)``, equal to ``1 + 2 n``."""
    bb = params.beta_bar
    if math.isinf(bb):
        return 1.0
    if bb > _OVERFLOW_GUARD:
        e = math.exp(-bb)
        return (1.0 + e) / (1.0 - e)
    return 1.0 / math.tanh(0.5 * bb)


def csch_half(params: PhysicalParams) -> float:
    """``1 / sinh(beta_bar / 2)``; the non-tilde/tilde coupling strength."""
    bb = params.beta_bar
    if math.isinf(bb):
        return 0.0
    if bb > _OVERFLOW_GUARD:
        return 2.0 * math.exp(-0.5 * bb) / (1.0 - math.exp(-bb))
    return 1.0 / math.sinh(0.5 * bb)


def partition_function(params: PhysicalParams) -> float:
    """Oscillator partition function ``Z = 1 / (2 sinh(beta_bar / 2))``.

    Raises
    ------
    ValueError
        At zero temperature, where this normalization has no finite value.
    """
    if params.zero_temperature:
        raise ValueError("partition function undefined at β=∞ in this normalization")
    return 0.5 * csch_half(params)


def nondimensionalize(point: ThermalPoint, params: PhysicalParams):
    """Scale ``(x, x_tilde)`` by ``sqrt(m omega / hbar)``."""
    k = math.sqrt(params.m * params.omega / params.hbar)
    return point.x * k, point.x_tilde * k
