"""Closed-form thermal equilibrium of the harmonic oscillator.

The equilibrium wavefunction on the doubled configuration space is real and
Gaussian, ``Psi_eq = exp(R_eq) / norm`` with

    R_eq = -(m omega / 2 hbar) [(x^2 + xt^2) coth(bb/2) - 2 x xt / sinh(bb/2)]

and ``S_eq = 0``.  Its square is a bivariate normal density whose covariance
is the oracle for every Monte Carlo estimate in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PhysicalParams, coth_half, csch_half, thermal_occupation

__all__ = [
    "EquilibriumSolution",
    "StationaryCovariance",
    "r_eq",
    "r_eq_gradient",
    "drift_eq",
    "stationary_covariance",
    "momentum_halfdiff_variance",
    "uncertainty_product",
    "marginal_density",
]


def r_eq_matrix(params: PhysicalParams) -> np.ndarray:
    """Matrix ``K`` with ``R_eq = -z^T K z / 2`` for ``z = (x, x_tilde)``."""
    k = params.m * params.omega / params.hbar
    c, s = coth_half(params), csch_half(params)
    return k * np.array([[c, -s], [-s, c]])


def r_eq(x, x_tilde, params: PhysicalParams):
    """Log-amplitude ``R_eq(x, x_tilde)``; non-positive, zero only at the origin.

    At zero temperature this reduces to ``-(m omega / 2 hbar)(x^2 + xt^2)``.
    """
    x = np.asarray(x, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    k = 0.5 * params.m * params.omega / params.hbar
    c, s = coth_half(params), csch_half(params)
    return -k * ((x * x + x_tilde * x_tilde) * c - 2.0 * x * x_tilde * s)


def r_eq_gradient(x, x_tilde, params: PhysicalParams):
    """``(dR/dx, dR/dx_tilde)`` of the equilibrium log-amplitude."""
    k = params.m * params.omega / params.hbar
    c, s = coth_half(params), csch_half(params)
    x = np.asarray(x, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    return -k * (x * c - x_tilde * s), -k * (x_tilde * c - x * s)


def drift_eq(x, x_tilde, params: PhysicalParams):
    """Equilibrium drifts ``(b, b_star, b_tilde, b_tilde_star)``.

    ``b = -omega (x coth - xt csch)`` and ``b_tilde_star = omega (xt coth - x csch)``;
    with ``S_eq = 0`` the remaining two are their negatives.
    """
    c, s = coth_half(params), csch_half(params)
    w = params.omega
    x = np.asarray(x, dtype=float)
    x_tilde = np.asarray(x_tilde, dtype=float)
    b = -w * (x * c - x_tilde * s)
    bts = w * (x_tilde * c - x * s)
    return b, -b, -bts, bts


@dataclass(frozen=True)
class StationaryCovariance:
    """Second moments of the stationary density ``exp(2 R_eq)`` (zero mean)."""

    var_x: float
    var_x_tilde: float
    cov_xxt: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.var_x, self.cov_xxt], [self.cov_xxt, self.var_x_tilde]])

    @property
    def correlation(self) -> float:
        return self.cov_xxt / math.sqrt(self.var_x * self.var_x_tilde)


def stationary_covariance(params: PhysicalParams) -> StationaryCovariance:
    """Covariance of ``|Psi_eq|^2``.

    ``exp(2 R_eq)`` is a normal density with precision ``2 K`` (see
    :func:`r_eq_matrix`).  Because ``coth^2 - csch^2 = 1`` the inverse is
    ``(hbar / 2 m omega) [[coth, csch], [csch, coth]]``.
    """
    scale = 0.5 * params.hbar / (params.m * params.omega)
    c, s = coth_half(params), csch_half(params)
    return StationaryCovariance(var_x=scale * c, var_x_tilde=scale * c, cov_xxt=scale * s)


def momentum_halfdiff_variance(params: PhysicalParams) -> float:
    """``Var[(p - p_star) / 2] = (m hbar omega / 2) coth(beta_bar / 2)``."""
    return 0.5 * params.m * params.hbar * params.omega * coth_half(params)


def uncertainty_product(params: PhysicalParams) -> float:
    """``sqrt(Var[x]) sqrt(Var[(p - p_star)/2])``, equal to ``hbar/2 + hbar n``."""
    var_x = stationary_covariance(params).var_x
    return math.sqrt(var_x * momentum_halfdiff_variance(params))


def marginal_density(x, params: PhysicalParams):
    """Normal marginal of ``x`` (or ``x_tilde``) under ``exp(2 R_eq)``."""
    var = stationary_covariance(params).var_x
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x / var) / math.sqrt(2.0 * math.pi * var)


@dataclass(frozen=True)
class EquilibriumSolution:
    """Thermal-vacuum wavefunction ``exp(R_eq + i S_eq)`` for given parameters."""

    params: PhysicalParams

    def R(self, x, x_tilde):
        return r_eq(x, x_tilde, self.params)

    def S(self, x, x_tilde):
        # the thermal vacuum is a sum of real products u_n(x) u_n(xt)
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(x_tilde)).shape)

    def density(self, x, x_tilde):
        """Normalized ``P = exp(2 R_eq) / (2 pi sqrt(det Sigma))``."""
        cov = stationary_covariance(self.params)
        det = cov.var_x * cov.var_x_tilde - cov.cov_xxt ** 2
        return np.exp(2.0 * self.R(x, x_tilde)) / (2.0 * math.pi * math.sqrt(det))

    def drifts(self, x, x_tilde):
        return drift_eq(x, x_tilde, self.params)

    @property
    def covariance(self) -> StationaryCovariance:
        return stationary_covariance(self.params)

    @property
    def occupation(self) -> float:
        return thermal_occupation(self.params)
