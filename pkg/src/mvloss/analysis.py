"""Derived quantities: interaction-strength calibration from balance-sheet
parameters, conditional default-time moments, and empirical convergence order.
All pure functions over immutable inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import GridSpec
from .mckv import SolutionPath

# Average interbank share of total liabilities by region.
INTERBANK_PRESETS = {"eu": 0.12, "canada": 0.08, "us": 0.045}


@dataclass(frozen=True)
class BankSystemParams:
    """Homogeneous banking-system parameters behind the interaction strength.

    recovery_rate in [0, 1]; asset_volatility > 0 per sqrt(year);
    interbank_fraction in [0, 1) is interbank liabilities over total
    liabilities; external_liability normalizes the balance sheet (default 1).
    """

    recovery_rate: float
    asset_volatility: float
    interbank_fraction: float
    external_liability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.recovery_rate <= 1.0:
            raise ValueError("recovery_rate must lie in [0, 1]")
        if not self.asset_volatility > 0.0:
            raise ValueError("asset_volatility must be > 0")
        if not 0.0 <= self.interbank_fraction < 1.0:
            raise ValueError("interbank_fraction must lie in [0, 1)")
        if not self.external_liability > 0.0:
            raise ValueError("external_liability must be > 0")

    @property
    def gamma(self) -> float:
        """Total interbank exposure per bank."""
        return self.interbank_fraction / (1.0 - self.interbank_fraction) * self.external_liability

    @property
    def lambda0(self) -> float:
        """Initial default boundary R (L + gamma) - gamma."""
        return self.recovery_rate * (self.external_liability + self.gamma) - self.gamma


@dataclass(frozen=True)
class MomentsResult:
    """Conditional default-time moments on (0, T], given default by T."""

    horizon: float
    alpha: float
    cond_mean: float
    cond_var: float
    total_mass: float


def alpha_from_bank_params(p: BankSystemParams) -> float:
    """Interaction strength gamma (1 - R^2) / (sigma Lambda0).

    Requires a positive initial boundary Lambda0 = R(L + gamma) - gamma;
    otherwise the distance to default is ill-defined and the model degenerates.
    """
    lam0 = p.lambda0
    if lam0 <= 0.0:
        raise ValueError(
            f"degenerate system: initial boundary R(L+gamma)-gamma = {lam0:.6g} is not positive"
        )
    return p.gamma * (1.0 - p.recovery_rate ** 2) / (p.asset_volatility * lam0)


def conditional_moments(
    g: np.ndarray, grid: GridSpec, alpha: float = float("nan")
) -> MomentsResult:
    """Mean and variance of the default time conditioned on default by T.

    The conditional density is g normalized by its trapezoid mass on the
    solver grid itself (g given at nodes 1..N, zero at node 0); no
    re-interpolation, so no second discretization scale enters.
    """
    g = np.asarray(g, dtype=float)
    if len(g) != grid.n_steps:
        raise ValueError("g must carry one value per grid node 1..N")
    if np.any(g < 0.0):
        raise ValueError("g must be nonnegative")
    t = grid.nodes
    full = np.concatenate(([0.0], g))
    mass = float(np.trapezoid(full, t))
    if mass <= 0.0:
        raise ValueError("total defaulted mass is zero; conditional moments undefined")
    mean = float(np.trapezoid(full * t, t)) / mass
    second = float(np.trapezoid(full * t * t, t)) / mass
    return MomentsResult(
        horizon=grid.t_end,
        alpha=float(alpha),
        cond_mean=mean,
        cond_var=max(second - mean * mean, 0.0),
        total_mass=mass,
    )


def convergence_order(
    sol_n: SolutionPath, sol_2n: SolutionPath, sol_4n: SolutionPath
) -> float:
    """Empirical order from three nested solves: log2 of successive sup gaps.

    The finer solutions are restricted to the coarser nodes before
    differencing; a vanishing fine-level gap (identical inputs) is an error.
    """
    for s in (sol_n, sol_2n, sol_4n):
        if s.blow_up is not None:
            raise ValueError("convergence order needs non-exploding paths")
    n = sol_n.grid.n_steps
    if sol_2n.grid.n_steps != 2 * n or sol_4n.grid.n_steps != 4 * n:
        raise ValueError("grids must be nested with ratios 2 and 4")
    if not math.isclose(sol_n.grid.t_end, sol_2n.grid.t_end) or not math.isclose(
        sol_n.grid.t_end, sol_4n.grid.t_end
    ):
        raise ValueError("grids must share the horizon")
    d1 = float(np.max(np.abs(sol_n.g - sol_2n.g[1::2])))
    d2 = float(np.max(np.abs(sol_2n.g - sol_4n.g[1::2])))
    if d2 == 0.0:
        raise ValueError("fine-level gap is zero; order undefined")
    return math.log2(d1 / d2)
