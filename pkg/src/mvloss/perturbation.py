"""First-order expansion of the coupled system in the interaction strength.

The zeroth order is the no-feedback closed form; the first-order correction
solves linear singular integral equations driven by it.  Each node costs one
pass over its history, so the full set of corrections is O(N^2), and every
node is independent of the others once the derivative array is materialized.

The apparent (t - t')^{-3/2} singularity in the correction weight is
removable: the running loss integral vanishes linearly at the diagonal, so
the integrand is evaluated in the regularized combination
Omega0(t,t') nu0(t') / (t - t') whose diagonal limit is g0(t) nu0(t).
Off-diagonal cells use the plain trapezoid; the diagonal cell is integrated
after the u = sqrt(t - t') substitution, as everywhere else in the package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import closed_form as cf
from .kernels import SQRT_2PI, GridSpec, normal_cdf


@dataclass(frozen=True)
class PerturbationSolution:
    """Zeroth and first-order loss rates and their combination on the grid."""

    grid: GridSpec
    z: float
    alpha: float
    g0: np.ndarray
    g1: np.ndarray
    g_assembled: np.ndarray
    rescaled: bool
    scale: float = 1.0


class _Tables:
    """Closed-form node values shared by all correction integrals."""

    def __init__(self, grid: GridSpec, z: float):
        if not z > 0.0:
            raise ValueError("start point z must be > 0")
        self.grid = grid
        self.z = float(z)
        t = grid.nodes
        self.t = t
        self.g0 = cf.g0(t, z)
        self.nu0 = cf.nu0(t, z)
        self.nu0_t = cf.nu0_t(t, z)
        self.g0_t = cf.g0_t(t, z)
        # 2 Phi(z / sqrt(t)) with the t = 0 limit 2; differences of phi give
        # the running loss integral between any two nodes.
        self.phi = np.empty(len(t))
        self.phi[0] = 2.0
        self.phi[1:] = 2.0 * normal_cdf(z / np.sqrt(t[1:]))

    def omega0_row(self, n: int) -> np.ndarray:
        """Integral of g0 from t_l to t_n for l = 0..n."""
        return self.phi[: n + 1] - self.phi[n]


def _sqrt_convolution(values: np.ndarray, n: int, grid: GridSpec, diag: float) -> float:
    """int_0^{t_n} f(t') / sqrt(2 pi (t_n - t')) dt' from node values of f.

    Plain trapezoid over the off-diagonal cells plus a u-substituted
    trapezoid on the diagonal cell; `diag` is f(t_n).
    """
    d = grid.delta
    tn = n * d
    tau = tn - grid.nodes[:n]
    weighted = values[:n] / np.sqrt(2.0 * np.pi * tau)
    if n >= 2:
        interior = d * (weighted.sum() - 0.5 * weighted[0] - 0.5 * weighted[-1])
    else:
        interior = 0.0
    return interior + math.sqrt(d / (2.0 * math.pi)) * (diag + values[n - 1])


def nu1(t_node: int, grid: GridSpec, z: float, tables: _Tables | None = None) -> float:
    """First-order boundary-weight correction at one node."""
    tb = tables if tables is not None else _Tables(grid, z)
    n = int(t_node)
    if n < 1 or n > grid.n_steps:
        raise ValueError("t_node must be in 1..n_steps")
    om = tb.omega0_row(n)
    tau = tb.t[n] - tb.t[:n]
    g_vals = np.empty(n + 1)
    g_vals[:n] = om[:n] * tb.nu0[:n] / tau
    g_vals[n] = tb.g0[n] * tb.nu0[n]
    integral = _sqrt_convolution(g_vals, n, grid, g_vals[n])
    return -integral - om[0] * tb.g0[n]


def nu1_t(t_node: int, grid: GridSpec, z: float, tables: _Tables | None = None) -> float:
    """Time derivative of the first-order weight correction at one node.

    Uses the rewriting of d/dt through the sqrt kernel; the bracketed
    integrand has a finite diagonal limit -(3/2) g0' nu0 - g0 nu0'.
    """
    tb = tables if tables is not None else _Tables(grid, z)
    n = int(t_node)
    if n < 1 or n > grid.n_steps:
        raise ValueError("t_node must be in 1..n_steps")
    z = tb.z
    tn = tb.t[n]
    om = tb.omega0_row(n)
    tau = tn - tb.t[:n]
    bracket = np.empty(n + 1)
    bracket[:n] = (3.0 * tb.g0[:n] / tau - 3.0 * om[:n] / tau ** 2) * tb.nu0[:n] - (
        3.0 * om[:n] / tau - 2.0 * tb.g0[n]
    ) * tb.nu0_t[:n]
    bracket[n] = -1.5 * tb.g0_t[n] * tb.nu0[n] - tb.g0[n] * tb.nu0_t[n]
    integral = _sqrt_convolution(bracket, n, grid, bracket[n])
    tail = -tb.g0[n] ** 2 + om[0] * (3.0 - z * z / tn) * tb.g0[n] / (2.0 * tn)
    return integral + tail


def g1(t_node: int, grid: GridSpec, z: float, tables: _Tables | None = None,
       nu1_t_values: np.ndarray | None = None) -> float:
    """First-order loss-rate correction at one node.

    nu1_t_values may carry the precomputed derivative corrections at nodes
    0..t_node (node 0 being 0); otherwise they are built here.
    """
    tb = tables if tables is not None else _Tables(grid, z)
    n = int(t_node)
    if n < 1 or n > grid.n_steps:
        raise ValueError("t_node must be in 1..n_steps")
    if nu1_t_values is None:
        nu1_t_values = np.zeros(n + 1)
        for m in range(1, n + 1):
            nu1_t_values[m] = nu1_t(m, grid, z, tb)
    z = tb.z
    tn = tb.t[n]
    om0 = tb.omega0_row(n)[0]
    integral = _sqrt_convolution(nu1_t_values, n, grid, nu1_t_values[n])
    tail = (1.0 - z * z / tn) * om0 * tb.g0[n] / (2.0 * z)
    return -tb.g0[n] * tb.nu0[n] - integral - tail


def correction_arrays(grid: GridSpec, z: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """nu1, nu1_t and g1 at nodes 1..N (one O(N^2) sweep)."""
    tb = _Tables(grid, z)
    n_steps = grid.n_steps
    nu1_arr = np.empty(n_steps)
    nu1t_full = np.zeros(n_steps + 1)
    for n in range(1, n_steps + 1):
        nu1_arr[n - 1] = nu1(n, grid, z, tb)
        nu1t_full[n] = nu1_t(n, grid, z, tb)
    g1_arr = np.empty(n_steps)
    for n in range(1, n_steps + 1):
        g1_arr[n - 1] = g1(n, grid, z, tb, nu1t_full[: n + 1])
    return nu1_arr, nu1t_full[1:], g1_arr


def assemble(
    alpha: float,
    grid: GridSpec,
    z: float,
    rescale: bool = False,
    target_mass: float | None = None,
) -> PerturbationSolution:
    """Combine g0 + alpha g1, optionally rescaling the correction.

    With rescale=True the correction term is multiplied by the scalar that
    makes the trapezoid mass of the combination over [0, T] equal
    target_mass (which must then be supplied, e.g. from a reference solve).
    """
    if alpha < 0.0:
        raise ValueError("alpha must be >= 0")
    tb = _Tables(grid, z)
    _, _, g1_arr = correction_arrays(grid, z)
    g0_arr = tb.g0[1:]
    scale = 1.0
    if rescale:
        if target_mass is None or target_mass < 0.0:
            raise ValueError("rescaling needs a nonnegative target mass")
        d = grid.delta
        mass = lambda arr: d * (arr.sum() - 0.5 * arr[-1])  # noqa: E731  (node 0 value is 0)
        mass0 = mass(g0_arr)
        mass1 = alpha * mass(g1_arr)
        if mass1 != 0.0:
            scale = (target_mass - mass0) / mass1
    g_assembled = g0_arr + scale * alpha * g1_arr
    return PerturbationSolution(
        grid=grid,
        z=float(z),
        alpha=float(alpha),
        g0=g0_arr,
        g1=g1_arr,
        g_assembled=g_assembled,
        rescaled=bool(rescale),
        scale=scale,
    )
