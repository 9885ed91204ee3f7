"""Absorbed diffusion with a known drift, solved by a boundary layer potential.

The transition density is written as a time-layer of Gaussian kernels with an
unknown boundary weight nu.  Enforcing the absorbing condition turns nu into
the solution of a second-kind Volterra equation whose kernel carries the
accumulated drift; the loss rate then follows either from the boundary-flux
formula or from differentiating the surviving mass, and the density is
reconstructed anywhere by evaluating the layer integral.

Discretization: uniform grid, piecewise-linear nu.  The weight recursion uses
ordinary product-trapezoid cells away from the diagonal and a u = sqrt(t - t')
substituted trapezoid on the diagonal cell; the standalone loss-rate
evaluators use the u-substituted composite throughout.  The recursion is
sequential in the time index; per-node history sums are pure reductions over
read-only arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import SQRT_2PI, GridSpec


@dataclass(frozen=True)
class DriftSpec:
    """Accumulated drift M(t) with M(0) = 0, known on the whole grid.

    kind is one of "zero", "linear" (M = mu t) or "tabulated" (M given at
    every node, interpreted piecewise-linearly).  Tabulated drifts may carry
    an explicit slope trace; when absent, the backward difference
    (M_n - M_{n-1}) / delta stands in for M'(t_n), which is all the recursion
    can know at node n.
    """

    kind: str
    mu: float = 0.0
    values: Optional[np.ndarray] = None
    slopes: Optional[np.ndarray] = None

    @staticmethod
    def zero() -> "DriftSpec":
        return DriftSpec(kind="zero")

    @staticmethod
    def linear(mu: float) -> "DriftSpec":
        return DriftSpec(kind="linear", mu=float(mu))

    @staticmethod
    def tabulated(values, slopes=None) -> "DriftSpec":
        values = np.asarray(values, dtype=float)
        if slopes is not None:
            slopes = np.asarray(slopes, dtype=float)
        return DriftSpec(kind="tabulated", values=values, slopes=slopes)

    def arrays(self, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
        """Node values of M and of its slope trace, each of length n_steps + 1."""
        n = grid.n_steps
        if self.kind == "zero":
            return np.zeros(n + 1), np.zeros(n + 1)
        if self.kind == "linear":
            return self.mu * grid.nodes, np.full(n + 1, self.mu)
        if self.kind == "tabulated":
            m = self.values
            if m is None or len(m) != n + 1:
                raise ValueError("tabulated drift needs one value per grid node")
            if not np.all(np.isfinite(m)):
                raise ValueError("tabulated drift values must be finite")
            if m[0] != 0.0:
                raise ValueError("accumulated drift must start at M(0) = 0")
            if self.slopes is not None:
                mt = self.slopes
                if len(mt) != n + 1 or not np.all(np.isfinite(mt)):
                    raise ValueError("slope trace must be finite and match the grid")
            else:
                mt = np.empty(n + 1)
                mt[1:] = np.diff(m) / grid.delta
                mt[0] = mt[1]
            return np.asarray(m, dtype=float), np.asarray(mt, dtype=float)
        raise ValueError(f"unknown drift kind {self.kind!r}")


@dataclass(frozen=True)
class HeatPotentialSolution:
    """Boundary weight and loss rate at nodes 1..N (node 0 carries nu = g = 0)."""

    grid: GridSpec
    z: float
    nu: np.ndarray
    g: np.ndarray


class _Workspace:
    """Per-grid constants and history-sum weights shared by the node loops.

    Off-diagonal cells use the two-point product trapezoid in t'; collected
    per history node j this gives the weight (n-j)^{-3/2} with multiplicity
    2 for nodes interior to the off-diagonal range and 1 at its edges.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        d = grid.delta
        n = grid.n_steps
        k = np.arange(1, n + 1, dtype=float)
        self.w32 = k ** -1.5                 # k^{-3/2}, k = 1..N
        self.cums32 = np.cumsum(self.w32)    # partial sums of k^{-3/2}
        self.winv = 1.0 / k
        self.c_u = 1.0 / math.sqrt(8.0 * math.pi * d)
        self.c_sing = 1.0 / math.sqrt(2.0 * math.pi * d)
        self.c_half = math.sqrt(d / (2.0 * math.pi))
        self.c3 = 1.0 / math.sqrt(2.0 * math.pi * d ** 3)

    def interior(self, n: int) -> np.ndarray:
        """Collected node weights for history nodes j = 1..n-1 of step n.

        q[j-1] = fac * (n-j)^{-3/2}, fac = 2 except next to the diagonal cell.
        """
        if n < 2:
            return np.empty(0)
        q = 2.0 * self.w32[: n - 1][::-1]
        q[-1] = self.w32[0]
        return q

    def u_sum_interior(self, n: int) -> float:
        """Coefficient of nu_n collected across all off-diagonal cells."""
        if n < 2:
            return 0.0
        return self.c_u * (self.cums32[n - 2] + self.cums32[n - 1] - 1.0)


class _UWorkspace:
    """Off-diagonal weights for the composite trapezoid in u = sqrt(t - t').

    Used by the standalone loss-rate evaluators: the transformed integrand is
    smooth up to the diagonal cell, which removes the O(sqrt(delta)) residue
    the plain t'-trapezoid leaves next to the diagonal.  Node weights
    w(k)/k (k = n - j) approach the plain-trapezoid values k^{-3/2}/2 away
    from the diagonal.
    """

    def __init__(self, grid: GridSpec):
        n = grid.n_steps
        s = np.sqrt(np.arange(n + 1, dtype=float))
        self.s = s
        self.wmid = 0.5 * (s[2:] - s[:-2]) if n >= 2 else np.empty(0)
        self.edge1 = 0.5 * (s[2] - s[1]) if n >= 2 else 0.0
        k = np.arange(1, n + 1, dtype=float)
        self.winv = 1.0 / k
        wk = np.empty(max(n - 1, 1))
        wk[0] = self.edge1
        if n >= 3:
            wk[1:] = self.wmid[1 : n - 1] / k[1 : n - 1]
        self.cumq = np.cumsum(wk)
        self.c_u = 2.0 / math.sqrt(2.0 * math.pi * grid.delta)

    def interior(self, n: int) -> np.ndarray:
        """Node weights q[j-1] = w(n-j)/(n-j) for history nodes j = 1..n-1."""
        if n < 2:
            return np.empty(0)
        q = np.empty(n - 1)
        q[: n - 2] = (self.wmid[1 : n - 1] * self.winv[1 : n - 1])[::-1]
        q[-1] = self.edge1
        return q

    def u_sum_interior(self, n: int) -> float:
        """Coefficient of nu_n collected across all off-diagonal cells."""
        if n < 2:
            return 0.0
        edge_n = 0.5 * (self.s[n] - self.s[n - 1]) / n
        return self.c_u * (self.cumq[n - 2] + edge_n)


def _validate(nu: np.ndarray, grid: GridSpec, z: float) -> np.ndarray:
    if not float(z) > 0.0:
        raise ValueError("start point z must be > 0")
    nu = np.asarray(nu, dtype=float)
    if len(nu) != grid.n_steps:
        raise ValueError(
            f"nu has {len(nu)} entries but the grid has {grid.n_steps} interior nodes"
        )
    full = np.empty(grid.n_steps + 1)
    full[0] = 0.0
    full[1:] = nu
    return full


def solve_nu(drift: DriftSpec, grid: GridSpec, z: float) -> np.ndarray:
    """Solve the boundary-weight Volterra equation for a known drift.

    Returns nu at nodes 1..N.  For zero drift the kernel vanishes and each
    node reproduces the no-feedback weight exactly.
    """
    if not float(z) > 0.0:
        raise ValueError("start point z must be > 0")
    z = float(z)
    m, mt = drift.arrays(grid)
    ws = _Workspace(grid)
    n_steps, d = grid.n_steps, grid.delta
    nu = np.zeros(n_steps + 1)
    for n in range(1, n_steps + 1):
        tn = n * d
        q = ws.interior(n)
        psi = m[n] - m[1:n]
        xi = np.exp(-(psi ** 2) * (0.5 / d) * ws.winv[: n - 1][::-1])
        k_int = ws.c_u * float(np.dot(q, psi * xi * nu[1:n]))
        dlast = m[n] - m[n - 1]
        xis = math.exp(-dlast * dlast / (2.0 * d))
        forcing = math.exp(-((m[n] + z) ** 2) / (2.0 * tn)) / math.sqrt(2.0 * math.pi * tn)
        nu[n] = (k_int + dlast * xis * nu[n - 1] * ws.c_sing - forcing) / (1.0 - ws.c_half * mt[n])
    return nu[1:]


def loss_rate_hp(nu: np.ndarray, drift: DriftSpec, grid: GridSpec, z: float) -> np.ndarray:
    """Loss rate from the boundary-flux formula.

    g(t) = (M' - 1/sqrt(2 pi t)) nu(t)
         + (1/2) int [ (1 - Psi^2/(t-t')) Xi nu(t') - nu(t) ] / sqrt(2pi (t-t')^3) dt'
         + (M + z) exp(-(M+z)^2/2t) / (2 sqrt(2 pi t^3)).

    Off-diagonal cells by the composite u = sqrt(t-t') trapezoid; the
    diagonal cell after the same substitution, with nu and the drift
    increment piecewise linear across it.
    """
    full = _validate(nu, grid, z)
    z = float(z)
    m, mt = drift.arrays(grid)
    ws = _Workspace(grid)
    uw = _UWorkspace(grid)
    d = grid.delta
    g = np.empty(grid.n_steps)
    for n in range(1, grid.n_steps + 1):
        tn = n * d
        q = uw.interior(n)
        psi = m[n] - m[1:n]
        arg = (psi ** 2) * (0.5 / d) * ws.winv[: n - 1][::-1]
        p = np.exp(-arg) * (q * full[1:n])
        sum_v = -uw.c_u * (float(p.sum()) - 2.0 * float(np.dot(arg, p)))
        sum_u = uw.u_sum_interior(n)
        dlast = m[n] - m[n - 1]
        xis = math.exp(-dlast * dlast / (2.0 * d))
        u_nn = (1.0 + xis) * ws.c_sing + (1.5 * (d * mt[n]) ** 2 + 0.5 * dlast ** 2) * ws.c3
        v_nn = -((1.0 + xis) * ws.c_sing - dlast ** 2 * xis * ws.c3) * full[n - 1]
        j_total = (sum_u + u_nn) * full[n] + sum_v + v_nn
        e = math.exp(-((m[n] + z) ** 2) / (2.0 * tn))
        g[n - 1] = (
            (mt[n] - 1.0 / math.sqrt(2.0 * math.pi * tn)) * full[n]
            - 0.5 * j_total
            + (m[n] + z) * e / (2.0 * math.sqrt(2.0 * math.pi * tn ** 3))
        )
    return g


def loss_rate_direct(nu: np.ndarray, drift: DriftSpec, grid: GridSpec, z: float) -> np.ndarray:
    """Loss rate by differentiating the surviving mass.

    g(t) = -d/dt int_0^t Xi nu / sqrt(2pi (t-t')) dt'
           - (M' - (M+z)/2t) exp(-(M+z)^2/2t) / sqrt(2pi t).

    The d/dt is traded for the regularized compensated integral
    (1/sqrt(2pi)) int_0^{sqrt t} [nu(t) - (1 + 2 M' Psi - Psi^2/tau) Xi nu(t')] / u^2 du,
    u = sqrt(t - t'), evaluated by the trapezoid on the node-image u grid.
    This is a deliberately different quadrature from loss_rate_hp; the gap
    between the two routes shrinks as the grid refines.
    """
    full = _validate(nu, grid, z)
    z = float(z)
    m, mt = drift.arrays(grid)
    d = grid.delta
    nodes = grid.nodes
    g = np.empty(grid.n_steps)
    for n in range(1, grid.n_steps + 1):
        tn = n * d
        tau = tn - nodes[:n]                      # l = 0..n-1
        psi = m[n] - m[:n]
        xi = np.exp(-(psi ** 2) / (2.0 * tau))
        weighted = (1.0 + 2.0 * mt[n] * psi - psi ** 2 / tau) * xi * full[:n]
        vals = np.empty(n + 1)
        vals[0] = (full[n] - full[n - 1]) / d - 0.5 * full[n] * mt[n] ** 2
        vals[1:] = ((full[n] - weighted) / tau)[::-1]
        u = np.sqrt(tau)[::-1]
        u = np.concatenate(([0.0], u))
        compensated = float(np.trapezoid(vals, u)) / SQRT_2PI
        e = math.exp(-((m[n] + z) ** 2) / (2.0 * tn))
        g[n - 1] = (
            -full[n] / math.sqrt(2.0 * math.pi * tn)
            - compensated
            - (mt[n] - (m[n] + z) / (2.0 * tn)) * e / math.sqrt(2.0 * math.pi * tn)
        )
    return g


def boundary_values(nu: np.ndarray, drift: DriftSpec, grid: GridSpec, z: float) -> np.ndarray:
    """Density at the absorbing boundary for every node, via the one-sided limit.

    The layer integral concentrates a unit of mass at the boundary as x -> 0+,
    so the limit equals the residual of the weight equation; it vanishes to
    solver accuracy when nu solves the equation on the same grid.
    """
    full = _validate(nu, grid, z)
    z = float(z)
    m, mt = drift.arrays(grid)
    ws = _Workspace(grid)
    d = grid.delta
    out = np.empty(grid.n_steps)
    for n in range(1, grid.n_steps + 1):
        tn = n * d
        q = ws.interior(n)
        psi = m[n] - m[1:n]
        xi = np.exp(-(psi ** 2) * (0.5 / d) * ws.winv[: n - 1][::-1])
        k_int = ws.c_u * float(np.dot(q, psi * xi * full[1:n]))
        dlast = m[n] - m[n - 1]
        xis = math.exp(-dlast * dlast / (2.0 * d))
        k_nn = ws.c_half * mt[n] * full[n] + dlast * xis * full[n - 1] * ws.c_sing
        forcing = math.exp(-((m[n] + z) ** 2) / (2.0 * tn)) / math.sqrt(2.0 * math.pi * tn)
        out[n - 1] = full[n] - (k_int + k_nn) + forcing
    return out


def default_x_grid(z: float, t_end: float, n_points: int = 400) -> np.ndarray:
    """Uniform density output grid covering [0, z + 5 sqrt(T)]."""
    return np.linspace(0.0, float(z) + 5.0 * math.sqrt(float(t_end)), n_points)


def transition_density(
    nu: np.ndarray,
    drift: DriftSpec,
    grid: GridSpec,
    z: float,
    x_grid: np.ndarray,
    t_node: int,
) -> np.ndarray:
    """Evaluate the absorbed transition density at time node t_node.

    p(t, x) = int_0^t (x - Psi) exp(-(x - Psi)^2 / 2(t-t')) / sqrt(2pi (t-t')^3)
              nu(t') dt'  +  exp(-(x - M(t) - z)^2 / 2t) / sqrt(2pi t).

    x = 0 entries use the one-sided boundary limit instead of the raw layer
    integral (the layer sheds a nu(t) jump at the boundary).  For x > 0 the
    integral is regular; it is evaluated in the u = sqrt(t-t') variable on
    the node image grid, refined enough to resolve the near-diagonal Gaussian
    bump whose width scales with the smallest positive x requested.
    """
    full = _validate(nu, grid, z)
    z = float(z)
    t_node = int(t_node)
    if t_node < 1 or t_node > grid.n_steps:
        raise ValueError("t_node must be in 1..n_steps (the initial density is a point mass)")
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.ndim != 1 or np.any(np.diff(x_grid) < 0) or np.any(x_grid < 0):
        raise ValueError("x_grid must be sorted and nonnegative")

    m, _ = drift.arrays(grid)
    d = grid.delta
    n = t_node
    tn = n * d
    nodes = grid.nodes

    # u-grid: images of the time nodes, subdivided to resolve the integrand
    # bump at u ~ x for the smallest positive x.
    base = np.sqrt(tn - nodes[n::-1])
    pos = x_grid[x_grid > 0.0]
    target = pos.min() / 6.0 if pos.size else math.sqrt(d)
    du = max(min(math.sqrt(d), target), math.sqrt(d) / 64.0)
    pieces = []
    for a, b in zip(base[:-1], base[1:]):
        m_sub = max(1, int(math.ceil((b - a) / du)))
        pieces.append(np.linspace(a, b, m_sub + 1)[:-1])
    u = np.append(np.concatenate(pieces), base[-1])

    tp = np.clip(tn - u * u, 0.0, tn)
    psi_u = m[n] - np.interp(tp, nodes, m)
    nu_u = np.interp(tp, nodes, full)

    x_col = x_grid[None, :]
    shift = x_col - psi_u[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        usq = (u * u)[:, None]
        layer = 2.0 / SQRT_2PI * shift * np.exp(-(shift ** 2) / (2.0 * usq)) * nu_u[:, None] / usq
    layer[u == 0.0, :] = 0.0
    p = np.trapezoid(layer, u, axis=0)
    p += np.exp(-((x_grid - m[n] - z) ** 2) / (2.0 * tn)) / math.sqrt(2.0 * math.pi * tn)

    at_zero = x_grid == 0.0
    if np.any(at_zero):
        p[at_zero] = boundary_values(nu, drift, grid, z)[n - 1]
    return p


def solve(drift: DriftSpec, grid: GridSpec, z: float) -> HeatPotentialSolution:
    """Convenience wrapper: weight equation plus boundary-flux loss rate."""
    nu = solve_nu(drift, grid, z)
    g = loss_rate_hp(nu, drift, grid, z)
    return HeatPotentialSolution(grid=grid, z=float(z), nu=nu, g=g)
