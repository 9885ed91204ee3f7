"""Coupled solver for the mean-field absorbed diffusion.

The drift is fed back from the absorbed mass itself: M(t) = -alpha L(t).
Boundary weight nu and loss rate g then satisfy a pair of nonlinear Volterra
equations solved by forward recursion on a uniform grid.  At each node the
weight is eliminated (it enters linearly) and the remaining scalar equation
in g_n is solved by Newton's method with a bisection fallback; failure to
find a root, or a rate beyond g_max, is reported as a finite-time explosion
of the loss rate rather than silently truncated.

The recursion is inherently sequential in the time index; the per-node
history sums are pure reductions over read-only arrays.  A returned
SolutionPath is immutable and safe to share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .kernels import GridSpec, normal_cdf
from . import heat_potential as hp


class NewtonDivergenceError(RuntimeError):
    """No root of the per-node scalar equation could be located."""

    def __init__(self, node: int, best_residual: float):
        super().__init__(f"no root found at node {node} (best residual {best_residual:.3e})")
        self.node = node
        self.best_residual = best_residual


@dataclass(frozen=True)
class ProblemSpec:
    """Interaction strength, start point and grid: the full problem statement."""

    alpha: float
    z: float
    grid: GridSpec

    def __post_init__(self):
        if not self.alpha >= 0.0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.z > 0.0:
            raise ValueError(f"start point z must be > 0, got {self.z}")


@dataclass(frozen=True)
class BlowUpReport:
    """Where and why the recursion stopped early."""

    node: int
    time: float
    cause: str  # "newton_divergence" | "rate_threshold"
    last_g: float


@dataclass(frozen=True)
class SolutionPath:
    """Per-node nu, g and cumulative loss L at nodes 1..N (truncated on blow-up)."""

    grid: GridSpec
    nu: np.ndarray
    g: np.ndarray
    L: np.ndarray
    blow_up: Optional[BlowUpReport] = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.delta * np.arange(1, len(self.g) + 1)


# ---------------------------------------------------------------------------
# Scalar quadrature cells of the discretized system.  These are the reference
# formulas; the compiled recursion kernels are tested against them.
# ---------------------------------------------------------------------------

def omega_update(omega_prev: float, g_n: float, g_n1: float, delta: float) -> float:
    """Advance the running integral of g across one cell (trapezoid)."""
    return omega_prev + 0.5 * delta * (g_n + g_n1)


def quad_I(l: int, n: int, omega_nl: float, omega_nl1: float, nu_l: float,
           nu_l1: float, alpha: float, delta: float) -> float:
    """Off-diagonal product-trapezoid cell of the weight-equation kernel."""
    if not 1 <= l <= n - 1:
        raise ValueError("off-diagonal cells require 1 <= l <= n-1")
    k = n - l
    e_l = math.exp(-(alpha * omega_nl) ** 2 / (2.0 * k * delta))
    e_l1 = math.exp(-(alpha * omega_nl1) ** 2 / (2.0 * (k + 1) * delta))
    return (omega_nl * e_l * nu_l / k ** 1.5 + omega_nl1 * e_l1 * nu_l1 / (k + 1) ** 1.5) / math.sqrt(
        8.0 * math.pi * delta
    )


def quad_J(l: int, n: int, omega_nl: float, omega_nl1: float, nu_n: float, nu_l: float,
           nu_l1: float, alpha: float, delta: float) -> float:
    """Off-diagonal product-trapezoid cell of the rate-equation kernel."""
    if not 1 <= l <= n - 1:
        raise ValueError("off-diagonal cells require 1 <= l <= n-1")
    k = n - l
    a_l = (alpha * omega_nl) ** 2 / (k * delta)
    a_l1 = (alpha * omega_nl1) ** 2 / ((k + 1) * delta)
    term_l = (nu_n - (1.0 - a_l) * math.exp(-a_l / 2.0) * nu_l) / k ** 1.5
    term_l1 = (nu_n - (1.0 - a_l1) * math.exp(-a_l1 / 2.0) * nu_l1) / (k + 1) ** 1.5
    return (term_l + term_l1) / math.sqrt(8.0 * math.pi * delta)


def quad_I_singular(g_n: float, g_n1: float, nu_n: float, nu_n1: float,
                    alpha: float, delta: float) -> float:
    """Diagonal cell of the weight-equation kernel after the u = sqrt(tau) substitution."""
    gamma = 0.5 * delta * (g_n + g_n1)
    es = math.exp(-(alpha * gamma) ** 2 / (2.0 * delta))
    return math.sqrt(delta / (2.0 * math.pi)) * g_n * nu_n + gamma * es * nu_n1 / math.sqrt(
        2.0 * math.pi * delta
    )


def quad_J_singular(g_n: float, g_n1: float, nu_n: float, nu_n1: float,
                    alpha: float, delta: float) -> float:
    """Diagonal cell of the rate-equation kernel after the u = sqrt(tau) substitution."""
    gamma = 0.5 * delta * (g_n + g_n1)
    es = math.exp(-(alpha * gamma) ** 2 / (2.0 * delta))
    c1 = 1.0 / math.sqrt(2.0 * math.pi * delta)
    c3 = 1.0 / math.sqrt(2.0 * math.pi * delta ** 3)
    coef_n = (1.0 + es) * c1 + alpha ** 2 * (1.5 * (delta * g_n) ** 2 + gamma ** 2) * c3
    coef_n1 = (1.0 + es) * c1 - alpha ** 2 * gamma ** 2 * es * c3
    return coef_n * nu_n - coef_n1 * nu_n1


# ---------------------------------------------------------------------------
# Recursion (compiled kernels; the scalar cell functions above are the
# reference the kernels are tested against)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _residual_kernel(gn, n, d, alpha, z, nu, g, L, w32, cums32):
    """Residual of the reduced scalar equation at node n, its d/d(g_n), and
    the weight nu_n recovered by the linear elimination."""
    tn = n * d
    c_sing = 1.0 / math.sqrt(2.0 * math.pi * d)
    c8 = 0.5 * c_sing                      # 1 / sqrt(8 pi d)
    c_half = math.sqrt(d / (2.0 * math.pi))
    c3 = c_sing / d
    c_tn = 1.0 / math.sqrt(2.0 * math.pi * tn)
    c_t3 = 1.0 / (2.0 * math.sqrt(2.0 * math.pi * tn ** 3))
    ca = alpha * alpha * 0.5 / d

    lp = L[n - 1]
    gamma = 0.5 * d * (g[n - 1] + gn)
    dgam = 0.5 * d

    sum_i = 0.0
    dsum_i = 0.0
    sum_v = 0.0
    dsum_v = 0.0
    for j in range(1, n):
        k = n - j
        om = lp - L[j] + gamma
        a_j = ca * om * om / k
        da_j = 2.0 * ca * om * dgam / k
        e_j = math.exp(-a_j)
        fac = 2.0 if j < n - 1 else 1.0
        p = fac * w32[k] * nu[j] * e_j
        dp = -p * da_j
        sum_i += om * p
        dsum_i += dgam * p + om * dp
        one = 1.0 - 2.0 * a_j
        sum_v -= p * one
        dsum_v -= dp * one - 2.0 * da_j * p
    # collected nu_n coefficient over off-diagonal cells:
    # sum_{k=1}^{n-1} k^{-3/2} + sum_{k=2}^{n} k^{-3/2}
    sum_u = cums32[n - 1] + cums32[n] - 1.0 if n >= 2 else 0.0
    sum_i *= c8
    dsum_i *= c8
    sum_v *= c8
    dsum_v *= c8
    sum_u *= c8

    es = math.exp(-ca * gamma * gamma)
    des = -es * ca * 2.0 * gamma * dgam
    a_nn = c_half * gn
    b_nn = gamma * es * nu[n - 1] * c_sing
    db_nn = (dgam * es + gamma * des) * nu[n - 1] * c_sing
    q = alpha * (lp + gamma) - z
    dq = alpha * dgam
    e_force = math.exp(-q * q / (2.0 * tn))
    de_force = -e_force * q * dq / tn
    denom = 1.0 + alpha * a_nn
    num = alpha * (sum_i + b_nn) + e_force * c_tn
    nu_n = -num / denom
    dnu_n = (-(alpha * (dsum_i + db_nn) + de_force * c_tn) * denom + num * alpha * c_half) / (
        denom * denom
    )

    u_nn = (1.0 + es) * c_sing + alpha * alpha * (1.5 * (d * gn) ** 2 + gamma * gamma) * c3
    du_nn = des * c_sing + alpha * alpha * (3.0 * d * d * gn + 2.0 * gamma * dgam) * c3
    v_nn = -((1.0 + es) * c_sing - alpha * alpha * gamma * gamma * es * c3) * nu[n - 1]
    dv_nn = -(des * c_sing - alpha * alpha * (2.0 * gamma * dgam * es + gamma * gamma * des) * c3) * nu[
        n - 1
    ]
    coef = alpha * gn + c_tn + 0.5 * (sum_u + u_nn)
    dcoef = alpha + 0.5 * du_nn
    resid = gn + 0.5 * (sum_v + v_nn) + coef * nu_n + q * e_force * c_t3
    dresid = (
        1.0
        + 0.5 * (dsum_v + dv_nn)
        + dcoef * nu_n
        + coef * dnu_n
        + (dq * e_force + q * de_force) * c_t3
    )
    return resid, dresid, nu_n


@njit(cache=True)
def _advance_kernel(n, d, alpha, z, nu, g, L, w32, cums32, tol, max_iter, bisect_steps):
    """Newton with analytic derivative, bisection fallback.

    Returns (status, g_n, nu_n, best_residual); status 0 = root accepted,
    1 = no root located.
    """
    gn = g[n - 1]
    best = 1e300
    for _ in range(max_iter):
        f, fp, nun = _residual_kernel(gn, n, d, alpha, z, nu, g, L, w32, cums32)
        af = abs(f)
        if af <= tol:
            return 0, gn, nun, af
        if af < best:
            best = af
        if not math.isfinite(fp) or fp == 0.0:
            break
        g_new = gn - f / fp
        if not math.isfinite(g_new) or abs(g_new) > 1e12:
            break
        gn = g_new
    lo = 0.0
    hi = 10.0 * max(1.0, g[n - 1])
    f_lo, _, nu_lo = _residual_kernel(lo, n, d, alpha, z, nu, g, L, w32, cums32)
    if abs(f_lo) <= tol:
        return 0, lo, nu_lo, abs(f_lo)
    f_hi, _, nu_hi = _residual_kernel(hi, n, d, alpha, z, nu, g, L, w32, cums32)
    if abs(f_hi) <= tol:
        return 0, hi, nu_hi, abs(f_hi)
    if (f_lo > 0.0) == (f_hi > 0.0):
        return 1, 0.0, 0.0, min(best, abs(f_lo), abs(f_hi))
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        f_mid, _, nu_mid = _residual_kernel(mid, n, d, alpha, z, nu, g, L, w32, cums32)
        if abs(f_mid) <= tol or hi - lo < 1e-300:
            return 0, mid, nu_mid, abs(f_mid)
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    f_mid, _, nu_mid = _residual_kernel(mid, n, d, alpha, z, nu, g, L, w32, cums32)
    return 0, mid, nu_mid, abs(f_mid)


@njit(cache=True)
def _run_kernel(n_steps, d, alpha, z, g_max, tol, max_iter, bisect_steps, nu, g, L, w32, cums32):
    """Full recursion; returns (status, node): status 0 done, 1 newton
    divergence at node, 2 rate threshold breached at node."""
    for n in range(1, n_steps + 1):
        status, gn, nun, _ = _advance_kernel(
            n, d, alpha, z, nu, g, L, w32, cums32, tol, max_iter, bisect_steps
        )
        if status != 0:
            return 1, n
        g[n] = gn
        nu[n] = nun
        L[n] = L[n - 1] + 0.5 * d * (gn + g[n - 1])
        if gn > g_max or L[n] >= 1.0:
            return 2, n
    return 0, 0


def _tables(n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n_steps + 2, dtype=float)
    k[0] = 1.0
    w32 = k ** -1.5
    cums32 = np.cumsum(w32)
    cums32 -= cums32[0]          # cums32[m] = sum_{k=1}^{m} k^{-3/2}
    return w32, cums32


def step(n: int, history: SolutionPath, spec: ProblemSpec) -> tuple[float, float]:
    """Advance the recursion by one node given nodes 1..n-1.

    Returns (nu_n, g_n).  Raises NewtonDivergenceError when the scalar
    equation has no locatable root, which signals a loss-rate explosion.
    """
    if history.blow_up is not None:
        raise ValueError("cannot advance a path that already reports a blow-up")
    if len(history.g) != n - 1:
        raise ValueError(f"history must hold exactly nodes 1..{n - 1}")
    if n > spec.grid.n_steps:
        raise ValueError("node index beyond the grid")
    n_steps = spec.grid.n_steps
    nu = np.zeros(n_steps + 1)
    g = np.zeros(n_steps + 1)
    big_l = np.zeros(n_steps + 1)
    nu[1:n] = history.nu
    g[1:n] = history.g
    big_l[1:n] = history.L
    w32, cums32 = _tables(n_steps)
    status, g_n, nu_n, best = _advance_kernel(
        n, spec.grid.delta, spec.alpha, spec.z, nu, g, big_l, w32, cums32, 1e-12, 50, 200
    )
    if status != 0:
        raise NewtonDivergenceError(n, best)
    return nu_n, g_n


def solve(
    spec: ProblemSpec,
    *,
    g_max: float = 1e6,
    newton_tol: float = 1e-12,
    max_iter: int = 50,
    bisect_steps: int = 200,
) -> SolutionPath:
    """Run the recursion over the whole grid, reporting blow-up if it occurs.

    On failure at node n the returned arrays hold the accepted nodes 1..n-1
    and blow_up carries the node, its time and the diagnosed cause.
    """
    n_steps = spec.grid.n_steps
    d = spec.grid.delta
    nu = np.zeros(n_steps + 1)
    g = np.zeros(n_steps + 1)
    big_l = np.zeros(n_steps + 1)
    w32, cums32 = _tables(n_steps)
    status, node = _run_kernel(
        n_steps, d, spec.alpha, spec.z, g_max, newton_tol, max_iter, bisect_steps,
        nu, g, big_l, w32, cums32,
    )
    report = None
    last = n_steps
    if status == 1:
        report = BlowUpReport(node=node, time=node * d, cause="newton_divergence",
                              last_g=g[node - 1])
        last = node - 1
    elif status == 2:
        report = BlowUpReport(node=node, time=node * d, cause="rate_threshold",
                              last_g=g[node - 1])
        last = node - 1
    return SolutionPath(
        grid=spec.grid,
        nu=nu[1 : last + 1].copy(),
        g=g[1 : last + 1].copy(),
        L=big_l[1 : last + 1].copy(),
        blow_up=report,
    )


# ---------------------------------------------------------------------------
# Derived quantities
# ---------------------------------------------------------------------------

def master_equation_residual(path: SolutionPath, spec: ProblemSpec) -> np.ndarray:
    """Residual of the first-passage master identity along the solved path.

    Per node: Phi((alpha L_t - z)/sqrt t) - int_0^t Phi(alpha (L_t - L_s)/sqrt(t-s)) dL_s,
    with the right side a midpoint Riemann-Stieltjes sum over the piecewise
    linear L.  Zero loss-rate feedback reduces it to (1 - Phi(z/sqrt t)) - L_t/2,
    which vanishes for the exact loss.
    """
    if path.blow_up is not None:
        raise ValueError("identity residual is defined for non-exploding paths only")
    a, z = spec.alpha, spec.z
    d = path.grid.delta
    n = len(path.L)
    L = np.concatenate(([0.0], path.L))
    t = d * np.arange(n + 1)
    t_mid = d * (np.arange(1, n + 1) - 0.5)
    l_mid = 0.5 * (L[:-1] + L[1:])
    dl = np.diff(L)
    out = np.empty(n)
    for m in range(1, n + 1):
        lhs = normal_cdf((a * L[m] - z) / math.sqrt(t[m]))
        integrand = normal_cdf(a * (L[m] - l_mid[:m]) / np.sqrt(t[m] - t_mid[:m]))
        out[m - 1] = lhs - float(np.dot(integrand, dl[:m]))
    return out


def frozen_drift(path: SolutionPath, spec: ProblemSpec) -> hp.DriftSpec:
    """The solved feedback drift M = -alpha L as a tabulated DriftSpec.

    Carries the slope trace -alpha g, so feeding it back through the
    given-drift solver reproduces the coupled solution exactly.
    """
    a = spec.alpha
    values = np.concatenate(([0.0], -a * path.L))
    slopes = np.concatenate(([0.0], -a * path.g))
    return hp.DriftSpec.tabulated(values, slopes)


def density_slice(path: SolutionPath, spec: ProblemSpec, x_grid: np.ndarray, t_node: int) -> np.ndarray:
    """Absorbed transition density at a time node, from the solved path."""
    if path.blow_up is not None and t_node > len(path.g):
        raise ValueError("t_node lies beyond the last accepted node of an exploding path")
    grid = GridSpec(path.grid.delta * len(path.g), len(path.g)) if path.blow_up else path.grid
    return hp.transition_density(path.nu, frozen_drift(path, spec), grid, spec.z, x_grid, t_node)
