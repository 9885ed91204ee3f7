"""Scalar math primitives shared by all solvers.

Everything here is pure and stateless: the Gaussian heat kernel, the
standard normal CDF, the exponential damping kernel appearing in the
boundary-weight integral equations, and a three-way checker for the
identity that moves a d/dt through a 1/sqrt(t-t') convolution.

All singular integrals use the substitution u = sqrt(t - t'), which
removes the inverse square-root factor before quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GridSpec:
    """Uniform time grid on [0, t_end] with nodes t_n = n * delta.

    Parameters
    ----------
    t_end : float
        Horizon, > 0.
    n_steps : int
        Number of subintervals, >= 2. delta = t_end / n_steps.
    """

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (self.t_end > 0.0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")

    @property
    def delta(self) -> float:
        return self.t_end / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        """All nodes t_n = n*delta for n = 0..n_steps (length n_steps + 1)."""
        return np.arange(self.n_steps + 1) * self.delta

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(self.t_end, self.n_steps * factor)


def normal_cdf(x):
    """Standard normal CDF, accurate to better than 1e-14 absolute."""
    return ndtr(x)


def heat_kernel(t, y, z):
    """Gaussian kernel exp(-(y-z)^2 / 2t) / sqrt(2 pi t) for t > 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("heat_kernel requires t > 0")
    y = np.asarray(y, dtype=float)
    out = np.exp(-((y - z) ** 2) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)
    return out if out.ndim else float(out)


def xi_kernel(t, t_prime, psi):
    """Damping factor exp(-psi^2 / (2 (t - t'))), equal to 1 on the diagonal.

    The diagonal value is the continuous extension for displacements psi
    that vanish at least linearly in t - t'.
    """
    t = np.asarray(t, dtype=float)
    t_prime = np.asarray(t_prime, dtype=float)
    if np.any(t < t_prime):
        raise ValueError("xi_kernel requires t >= t_prime")
    psi = np.asarray(psi, dtype=float)
    tau = t - t_prime
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(tau > 0.0, np.exp(-(psi ** 2) / (2.0 * np.where(tau > 0, tau, 1.0))), 1.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Three equivalent forms of  d/dt int_0^t Xi(t,t') nu(t') / sqrt(2pi(t-t')) dt'
# for differentiable Xi with Xi(t, t) = 1.  Used as a mutual-consistency
# oracle; the solvers rely on the regularized (form-1) rewriting.
# ---------------------------------------------------------------------------

_FD_STEP_FRACTION = 1e-4  # d/dt step is t * this (balances truncation vs noise)


def _convolution(xi, nu, s: float, quad_n: int) -> float:
    """int_0^s xi(s,t') nu(t') / sqrt(2pi (s-t')) dt' by u-substituted trapezoid."""
    u = np.linspace(0.0, math.sqrt(s), quad_n + 1)
    tp = s - u * u
    vals = xi(s, tp) * nu(tp)
    return 2.0 / SQRT_2PI * float(np.trapezoid(vals, u))


def _xi_t_default(xi, t, tp, scale):
    """Partial of xi in its first argument; forward-biased near the diagonal
    so kernels defined only on t >= t' are never probed out of domain."""
    h = scale * 1e-6
    tp = np.atleast_1d(np.asarray(tp, dtype=float))
    out = np.empty_like(tp)
    near = tp > t - h
    if np.any(near):
        a = tp[near]
        out[near] = (-3.0 * xi(t, a) + 4.0 * xi(t + h, a) - xi(t + 2.0 * h, a)) / (2.0 * h)
    if np.any(~near):
        a = tp[~near]
        out[~near] = (xi(t + h, a) - xi(t - h, a)) / (2.0 * h)
    return out


def lemma1_lhs(xi: Callable, nu: Callable, t: float, quad_n: int) -> float:
    """Central finite difference of the convolution integral itself."""
    if t <= 0.0:
        raise ValueError("t must be positive")
    h = t * _FD_STEP_FRACTION
    return (_convolution(xi, nu, t + h, quad_n) - _convolution(xi, nu, t - h, quad_n)) / (2.0 * h)


def lemma1_rhs_form1(
    xi: Callable,
    nu: Callable,
    t: float,
    quad_n: int,
    xi_t: Optional[Callable] = None,
) -> float:
    """Regularized form: nu(t)/sqrt(2pi t) plus a compensated 3/2-singular integral.

    The integrand [nu(t) - (Xi - 2(t-t') Xi_t) nu(t')] vanishes linearly at
    t' = t, so after u = sqrt(t-t') it has a finite diagonal limit, obtained
    here by a one-sided second-order difference.
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    if xi_t is None:
        xi_t = lambda a, b: _xi_t_default(xi, a, b, max(t, 1.0))  # noqa: E731

    def weighted(tp):
        tp = np.asarray(tp, dtype=float)
        return (xi(t, tp) - 2.0 * (t - tp) * xi_t(t, tp)) * nu(tp)

    u = np.linspace(0.0, math.sqrt(t), quad_n + 1)
    tp = t - u * u
    nut = float(np.ravel(nu(np.asarray(t)))[0])
    vals = np.empty_like(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals[1:] = (nut - weighted(tp[1:])) / (u[1:] ** 2)
    # diagonal limit: d/dt' of the weighted product at t' = t
    d = t * 1e-5
    vals[0] = (
        3.0 * nut
        - 4.0 * float(np.ravel(weighted(t - d))[0])
        + float(np.ravel(weighted(t - 2 * d))[0])
    ) / (2.0 * d)
    return nut / math.sqrt(2.0 * math.pi * t) + float(np.trapezoid(vals, u)) / SQRT_2PI


def lemma1_rhs_form2(
    xi: Callable,
    nu: Callable,
    t: float,
    quad_n: int,
    xi_t: Optional[Callable] = None,
) -> float:
    """Integrated-by-parts form: the t'-derivative of the weighted product
    under the 1/sqrt kernel, plus the boundary contribution at t' = 0.

    The boundary term (Xi(t,0) - 2t Xi_t(t,0)) nu(0) / sqrt(2pi t) is required
    for the identity to hold for arbitrary smooth pairs; it vanishes whenever
    nu(0) = 0.
    """
    if t <= 0.0:
        raise ValueError("t must be positive")
    if xi_t is None:
        xi_t = lambda a, b: _xi_t_default(xi, a, b, max(t, 1.0))  # noqa: E731

    def weighted(tp):
        tp = np.asarray(tp, dtype=float)
        return (xi(t, tp) - 2.0 * (t - tp) * xi_t(t, tp)) * nu(tp)

    d = t * 1e-5

    def dweighted(tp):
        tp = np.atleast_1d(np.asarray(tp, dtype=float))
        out = np.empty_like(tp)
        lo = tp < d
        hi = tp > t - d
        mid = ~(lo | hi)
        if np.any(mid):
            a = tp[mid]
            out[mid] = (weighted(a + d) - weighted(a - d)) / (2.0 * d)
        if np.any(lo):
            a = tp[lo]
            out[lo] = (-3.0 * weighted(a) + 4.0 * weighted(a + d) - weighted(a + 2 * d)) / (2.0 * d)
        if np.any(hi):
            a = tp[hi]
            out[hi] = (3.0 * weighted(a) - 4.0 * weighted(a - d) + weighted(a - 2 * d)) / (2.0 * d)
        return out

    u = np.linspace(0.0, math.sqrt(t), quad_n + 1)
    integral = 2.0 / SQRT_2PI * float(np.trapezoid(dweighted(t - u * u), u))
    boundary = float(np.ravel(weighted(np.asarray(0.0)))[0]) / math.sqrt(2.0 * math.pi * t)
    return integral + boundary
