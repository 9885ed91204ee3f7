"""Exact first-passage quantities used as oracles throughout.

Covers the no-feedback case (boundary weight, loss rate, its integral and
time derivatives, the reflection-principle density) and the constant-drift
loss rate.  All functions are vectorized over t and extended continuously
by 0 at t = 0, where every expression decays like exp(-z^2/2t).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import SQRT_2PI, normal_cdf


def _check_z(z: float) -> float:
    z = float(z)
    if not z > 0.0:
        raise ValueError(f"start point z must be > 0, got {z}")
    return z


def _masked_eval(t, fn):
    """Evaluate fn on the t > 0 part, return 0 elsewhere (continuous extension)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("t must be >= 0")
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    out = np.zeros_like(t)
    pos = t > 0.0
    if np.any(pos):
        out[pos] = fn(t[pos])
    return float(out[0]) if scalar else out


def g0(t, z):
    """Loss rate with no feedback: z exp(-z^2/2t) / sqrt(2 pi t^3)."""
    z = _check_z(z)
    return _masked_eval(t, lambda s: z * np.exp(-z * z / (2.0 * s)) / np.sqrt(2.0 * np.pi * s ** 3))


def nu0(t, z):
    """Boundary weight with no feedback: -exp(-z^2/2t) / sqrt(2 pi t)."""
    z = _check_z(z)
    return _masked_eval(t, lambda s: -np.exp(-z * z / (2.0 * s)) / np.sqrt(2.0 * np.pi * s))


def nu0_t(t, z):
    """Time derivative of nu0 (analytic)."""
    z = _check_z(z)
    return _masked_eval(
        t,
        lambda s: -np.exp(-z * z / (2.0 * s))
        / np.sqrt(2.0 * np.pi * s)
        * (z * z / (2.0 * s * s) - 1.0 / (2.0 * s)),
    )


def g0_t(t, z):
    """Time derivative of g0 (analytic)."""
    z = _check_z(z)
    return _masked_eval(
        t,
        lambda s: z
        * np.exp(-z * z / (2.0 * s))
        / np.sqrt(2.0 * np.pi * s ** 3)
        * (z * z / (2.0 * s * s) - 3.0 / (2.0 * s)),
    )


def omega0(t, t_prime, z):
    """Integral of g0 over [t', t]: 2 (Phi(z/sqrt t') - Phi(z/sqrt t)).

    t' = 0 gives the cumulative loss 2 (1 - Phi(z/sqrt t)).
    """
    z = _check_z(z)
    t = np.asarray(t, dtype=float)
    t_prime = np.asarray(t_prime, dtype=float)
    if np.any(t_prime < 0.0):
        raise ValueError("t_prime must be >= 0")
    if np.any(t_prime > t):
        raise ValueError("omega0 requires t_prime <= t")
    scalar = t.ndim == 0 and t_prime.ndim == 0
    t, t_prime = np.atleast_1d(t * np.ones_like(t_prime)), np.atleast_1d(t_prime * np.ones_like(t))
    upper = np.where(t > 0.0, 2.0 * normal_cdf(z / np.sqrt(np.where(t > 0, t, 1.0))), 2.0)
    lower = np.where(t_prime > 0.0, 2.0 * normal_cdf(z / np.sqrt(np.where(t_prime > 0, t_prime, 1.0))), 2.0)
    out = lower - upper
    return float(out[0]) if scalar else out


def loss0(t, z):
    """Cumulative loss with no feedback: 2 (1 - Phi(z/sqrt t))."""
    return omega0(t, 0.0, z)


def g_const_drift(t, z, mu):
    """Constant-drift loss rate z exp(-(z - mu t)^2 / 2t) / sqrt(2 pi t^3).

    mu parameterizes the drift of the absorbing boundary toward the mass:
    this is the density of the first time z - mu*t + W_t hits 0.  A diffusion
    with state drift m (as in DriftSpec.linear) therefore matches
    g_const_drift(t, z, -m).
    """
    z = _check_z(z)
    mu = float(mu)
    return _masked_eval(
        t, lambda s: z * np.exp(-((z - mu * s) ** 2) / (2.0 * s)) / np.sqrt(2.0 * np.pi * s ** 3)
    )


@dataclass(frozen=True)
class ZeroDriftSolution:
    """No-feedback solution bound to one interior start point z > 0."""

    z: float

    def __post_init__(self):
        _check_z(self.z)

    def g(self, t):
        return g0(t, self.z)

    def nu(self, t):
        return nu0(t, self.z)

    def omega(self, t, t_prime):
        return omega0(t, t_prime, self.z)

    def loss(self, t):
        return loss0(t, self.z)

    def density(self, t, x):
        return images_density(t, x, self.z)


def images_density(t, x, z):
    """Absorbed transition density with no drift, by the reflection principle."""
    z = _check_z(z)
    t = float(t)
    if t <= 0.0:
        raise ValueError("t must be > 0")
    x = np.asarray(x, dtype=float)
    out = (np.exp(-((x - z) ** 2) / (2.0 * t)) - np.exp(-((x + z) ** 2) / (2.0 * t))) / np.sqrt(
        2.0 * np.pi * t
    )
    return out if out.ndim else float(out)
