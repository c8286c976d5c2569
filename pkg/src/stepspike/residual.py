"""Mean-reverting Gaussian residual ``dr = (theta - beta r) dt + sigma dW``.

Standard Vasicek closed forms with state-dependent bond prices
``B(t, T) = exp(A(tau) - b(tau) r_t)``. The zero-volatility constant-spread
mode used during calibration is ``VasicekParams.constant(spread)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class VasicekParams:
    theta: float
    beta: float
    sigma_v: float
    r0: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.sigma_v < 0:
            raise ValueError("sigma_v must be non-negative")

    @classmethod
    def constant(cls, spread: float) -> "VasicekParams":
        """Zero-vol residual sitting at ``spread`` forever."""
        return cls(theta=spread, beta=1.0, sigma_v=0.0, r0=spread)

    @property
    def long_run_mean(self) -> float:
        return self.theta / self.beta

    @property
    def is_constant(self) -> bool:
        return self.sigma_v == 0.0 and self.r0 == self.long_run_mean


def mean_v(params: VasicekParams, t, r_from=None, t_from: float = 0.0):
    r_from = params.r0 if r_from is None else r_from
    decay = np.exp(-params.beta * (np.asarray(t, dtype=float) - t_from))
    return decay * r_from + (1.0 - decay) * params.long_run_mean


def variance_v(params: VasicekParams, dt):
    b = params.beta
    return params.sigma_v**2 * (1.0 - np.exp(-2.0 * b * np.asarray(dt, dtype=float))) / (2.0 * b)


def short_rate_v(params: VasicekParams, t: float, path_integral=0.0):
    """``e^{-beta t} r0 + (1 - e^{-beta t}) theta/beta`` plus the supplied stochastic convolution."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return mean_v(params, t) + path_integral


def _b(beta, tau):
    return -np.expm1(-beta * tau) / beta


def _log_a(params: VasicekParams, tau):
    b = _b(params.beta, tau)
    s2 = params.sigma_v**2
    return (params.long_run_mean - s2 / (2.0 * params.beta**2)) * (b - tau) - s2 * b**2 / (4.0 * params.beta)


def bond_price_v(params: VasicekParams, t: float, T: float, r_t):
    if T < t:
        raise ValueError("bond_price_v requires t <= T")
    tau = T - t
    out = np.exp(_log_a(params, tau) - _b(params.beta, tau) * np.asarray(r_t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def forward_rate_v(params: VasicekParams, t: float, T, r_t):
    """``-d/dT log B(t, T)``."""
    tau = np.asarray(T, dtype=float) - t
    if np.any(tau < 0):
        raise ValueError("forward_rate_v requires t <= T")
    e = np.exp(-params.beta * tau)
    out = (
        np.asarray(r_t, dtype=float) * e
        + params.long_run_mean * (1.0 - e)
        - params.sigma_v**2 * (1.0 - e) ** 2 / (2.0 * params.beta**2)
    )
    return float(out) if np.ndim(out) == 0 else out


def evolve_vasicek(params: VasicekParams, r_t, dt: float, normal):
    """Exact OU transition over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    r_t = np.asarray(r_t, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if not (np.all(np.isfinite(r_t)) and np.all(np.isfinite(normal))):
        raise ValueError("inputs must be finite")
    out = mean_v(params, dt, r_from=r_t) + math.sqrt(variance_v(params, dt)) * normal
    return float(out) if np.ndim(out) == 0 else out


def evolve_vasicek_with_integral(params: VasicekParams, r_t, dt: float, normal1, normal2):
    """Exact joint draw of ``(r_{t+dt}, int_t^{t+dt} r ds)`` from two independent normals."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    b, s = params.beta, params.sigma_v
    m = params.long_run_mean
    r_t = np.asarray(r_t, dtype=float)
    e1 = math.exp(-b * dt)
    g = -math.expm1(-b * dt) / b
    mean_r = m + (r_t - m) * e1
    mean_i = m * dt + (r_t - m) * g
    var_r = s**2 * (1.0 - e1**2) / (2.0 * b)
    if b * dt < 1e-4:
        var_i = s**2 * dt**3 / 3.0 * (1.0 - 0.75 * b * dt)
    else:
        var_i = s**2 / b**2 * (dt - 2.0 * g + (1.0 - e1**2) / (2.0 * b))
    cov = s**2 / (2.0 * b**2) * (1.0 - e1) ** 2
    sd_r = math.sqrt(var_r)
    if sd_r > 0.0:
        k = cov / sd_r
        rest = math.sqrt(max(var_i - k**2, 0.0))
        r_next = mean_r + sd_r * np.asarray(normal1)
        integral = mean_i + k * np.asarray(normal1) + rest * np.asarray(normal2)
    else:
        r_next = mean_r + 0.0 * np.asarray(normal1)
        integral = mean_i + 0.0 * np.asarray(normal1)
    return r_next, integral
