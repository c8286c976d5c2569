"""Known-date spike component.

Spike ``i`` has its own Brownian factor which diffuses the forwards maturing
in the window ``H_i = [z_i, z_i + h_i)`` until ``z_i``. Outside all windows the
component contributes nothing to forwards or the short rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calendar import JumpSchedule, PiecewiseFlatCurve

_EDGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpikeModelParams:
    schedule: JumpSchedule
    sigma_z: np.ndarray
    f0: PiecewiseFlatCurve

    def __post_init__(self):
        if self.schedule.kind != "spike":
            raise ValueError("spike model needs a spike schedule")
        n = len(self.schedule)
        if n < 1:
            raise ValueError("spike model needs at least one spike date")
        sig = np.asarray(self.sigma_z, dtype=float).reshape(-1)
        if sig.size != n:
            raise ValueError(f"len(sigma_z)={sig.size} but schedule has {n} dates")
        if np.any(sig < 0):
            raise ValueError("sigma_z must be non-negative")
        sig.setflags(write=False)
        object.__setattr__(self, "sigma_z", sig)
        z = self.schedule.array
        h = np.asarray(self.schedule.widths, dtype=float)
        object.__setattr__(self, "_z", z)
        object.__setattr__(self, "_h", h)
        # every f0 interval must be inside a window or carry zero
        b = self.f0.breaks
        lo = np.concatenate([[-np.inf], b])
        hi = np.concatenate([b, [np.inf]])
        win = self.in_window(lo)
        contained = (win & (hi[:, None] <= z + h + _EDGE_TOL)).any(axis=-1)
        if np.any((~contained) & (self.f0.levels != 0.0)):
            raise ValueError("spike forward curve must be zero outside the spike windows")

    @classmethod
    def from_heights(cls, schedule: JumpSchedule, sigma_z, heights) -> "SpikeModelParams":
        n = len(schedule)
        heights = np.broadcast_to(np.asarray(heights, float), (n,))
        f0 = PiecewiseFlatCurve.spikes(schedule.times, schedule.widths, heights)
        return cls(schedule, np.broadcast_to(np.asarray(sigma_z, float), (n,)).copy(), f0)

    @property
    def n(self) -> int:
        return len(self.schedule)

    @property
    def z(self) -> np.ndarray:
        return self._z

    @property
    def h(self) -> np.ndarray:
        return self._h

    @property
    def heights(self) -> np.ndarray:
        return np.asarray(self.f0(self._z), dtype=float).reshape(-1)

    def in_window(self, T) -> np.ndarray:
        """Boolean ``1(T in H_i)`` with trailing spike axis."""
        T = np.asarray(T, dtype=float)[..., None]
        # the end is a date too; absorb rounding in z + h so the next day stays outside
        return (T >= self._z) & (T < self._z + self._h - _EDGE_TOL)


@dataclass(frozen=True, eq=False)
class SpikeFactorState:
    """``w[..., i] = W_i(t ^ z_i)`` at model time ``t``."""

    t: float
    w: np.ndarray

    @classmethod
    def initial(cls, params: SpikeModelParams, n_paths: int | None = None) -> "SpikeFactorState":
        shape = (params.n,) if n_paths is None else (n_paths, params.n)
        return cls(0.0, np.zeros(shape))


def _check(params, state):
    if state.w.shape[-1] != params.n:
        raise ValueError("state does not match the spike schedule")


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def forward_drift_z(params: SpikeModelParams, t: float, T):
    win = params.in_window(T)
    T = np.asarray(T, dtype=float)[..., None]
    out = (np.where(win, (T - params.z) * np.minimum(t, params.z), 0.0) * params.sigma_z**2).sum(-1)
    return _scalar(out)


def forward_rate_z(params: SpikeModelParams, state: SpikeFactorState, t: float, T):
    _check(params, state)
    if np.any(np.asarray(T) < t):
        raise ValueError("forward_rate_z requires t <= T")
    if abs(state.t - t) > 1e-12:
        raise ValueError(f"state is at t={state.t}, not {t}")
    win = params.in_window(T).astype(float)
    T_arr = np.asarray(T, dtype=float)
    if T_arr.ndim and state.w.ndim > 1:
        stoch = np.einsum("pi,i,ki->pk", state.w, params.sigma_z, win)
    else:
        stoch = (win * params.sigma_z * state.w).sum(-1)
    return _scalar(params.f0(T_arr) + forward_drift_z(params, t, T_arr) + stoch)


def _require_frozen(params, state, t):
    passed = params.z <= t
    if np.any(passed) and state.t < params.z[passed].max() - 1e-12:
        raise ValueError("state does not yet hold the frozen spike factors needed at t")


def short_rate_z(params: SpikeModelParams, state: SpikeFactorState, t: float):
    _check(params, state)
    _require_frozen(params, state, t)
    win = params.in_window(t)
    det = params.f0(t) + float((np.where(win, (t - params.z) * params.z, 0.0) * params.sigma_z**2).sum())
    return _scalar(det + short_rate_spike_part(params, state, t))


def short_rate_spike_part(params: SpikeModelParams, state: SpikeFactorState, t: float):
    """Random term ``sum_i sigma_i 1(t in H_i) W_i(z_i)``: frozen over each window, zero outside."""
    _check(params, state)
    _require_frozen(params, state, t)
    return _scalar((params.in_window(t) * params.sigma_z * state.w).sum(-1))


def window_overlap(params: SpikeModelParams, t, T) -> np.ndarray:
    """``int_t^T 1(s in H_i) ds`` per spike in the closed form used by the bond price."""
    z, h = params.z, params.h
    t = np.asarray(t, dtype=float)[..., None]
    T = np.asarray(T, dtype=float)[..., None]
    m = np.minimum(np.minimum(T - z, T - t), np.minimum(h, z + h - t))
    return np.maximum(m, 0.0)


def _half_square(u, h):
    """``int_0^u 1(s in H)(s - z) ds`` as a function of ``u - z`` (zero when negative)."""
    return np.where(u >= 0.0, np.minimum(h**2, u**2) / 2.0, 0.0)


def integrated_short_rate_z(params: SpikeModelParams, state: SpikeFactorState, t: float):
    """Exact ``int_0^t r^Z(s) ds`` on a path."""
    _check(params, state)
    _require_frozen(params, state, t)
    z, h, sig = params.z, params.h, params.sigma_z
    det = params.f0.integrate(0.0, t) + float((sig**2 * z * _half_square(t - z, h)).sum())
    held = np.clip(np.minimum(t - z, h), 0.0, None)
    return det + (held * sig * state.w).sum(-1)


def bond_price_z(params: SpikeModelParams, state: SpikeFactorState, t: float, T: float):
    _check(params, state)
    if T < t:
        raise ValueError("bond_price_z requires t <= T")
    if abs(state.t - t) > 1e-12:
        raise ValueError(f"state is at t={state.t}, not {t}")
    z, h, sig = params.z, params.h, params.sigma_z
    i1 = _half_square(T - z, h)
    i2 = _half_square(t - z, h)
    a = -float((sig**2 * np.minimum(t, z) * (i1 - i2)).sum())
    b = -(sig * state.w * window_overlap(params, t, T)).sum(-1)
    return _scalar(np.exp(-params.f0.integrate(t, T)) * np.exp(a + b))


def evolve_spike_state(params: SpikeModelParams, state: SpikeFactorState, dt: float, normals):
    """Advance stopped spike factors by ``dt``; splits at spike dates like the step model."""
    from .step_model import _TIME_TOL, substep_bounds

    if dt <= 0:
        raise ValueError("dt must be positive")
    _check(params, state)
    normals = np.asarray(normals, dtype=float)
    if not np.all(np.isfinite(normals)):
        raise ValueError("normals must be finite")
    bounds = substep_bounds(params.z, state.t, dt)
    if len(bounds) == 1:
        normals = normals[None]
    elif normals.shape[0] != len(bounds):
        raise ValueError(f"step crosses {len(bounds) - 1} spike date(s); need {len(bounds)} slices of normals")
    w = state.w.copy()
    t = state.t
    for t_end, dz in zip(bounds, normals):
        active = params.z > t + _TIME_TOL
        w[..., active] += (np.sqrt(t_end - t) * dz)[..., active]
        t = t_end
    return SpikeFactorState(state.t + dt, w)
