"""Target-rate step component.

One Brownian factor per FOMC date ``x_i``. Factor ``i`` diffuses forwards
maturing at or after ``x_i`` until ``x_i`` and is frozen afterwards, so the
short rate picks up the accumulated diffusion as a jump at ``x_i`` and is
otherwise driven only by deterministic terms.

Correlated factors ``Z = lambda @ W`` are rewritten on independent Brownian
motions ``W_j``. States store ``W_j(t ^ x_i)`` as an array ``w[..., j, i]``;
leading axes index simulated paths, so every function here works on a single
state or on a batch of paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calendar import JumpSchedule, PiecewiseFlatCurve

_SYM_TOL = 1e-12
_PSD_TOL = 1e-8
_TIME_TOL = 1e-12


def decompose_correlation(rho) -> np.ndarray:
    """Return ``lam`` with ``lam @ lam.T == rho``.

    Positive definite input gets its lower Cholesky factor. Semidefinite
    input falls back to an eigen factorization with eigenvalues sorted in
    decreasing order, so columns beyond the numerical rank are exactly zero.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(rho, rho.T, atol=_SYM_TOL, rtol=0.0):
        raise ValueError("correlation matrix is not symmetric")
    rho = 0.5 * (rho + rho.T)
    vals, vecs = np.linalg.eigh(rho)
    if vals[0] < -_PSD_TOL:
        raise ValueError(f"correlation matrix is not positive semidefinite (min eigenvalue {vals[0]:.3g})")
    if vals[0] > 1e-10:
        try:
            return np.linalg.cholesky(rho)
        except np.linalg.LinAlgError:
            pass
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    rank_tol = max(rho.shape[0] * np.finfo(float).eps * max(vals[0], 1.0), 1e-12)
    keep = vals > rank_tol
    lam = np.zeros_like(rho)
    lam[:, keep] = vecs[:, keep] * np.sqrt(vals[keep])
    return lam


@dataclass(frozen=True, eq=False)
class StepModelParams:
    schedule: JumpSchedule
    xi: np.ndarray
    rho: np.ndarray
    f0: PiecewiseFlatCurve
    lam: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.schedule)
        if n < 1:
            raise ValueError("step model needs at least one FOMC date")
        if self.schedule.kind != "step":
            raise ValueError("step model needs a step schedule")
        xi = np.asarray(self.xi, dtype=float).reshape(-1)
        rho = np.asarray(self.rho, dtype=float)
        if xi.size != n:
            raise ValueError(f"len(xi)={xi.size} but schedule has {n} dates")
        if np.any(xi < 0):
            raise ValueError("xi must be non-negative")
        if rho.shape != (n, n):
            raise ValueError(f"rho must be {n}x{n}")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise ValueError("rho must have a unit diagonal")
        lam = decompose_correlation(rho) if self.lam is None else np.asarray(self.lam, dtype=float)
        if np.max(np.abs(lam @ lam.T - rho)) >= 1e-10:
            raise ValueError("lam @ lam.T does not reproduce rho")
        x = self.schedule.array
        for name, value in (("xi", xi), ("rho", rho), ("lam", lam)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        # pairwise constants of the drift: C[q, i] = xi_q xi_i rho_qi
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_c", np.outer(xi, xi) * rho)
        object.__setattr__(self, "_xmax", np.maximum.outer(x, x))
        object.__setattr__(self, "_xmin", np.minimum.outer(x, x))

    @classmethod
    def independent(cls, schedule, xi, f0):
        n = len(schedule)
        return cls(schedule, np.broadcast_to(np.asarray(xi, float), (n,)).copy(), np.eye(n), f0)

    @property
    def n(self) -> int:
        return len(self.schedule)

    @property
    def x(self) -> np.ndarray:
        return self._x


@dataclass(frozen=True, eq=False)
class StepFactorState:
    """``w[..., j, i] = W_j(t ^ x_i)`` at model time ``t``."""

    t: float
    w: np.ndarray

    @classmethod
    def initial(cls, params: StepModelParams, n_paths: int | None = None) -> "StepFactorState":
        shape = (params.n, params.n) if n_paths is None else (n_paths, params.n, params.n)
        return cls(0.0, np.zeros(shape))

    def z(self, params: StepModelParams) -> np.ndarray:
        """Correlated stopped factors ``Z_i(t ^ x_i) = sum_j lam_ij W_j(t ^ x_i)``, shape ``(..., n)``."""
        return np.einsum("ij,...ji->...i", params.lam, self.w)


def _check_state(params: StepModelParams, state: StepFactorState):
    if state.w.shape[-2:] != (params.n, params.n):
        raise ValueError("state does not match the parameter schedule")


def forward_drift(params: StepModelParams, t, T):
    """Risk-neutral drift of ``f^P(t, T)``, computed with ``rho`` directly."""
    T = np.asarray(T, dtype=float)
    Tq = T[..., None, None]
    x_i = params.x[None, :]
    on = Tq >= params._xmax
    term = params._c * np.where(on, Tq - x_i, 0.0) * np.minimum(t, params._xmin)
    out = term.sum(axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def forward_drift_lambda(params: StepModelParams, t: float, T: float) -> float:
    """Same drift as :func:`forward_drift` evaluated through ``lam``: sum over j, q, i."""
    x, xi, lam = params.x, params.xi, params.lam
    n = params.n
    total = 0.0
    for j in range(n):
        for q in range(n):
            for i in range(n):
                if T >= max(x[q], x[i]):
                    total += xi[q] * xi[i] * lam[q, j] * lam[i, j] * (T - x[i]) * min(t, x[q], x[i])
    return total


def short_rate_drift(params: StepModelParams, t):
    """Deterministic increment of ``r^P(t)`` over ``f^P(0, t)``."""
    t = np.asarray(t, dtype=float)
    tq = t[..., None, None]
    on = tq >= params._xmax
    term = params._c * np.where(on, tq - params.x[None, :], 0.0) * params._xmin
    out = term.sum(axis=(-2, -1))
    return float(out) if out.ndim == 0 else out


def forward_rate_p(params: StepModelParams, state: StepFactorState, t: float, T):
    """Instantaneous forward ``f^P(t, T)`` given stopped factor values at ``t``."""
    _check_state(params, state)
    if np.any(np.asarray(T) < t):
        raise ValueError("forward_rate_p requires t <= T")
    if abs(state.t - t) > 1e-12:
        raise ValueError(f"state is at t={state.t}, not {t}")
    T = np.asarray(T, dtype=float)
    z = state.z(params)
    on = (T[..., None] >= params.x).astype(float)
    if T.ndim and z.ndim > 1:
        stoch = np.einsum("...i,i,ki->...k", z, params.xi, on)
    else:
        stoch = (on * params.xi * z).sum(axis=-1)
    out = params.f0(T) + forward_drift(params, t, T) + stoch
    return float(out) if np.ndim(out) == 0 else out


def _require_frozen(params: StepModelParams, state: StepFactorState, t: float):
    passed = params.x <= t
    if np.any(passed) and state.t < params.x[passed].max() - 1e-12:
        raise ValueError("state does not yet hold the frozen factor values needed at t")


def short_rate_p(params: StepModelParams, state: StepFactorState, t: float):
    """Short rate ``r^P(t) = f^P(t, t)``; the stochastic part is flat between FOMC dates."""
    _check_state(params, state)
    _require_frozen(params, state, t)
    return params.f0(t) + short_rate_drift(params, t) + short_rate_jump_part(params, state, t)


def short_rate_jump_part(params: StepModelParams, state: StepFactorState, t: float):
    """Stochastic term ``sum_i xi_i 1(t >= x_i) Z_i(x_i)`` of the short rate."""
    on = (params.x <= t).astype(float)
    out = (on * params.xi * state.z(params)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _ramp_integral(t, start, x_i):
    """``int_0^t 1(s >= start)(s - x_i) ds`` with the closed form used for bond prices."""
    return np.where(t >= start, t * (t / 2.0 - x_i) - start * (start / 2.0 - x_i), 0.0)


def integrated_short_rate_p(params: StepModelParams, state: StepFactorState, t: float):
    """Exact ``int_0^t r^P(s) ds`` on a path; needs factors frozen at every ``x_i <= t``."""
    _check_state(params, state)
    _require_frozen(params, state, t)
    x = params.x
    det = params.f0.integrate(0.0, t)
    det += float((params._c * params._xmin * _ramp_integral(t, params._xmax, x[None, :])).sum())
    held = np.clip(t - x, 0.0, None)
    stoch = (held * params.xi * state.z(params)).sum(axis=-1)
    return det + stoch


def bond_price_p(params: StepModelParams, state: StepFactorState, t: float, T: float):
    """Zero-coupon bond ``B^P(t, T) = B^P(0,T)/B^P(0,t) * exp(a(t,T) + b(t,T))``."""
    _check_state(params, state)
    if T < t:
        raise ValueError("bond_price_p requires t <= T")
    if abs(state.t - t) > 1e-12:
        raise ValueError(f"state is at t={state.t}, not {t}")
    x = params.x
    i1 = _ramp_integral(T, params._xmax, x[None, :])
    i2 = _ramp_integral(t, params._xmax, x[None, :])
    a = -float((params._c * np.minimum(t, params._xmin) * (i1 - i2)).sum())
    held = np.where(T >= x, T - np.maximum(t, x), 0.0)
    b = -(held * params.xi * state.z(params)).sum(axis=-1)
    ratio = np.exp(-params.f0.integrate(t, T))
    out = ratio * np.exp(a + b)
    return float(out) if np.ndim(out) == 0 else out


def substep_bounds(schedule_times: np.ndarray, t: float, dt: float) -> list[float]:
    """Split ``(t, t + dt]`` at every schedule time strictly inside it."""
    inner = [float(x) for x in schedule_times if t + _TIME_TOL < x < t + dt - _TIME_TOL]
    return [*inner, t + dt]


def evolve_step_state(params: StepModelParams, state: StepFactorState, dt: float, normals):
    """Advance the stopped factors by ``dt``.

    ``normals`` has trailing axis ``n`` (one draw per factor) and leading axes
    matching the state's path axes. If a FOMC date lies strictly inside
    ``(t, t + dt)`` the step is split there and ``normals`` must carry an extra
    leading axis with one slice per sub-step (see :func:`substep_bounds`).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_state(params, state)
    normals = np.asarray(normals, dtype=float)
    if not np.all(np.isfinite(normals)):
        raise ValueError("normals must be finite")
    bounds = substep_bounds(params.x, state.t, dt)
    if len(bounds) == 1:
        normals = normals[None]
    elif normals.shape[0] != len(bounds):
        raise ValueError(f"step crosses {len(bounds) - 1} FOMC date(s); need {len(bounds)} slices of normals")
    w = state.w.copy()
    t = state.t
    for t_end, z in zip(bounds, normals):
        active = params.x > t + _TIME_TOL
        if np.any(active):
            incr = np.sqrt(t_end - t) * z
            w[..., active] += incr[..., :, None]
        t = t_end
    return StepFactorState(state.t + dt, w)
