"""Composite short-rate model: step + spike + residual on independent factors.

``f = f^P + f^Z + f^V``, ``r = r^P + r^Z + r^V`` and ``B = B^P B^Z B^V``.
Either jump component may be absent (``None``), e.g. for an EFFR model with
no spike structure.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import residual as rv
from . import spike_model as sz
from . import step_model as sp
from .calendar import DateGrid, PiecewiseFlatCurve

DEFAULT_BLOCK = 8192


@dataclass(frozen=True, eq=False)
class CompositeModel:
    step: sp.StepModelParams | None
    spike: sz.SpikeModelParams | None
    residual: rv.VasicekParams
    grid: DateGrid | None = None

    def initial_states(self, n_paths: int | None = None) -> "ComponentStates":
        return ComponentStates(
            0.0,
            None if self.step is None else sp.StepFactorState.initial(self.step, n_paths),
            None if self.spike is None else sz.SpikeFactorState.initial(self.spike, n_paths),
            self.residual.r0 if n_paths is None else np.full(n_paths, self.residual.r0),
        )

    def initial_forward_curve(self) -> PiecewiseFlatCurve:
        """Deterministic ``f^P(0,.) + f^Z(0,.)`` as one piecewise-flat curve (residual excluded)."""
        curve = PiecewiseFlatCurve.flat(0.0)
        if self.step is not None:
            curve = curve + self.step.f0
        if self.spike is not None:
            curve = curve + self.spike.f0
        return curve

    def event_times(self) -> list[float]:
        out = []
        if self.step is not None:
            out.extend(self.step.x.tolist())
        if self.spike is not None:
            out.extend(self.spike.z.tolist())
            out.extend((self.spike.z + self.spike.h).tolist())
        return sorted(set(out))


@dataclass(frozen=True, eq=False)
class ComponentStates:
    t: float
    step: sp.StepFactorState | None
    spike: sz.SpikeFactorState | None
    residual_rate: float | np.ndarray


def composite_forward(model: CompositeModel, states: ComponentStates, t: float, T):
    if np.any(np.asarray(T) < t):
        raise ValueError("composite_forward requires t <= T")
    out = rv.forward_rate_v(model.residual, t, T, _col(states.residual_rate, T))
    if model.step is not None:
        out = out + sp.forward_rate_p(model.step, states.step, t, T)
    if model.spike is not None:
        out = out + sz.forward_rate_z(model.spike, states.spike, t, T)
    return out


def _col(r, T):
    """Residual rate shaped to broadcast against a (paths, maturities) result."""
    r = np.asarray(r, dtype=float)
    if r.ndim and np.ndim(T):
        return r[:, None]
    return r


def composite_bond(model: CompositeModel, states: ComponentStates, t: float, T: float):
    if T < t:
        raise ValueError("composite_bond requires t <= T")
    out = rv.bond_price_v(model.residual, t, T, states.residual_rate)
    if model.step is not None:
        out = out * sp.bond_price_p(model.step, states.step, t, T)
    if model.spike is not None:
        out = out * sz.bond_price_z(model.spike, states.spike, t, T)
    return out


def short_rate(model: CompositeModel, states: ComponentStates, t: float):
    out = np.asarray(states.residual_rate, dtype=float)
    if model.step is not None:
        out = out + sp.short_rate_p(model.step, states.step, t)
    if model.spike is not None:
        out = out + sz.short_rate_z(model.spike, states.spike, t)
    return float(out) if np.ndim(out) == 0 else out


def expected_short_rate(model: CompositeModel, states: ComponentStates, t: float, s):
    """``E_t[r(s)]`` under the spot measure.

    Stopped factors are martingales, so step and spike terms keep the factor
    values reached at ``t``; the residual mean decays towards ``theta/beta``.
    Broadcasts over an array of ``s``.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < t - 1e-12):
        raise ValueError("expected_short_rate requires t <= s")
    out = rv.mean_v(model.residual, s_arr, r_from=_col(states.residual_rate, s), t_from=t)
    if model.step is not None:
        p = model.step
        on = (s_arr[..., None] >= p.x).astype(float)
        zed = states.step.z(p)
        if s_arr.ndim and zed.ndim > 1:
            stoch = np.einsum("pi,i,ki->pk", zed, p.xi, on)
        else:
            stoch = (on * p.xi * zed).sum(-1)
        out = out + p.f0(s_arr) + sp.short_rate_drift(p, s_arr) + stoch
    if model.spike is not None:
        q = model.spike
        win = q.in_window(s_arr)
        det = q.f0(s_arr) + (np.where(win, (s_arr[..., None] - q.z) * q.z, 0.0) * q.sigma_z**2).sum(-1)
        w = states.spike.w
        if s_arr.ndim and w.ndim > 1:
            stoch = np.einsum("pi,i,ki->pk", w, q.sigma_z, win.astype(float))
        else:
            stoch = (win * q.sigma_z * w).sum(-1)
        out = out + det + stoch
    return float(out) if np.ndim(out) == 0 else out


@dataclass(eq=False)
class SimulatedPaths:
    """Paths on a common time grid (rows are paths)."""

    times: np.ndarray
    short_rate: np.ndarray
    discount: np.ndarray
    states: list = field(default_factory=list)

    def __len__(self):
        return self.short_rate.shape[0]

    def path(self, k: int) -> "SimulatedPath":
        return SimulatedPath(self.times, self.short_rate[k], self.discount[k])

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-10:
            raise KeyError(f"time {t} not on the simulation grid")
        return k

    def states_at(self, t: float) -> ComponentStates:
        if not self.states:
            raise ValueError("simulate with keep_states=True to retain component states")
        return self.states[self.index_of(t)]


@dataclass(frozen=True, eq=False)
class SimulatedPath:
    times: np.ndarray
    short_rate: np.ndarray
    discount: np.ndarray


def simulation_times(model: CompositeModel, horizon: float, step_years: float | None, extra=()) -> np.ndarray:
    """Uniform grid refined with every event time and requested extra time up to ``horizon``.

    Event times are kept bit-exact; uniform points within 1e-10 of an event are dropped.
    """
    exact = [x for x in model.event_times() if 0.0 < x <= horizon]
    exact.extend(x for x in extra if 0.0 <= x <= horizon)
    exact = sorted(set([0.0, float(horizon), *exact]))
    fill = []
    if step_years:
        k = int(math.floor(horizon / step_years + 1e-9))
        fill = (step_years * np.arange(1, k + 1)).tolist()
    pts = list(exact)
    ex = np.asarray(exact)
    for u in fill:
        if np.min(np.abs(ex - u)) > 1e-10:
            pts.append(u)
    pts.sort()
    out = [pts[0]]
    for u in pts[1:]:
        if u - out[-1] > 1e-10:
            out.append(u)
    return np.asarray(out)


def _stream(seed: int, block: int, factor: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(block, factor))
    return np.random.Generator(np.random.Philox(ss))


def _draw(seed, block, factor, shape, antithetic):
    gen = _stream(seed, block, factor)
    if not antithetic:
        return gen.standard_normal(shape)
    half = gen.standard_normal((shape[0], (shape[1] + 1) // 2))
    return np.concatenate([half, -half], axis=1)[:, : shape[1]]


def _simulate_block(model: CompositeModel, times, n, seed, block, antithetic, keep_states):
    k = len(times)
    dts = np.diff(times)
    n_step = 0 if model.step is None else model.step.n
    n_spike = 0 if model.spike is None else model.spike.n
    # one stream per factor; residual uses two (level and integral)
    zp = [_draw(seed, block, j, (k - 1, n), antithetic) for j in range(n_step)]
    zz = [_draw(seed, block, n_step + i, (k - 1, n), antithetic) for i in range(n_spike)]
    res = model.residual
    if res.sigma_v > 0.0:
        zv1 = _draw(seed, block, n_step + n_spike, (k - 1, n), antithetic)
        zv2 = _draw(seed, block, n_step + n_spike + 1, (k - 1, n), antithetic)
    states = model.initial_states(n)
    rates = np.empty((n, k))
    disc = np.empty((n, k))
    int_v = np.zeros(n)
    kept = []
    for idx in range(k):
        t = float(times[idx])
        if idx > 0:
            dt = float(dts[idx - 1])
            step_state = spike_state = None
            if model.step is not None:
                normals = np.stack([zp[j][idx - 1] for j in range(n_step)], axis=-1)
                step_state = sp.evolve_step_state(model.step, states.step, dt, normals)
                step_state = sp.StepFactorState(t, step_state.w)
            if model.spike is not None:
                normals = np.stack([zz[i][idx - 1] for i in range(n_spike)], axis=-1)
                spike_state = sz.evolve_spike_state(model.spike, states.spike, dt, normals)
                spike_state = sz.SpikeFactorState(t, spike_state.w)
            if res.sigma_v > 0.0:
                r_v, inc = rv.evolve_vasicek_with_integral(res, states.residual_rate, dt, zv1[idx - 1], zv2[idx - 1])
            else:
                r_v = rv.mean_v(res, t) * np.ones(n)
                inc = 0.0
            int_v = int_v + inc
            states = ComponentStates(t, step_state, spike_state, r_v)
        rates[:, idx] = short_rate(model, states, t)
        integral = _residual_deterministic_integral(res, t) if res.sigma_v == 0.0 else int_v
        if model.step is not None:
            integral = integral + sp.integrated_short_rate_p(model.step, states.step, t)
        if model.spike is not None:
            integral = integral + sz.integrated_short_rate_z(model.spike, states.spike, t)
        disc[:, idx] = np.exp(-integral)
        if keep_states:
            kept.append(states)
    return rates, disc, kept


def _residual_deterministic_integral(res: rv.VasicekParams, t: float) -> float:
    m = res.long_run_mean
    return m * t + (res.r0 - m) * (-math.expm1(-res.beta * t)) / res.beta


def _merge_states(parts: list[list[ComponentStates]]) -> list[ComponentStates]:
    if len(parts) == 1:
        return parts[0]
    merged = []
    for group in zip(*parts):
        first = group[0]
        merged.append(
            ComponentStates(
                first.t,
                None if first.step is None else sp.StepFactorState(first.t, np.concatenate([g.step.w for g in group])),
                None if first.spike is None else sz.SpikeFactorState(first.t, np.concatenate([g.spike.w for g in group])),
                np.concatenate([np.asarray(g.residual_rate) for g in group]),
            )
        )
    return merged


def simulate_paths(
    model: CompositeModel,
    n_paths: int,
    seed: int,
    grid_step_days: int | None = 30,
    horizon: float | None = None,
    times=(),
    antithetic: bool = False,
    keep_states: bool = False,
    workers: int = 1,
    block_size: int = DEFAULT_BLOCK,
) -> SimulatedPaths:
    """Simulate ``n_paths`` composite paths up to ``horizon`` years.

    The grid always contains every FOMC date, spike start and spike end, so
    stopped factors are sampled exactly and ``int r ds`` is integrated in
    closed form between grid points. Paths are produced in fixed blocks with
    one Philox stream per (seed, block, factor); output does not depend on
    ``workers``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if grid_step_days is not None and grid_step_days <= 0:
        raise ValueError("grid_step_days must be positive")
    if horizon is None:
        events = model.event_times()
        horizon = max([*events, *times, 0.0])
        if horizon <= 0.0:
            raise ValueError("horizon is required when the model has no schedule")
    denom = 365.0 if model.grid is None else {"ACT/365F": 365.0, "ACT/360": 360.0}[model.grid.day_count]
    step_years = None if grid_step_days is None else grid_step_days / denom
    grid_times = simulation_times(model, horizon, step_years, times)
    sizes = [min(block_size, n_paths - b0) for b0 in range(0, n_paths, block_size)]

    def run(block):
        return _simulate_block(model, grid_times, sizes[block], seed, block, antithetic, keep_states)

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(len(sizes))))
    else:
        results = [run(b) for b in range(len(sizes))]
    rates = np.concatenate([r[0] for r in results])
    disc = np.concatenate([r[1] for r in results])
    kept = _merge_states([r[2] for r in results]) if keep_states else []
    return SimulatedPaths(grid_times, rates, disc, kept)


def mc_mean(values) -> tuple[float, float]:
    """Sample mean and standard error (pairwise summation, fixed order)."""
    v = np.asarray(values, dtype=float)
    mean = float(np.sum(v) / v.size)
    se = float(np.sqrt(np.sum((v - mean) ** 2) / (v.size - 1) / v.size)) if v.size > 1 else 0.0
    return mean, se
