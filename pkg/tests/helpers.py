"""Synthetic fixtures shared by the test modules."""

from __future__ import annotations

import datetime as dt

import numpy as np

from stepspike import io as sio
from stepspike.calendar import BusinessCalendar, DateGrid, FixingSeries, JumpSchedule, PiecewiseFlatCurve
from stepspike.composite import CompositeModel
from stepspike.calibration import CalibrationProblem, calibrate_ff, calibrate_sofr
from stepspike.futures import FuturesContract, FuturesQuote, price_contract
from stepspike.residual import VasicekParams
from stepspike.composite import expected_short_rate
from stepspike.spike_model import SpikeFactorState, SpikeModelParams
from stepspike.step_model import StepFactorState, StepModelParams

CAL = BusinessCalendar()
VAL_DATE = dt.date(2019, 1, 15)
FOMC_2019 = [
    dt.date(2019, 1, 30), dt.date(2019, 3, 20), dt.date(2019, 5, 1), dt.date(2019, 6, 19),
    dt.date(2019, 7, 31), dt.date(2019, 9, 18), dt.date(2019, 10, 30), dt.date(2019, 12, 11),
]


def random_corr(rng, n):
    a = rng.standard_normal((n, n + 2))
    c = a @ a.T
    d = np.sqrt(np.diag(c))
    c = c / np.outer(d, d)
    np.fill_diagonal(c, 1.0)
    return c


def random_step_params(rng, n=None, horizon=3.0, correlated=True):
    n = n or int(rng.integers(1, 6))
    times = np.sort(rng.uniform(0.05, horizon, n))
    while np.any(np.diff(times) < 1e-3):
        times = np.sort(rng.uniform(0.05, horizon, n))
    sched = JumpSchedule(tuple(times))
    xi = rng.uniform(0.0, 0.02, n)
    rho = random_corr(rng, n) if correlated else np.eye(n)
    f0 = PiecewiseFlatCurve(times, rng.uniform(0.0, 0.05, n + 1))
    return StepModelParams(sched, xi, rho, f0)


def random_spike_params(rng, n=None, horizon=3.0):
    n = n or int(rng.integers(1, 5))
    edges = np.sort(rng.uniform(0.05, horizon, 2 * n))
    z, ends = edges[0::2], edges[1::2]
    h = np.maximum(ends - z, 1e-3)
    keep = np.concatenate([[True], z[1:] > z[:-1] + h[:-1]])
    z, h = z[keep], h[keep]
    sched = JumpSchedule(tuple(z), "spike", tuple(h))
    return SpikeModelParams.from_heights(sched, rng.uniform(0.0, 0.3, z.size), rng.uniform(-0.01, 0.02, z.size))


def stopped_step_state(rng, params, t):
    """``W_j(t ^ x_i)`` sampled directly from Brownian increments."""
    n = params.n
    stop = np.minimum(params.x, t)
    order = np.argsort(stop)
    w = np.zeros((n, n))
    for j in range(n):
        times = np.concatenate([[0.0], stop[order]])
        path = np.cumsum(np.sqrt(np.diff(times)) * rng.standard_normal(n))
        w[j, order] = path
    return StepFactorState(t, w)


def stopped_spike_state(rng, params, t):
    stop = np.minimum(params.z, t)
    return SpikeFactorState(t, np.sqrt(stop) * rng.standard_normal(params.n))


def brute_force_sofr3m(model, contract):
    """Compound day by day, grouping calendar days behind their fixing business day."""
    cal = model.grid.calendar
    days = {}
    d = contract.start
    while d < contract.end:
        b = d
        while not cal.is_business_day(b):
            b -= dt.timedelta(days=1)
        days[b] = days.get(b, 0) + 1
        d += dt.timedelta(days=1)
    s0 = model.initial_states()
    growth = 1.0
    for b, n in days.items():
        growth *= 1.0 + n * expected_short_rate(model, s0, 0.0, model.grid.t(b)) / 360.0
    n_days = (contract.end - contract.start).days
    return 100.0 * (1.0 - 360.0 / n_days * (growth - 1.0))


def synthetic_rates(rng, days, step=0.0025, spike=0.001, noise=0.0001):
    """Target with random +-step moves, month-end spikes and AR(1) noise; returns (target, series)."""
    n = len(days)
    eom = set(CAL.month_end_business_days(days[0], days[-1]))
    moves = (rng.random(n) < 0.02) * rng.choice([-1.0, 1.0], n)
    target = 0.03 + step * np.cumsum(moves)
    spikes = np.array([spike * rng.uniform(0.5, 1.5) if d in eom else 0.0 for d in days])
    ar = np.zeros(n)
    for k in range(1, n):
        ar[k] = 0.5 * ar[k - 1] + noise * rng.standard_normal()
    return target, target + spikes + ar


def fomc_model(levels, spread, grid=None, fomc=FOMC_2019, xi=0.0):
    grid = grid or DateGrid(VAL_DATE, calendar=CAL)
    sched = JumpSchedule.from_dates(grid, fomc)
    step = StepModelParams.independent(sched, xi, PiecewiseFlatCurve(sched.times, levels))
    return CompositeModel(step, None, VasicekParams.constant(spread), grid)


def past_fixings(rate, start=dt.date(2018, 12, 26), end=VAL_DATE):
    return FixingSeries.from_pairs([(d, rate) for d in CAL.business_days(start, end - dt.timedelta(days=1))])


def ff_round_trip_case(seed, n_contracts=12):
    """Known piecewise-flat curve over 8 FOMC dates and the 12 FF quotes it implies."""
    rng = np.random.default_rng(seed)
    levels = np.clip(0.02 + np.cumsum(rng.choice([-0.0025, 0.0, 0.0025], 9)), 0.0, None)
    spread = float(rng.uniform(-0.001, 0.001))
    model = fomc_model(levels, spread)
    obs = past_fixings(levels[0] + spread)
    quotes = []
    for k in range(n_contracts):
        c = FuturesContract.monthly_contract("FF30D", 2019, k + 1, code=f"FF{k + 1:02d}")
        quotes.append(FuturesQuote(c, VAL_DATE, price_contract(model, None, VAL_DATE, c, obs)))
    return levels, spread, model, obs, quotes


def ff_problem(seed, **kw):
    levels, spread, _, obs, quotes = ff_round_trip_case(seed)
    grid = DateGrid(VAL_DATE, calendar=CAL)
    problem = CalibrationProblem(VAL_DATE, grid, quotes, FOMC_2019, obs, target_rate=float(levels[0]), **kw)
    return levels, spread, problem


def sofr_quotes(ff_result, spike_dates, heights, sofr_spread):
    """SOFR 1M (Feb-Jul) and 3M (Mar, Jun) quotes from the fitted target curve plus known spikes."""
    grid = DateGrid(VAL_DATE, calendar=CAL)
    sched = JumpSchedule.from_dates(grid, ff_result.knot_dates)
    step = StepModelParams.independent(sched, 0.0, ff_result.curve(grid))
    spikes = SpikeModelParams.from_heights(JumpSchedule.spikes_from_dates(grid, spike_dates), 0.0, heights)
    model = CompositeModel(step, spikes, VasicekParams.constant(sofr_spread), grid)
    obs = past_fixings(ff_result.levels[0] + sofr_spread)
    contracts = [FuturesContract.monthly_contract("SOFR1M", 2019, k, code=f"SR1{k:02d}") for k in range(2, 8)]
    contracts += [FuturesContract.sofr3m(2019, 3, code="SR3H"), FuturesContract.sofr3m(2019, 6, code="SR3M")]
    quotes = [FuturesQuote(c, VAL_DATE, price_contract(model, None, VAL_DATE, c, obs)) for c in contracts]
    return quotes, obs


def write_series(path, dates, values, column="rate"):
    sio.write_csv(path, ["date", column], zip(dates, values))


def write_dates(path, dates):
    path.write_text("".join(f"{d.isoformat()}\n" for d in dates))


def write_quotes(path, quotes):
    sio.write_csv(path, sio.QUOTE_COLUMNS, [sio.quote_row(q) for q in quotes])


SPIKES_2019 = [dt.date(2019, 3, 29), dt.date(2019, 6, 28)]


def cli_workspace(root):
    """Input files for every CLI command under ``root``; returns a dict of config snippets."""
    root.mkdir(parents=True, exist_ok=True)
    levels, spread, problem = ff_problem(0)
    ff = calibrate_ff(problem)
    sofr_q, sofr_obs = sofr_quotes(ff, SPIKES_2019, 0.004, 0.0003)
    write_quotes(root / "quotes.csv", list(problem.quotes) + sofr_q)
    write_series(root / "fixings.csv", problem.observed.dates, problem.observed.values)
    write_series(root / "sofr_fixings.csv", sofr_obs.dates, sofr_obs.values)
    write_dates(root / "fomc.txt", FOMC_2019)
    write_dates(root / "spikes.txt", SPIKES_2019)

    rng = np.random.default_rng(1)
    days = CAL.business_days(dt.date(2018, 1, 2), dt.date(2019, 12, 31))
    target = 0.015 + 0.0025 * np.cumsum(rng.random(len(days)) < 0.01)
    eom = set(CAL.month_end_business_days(days[0], days[-1]))
    noise = np.zeros(len(days))
    for k in range(1, len(days)):
        noise[k] = 0.6 * noise[k - 1] + 0.0002 * rng.standard_normal()
    series = target + noise + np.array([0.001 if d in eom else 0.0 for d in days])
    write_series(root / "target.csv", days, target)
    write_series(root / "series.csv", days, series)

    # calibrations on consecutive days for r2/termrate: the same curve re-dated
    curves = root / "curves"
    curves.mkdir(exist_ok=True)
    sofr = calibrate_sofr(CalibrationProblem(VAL_DATE, problem.grid, sofr_q, SPIKES_2019, sofr_obs), ff)
    term_days = CAL.business_days(VAL_DATE, VAL_DATE + dt.timedelta(days=10))[:5]
    for d in term_days:
        doc = {"ff": sio.result_to_dict(ff), "sofr": sio.result_to_dict(sofr)}
        for part in doc.values():
            part["valuation_date"] = d.isoformat()
        sio.write_json(curves / f"{d.isoformat()}.json", doc)
    # weekly curve history through 2019 for r2, elapsed intervals dropped
    history = root / "history"
    history.mkdir(exist_ok=True)
    base = sio.result_to_dict(ff)
    for k in range(0, 48):
        d = VAL_DATE + dt.timedelta(days=7 * k)
        doc = dict(base, valuation_date=d.isoformat())
        rows = [dict(iv) for iv in base["intervals"] if iv["end"] is None or iv["end"] > d]
        rows[0]["start"] = d
        doc["intervals"] = rows
        sio.write_json(history / f"{d.isoformat()}.json", {"ff": doc})
    levels_out = [float(sio.fmt(v)) for v in ff.levels]
    realized = [(x, b - a) for x, a, b in zip(FOMC_2019, levels_out, levels_out[1:])]
    write_series(root / "realized.csv", [x for x, _ in realized], [c for _, c in realized], column="change")
    write_series(root / "benchmark.csv", term_days[:4], [0.026] * 4)

    return {
        "decompose": {"series": str(root / "series.csv"), "target": str(root / "target.csv"),
                      "spike_threshold": 0.002},
        "hurst": {"series": str(root / "series.csv")},
        "calibrate": {"valuation_date": VAL_DATE.isoformat(), "quotes": str(root / "quotes.csv"),
                      "fomc_dates": str(root / "fomc.txt"), "spike_dates": str(root / "spikes.txt"),
                      "fixings": str(root / "fixings.csv"), "sofr_fixings": str(root / "sofr_fixings.csv"),
                      "target_rate": float(levels[0])},
        "price": {"quotes": str(root / "quotes.csv"), "fixings": str(root / "fixings.csv")},
        "simulate": {"n_paths": 3000, "paths_written": 5, "xi": 0.005, "sigma_z": 0.1, "theta": 0.0,
                     "beta": 5.0, "sigma_v": 0.002, "r0": 0.0003, "block_size": 1024},
        "r2": {"curves_dir": str(history), "realized": str(root / "realized.csv"), "naive": True},
        "termrate": {"curves_dir": str(curves), "benchmark": str(root / "benchmark.csv")},
    }
