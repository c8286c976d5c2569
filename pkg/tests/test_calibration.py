import dataclasses
import datetime as dt

import numpy as np
import pytest

from helpers import CAL, FOMC_2019, VAL_DATE, ff_problem, ff_round_trip_case, past_fixings, sofr_quotes
from stepspike.calendar import DateGrid
from stepspike.calibration import (
    CalibrationConfig,
    CalibrationProblem,
    band_error,
    calibrate_ff,
    calibrate_sofr,
    calibrated_model,
    objective,
    unknown_labels,
)
from stepspike.errors import DataConsistencyError, DependencyError, InputError
from stepspike.futures import FuturesContract, FuturesQuote, price_contract

GRID = DateGrid(VAL_DATE, calendar=CAL)
MARCH = FuturesContract.monthly_contract("FF30D", 2019, 3, code="FFH")


def single_contract_problem(price):
    return CalibrationProblem(VAL_DATE, GRID, [FuturesQuote(MARCH, VAL_DATE, price)], [], past_fixings(0.02))


@pytest.fixture(scope="module")
def ff_fit():
    levels, spread, problem = ff_problem(0)
    return levels, spread, problem, calibrate_ff(problem)


def test_band_error_examples():
    assert band_error(98.004, 98.0, 0.005) == 0.0
    assert band_error(97.9925, 98.0, 0.005) == pytest.approx(0.0025, abs=1e-12)


def test_objective_examples_on_back_contract():
    assert objective(single_contract_problem(98.004), [0.02]) == 0.0
    assert objective(single_contract_problem(98.0075), [0.02]) == pytest.approx(6.25e-6, rel=1e-9)


def test_objective_rejects_bad_candidates():
    p = single_contract_problem(98.0)
    with pytest.raises(InputError):
        objective(p, [0.02, 0.0])
    with pytest.raises(InputError):
        objective(p, [0.5])


def test_single_contract_inversion():
    r = calibrate_ff(single_contract_problem(97.65))
    assert r.converged and r.objective == 0.0
    assert r.levels == [pytest.approx(0.0235, abs=1e-12)]
    assert r.spread_fixed and r.spread == 0.0


def test_round_trip_recovers_levels(ff_fit):
    levels, spread, _, r = ff_fit
    assert r.converged
    assert r.identified == [True] * 9
    assert np.max(np.abs(np.array(r.levels) - levels)) < 0.5e-4
    assert abs(r.spread - spread) < 0.5e-4
    assert all(x.error == 0.0 for x in r.residuals)
    assert all(abs(x.model - x.market) <= x.tolerance for x in r.residuals)


def test_quotes_inside_band_give_zero_objective():
    levels, spread, problem = ff_problem(3)
    rng = np.random.default_rng(0)
    shifted = [dataclasses.replace(q, price=q.price + s * q.tolerance / 2)
               for q, s in zip(problem.quotes, rng.choice([-1.0, 1.0], len(problem.quotes)))]
    moved = dataclasses.replace(problem, quotes=tuple(shifted))
    assert unknown_labels(moved)[-1] == "spread"
    truth = [*levels[1:], spread]
    assert objective(moved, truth) == 0.0
    r = calibrate_ff(moved)
    assert r.objective == 0.0 and r.converged


def test_calibration_is_deterministic():
    _, _, problem = ff_problem(5)
    a, b = calibrate_ff(problem), calibrate_ff(problem)
    assert a.levels == b.levels and a.spread == b.spread and a.objective == b.objective


def test_objective_continuous_across_band_edge():
    p = single_contract_problem(98.0)
    # the band edge sits where the level moves the price by exactly h = 0.005

    def scan(n):
        xs = np.linspace(0.02 - 0.0001, 0.02 + 0.0001, n)
        return xs, np.array([objective(p, [x]) for x in xs])

    xs, vals = scan(2001)
    _, fine = scan(4001)
    # no jumps: the largest step shrinks in proportion to the spacing
    assert np.max(np.abs(np.diff(fine))) == pytest.approx(np.max(np.abs(np.diff(vals))) / 2, rel=0.01)
    inside = np.abs(100 * (xs - 0.02)) < 0.005 - 1e-9
    assert np.all(vals[inside] == 0.0)
    assert np.all(vals[~inside] >= 0.0) and vals[0] > 0.0 and vals[-1] > 0.0
    # approaching the edge from outside the objective goes to zero quadratically
    edge = 0.02 + 0.00005
    for d in (1e-7, 1e-8, 1e-9):
        assert objective(p, [edge + d]) == pytest.approx((100 * d) ** 2, rel=1e-3)


def test_residuals_agree_with_pricer(ff_fit):
    _, _, problem, r = ff_fit
    model = calibrated_model(r, problem.grid)
    for q, res in zip(problem.quotes, r.residuals):
        assert res.model == pytest.approx(price_contract(model, None, VAL_DATE, q.contract, problem.observed),
                                          abs=1e-10)


def test_unidentified_levels_take_previous():
    levels, spread, _, obs, quotes = ff_round_trip_case(1, n_contracts=4)
    problem = CalibrationProblem(VAL_DATE, GRID, quotes, FOMC_2019, obs, target_rate=float(levels[0]))
    r = calibrate_ff(problem)
    # four months reach the levels set on Jan 30 and Mar 20 only; May 1 starts after April
    assert r.identified == [True, True, True] + [False] * 6
    assert r.levels[3:] == [r.levels[2]] * 6


def test_missing_fixing_and_empty_problem():
    levels, spread, _, obs, quotes = ff_round_trip_case(2)
    with pytest.raises(DataConsistencyError):
        calibrate_ff(CalibrationProblem(VAL_DATE, GRID, quotes, FOMC_2019, past_fixings(0.02, start=dt.date(2019, 1, 4))))
    with pytest.raises(InputError):
        calibrate_ff(CalibrationProblem(VAL_DATE, GRID, [], FOMC_2019, obs))
    with pytest.raises(InputError):
        CalibrationProblem(dt.date(2019, 1, 16), GRID, quotes, FOMC_2019, obs)


def test_config_validation():
    assert CalibrationConfig.from_dict({"population": 20}).population == 20
    with pytest.raises(InputError):
        CalibrationConfig.from_dict({"popsize": 20})
    with pytest.raises(InputError):
        CalibrationConfig(bounds={"level": (0.1, 0.0)})
    with pytest.raises(InputError):
        CalibrationConfig(bounds={"vol": (0.0, 1.0)})


def test_sofr_stage_needs_ff_result(ff_fit):
    quotes, obs = sofr_quotes(ff_fit[3], [dt.date(2019, 6, 28)], 0.004, 0.0003)
    problem = CalibrationProblem(VAL_DATE, GRID, quotes, [dt.date(2019, 6, 28)], obs)
    with pytest.raises(DependencyError):
        calibrate_sofr(problem, None)


@pytest.mark.parametrize("height", [0.0, 0.004])
def test_sofr_spike_recovery(ff_fit, height):
    ff = ff_fit[3]
    spikes = [dt.date(2019, 3, 29), dt.date(2019, 6, 28)]
    quotes, obs = sofr_quotes(ff, spikes, height, 0.0003)
    r = calibrate_sofr(CalibrationProblem(VAL_DATE, GRID, quotes, spikes, obs), ff)
    assert r.converged
    assert r.levels == [pytest.approx(height, abs=2e-4)] * 2
    assert r.spread == pytest.approx(0.0003, abs=0.5e-4)
    assert r.width_days == [3, 3]


def test_uncovered_spike_is_unidentified(ff_fit):
    ff = ff_fit[3]
    spikes = [dt.date(2019, 6, 28), dt.date(2019, 12, 31)]
    quotes, obs = sofr_quotes(ff, spikes[:1], 0.004, 0.0)
    r = calibrate_sofr(CalibrationProblem(VAL_DATE, GRID, quotes, spikes, obs), ff)
    assert r.identified == [True, False]
    assert r.levels[1] is None and r.spike_heights()[1] == 0.0
