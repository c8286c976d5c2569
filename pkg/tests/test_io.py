import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import CAL, FOMC_2019, VAL_DATE, ff_problem, fomc_model, write_quotes
from stepspike import io as sio
from stepspike.calendar import BusinessCalendar, DateGrid, JumpSchedule
from stepspike.calibration import calibrate_ff
from stepspike.composite import CompositeModel, composite_bond
from stepspike.errors import InputError
from stepspike.futures import FuturesContract, FuturesQuote
from stepspike.residual import VasicekParams
from stepspike.spike_model import SpikeModelParams


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_fmt_round_trip_is_idempotent(x):
    once = float(sio.fmt(x))
    assert float(sio.fmt(once)) == once
    if x != 0.0 and math.isfinite(x):
        assert abs(once - x) <= 1e-11 * abs(x)


def test_fmt_special_values():
    assert sio.fmt(float("nan")) == "nan"
    assert sio.fmt(-float("inf")) == "-inf"
    assert sio.fmt(True) == "true"
    assert sio.fmt(dt.date(2019, 1, 2)) == "2019-01-02"
    assert sio.fmt(None) == ""
    assert sio.fmt(np.int64(3)) == "3"


def test_json_is_canonical(tmp_path):
    obj = {"b": [1.0 / 3.0, float("nan")], "a": dt.date(2019, 1, 2), "c": np.arange(2)}
    text = sio.dumps(obj)
    assert text == sio.dumps(dict(reversed(list(obj.items()))))
    assert '"a": "2019-01-02"' in text and "null" in text
    p = tmp_path / "x.json"
    sio.write_json(p, obj)
    assert sio.read_json(p)["b"][0] == 0.333333333333


def test_bad_json_cites_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "a": 1,\n  oops\n}\n')
    with pytest.raises(InputError, match="bad.json:3:"):
        sio.read_json(p)


def test_csv_layout(tmp_path):
    p = tmp_path / "t.csv"
    sio.write_csv(p, ["date", "x"], [(dt.date(2019, 1, 2), 0.1), (dt.date(2019, 1, 3), None)])
    assert p.read_bytes() == b"date,x\n2019-01-02,0.1\n2019-01-03,\n"


def full_model():
    grid = DateGrid(VAL_DATE, calendar=BusinessCalendar([dt.date(2019, 7, 4)]))
    sched = JumpSchedule.spikes_from_dates(grid, [dt.date(2019, 3, 29), dt.date(2019, 6, 28)], [3, 4])
    spike = SpikeModelParams.from_heights(sched, [0.1, 0.2], [0.004, -0.001])
    base = fomc_model(np.linspace(0.024, 0.02, 9), 0.0, grid=grid, xi=0.004)
    return CompositeModel(base.step, spike, VasicekParams(0.004, 2.0, 0.003, 0.0005), grid)


def test_model_snapshot_round_trip(tmp_path):
    m = full_model()
    p = tmp_path / "model.json"
    sio.write_model(p, m)
    back = sio.read_model(p)
    assert sio.dumps(sio.model_to_dict(back)) == p.read_text()
    s0 = m.initial_states()
    assert composite_bond(back, back.initial_states(), 0.0, 1.0) == pytest.approx(composite_bond(m, s0, 0.0, 1.0),
                                                                                  rel=1e-11)
    assert back.spike.schedule.width_days(back.grid) == [3, 4]
    assert back.grid.calendar.holidays == m.grid.calendar.holidays


def test_constant_spread_snapshot():
    d = sio.model_to_dict(fomc_model(np.full(9, 0.02), 0.0007))
    assert d["spread"] == 0.0007 and "theta" not in d
    assert sio.model_from_dict(d).residual.is_constant


def test_model_from_dict_errors():
    d = sio.model_to_dict(fomc_model(np.full(9, 0.02), 0.0))
    bad = dict(d, f0_levels=d["f0_levels"][:-1])
    with pytest.raises(InputError):
        sio.model_from_dict(bad)
    with pytest.raises(InputError):
        sio.model_from_dict(dict(d, valuation_date="2019-02-30"))


def test_calibration_result_round_trip():
    _, _, problem = ff_problem(0)
    r = calibrate_ff(problem)
    d = sio.result_to_dict(r)
    assert [iv["start"] for iv in d["intervals"]][1:] == FOMC_2019
    back = sio.result_from_dict(d)
    assert sio.dumps(sio.result_to_dict(back)) == sio.dumps(d)
    assert back.levels == pytest.approx(r.levels, abs=1e-13)


def test_quotes_round_trip(tmp_path):
    q = [FuturesQuote(FuturesContract.monthly_contract("FF30D", 2019, 2, code="FFG"), VAL_DATE, 97.6125),
         FuturesQuote(FuturesContract.sofr3m(2019, 3, code="SR3H"), VAL_DATE, 97.5)]
    p = tmp_path / "q.csv"
    write_quotes(p, q)
    assert sio.read_quotes(p) == q


@pytest.mark.parametrize(
    "row,line",
    [("2019-01-15,FF30D,X,2019-02-01,2019-02-28,abc", 2), ("2019-01-15,EURIBOR,X,2019-02-01,2019-02-28,97", 2),
     ("2019-01-15,SOFR3M,X,2019-03-01,2019-06-19,97", 2), ("2019-01-15,FF30D,X,2019-02-01", 2)],
)
def test_quote_errors_cite_line(tmp_path, row, line):
    p = tmp_path / "q.csv"
    p.write_text(",".join(sio.QUOTE_COLUMNS) + "\n" + row + "\n")
    with pytest.raises(InputError, match=f"q.csv:{line}:"):
        sio.read_quotes(p)


def test_calendar_dict_round_trip():
    cal = BusinessCalendar([dt.date(2019, 12, 25)], weekend=(5, 6))
    assert sio.calendar_from_dict(sio.calendar_to_dict(cal)).holidays == cal.holidays
    assert sio.calendar_from_dict(None).is_business_day(dt.date(2019, 12, 25))
    assert CAL.is_business_day(dt.date(2019, 12, 25))
