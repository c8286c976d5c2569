"""Dates, day counts, business calendars, jump schedules and piecewise-flat curves.

Model time is a year fraction measured from the valuation date (the grid
anchor). Curves are right-continuous step functions of model time: the level
in force *at* a knot is the level after the knot.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

DAY_COUNTS = {"ACT/365F": 365.0, "ACT/360": 360.0}

_MIN_DATE = dt.date(1900, 1, 1)
_MAX_DATE = dt.date(2199, 12, 31)


def parse_date(text) -> dt.date:
    if isinstance(text, dt.date):
        return text
    return dt.date.fromisoformat(text.strip())


@dataclass(frozen=True)
class BusinessCalendar:
    """Good business days: not a weekend day and not a listed holiday.

    ``weekend`` holds ``date.weekday()`` numbers (Mon=0 .. Sun=6).
    """

    holidays: frozenset = frozenset()
    weekend: frozenset = frozenset({5, 6})

    def __post_init__(self):
        object.__setattr__(self, "holidays", frozenset(parse_date(d) for d in self.holidays))
        object.__setattr__(self, "weekend", frozenset(int(w) for w in self.weekend))

    @classmethod
    def from_holiday_file(cls, path, weekend=(5, 6)) -> "BusinessCalendar":
        """Read one ISO-8601 date per line; blank lines and ``#`` comments are skipped."""
        holidays = set()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                try:
                    holidays.add(parse_date(text))
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: bad date {text!r}") from exc
        return cls(frozenset(holidays), frozenset(weekend))

    def is_business_day(self, d: dt.date) -> bool:
        return d.weekday() not in self.weekend and d not in self.holidays

    def previous_or_same(self, d: dt.date) -> dt.date:
        while not self.is_business_day(d):
            d -= dt.timedelta(days=1)
        return d

    def next_business_day(self, d: dt.date) -> dt.date:
        """First business day strictly after ``d``."""
        d += dt.timedelta(days=1)
        while not self.is_business_day(d):
            d += dt.timedelta(days=1)
        return d

    def business_days(self, start: dt.date, end: dt.date) -> list[dt.date]:
        """Business days in the closed range [start, end]."""
        out = []
        d = start
        while d <= end:
            if self.is_business_day(d):
                out.append(d)
            d += dt.timedelta(days=1)
        return out

    def month_end_business_days(self, start: dt.date, end: dt.date) -> list[dt.date]:
        """Last business day of every month touching [start, end], clipped to the range."""
        out = []
        year, month = start.year, start.month
        while dt.date(year, month, 1) <= end:
            last = _last_day_of_month(year, month)
            d = self.previous_or_same(last)
            if start <= d <= end:
                out.append(d)
            year, month = (year + 1, 1) if month == 12 else (year, month + 1)
        return out


def _last_day_of_month(year: int, month: int) -> dt.date:
    if month == 12:
        return dt.date(year, 12, 31)
    return dt.date(year, month + 1, 1) - dt.timedelta(days=1)


@dataclass(frozen=True)
class DateGrid:
    """Maps calendar dates to model time (year fractions from ``anchor``)."""

    anchor: dt.date
    day_count: str = "ACT/365F"
    calendar: BusinessCalendar = field(default_factory=BusinessCalendar)
    min_date: dt.date = _MIN_DATE
    max_date: dt.date = _MAX_DATE

    def __post_init__(self):
        if self.day_count not in DAY_COUNTS:
            raise ValueError(f"unsupported day count {self.day_count!r}")

    def t(self, d: dt.date) -> float:
        return year_fraction(self, self.anchor, d)

    def date_of(self, t: float) -> dt.date:
        """Calendar date whose model time is closest to ``t``."""
        days = int(round(t * DAY_COUNTS[self.day_count]))
        return self.anchor + dt.timedelta(days=days)


def year_fraction(grid: DateGrid, d1: dt.date, d2: dt.date) -> float:
    """Signed year fraction from ``d1`` to ``d2`` under the grid's day count."""
    for d in (d1, d2):
        if not grid.min_date <= d <= grid.max_date:
            raise ValueError(f"date {d} outside supported range [{grid.min_date}, {grid.max_date}]")
    return (d2 - d1).days / DAY_COUNTS[grid.day_count]


@dataclass(frozen=True)
class JumpSchedule:
    """Ordered known jump times in model years.

    For ``kind="spike"`` each time ``z_i`` carries a window width ``h_i`` and
    the spike is live on ``[z_i, z_i + h_i)``.
    """

    times: tuple
    kind: str = "step"
    widths: tuple | None = None
    dates: tuple | None = None

    def __post_init__(self):
        times = tuple(float(x) for x in self.times)
        object.__setattr__(self, "times", times)
        if self.kind not in ("step", "spike"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if any(x <= 0.0 for x in times):
            raise ValueError("schedule dates must be strictly after the anchor")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule dates must be strictly increasing without duplicates")
        if self.kind == "spike":
            if self.widths is None or len(self.widths) != len(times):
                raise ValueError("spike schedule needs one width per date")
            widths = tuple(float(h) for h in self.widths)
            object.__setattr__(self, "widths", widths)
            if any(h <= 0.0 for h in widths):
                raise ValueError("spike widths must be positive")
            for (z0, h0), z1 in zip(zip(times, widths), times[1:]):
                if z0 + h0 > z1 + 1e-12:
                    raise ValueError("spike windows overlap")
        if self.dates is not None and len(self.dates) != len(times):
            raise ValueError("dates and times differ in length")

    def __len__(self):
        return len(self.times)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)

    @classmethod
    def from_dates(cls, grid: DateGrid, dates: Iterable[dt.date], kind="step", widths=None):
        dates = tuple(dates)
        return cls(tuple(grid.t(d) for d in dates), kind, widths, dates)

    @classmethod
    def spikes_from_dates(cls, grid: DateGrid, dates: Iterable[dt.date], width_days=None):
        """Spike schedule; default width runs to the next business day (1 day, 3 over a weekend)."""
        dates = tuple(dates)
        denom = DAY_COUNTS[grid.day_count]
        if width_days is None:
            width_days = [(grid.calendar.next_business_day(d) - d).days for d in dates]
        widths = tuple(w / denom for w in width_days)
        return cls(tuple(grid.t(d) for d in dates), "spike", widths, dates)

    def width_days(self, grid: DateGrid) -> list[int]:
        return [int(round(h * DAY_COUNTS[grid.day_count])) for h in self.widths]


_KNOT_TOL = 1e-12


class PiecewiseFlatCurve:
    """Right-continuous step function of model time.

    ``breaks`` are the interior knots ``k_1 < ... < k_m``; ``levels`` has
    ``m + 1`` entries, ``levels[0]`` applying before ``k_1`` and
    ``levels[m]`` from ``k_m`` to infinity.
    """

    __slots__ = ("breaks", "levels")

    def __init__(self, breaks: Sequence[float], levels: Sequence[float]):
        b = np.asarray(breaks, dtype=float).reshape(-1)
        v = np.asarray(levels, dtype=float).reshape(-1)
        if v.size != b.size + 1:
            raise ValueError("need exactly one more level than breaks")
        if np.any(np.diff(b) <= 0):
            raise ValueError("curve breaks must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve levels must be finite")
        b.setflags(write=False)
        v.setflags(write=False)
        self.breaks = b
        self.levels = v

    @classmethod
    def flat(cls, level: float) -> "PiecewiseFlatCurve":
        return cls([], [level])

    @classmethod
    def spikes(cls, starts, widths, heights) -> "PiecewiseFlatCurve":
        """Zero curve with ``heights[i]`` on ``[starts[i], starts[i] + widths[i])``."""
        breaks, levels = [], [0.0]
        for z, h, a in zip(starts, widths, heights):
            if breaks and z < breaks[-1] - _KNOT_TOL:
                raise ValueError("spike windows overlap")
            if breaks and abs(z - breaks[-1]) <= _KNOT_TOL:
                # window starts exactly where the previous one ends
                levels[-1] = a
            else:
                breaks.append(z)
                levels.append(a)
            breaks.append(z + h)
            levels.append(0.0)
        return cls(breaks, levels)

    def __call__(self, T):
        # knots and query times both come from dates; a query within rounding of a knot is at it
        idx = np.searchsorted(self.breaks, np.asarray(T, dtype=float) + _KNOT_TOL, side="right")
        out = self.levels[idx]
        return float(out) if np.ndim(out) == 0 else out

    def __repr__(self):
        return f"PiecewiseFlatCurve(breaks={self.breaks.tolist()}, levels={self.levels.tolist()})"

    def __eq__(self, other):
        return (
            isinstance(other, PiecewiseFlatCurve)
            and np.array_equal(self.breaks, other.breaks)
            and np.array_equal(self.levels, other.levels)
        )

    def integrate(self, a, b):
        """Exact integral over [a, b] as the sum of level times overlap length."""
        return integrate_curve(self, a, b)

    def shifted(self, spread: float) -> "PiecewiseFlatCurve":
        return PiecewiseFlatCurve(self.breaks, self.levels + spread)

    def __add__(self, other: "PiecewiseFlatCurve") -> "PiecewiseFlatCurve":
        breaks = np.union1d(self.breaks, other.breaks)
        probe = np.concatenate([[breaks[0] - 1.0] if breaks.size else [0.0], breaks])
        return PiecewiseFlatCurve(breaks, self(probe) + other(probe))


def integrate_curve(curve: PiecewiseFlatCurve, a, b):
    """Exact integral of ``curve`` over ``[a, b]``; broadcasts over arrays."""
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr > b_arr):
        raise ValueError("integrate_curve requires a <= b")
    edges = curve.breaks
    lo = np.concatenate([[-np.inf], edges])
    hi = np.concatenate([edges, [np.inf]])
    aa = a_arr[..., None]
    bb = b_arr[..., None]
    overlap = np.clip(np.minimum(hi, bb) - np.maximum(lo, aa), 0.0, None)
    out = overlap @ curve.levels
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class FixingSeries:
    """Observed overnight fixings, ordered by date; rates are decimals."""

    dates: tuple
    rates: tuple

    def __post_init__(self):
        if len(self.dates) != len(self.rates):
            raise ValueError("dates and rates differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("fixing dates must be strictly increasing")
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))

    def __len__(self):
        return len(self.dates)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    def as_dict(self) -> dict:
        return dict(zip(self.dates, self.rates))

    def check_business_days(self, calendar: BusinessCalendar) -> None:
        bad = [d for d in self.dates if not calendar.is_business_day(d)]
        if bad:
            raise InputError(f"fixings on non-business days: {bad[:5]}")

    @classmethod
    def from_pairs(cls, pairs) -> "FixingSeries":
        pairs = sorted(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @classmethod
    def from_csv(cls, path, value_column: str = "rate") -> "FixingSeries":
        """Read ``date,<value_column>`` CSV with ISO dates and decimal values."""
        path = Path(path)
        dates, rates = [], []
        try:
            fh = open(path, newline="")
        except OSError as exc:
            raise InputError(f"cannot read {path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["date", value_column]:
                raise InputError(f"{path}:1: expected header 'date,{value_column}'")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    if len(row) != 2:
                        raise ValueError("expected 2 columns")
                    d = parse_date(row[0])
                    r = float(row[1])
                    if not np.isfinite(r):
                        raise ValueError("non-finite value")
                except ValueError as exc:
                    raise InputError(f"{path}:{lineno}: malformed row {row!r} ({exc})") from exc
                if dates and d <= dates[-1]:
                    raise InputError(f"{path}:{lineno}: dates not strictly increasing")
                dates.append(d)
                rates.append(r)
        return cls(tuple(dates), tuple(rates))


def read_date_list(path) -> list[dt.date]:
    """One ISO date per line (FOMC schedules, spike dates)."""
    out = []
    try:
        fh = open(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            try:
                out.append(parse_date(text))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: bad date {text!r}") from exc
    return out
