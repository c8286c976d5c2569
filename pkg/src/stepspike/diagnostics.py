"""Empirical diagnostics on overnight-rate histories.

* :func:`decompose` splits a daily series into target, end-of-month spike,
  other spike and residual components that add back to the input (bit for
  bit whenever floating point allows).
* :func:`hurst_exponent` fits ``Var[x(t + tau) - x(t)] ~ tau^(2h)``.
* :func:`anticipation_r2` scores how well calibrated forward curves
  anticipated realized target changes, by days ahead.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .calendar import BusinessCalendar, FixingSeries
from .errors import DataConsistencyError, InputError

COMPONENTS = ("target", "eom_spike", "non_eom_spike", "residual")
DEFAULT_SPIKE_THRESHOLD = 0.0020


@dataclass(frozen=True)
class DecompositionResult:
    dates: tuple
    series: np.ndarray
    components: dict
    variance_contribution: dict
    correlations: np.ndarray
    names: tuple

    def reconstruct(self) -> np.ndarray:
        """Sum of components in the order the residual was fitted against."""
        total = self.components["target"]
        for name in self.names[1:]:
            total = total + self.components[name]
        return total


def _remainder(value: float, partial: float) -> float:
    """``z`` with ``partial + z == value`` in floating point.

    Such a ``z`` exists unless ``value`` is much smaller than ``partial``
    (heavy cancellation); then the closest reachable ``z`` is returned, which
    misses by less than one unit in the last place of ``partial``.
    """
    z = value - partial
    best, best_err = z, abs((partial + z) - value)
    for _ in range(64):
        s = partial + z
        if s == value:
            return z
        err = abs(s - value)
        if err < best_err:
            best, best_err = z, err
        z = np.nextafter(z, np.inf if s < value else -np.inf)
    return best


def decompose(
    series: FixingSeries,
    target: FixingSeries,
    eom_dates=None,
    spike_threshold: float | None = None,
    calendar: BusinessCalendar | None = None,
) -> DecompositionResult:
    """Split ``series`` into target, spikes and residual.

    Spikes are one-day events: on a spike day the deviation from the previous
    residual level is attributed to the spike and assumed gone the next day.
    End-of-month days (``eom_dates``, by default the last business day of each
    month) always carry an ``eom_spike``. With ``spike_threshold`` set (SOFR
    mode) other days whose unexplained change exceeds it in absolute value
    carry a ``non_eom_spike``.
    """
    dates = list(series.dates)
    if not dates:
        raise InputError("empty series")
    tmap = target.as_dict()
    if not target.dates or target.dates[0] > dates[0] or target.dates[-1] < dates[-1]:
        raise DataConsistencyError("target series does not cover the span of the input series")
    missing = [d for d in dates if d not in tmap]
    if missing:
        raise DataConsistencyError(f"target has no observation for {', '.join(map(str, missing[:5]))}")
    if eom_dates is None:
        cal = calendar or BusinessCalendar()
        eom_dates = cal.month_end_business_days(dates[0], dates[-1])
    eom = set(eom_dates)
    sofr_mode = spike_threshold is not None
    if sofr_mode and spike_threshold < 0:
        raise InputError("spike_threshold must be non-negative")

    x = np.asarray(series.values, dtype=float)
    p = np.array([tmap[d] for d in dates], dtype=float)
    n = len(dates)
    z = np.zeros(n)
    j = np.zeros(n)
    zeta = np.zeros(n)
    prev = None
    for k, d in enumerate(dates):
        u = x[k] - p[k]
        change = 0.0 if prev is None else u - prev
        if prev is not None and d in eom:
            z[k] = change
        elif prev is not None and sofr_mode and abs(change) > spike_threshold:
            j[k] = change
        partial = p[k] + z[k]
        if sofr_mode:
            partial = partial + j[k]
        zeta[k] = _remainder(x[k], partial)
        prev = x[k] - p[k] - z[k] - j[k]

    names = ("target", "eom_spike", "non_eom_spike", "residual") if sofr_mode else ("target", "eom_spike", "residual")
    comps = {"target": p, "eom_spike": z, "residual": zeta}
    if sofr_mode:
        comps["non_eom_spike"] = j
    for v in comps.values():
        v.setflags(write=False)
    changes = np.array([np.diff(comps[k]) for k in names])
    var = {k: (float(np.var(c, ddof=1)) if c.size > 1 else 0.0) for k, c in zip(names, changes)}
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(changes) if changes.shape[1] > 1 else np.full((len(names),) * 2, np.nan)
    corr = np.atleast_2d(corr)
    std = changes.std(axis=1) if changes.shape[1] else np.zeros(len(names))
    corr[std == 0, :] = np.nan
    corr[:, std == 0] = np.nan
    return DecompositionResult(tuple(dates), x, comps, var, corr, names)


def variance_shares(result: DecompositionResult) -> dict:
    """Each component's variance of daily changes as a share of their sum."""
    total = sum(result.variance_contribution.values())
    if total == 0:
        return {k: 0.0 for k in result.variance_contribution}
    return {k: v / total for k, v in result.variance_contribution.items()}


@dataclass(frozen=True)
class HurstFit:
    h: float
    intercept: float
    lags: np.ndarray
    variances: np.ndarray

    def fitted(self) -> np.ndarray:
        return np.exp(self.intercept + 2.0 * self.h * np.log(self.lags))


def lagged_variances(x, lags) -> np.ndarray:
    """Variance of overlapping ``tau``-differences for each lag."""
    x = np.asarray(x, dtype=float)
    return np.array([np.var(x[tau:] - x[:-tau], ddof=1) for tau in lags])


def hurst_fit(series, lags=range(1, 21)) -> HurstFit:
    x = np.asarray(series, dtype=float)
    lags = np.array(sorted(set(int(v) for v in lags)))
    if lags.size < 2:
        raise InputError("need at least two distinct lags")
    if lags[0] < 1:
        raise InputError("lags must be positive")
    if not np.all(np.isfinite(x)):
        raise InputError("series must be finite")
    if x.size < 10 * lags[-1]:
        raise InputError(f"series of length {x.size} is shorter than 10x the largest lag {lags[-1]}")
    v = lagged_variances(x, lags)
    if np.any(v <= 0.0):
        bad = lags[v <= 0.0].tolist()
        raise DataConsistencyError(f"degenerate series: zero variance of differences at lags {bad}")
    slope, intercept = np.polyfit(np.log(lags), np.log(v), 1)
    return HurstFit(float(slope / 2.0), float(intercept), lags, v)


def hurst_exponent(series, lags=range(1, 21)) -> float:
    """Half the least-squares slope of ``log Var[x(t+tau) - x(t)]`` against ``log tau``."""
    return hurst_fit(series, lags).h


# ---------------------------------------------------------------------------
# forward-anticipation R^2


@dataclass(frozen=True)
class AnticipationRow:
    lo: int
    hi: int
    r2: float
    n: int


def default_buckets(width: int = 10, horizon: int = 250) -> list[tuple[int, int]]:
    return [(lo, lo + width) for lo in range(0, horizon, width)]


def r_squared(realized, implied) -> float:
    """``1 - SSR/SST`` with SST around the realized mean.

    A constant realized sample gives 1 when matched and NaN otherwise.
    """
    y = np.asarray(realized, dtype=float)
    f = np.asarray(implied, dtype=float)
    ssr = float(np.sum((y - f) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    # sums of squares below the rounding floor of the data count as zero
    scale = float(max(np.max(np.abs(y), initial=0.0), np.max(np.abs(f), initial=0.0)))
    floor = y.size * (8.0 * np.finfo(float).eps * scale) ** 2
    if sst <= floor:
        return 1.0 if ssr <= floor else float("nan")
    return 1.0 - ssr / sst


Curve = Callable[[dt.date], float]


def implied_jump(curve: Curve, event: dt.date, h_days: int = 1) -> float:
    """``f(0, x) - f(0, x - h)`` read off a forward curve."""
    return curve(event) - curve(event - dt.timedelta(days=h_days))


def anticipation_pairs(realized: Sequence[tuple], curves: Mapping[dt.date, Curve], max_days: int,
                       jump: Callable[[Curve, dt.date], float] = implied_jump):
    """``(days_ahead, realized, implied)`` for every curve date before every event within ``max_days``."""
    out = []
    for obs_date in sorted(curves):
        curve = curves[obs_date]
        for event, change in realized:
            days = (event - obs_date).days
            if 0 < days <= max_days:
                try:
                    implied = float(jump(curve, event))
                except KeyError:
                    continue  # curve does not reach the event
                out.append((days, float(change), implied))
    return out


def anticipation_r2(realized: Sequence[tuple], curves: Mapping[dt.date, Curve], buckets=None,
                    jump: Callable[[Curve, dt.date], float] = implied_jump) -> list[AnticipationRow]:
    """R^2 of realized target changes against curve-implied jumps, per days-ahead bucket.

    ``buckets`` are half-open ``[lo, hi)`` day ranges (default 10-day buckets to
    250 days). Empty buckets are omitted.
    """
    buckets = default_buckets() if buckets is None else [(int(a), int(b)) for a, b in buckets]
    if any(b <= a for a, b in buckets):
        raise InputError("bucket edges must satisfy lo < hi")
    pairs = anticipation_pairs(realized, curves, max(b for _, b in buckets), jump)
    days = np.array([p[0] for p in pairs], dtype=int)
    y = np.array([p[1] for p in pairs])
    f = np.array([p[2] for p in pairs])
    rows = []
    for lo, hi in buckets:
        sel = (days >= lo) & (days < hi) if days.size else np.zeros(0, bool)
        if np.any(sel):
            rows.append(AnticipationRow(lo, hi, r_squared(y[sel], f[sel]), int(sel.sum())))
    return rows


def naive_monthly_curve(monthly_prices: Mapping[tuple, float]) -> Curve:
    """Forward curve flat over each contract month at ``(100 - price)/100``.

    ``monthly_prices`` maps ``(year, month)`` to an FF30D price; every
    discontinuity sits at a contract maturity.
    """
    levels = {k: (100.0 - v) / 100.0 for k, v in monthly_prices.items()}

    def curve(d: dt.date) -> float:
        key = (d.year, d.month)
        if key not in levels:
            raise KeyError(f"no contract for {d:%Y-%m}")
        return levels[key]

    curve.levels = levels
    return curve


def naive_jump(curve: Curve, event: dt.date) -> float:
    """Change attributed to ``event`` when jumps sit at contract maturities: next month minus event month."""
    nxt = dt.date(event.year + event.month // 12, event.month % 12 + 1, 1)
    return curve(nxt) - curve(event)
