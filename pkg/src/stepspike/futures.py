"""Fed Funds 30-day, SOFR 1M and SOFR 3M futures off the composite model.

Every contract reduces to a fixing schedule: the business days whose
overnight fixing enters the payoff, each with the number of calendar days
``d`` it covers. Monthly contracts average ``sum(d r) / n``; the 3M contract
compounds ``prod(1 + d r / 360)``.
"""

from __future__ import annotations

import datetime as dt
import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .calendar import BusinessCalendar, FixingSeries, _last_day_of_month
from .composite import CompositeModel, ComponentStates, expected_short_rate, mc_mean, simulate_paths
from .errors import DataConsistencyError, InputError

TICK_FRONT = 0.0025
TICK_BACK = 0.005


class ContractKind(str, enum.Enum):
    FF30D = "FF30D"
    SOFR1M = "SOFR1M"
    SOFR3M = "SOFR3M"

    @property
    def monthly(self) -> bool:
        return self is not ContractKind.SOFR3M


def imm_date(year: int, month: int) -> dt.date:
    """Third Wednesday of the month."""
    first = dt.date(year, month, 1)
    return first + dt.timedelta(days=(2 - first.weekday()) % 7 + 14)


def is_imm_date(d: dt.date) -> bool:
    return d == imm_date(d.year, d.month)


@dataclass(frozen=True)
class FuturesContract:
    """A futures reference period.

    Monthly contracts reference every calendar day of ``[start, end]``.
    For SOFR3M ``start`` and ``end`` are consecutive IMM dates and the
    accrual period is ``[start, end)``.
    """

    kind: ContractKind
    start: dt.date
    end: dt.date
    code: str = ""
    tolerance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ContractKind(self.kind))
        if self.end < self.start:
            raise InputError(f"contract {self.code or self.kind.value}: end before start")
        if self.kind is ContractKind.SOFR3M:
            if not (is_imm_date(self.start) and is_imm_date(self.end)) or self.end == self.start:
                raise InputError(f"SOFR3M reference period {self.start}..{self.end} is not IMM to IMM")

    @classmethod
    def monthly_contract(cls, kind, year: int, month: int, code: str = "", tolerance=None):
        return cls(ContractKind(kind), dt.date(year, month, 1), _last_day_of_month(year, month), code, tolerance)

    @classmethod
    def sofr3m(cls, year: int, month: int, code: str = "", tolerance=None):
        """Quarterly contract starting on the IMM date of ``year``/``month``."""
        y2, m2 = (year + (month + 2) // 12, (month + 2) % 12 + 1)
        return cls(ContractKind.SOFR3M, imm_date(year, month), imm_date(y2, m2), code, tolerance)

    @property
    def accrual_end(self) -> dt.date:
        """First calendar day after the reference period."""
        if self.kind is ContractKind.SOFR3M:
            return self.end
        return self.end + dt.timedelta(days=1)

    @property
    def n_days(self) -> int:
        return (self.accrual_end - self.start).days

    def settlement_date(self, calendar: BusinessCalendar) -> dt.date:
        return calendar.next_business_day(self.accrual_end - dt.timedelta(days=1))

    def default_tolerance(self, observe_date: dt.date) -> float:
        """Front contract (reference period contains the observation date) gets the finer tick."""
        if self.tolerance is not None:
            return self.tolerance
        return TICK_FRONT if self.start <= observe_date < self.accrual_end else TICK_BACK


@dataclass(frozen=True)
class FuturesQuote:
    contract: FuturesContract
    observe_date: dt.date
    price: float

    def __post_init__(self):
        if not 0.0 < self.price < 100.0:
            warnings.warn(f"quote price {self.price} outside (0, 100)", stacklevel=2)

    @property
    def tolerance(self) -> float:
        return self.contract.default_tolerance(self.observe_date)


def fixing_schedule(start: dt.date, accrual_end: dt.date, calendar: BusinessCalendar):
    """Fixing business days for the calendar days of ``[start, accrual_end)``.

    A non-business day carries the preceding business day's fixing, so each
    fixing date comes with ``d`` = number of calendar days it covers.
    Returns ``(dates, day_weights)``.
    """
    dates: list[dt.date] = []
    weights: list[int] = []
    d = start
    while d < accrual_end:
        b = calendar.previous_or_same(d)
        if dates and dates[-1] == b:
            weights[-1] += 1
        else:
            dates.append(b)
            weights.append(1)
        d += dt.timedelta(days=1)
    return dates, weights


def contract_fixings(contract: FuturesContract, calendar: BusinessCalendar):
    return fixing_schedule(contract.start, contract.accrual_end, calendar)


def average_index(rates, weights, n_days: int):
    """``100 (1 - sum(d r) / n)``; ``rates`` may carry leading path axes."""
    w = np.asarray(weights, dtype=float)
    return 100.0 * (1.0 - np.asarray(rates, dtype=float) @ w / n_days)


def compounded_rate(rates, weights, n_days: int):
    """``(360 / n) [prod(1 + d r / 360) - 1]``."""
    w = np.asarray(weights, dtype=float)
    growth = np.prod(1.0 + np.asarray(rates, dtype=float) * w / 360.0, axis=-1)
    return 360.0 / n_days * (growth - 1.0)


def compounded_index(rates, weights, n_days: int):
    return 100.0 * (1.0 - compounded_rate(rates, weights, n_days))


def _resolve_states(model: CompositeModel, states: ComponentStates | None, t_model: float) -> ComponentStates:
    if states is None:
        states = model.initial_states()
    if abs(states.t - t_model) > 1e-9:
        raise ValueError(f"states are at model time {states.t}, pricing at {t_model}")
    return states


def fixing_rates(model: CompositeModel, states, t: dt.date, dates, observed: FixingSeries | None):
    """Observed fixings for dates before ``t``; model expectations ``E_t[r]`` otherwise."""
    grid = model.grid
    if grid is None:
        raise ValueError("model needs a DateGrid to price dated contracts")
    t_model = grid.t(t)
    states = _resolve_states(model, states, t_model)
    past = [d for d in dates if d < t]
    obs = observed.as_dict() if observed is not None else {}
    missing = [d for d in past if d not in obs]
    if missing:
        raise DataConsistencyError(f"missing fixings for {', '.join(str(d) for d in missing[:5])}")
    future = [d for d in dates if d >= t]
    rates = [obs[d] for d in past]
    if future:
        s = np.array([grid.t(d) for d in future])
        rates.extend(np.atleast_1d(expected_short_rate(model, states, t_model, s)).tolist())
    return np.asarray(rates, dtype=float)


def _check_not_settled(contract: FuturesContract, t: dt.date, calendar: BusinessCalendar):
    if t > contract.settlement_date(calendar):
        raise InputError(f"valuation date {t} is after settlement of {contract.code or contract.kind.value}")


def price_ff30d(model: CompositeModel, states, t: dt.date, contract: FuturesContract, observed=None) -> float:
    """Fed Funds 30-day index: ``100 (1 - average daily rate)`` over the calendar month."""
    cal = model.grid.calendar
    _check_not_settled(contract, t, cal)
    dates, weights = contract_fixings(contract, cal)
    rates = fixing_rates(model, states, t, dates, observed)
    return float(average_index(rates, weights, contract.n_days))


def price_sofr1m(model: CompositeModel, states, t: dt.date, contract: FuturesContract, observed=None) -> float:
    """SOFR 1M index; same arithmetic-average payoff as Fed Funds with SOFR fixings."""
    return price_ff30d(model, states, t, contract, observed)


def price_sofr3m(model: CompositeModel, states, t: dt.date, contract: FuturesContract, observed=None) -> float:
    """SOFR 3M index with expected fixings compounded as if they were realized."""
    if contract.kind is not ContractKind.SOFR3M:
        raise InputError("price_sofr3m needs a SOFR3M contract")
    cal = model.grid.calendar
    _check_not_settled(contract, t, cal)
    dates, weights = contract_fixings(contract, cal)
    rates = fixing_rates(model, states, t, dates, observed)
    return float(compounded_index(rates, weights, contract.n_days))


def price_contract(model, states, t, contract: FuturesContract, observed=None) -> float:
    if contract.kind is ContractKind.SOFR3M:
        return price_sofr3m(model, states, t, contract, observed)
    return price_ff30d(model, states, t, contract, observed)


def price_mc(model: CompositeModel, t: dt.date, contract: FuturesContract, n_paths: int, seed: int,
             observed=None, antithetic: bool = False, workers: int = 1) -> tuple[float, float]:
    """Monte Carlo futures price from simulated terminal payoffs; returns ``(price, standard error)``.

    Pricing starts from the model's initial state, so ``t`` must be the grid anchor.
    """
    grid = model.grid
    if t != grid.anchor:
        raise ValueError("price_mc simulates from the anchor; t must equal grid.anchor")
    cal = grid.calendar
    dates, weights = contract_fixings(contract, cal)
    obs = observed.as_dict() if observed is not None else {}
    past = [d for d in dates if d < t]
    missing = [d for d in past if d not in obs]
    if missing:
        raise DataConsistencyError(f"missing fixings for {missing[:5]}")
    future = [d for d in dates if d >= t]
    times = [grid.t(d) for d in future]
    rates = np.empty((n_paths, len(dates)))
    rates[:, : len(past)] = [obs[d] for d in past]
    if future:
        paths = simulate_paths(model, n_paths, seed, grid_step_days=None, horizon=max(times), times=times,
                               antithetic=antithetic, workers=workers)
        cols = [paths.index_of(s) for s in times]
        rates[:, len(past):] = paths.short_rate[:, cols]
    if contract.kind is ContractKind.SOFR3M:
        payoff = compounded_index(rates, weights, contract.n_days)
    else:
        payoff = average_index(rates, weights, contract.n_days)
    return mc_mean(payoff)


def compounded_term_rate(forwards, calendar: BusinessCalendar, start: dt.date, end: dt.date) -> float:
    """Annualized compounded rate over ``[start, end)`` from one forward per fixing date.

    ``forwards`` is either a sequence aligned with the fixing dates of the
    period or a mapping ``date -> rate``.
    """
    dates, weights = fixing_schedule(start, end, calendar)
    if not dates:
        raise InputError("empty term-rate period")
    if isinstance(forwards, dict):
        missing = [d for d in dates if d not in forwards]
        if missing:
            raise InputError(f"missing forwards for {missing[:5]}")
        rates = [forwards[d] for d in dates]
    else:
        rates = list(forwards)
        if len(rates) != len(dates):
            raise InputError(f"need {len(dates)} forwards, got {len(rates)}")
    return float(compounded_rate(rates, weights, (end - start).days))


def model_term_rate(model: CompositeModel, states, t: dt.date, start: dt.date, end: dt.date) -> float:
    """Compounded term rate using the model's expected daily rates as forwards."""
    dates, _ = fixing_schedule(start, end, model.grid.calendar)
    rates = fixing_rates(model, states, t, dates, None) if dates and dates[0] >= t else None
    if rates is None:
        raise InputError("term-rate period must start on or after the valuation date")
    return compounded_term_rate(rates, model.grid.calendar, start, end)
