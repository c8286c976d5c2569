"""Calibration of the deterministic curve components to futures quotes.

The Fed Funds stage fits piecewise-flat target levels between FOMC dates plus
a constant EFFR spread; the SOFR stage keeps that target curve and fits
end-of-month spike levels plus a constant SOFR spread. Both minimize

    sum_m ((|F_model,m - F_market,m| - h_m)^+)^2

with volatilities switched off (the drift contribution is ignored). With
vols off every expected daily rate is affine in the unknowns, so each
candidate reduces to one matrix product and whole optimizer populations are
priced at once.

Unknowns are handled in percent internally; all public inputs and outputs are
decimal rates.
"""

from __future__ import annotations

import bisect
import datetime as dt
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .calendar import DateGrid, FixingSeries, JumpSchedule, PiecewiseFlatCurve
from .errors import DataConsistencyError, DependencyError, InputError
from .futures import ContractKind, FuturesQuote, contract_fixings

log = logging.getLogger(__name__)

DEFAULT_BOUNDS = {"level": (-0.01, 0.10), "spike": (-0.02, 0.05), "spread": (-0.01, 0.01)}


@dataclass(frozen=True)
class CalibrationConfig:
    bounds: dict = field(default_factory=lambda: dict(DEFAULT_BOUNDS))
    optimizer_seed: int = 0
    population: int = 15
    max_iters: int = 1000
    tolerance_front: float = 0.0025
    tolerance_back: float = 0.005
    objective_threshold: float = 1e-8
    max_ff_contracts: int = 12

    def __post_init__(self):
        merged = dict(DEFAULT_BOUNDS)
        for key, pair in dict(self.bounds).items():
            if key not in DEFAULT_BOUNDS:
                raise InputError(f"unknown bounds key {key!r}")
            lo, hi = (float(v) for v in pair)
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
                raise InputError(f"bounds for {key} must be finite with lo < hi, got {pair}")
            merged[key] = (lo, hi)
        object.__setattr__(self, "bounds", merged)
        if self.population < 1 or self.max_iters < 1:
            raise InputError("population and max_iters must be positive")

    @classmethod
    def from_dict(cls, d: dict | None) -> "CalibrationConfig":
        d = dict(d or {})
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown calibration settings: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class CalibrationProblem:
    """Quotes observed on ``valuation_date`` plus the schedule whose levels are unknown.

    ``jump_dates`` are FOMC dates for the Fed Funds stage and spike dates for
    the SOFR stage. If ``target_rate`` is given the level before the first
    FOMC date is pinned to it and the spread is fitted; otherwise the spread
    is pinned to ``fixed_spread`` and every level is fitted (a free spread
    and a free first level are not separately identified).
    """

    valuation_date: dt.date
    grid: DateGrid
    quotes: tuple
    jump_dates: tuple
    observed: FixingSeries | None = None
    config: CalibrationConfig = field(default_factory=CalibrationConfig)
    target_rate: float | None = None
    fixed_spread: float = 0.0
    spike_width_days: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "quotes", tuple(self.quotes))
        object.__setattr__(self, "jump_dates", tuple(sorted(self.jump_dates)))
        if self.grid.anchor != self.valuation_date:
            raise InputError("grid anchor must be the valuation date")
        for q in self.quotes:
            if q.observe_date != self.valuation_date:
                raise InputError(f"quote {q.contract.code} observed {q.observe_date}, not {self.valuation_date}")


@dataclass
class ContractResidual:
    code: str
    kind: str
    start: dt.date
    end: dt.date
    market: float
    model: float
    tolerance: float
    error: float


@dataclass
class CalibrationResult:
    stage: str
    valuation_date: dt.date
    knot_dates: list
    levels: list
    identified: list
    spread: float
    spread_fixed: bool
    residuals: list
    objective: float
    iterations: int
    evaluations: int
    converged: bool
    seed: int
    width_days: list | None = None
    message: str = ""

    def curve(self, grid: DateGrid) -> PiecewiseFlatCurve:
        """Target forward curve ``f^P(0, .)`` (Fed Funds stage; spread excluded)."""
        if self.stage != "ff":
            raise ValueError("curve() is defined for the Fed Funds stage")
        return PiecewiseFlatCurve([grid.t(d) for d in self.knot_dates], self.levels)

    def spike_heights(self) -> list[float]:
        """Spike levels with unidentified ones set to zero."""
        return [0.0 if v is None else v for v in self.levels]

    def spike_schedule(self, grid: DateGrid) -> JumpSchedule:
        return JumpSchedule.spikes_from_dates(grid, self.knot_dates, self.width_days)


def tolerance_for(quote: FuturesQuote, config: CalibrationConfig) -> float:
    c = quote.contract
    if c.tolerance is not None:
        return c.tolerance
    front = c.start <= quote.observe_date < c.accrual_end
    return config.tolerance_front if front else config.tolerance_back


def band_error(model, market, tolerance):
    """``e_m = (|model - market| - h_m)^+``."""
    return np.maximum(np.abs(np.asarray(model) - np.asarray(market)) - tolerance, 0.0)


class _Engine:
    """Exact affine map from unknowns (percent) to each contract's future daily rates."""

    def __init__(self, problem: CalibrationProblem, fixed_target: CalibrationResult | None):
        self.problem = problem
        cfg = problem.config
        t = problem.valuation_date
        grid = problem.grid
        cal = grid.calendar
        self.stage = "ff" if fixed_target is None else "sofr"
        quotes = [q for q in problem.quotes if (q.contract.kind is ContractKind.FF30D) == (self.stage == "ff")]
        if self.stage == "ff":
            quotes = sorted(quotes, key=lambda q: q.contract.start)[: cfg.max_ff_contracts]
        if not quotes:
            raise InputError(f"no quotes for the {self.stage} stage")
        self.quotes = quotes
        dates = [d for d in problem.jump_dates if d > t]
        if len(dates) != len(problem.jump_dates):
            log.warning("dropping schedule dates on or before the valuation date")
        self.knot_dates = dates
        obs = problem.observed.as_dict() if problem.observed is not None else {}

        if self.stage == "ff":
            n_slots = len(dates) + 1
            slot_of = lambda d: bisect.bisect_right(dates, d)  # noqa: E731
            self.width_days = None
            base_rate = lambda d: 0.0  # noqa: E731
            pin_first = problem.target_rate is not None
        else:
            if not dates:
                raise InputError("SOFR stage needs at least one spike date")
            sched = JumpSchedule.spikes_from_dates(grid, dates, problem.spike_width_days)
            self.width_days = sched.width_days(grid)
            ends = [d + dt.timedelta(days=w) for d, w in zip(dates, self.width_days)]
            n_slots = len(dates)

            def slot_of(d):
                k = bisect.bisect_right(dates, d) - 1
                return k if k >= 0 and d < ends[k] else None

            target = fixed_target.curve(grid)
            base_rate = lambda d: target(grid.t(d))  # noqa: E731
            pin_first = False
        self.n_slots = n_slots
        self.spread_free = problem.target_rate is not None or self.stage == "sofr"
        fixed_spread = 0.0 if self.spread_free else problem.fixed_spread
        # slot indices 0..n_slots-1, spread at n_slots
        n_all = n_slots + 1
        self.rows = []
        used = np.zeros(n_all, dtype=bool)
        for q in quotes:
            c = q.contract
            fix_dates, weights = contract_fixings(c, cal)
            const = np.empty(len(fix_dates))
            m = np.zeros((len(fix_dates), n_all))
            for k, d in enumerate(fix_dates):
                if d < t:
                    if d not in obs:
                        raise DataConsistencyError(f"missing fixing for {d} needed by {c.code or c.kind.value}")
                    const[k] = obs[d]
                    continue
                const[k] = base_rate(d) + fixed_spread
                j = slot_of(d)
                if j is not None:
                    if pin_first and j == 0:
                        const[k] += problem.target_rate
                    else:
                        m[k, j] = 1.0
                if self.spread_free:
                    m[k, n_slots] = 1.0
            used |= (m != 0).any(axis=0)
            self.rows.append((c.kind, np.asarray(weights, float), c.n_days, const, m))
        self.identified_all = used
        self.free = np.flatnonzero(used)
        if self.free.size == 0:
            raise InputError("no unknown is covered by any future fixing")
        self.market = np.array([q.price for q in quotes])
        self.tol = np.array([tolerance_for(q, cfg) for q in quotes])
        self.mats = [(kind, w, n, const, m[:, self.free]) for kind, w, n, const, m in self.rows]
        key = "level" if self.stage == "ff" else "spike"
        lo = [(cfg.bounds["spread"] if j == n_slots else cfg.bounds[key])[0] for j in self.free]
        hi = [(cfg.bounds["spread"] if j == n_slots else cfg.bounds[key])[1] for j in self.free]
        self.lo = 100.0 * np.array(lo)
        self.hi = 100.0 * np.array(hi)
        self.pin_first = pin_first
        self.fixed_spread = fixed_spread

    # ---- pricing -------------------------------------------------------
    def prices(self, u):
        """Model prices for unknowns ``u`` (percent), shape ``(k,)`` or ``(k, P)``."""
        u = np.asarray(u, dtype=float)
        out = []
        for kind, w, n, const, m in self.mats:
            r = const.reshape(-1, *([1] * (u.ndim - 1))) + (m @ u) / 100.0
            if kind is ContractKind.SOFR3M:
                g = np.prod(1.0 + (w / 360.0).reshape(-1, *([1] * (u.ndim - 1))) * r, axis=0)
                out.append(100.0 * (1.0 - 360.0 / n * (g - 1.0)))
            else:
                out.append(100.0 * (1.0 - (w @ r) / n))
        return np.array(out)

    def jacobian(self, u):
        u = np.asarray(u, dtype=float)
        rows = []
        for kind, w, n, const, m in self.mats:
            r = const + (m @ u) / 100.0
            if kind is ContractKind.SOFR3M:
                f = 1.0 + w / 360.0 * r
                dr = -100.0 * (360.0 / n) * np.prod(f) * (w / 360.0) / f
            else:
                dr = -100.0 * w / n
            rows.append(dr @ m / 100.0)
        return np.array(rows)

    def objective(self, u):
        e = band_error(self.prices(u), self.market[(...,) + (None,) * (np.ndim(u) - 1)],
                       self.tol[(...,) + (None,) * (np.ndim(u) - 1)])
        return np.sum(e**2, axis=0)

    def objective_grad(self, u):
        diff = self.prices(u) - self.market
        e = band_error(diff, 0.0, self.tol)
        return (2.0 * e * np.sign(diff)) @ self.jacobian(u)

    # ---- start point ---------------------------------------------------
    def start(self):
        """Levels from stripped simple averages ``100 - price`` (percent); spikes and spread at 0."""
        x0 = np.zeros(self.free.size)
        for k, j in enumerate(self.free):
            if j == self.n_slots or self.stage == "sofr":
                continue
            best, weight = None, 0.0
            for q, (_, w, _, _, m) in zip(self.quotes, self.rows):
                cover = float(w @ m[:, j])
                if cover > weight:
                    best, weight = q, cover
            x0[k] = 100.0 - best.price - 100.0 * self.fixed_spread
        return np.clip(x0, self.lo, self.hi)


def _unknown_labels(engine: _Engine) -> list[str]:
    name = "level" if engine.stage == "ff" else "spike"
    return ["spread" if j == engine.n_slots else f"{name}[{j}]" for j in engine.free]


def unknown_labels(problem: CalibrationProblem, fixed_target: CalibrationResult | None = None) -> list[str]:
    """Names of the free unknowns, in the order :func:`objective` expects them."""
    return _unknown_labels(_Engine(problem, fixed_target))


def objective(problem: CalibrationProblem, candidate, fixed_target: CalibrationResult | None = None) -> float:
    """Tolerance-banded objective at ``candidate`` (decimal rates, ordered as :func:`unknown_labels`)."""
    engine = _Engine(problem, fixed_target)
    u = 100.0 * np.asarray(candidate, dtype=float)
    if u.shape != (engine.free.size,):
        raise InputError(f"candidate needs {engine.free.size} entries")
    if np.any(u < engine.lo - 1e-12) or np.any(u > engine.hi + 1e-12):
        raise InputError("candidate outside bounds")
    prices = engine.prices(u)
    if not np.all(np.isfinite(prices)):
        raise DataConsistencyError("non-finite model price")
    return float(np.sum(band_error(prices, engine.market, engine.tol) ** 2))


def _solve(engine: _Engine, cfg: CalibrationConfig):
    bounds = optimize.Bounds(engine.lo, engine.hi)
    x0 = engine.start()
    de = optimize.differential_evolution(
        engine.objective,
        list(zip(engine.lo, engine.hi)),
        x0=x0,
        seed=cfg.optimizer_seed,
        popsize=cfg.population,
        maxiter=cfg.max_iters,
        tol=0.0,
        atol=1e-14,
        polish=False,
        updating="deferred",
        vectorized=True,
    )
    nfev = de.nfev
    best = np.clip(de.x, engine.lo, engine.hi)
    # primary polish; the banded objective is C1 so a bounded quasi-Newton step is safe
    pol = optimize.minimize(engine.objective, best, jac=engine.objective_grad, method="L-BFGS-B", bounds=bounds,
                            options={"ftol": 1e-300, "gtol": 1e-300, "maxiter": 2000})
    nfev += pol.nfev
    if float(engine.objective(pol.x)) <= float(engine.objective(best)):
        best = pol.x
    p_best = float(engine.objective(best))
    # tie-break: among candidates no worse on the banded objective, the least-squares price fit
    resid = lambda u: engine.prices(u) - engine.market  # noqa: E731
    ls = optimize.least_squares(resid, best, jac=engine.jacobian, bounds=(engine.lo, engine.hi),
                                xtol=1e-15, ftol=1e-15, gtol=1e-15, method="trf")
    nfev += ls.nfev
    cand = np.clip(ls.x, engine.lo, engine.hi)
    if float(engine.objective(cand)) <= p_best:
        best = cand
    else:
        allowed = engine.tol + band_error(engine.prices(best), engine.market, engine.tol)
        cons = optimize.NonlinearConstraint(resid, -allowed, allowed, jac=engine.jacobian)
        sq = optimize.minimize(lambda u: float(np.sum(resid(u) ** 2)), best,
                               jac=lambda u: 2.0 * resid(u) @ engine.jacobian(u),
                               method="SLSQP", bounds=bounds, constraints=[cons],
                               options={"ftol": 1e-16, "maxiter": 500})
        nfev += sq.nfev
        cand = np.clip(sq.x, engine.lo, engine.hi)
        if float(engine.objective(cand)) <= p_best:
            best = cand
    return best, int(de.nit), int(nfev), str(de.message)


def _calibrate(problem: CalibrationProblem, fixed_target: CalibrationResult | None) -> CalibrationResult:
    cfg = problem.config
    engine = _Engine(problem, fixed_target)
    u, nit, nfev, message = _solve(engine, cfg)
    prices = engine.prices(u)
    if not np.all(np.isfinite(prices)):
        raise DataConsistencyError("non-finite model price")
    errors = band_error(prices, engine.market, engine.tol)
    obj = float(np.sum(errors**2))
    full = np.full(engine.n_slots + 1, np.nan)
    full[engine.free] = u / 100.0
    identified = engine.identified_all[: engine.n_slots].tolist()
    spread = float(full[engine.n_slots]) if engine.spread_free else engine.fixed_spread
    if engine.stage == "ff":
        if engine.pin_first:
            full[0] = problem.target_rate
            identified[0] = True
        levels = _fill_levels(full[: engine.n_slots], identified)
    else:
        levels = [None if not ok else float(v) for v, ok in zip(full[: engine.n_slots], identified)]
    residuals = [
        ContractResidual(q.contract.code, q.contract.kind.value, q.contract.start, q.contract.end,
                         float(q.price), float(p), float(h), float(e))
        for q, p, h, e in zip(engine.quotes, prices, engine.tol, errors)
    ]
    converged = obj <= cfg.objective_threshold
    if not converged:
        log.warning("calibration objective %.3g above threshold %.3g", obj, cfg.objective_threshold)
    return CalibrationResult(
        stage=engine.stage,
        valuation_date=problem.valuation_date,
        knot_dates=list(engine.knot_dates),
        levels=levels,
        identified=identified,
        spread=spread,
        spread_fixed=not engine.spread_free,
        residuals=residuals,
        objective=obj,
        iterations=nit,
        evaluations=nfev,
        converged=converged,
        seed=cfg.optimizer_seed,
        width_days=engine.width_days,
        message=message,
    )


def _fill_levels(values, identified) -> list[float]:
    """Unidentified levels take the previous identified level (the next one if none precedes)."""
    out = [float(v) if ok else None for v, ok in zip(values, identified)]
    first = next((v for v in out if v is not None), None)
    if first is None:
        raise InputError("no identified level")
    last = first
    for k, v in enumerate(out):
        if v is None:
            out[k] = last
        else:
            last = v
    return out


def calibrate_ff(problem: CalibrationProblem) -> CalibrationResult:
    """Fit target levels between FOMC dates (and the EFFR spread) to Fed Funds 30-day quotes."""
    return _calibrate(problem, None)


def calibrate_sofr(problem: CalibrationProblem, fixed_target: CalibrationResult | None) -> CalibrationResult:
    """Fit spike levels and the SOFR spread to SOFR 1M and 3M quotes jointly, target curve held fixed."""
    if fixed_target is None or fixed_target.stage != "ff":
        raise DependencyError("SOFR calibration needs a Fed Funds calibration result")
    return _calibrate(problem, fixed_target)


def calibrated_model(ff: CalibrationResult, grid: DateGrid, sofr: CalibrationResult | None = None,
                     xi=0.0, rho=None, sigma_z=0.0):
    """Composite model from calibration output.

    Volatilities are not calibrated; they default to zero and can be supplied.
    With ``sofr`` the model carries the spikes and the SOFR spread, otherwise
    the EFFR spread.
    """
    from .composite import CompositeModel
    from .residual import VasicekParams
    from .spike_model import SpikeModelParams
    from .step_model import StepModelParams

    fomc = [d for d in ff.knot_dates]
    if grid.anchor != ff.valuation_date:
        raise InputError("grid anchor differs from the calibration date")
    step = None
    if fomc:
        sched = JumpSchedule.from_dates(grid, fomc)
        n = len(sched)
        xi_arr = np.broadcast_to(np.asarray(xi, float), (n,)).copy()
        step = StepModelParams(sched, xi_arr, np.eye(n) if rho is None else np.asarray(rho, float), ff.curve(grid))
        spread = ff.spread
    else:
        spread = ff.spread + ff.levels[0]
    spike = None
    if sofr is not None:
        if sofr.valuation_date != ff.valuation_date:
            raise DataConsistencyError("Fed Funds and SOFR calibrations are for different dates")
        spread = sofr.spread + (0.0 if fomc else ff.levels[0])
        sched = sofr.spike_schedule(grid)
        spike = SpikeModelParams.from_heights(sched, sigma_z, sofr.spike_heights())
    return CompositeModel(step, spike, VasicekParams.constant(spread), grid)
