"""File formats: model snapshots, calibration output, quotes and CSV tables.

All numbers are written with 12 significant digits; JSON keys are sorted so
reruns are byte-identical.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from pathlib import Path

import numpy as np

from .calendar import BusinessCalendar, DateGrid, JumpSchedule, PiecewiseFlatCurve, parse_date
from .calibration import CalibrationResult, ContractResidual
from .composite import CompositeModel
from .errors import InputError
from .futures import ContractKind, FuturesContract, FuturesQuote
from .residual import VasicekParams
from .spike_model import SpikeModelParams
from .step_model import StepModelParams

SIG_DIGITS = 12


def fmt(x) -> str:
    """Number as text with 12 significant digits; NaN/inf spelled out, dates ISO."""
    if x is None:
        return ""
    if isinstance(x, (dt.date, str)):
        return str(x)
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(_round(x))


def _round(x: float) -> float:
    return float(f"{x:.{SIG_DIGITS}g}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else _round(x)
    if isinstance(obj, dt.date):
        return obj.isoformat()
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# model snapshot


def _dates(values, what):
    try:
        return [parse_date(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad {what}: {exc}") from None


def calendar_to_dict(cal: BusinessCalendar) -> dict:
    return {"holidays": sorted(cal.holidays), "weekend": sorted(cal.weekend)}


def calendar_from_dict(d: dict | None) -> BusinessCalendar:
    d = d or {}
    return BusinessCalendar(frozenset(_dates(d.get("holidays", []), "holidays")),
                            frozenset(int(v) for v in d.get("weekend", (5, 6))))


def model_to_dict(model: CompositeModel) -> dict:
    grid = model.grid
    if grid is None:
        raise ValueError("snapshot needs a dated model")
    out = {
        "valuation_date": grid.anchor,
        "day_count": grid.day_count,
        "calendar": calendar_to_dict(grid.calendar),
    }
    if model.step is not None:
        p = model.step
        out.update(
            fomc_dates=list(p.schedule.dates),
            xi=p.xi,
            rho=p.rho,
            f0_knots=[grid.date_of(b) for b in p.f0.breaks],
            f0_levels=p.f0.levels,
        )
    if model.spike is not None:
        q = model.spike
        out.update(
            spike_dates=list(q.schedule.dates),
            spike_widths_days=q.schedule.width_days(grid),
            sigma_z=q.sigma_z,
            fz_levels=q.heights,
        )
    res = model.residual
    if res.is_constant:
        out["spread"] = res.r0
    else:
        out.update(theta=res.theta, beta=res.beta, sigma_v=res.sigma_v, r0=res.r0)
    return out


def model_from_dict(d: dict) -> CompositeModel:
    """Build a model from a snapshot; raises :class:`InputError` on anything malformed."""
    try:
        anchor = parse_date(d["valuation_date"])
        cal = calendar_from_dict(d.get("calendar"))
        grid = DateGrid(anchor, d.get("day_count", "ACT/365F"), cal)
        step = spike = None
        if d.get("fomc_dates"):
            sched = JumpSchedule.from_dates(grid, _dates(d["fomc_dates"], "fomc_dates"))
            n = len(sched)
            knots = _dates(d.get("f0_knots", d["fomc_dates"]), "f0_knots")
            f0 = PiecewiseFlatCurve([grid.t(k) for k in knots], d["f0_levels"])
            xi = np.broadcast_to(np.asarray(d.get("xi", 0.0), float), (n,)).copy()
            rho = np.asarray(d["rho"], float) if d.get("rho") is not None else np.eye(n)
            step = StepModelParams(sched, xi, rho, f0)
        if d.get("spike_dates"):
            sd = _dates(d["spike_dates"], "spike_dates")
            sched = JumpSchedule.spikes_from_dates(grid, sd, d.get("spike_widths_days"))
            spike = SpikeModelParams.from_heights(sched, d.get("sigma_z", 0.0),
                                                  [0.0 if v is None else v for v in d["fz_levels"]])
        if "spread" in d:
            res = VasicekParams.constant(float(d["spread"]))
        else:
            res = VasicekParams(float(d["theta"]), float(d["beta"]), float(d["sigma_v"]), float(d["r0"]))
        return CompositeModel(step, spike, res, grid)
    except InputError:
        raise
    except KeyError as exc:
        raise InputError(f"model snapshot is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid model snapshot: {exc}") from None


def write_model(path, model: CompositeModel) -> None:
    write_json(path, model_to_dict(model))


def read_model(path) -> CompositeModel:
    return model_from_dict(read_json(path))


# ---------------------------------------------------------------------------
# calibration results


def result_to_dict(r: CalibrationResult) -> dict:
    out = {
        "stage": r.stage,
        "valuation_date": r.valuation_date,
        "spread": r.spread,
        "spread_fixed": r.spread_fixed,
        "objective": r.objective,
        "iterations": r.iterations,
        "evaluations": r.evaluations,
        "converged": r.converged,
        "seed": r.seed,
        "residuals": [
            {"code": e.code, "kind": e.kind, "ref_start": e.start, "ref_end": e.end, "market": e.market,
             "model": e.model, "tolerance": e.tolerance, "error": e.error}
            for e in r.residuals
        ],
    }
    if r.stage == "ff":
        ends = [*r.knot_dates, None]
        starts = [r.valuation_date, *r.knot_dates]
        out["intervals"] = [
            {"start": s, "end": e, "level": v, "identified": ok}
            for s, e, v, ok in zip(starts, ends, r.levels, r.identified)
        ]
    else:
        out["spikes"] = [
            {"date": d, "width_days": w, "level": v, "identified": ok}
            for d, w, v, ok in zip(r.knot_dates, r.width_days, r.levels, r.identified)
        ]
    return out


def result_from_dict(d: dict) -> CalibrationResult:
    try:
        stage = d["stage"]
        if stage == "ff":
            rows = d["intervals"]
            knots = [parse_date(x["start"]) for x in rows[1:]]
            widths = None
        else:
            rows = d["spikes"]
            knots = [parse_date(x["date"]) for x in rows]
            widths = [int(x["width_days"]) for x in rows]
        residuals = [
            ContractResidual(e["code"], e["kind"], parse_date(e["ref_start"]), parse_date(e["ref_end"]),
                             e["market"], e["model"], e["tolerance"], e["error"])
            for e in d.get("residuals", [])
        ]
        return CalibrationResult(
            stage=stage,
            valuation_date=parse_date(d["valuation_date"]),
            knot_dates=knots,
            levels=[x["level"] for x in rows],
            identified=[bool(x["identified"]) for x in rows],
            spread=float(d["spread"]),
            spread_fixed=bool(d.get("spread_fixed", False)),
            residuals=residuals,
            objective=float(d["objective"]),
            iterations=int(d.get("iterations", 0)),
            evaluations=int(d.get("evaluations", 0)),
            converged=bool(d["converged"]),
            seed=int(d.get("seed", 0)),
            width_days=widths,
        )
    except KeyError as exc:
        raise InputError(f"calibration output is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid calibration output: {exc}") from None


# ---------------------------------------------------------------------------
# quotes

QUOTE_COLUMNS = ["observe_date", "contract_kind", "contract_code", "ref_start", "ref_end", "price"]


def read_quotes(path) -> list[FuturesQuote]:
    """Quotes CSV ``observe_date,contract_kind,contract_code,ref_start,ref_end,price``."""
    path = Path(path)
    quotes = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != QUOTE_COLUMNS:
            raise InputError(f"{path}:1: expected header {','.join(QUOTE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(QUOTE_COLUMNS):
                raise InputError(f"{path}:{lineno}: expected {len(QUOTE_COLUMNS)} fields, got {len(row)}")
            try:
                obs, kind, code, start, end, price = (c.strip() for c in row)
                contract = FuturesContract(ContractKind(kind), parse_date(start), parse_date(end), code)
                price = float(price)
                if not math.isfinite(price):
                    raise ValueError("price is not finite")
                quotes.append(FuturesQuote(contract, parse_date(obs), price))
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if not quotes:
        raise InputError(f"{path}: no quotes")
    return quotes


def quote_row(q: FuturesQuote) -> list:
    c = q.contract
    return [q.observe_date, c.kind.value, c.code, c.start, c.end, q.price]
