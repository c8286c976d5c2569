"""Command-line interface.

Every subcommand reads a JSON config (``--config``), applies overrides from
``--set key=value`` and the global flags, writes the resolved config to
``<out>/config.json`` and then its outputs next to it. Dates are ISO-8601,
rates are decimals (0.0155 = 1.55%) and futures prices are index points.

Exit codes: 0 ok, 2 input error, 3 data-consistency error, 4 calibration did
not converge, 5 missing dependency stage.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as sio
from .calendar import BusinessCalendar, DateGrid, FixingSeries, parse_date, read_date_list
from .calibration import (
    CalibrationConfig,
    CalibrationProblem,
    CalibrationResult,
    calibrate_ff,
    calibrate_sofr,
    calibrated_model,
)
from .composite import CompositeModel, composite_bond, mc_mean, simulate_paths
from .diagnostics import (
    anticipation_r2,
    decompose,
    default_buckets,
    hurst_fit,
    naive_jump,
    naive_monthly_curve,
    variance_shares,
)
from .errors import DataConsistencyError, DependencyError, InputError, StepSpikeError
from .futures import ContractKind, model_term_rate, price_contract
from .residual import VasicekParams
from .spike_model import SpikeModelParams
from .step_model import StepModelParams

log = logging.getLogger("stepspike")

CALIBRATION_KEYS = tuple(CalibrationConfig.__dataclass_fields__)

DEFAULTS = {
    "decompose": {"series": None, "target": None, "spike_threshold": None, "eom_dates": None,
                  "hurst_lags": list(range(1, 21)), "holidays": None},
    "hurst": {"series": None, "lags": list(range(1, 21))},
    "calibrate": {"valuation_date": None, "quotes": None, "fomc_dates": None, "spike_dates": None,
                  "fixings": None, "sofr_fixings": None, "target_rate": None, "fixed_spread": 0.0,
                  "spike_width_days": None, "ff_result": None, "holidays": None, "day_count": "ACT/365F",
                  "xi": 0.0, "sigma_z": 0.0},
    "price": {"model": None, "quotes": None, "fixings": None},
    "simulate": {"model": None, "n_paths": 10000, "grid_step_days": 30, "horizon_days": None,
                 "antithetic": False, "paths_written": 100, "xi": None, "rho": None, "sigma_z": None,
                 "theta": None, "beta": None, "sigma_v": None, "r0": None, "block_size": 8192},
    "r2": {"curves_dir": None, "realized": None, "bucket_width": 10, "horizon_days": 250, "naive": False,
           "max_gap_days": 7},
    "termrate": {"curves_dir": None, "benchmark": None, "tenor_months": 3, "max_gap_days": 7,
                 "use_sofr": True, "holidays": None},
}


# ---------------------------------------------------------------------------
# config


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InputError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def resolve_config(command: str, args) -> dict:
    cfg = dict(DEFAULTS[command])
    if command == "calibrate":
        cfg.update({k: getattr(CalibrationConfig(), k) for k in CALIBRATION_KEYS})
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(user, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        cfg.update(user)
    cfg.update(_parse_set(args.set))
    unknown = set(cfg) - set(DEFAULTS[command]) - set(CALIBRATION_KEYS) - {"seed", "workers", "stage"}
    if unknown:
        raise InputError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg["seed"] = int(args.seed if args.seed is not None else cfg.get("seed", 0))
    if args.workers is not None:
        cfg["workers"] = args.workers
    cfg["workers"] = _workers(cfg.get("workers", 1))
    if command == "calibrate":
        cfg["stage"] = args.stage or cfg.get("stage", "ff")
        if args.seed is not None:
            cfg["optimizer_seed"] = int(args.seed)
    return cfg


def _workers(value) -> int:
    if value in ("max", "auto", 0):
        return os.cpu_count() or 1
    value = int(value)
    if value < 1:
        raise InputError("workers must be positive")
    return value


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise InputError(f"config key {k!r} is required")


def _path(cfg, key) -> Path:
    _require(cfg, key)
    p = Path(cfg[key])
    if not p.exists():
        raise InputError(f"{key}: file {p} not found")
    return p


def _calendar(cfg) -> BusinessCalendar:
    if cfg.get("holidays"):
        return BusinessCalendar.from_holiday_file(_path(cfg, "holidays"))
    return BusinessCalendar()


# ---------------------------------------------------------------------------
# commands


def cmd_decompose(cfg, out: Path) -> int:
    series = FixingSeries.from_csv(_path(cfg, "series"))
    target = FixingSeries.from_csv(_path(cfg, "target"))
    eom = read_date_list(_path(cfg, "eom_dates")) if cfg.get("eom_dates") else None
    res = decompose(series, target, eom, cfg.get("spike_threshold"), _calendar(cfg))
    names = res.names
    rows = [[d, res.series[k], *(res.components[n][k] for n in names)] for k, d in enumerate(res.dates)]
    sio.write_csv(out / "decomposition.csv", ["date", "series", *names], rows)
    shares = variance_shares(res)
    sio.write_csv(out / "variance_contribution.csv", ["component", "variance", "share"],
                  [[n, res.variance_contribution[n], shares[n]] for n in names])
    sio.write_csv(out / "correlations.csv", ["component", *names],
                  [[n, *res.correlations[i]] for i, n in enumerate(names)])
    resid = res.components["residual"]
    lags = [v for v in cfg["hurst_lags"] if 10 * v <= resid.size]
    hurst_rows, h = [], None
    if len(lags) >= 2:
        try:
            fit = hurst_fit(resid, lags)
            h = fit.h
            hurst_rows = [[lag, v, f] for lag, v, f in zip(fit.lags, fit.variances, fit.fitted())]
        except DataConsistencyError as exc:
            log.info("residual Hurst fit skipped: %s", exc)
    sio.write_csv(out / "hurst.csv", ["lag", "variance", "fitted"], hurst_rows)
    sio.write_json(out / "summary.json", {"n": len(res.dates), "residual_hurst": h,
                                          "variance_contribution": res.variance_contribution})
    return 0


def cmd_hurst(cfg, out: Path) -> int:
    series = FixingSeries.from_csv(_path(cfg, "series"))
    fit = hurst_fit(series.values, cfg["lags"])
    sio.write_csv(out / "hurst.csv", ["lag", "variance", "fitted"],
                  [[lag, v, f] for lag, v, f in zip(fit.lags, fit.variances, fit.fitted())])
    sio.write_json(out / "hurst.json", {"h": fit.h, "intercept": fit.intercept, "n": len(series)})
    return 0


def _calibration_config(cfg) -> CalibrationConfig:
    return CalibrationConfig.from_dict({k: cfg[k] for k in CALIBRATION_KEYS if k in cfg})


def _load_ff_result(cfg, out: Path) -> CalibrationResult:
    candidates = [Path(cfg["ff_result"])] if cfg.get("ff_result") else [out / "curve.json"]
    for p in candidates:
        if p.exists():
            doc = sio.read_json(p)
            doc = doc.get("ff", doc) if isinstance(doc, dict) else doc
            if isinstance(doc, dict) and doc.get("stage") == "ff":
                return sio.result_from_dict(doc)
    raise DependencyError("SOFR stage needs a Fed Funds calibration (set ff_result or run --stage ff first)")


def _write_calibration(out: Path, cfg, grid, quotes, ff, sofr) -> None:
    doc = {"ff": sio.result_to_dict(ff)}
    if sofr is not None:
        doc["sofr"] = sio.result_to_dict(sofr)
    sio.write_json(out / "curve.json", doc)
    rows = []
    for stage, res in (("ff", ff), ("sofr", sofr)):
        if res is None:
            continue
        for e in res.residuals:
            rows.append([stage, e.code, e.kind, e.start, e.end, e.market, e.model, e.model - e.market,
                         e.tolerance, e.error])
    sio.write_csv(out / "residuals.csv", ["stage", "contract_code", "contract_kind", "ref_start", "ref_end",
                                          "market", "model", "difference", "tolerance", "error"], rows)
    ff_model = calibrated_model(ff, grid, xi=cfg["xi"])
    sio.write_model(out / "model_ff.json", ff_model)
    model = ff_model
    if sofr is not None:
        model = calibrated_model(ff, grid, sofr, xi=cfg["xi"], sigma_z=cfg["sigma_z"])
        sio.write_model(out / "model_sofr.json", model)
    sio.write_model(out / "model.json", model)
    price_rows = []
    for q in quotes:
        is_ff = q.contract.kind is ContractKind.FF30D
        if not is_ff and sofr is None:
            continue
        m = ff_model if is_ff else model
        fixings = _fixings(cfg, "fixings" if is_ff else "sofr_fixings")
        p = price_contract(m, None, grid.anchor, q.contract, fixings)
        price_rows.append([*sio.quote_row(q), p, p - q.price])
    sio.write_csv(out / "prices.csv", [*sio.QUOTE_COLUMNS, "model_price", "error"], price_rows)


def _fixings(cfg, key):
    return FixingSeries.from_csv(_path(cfg, key)) if cfg.get(key) else None


def cmd_calibrate(cfg, out: Path) -> int:
    stage = cfg["stage"]
    if stage not in ("ff", "sofr", "both"):
        raise InputError(f"unknown stage {stage!r}")
    _require(cfg, "valuation_date")
    t0 = parse_date(cfg["valuation_date"])
    cal = _calendar(cfg)
    grid = DateGrid(t0, cfg["day_count"], cal)
    quotes = [q for q in sio.read_quotes(_path(cfg, "quotes")) if q.observe_date == t0]
    if not quotes:
        raise InputError(f"no quotes observed on {t0}")
    ccfg = _calibration_config(cfg)
    ff = sofr = None
    if stage in ("ff", "both"):
        fomc = read_date_list(_path(cfg, "fomc_dates"))
        problem = CalibrationProblem(t0, grid, quotes, fomc, _fixings(cfg, "fixings"), ccfg,
                                     cfg["target_rate"], cfg["fixed_spread"])
        ff = calibrate_ff(problem)
    else:
        ff = _load_ff_result(cfg, out)
        if ff.valuation_date != t0:
            raise DependencyError(f"Fed Funds calibration is for {ff.valuation_date}, not {t0}")
    if stage in ("sofr", "both"):
        spikes = read_date_list(_path(cfg, "spike_dates"))
        widths = cfg.get("spike_width_days")
        problem = CalibrationProblem(t0, grid, quotes, spikes, _fixings(cfg, "sofr_fixings"), ccfg,
                                     spike_width_days=tuple(widths) if widths else None)
        sofr = calibrate_sofr(problem, ff)
    _write_calibration(out, cfg, grid, quotes, ff, sofr)
    fitted = [r for r in (ff if stage != "sofr" else None, sofr) if r is not None]
    if not all(r.converged for r in fitted):
        print("error: calibration did not converge (outputs written with converged=false)", file=sys.stderr)
        return 4
    return 0


def cmd_price(cfg, out: Path) -> int:
    model = sio.read_model(_path(cfg, "model"))
    quotes = sio.read_quotes(_path(cfg, "quotes"))
    fixings = _fixings(cfg, "fixings")
    rows = []
    for q in quotes:
        if q.observe_date != model.grid.anchor:
            raise DataConsistencyError(f"quote observed {q.observe_date} but model is dated {model.grid.anchor}")
        p = price_contract(model, None, q.observe_date, q.contract, fixings)
        rows.append([*sio.quote_row(q), p, p - q.price])
    sio.write_csv(out / "prices.csv", [*sio.QUOTE_COLUMNS, "model_price", "error"], rows)
    return 0


def _with_vols(model: CompositeModel, cfg) -> CompositeModel:
    step, spike, res = model.step, model.spike, model.residual
    if step is not None and (cfg["xi"] is not None or cfg["rho"] is not None):
        n = step.n
        xi = step.xi if cfg["xi"] is None else np.broadcast_to(np.asarray(cfg["xi"], float), (n,)).copy()
        rho = step.rho if cfg["rho"] is None else np.asarray(cfg["rho"], float)
        step = StepModelParams(step.schedule, xi, rho, step.f0)
    if spike is not None and cfg["sigma_z"] is not None:
        sig = np.broadcast_to(np.asarray(cfg["sigma_z"], float), (spike.n,)).copy()
        spike = SpikeModelParams(spike.schedule, sig, spike.f0)
    if any(cfg[k] is not None for k in ("theta", "beta", "sigma_v", "r0")):
        res = VasicekParams(
            res.theta if cfg["theta"] is None else float(cfg["theta"]),
            res.beta if cfg["beta"] is None else float(cfg["beta"]),
            res.sigma_v if cfg["sigma_v"] is None else float(cfg["sigma_v"]),
            res.r0 if cfg["r0"] is None else float(cfg["r0"]),
        )
    return CompositeModel(step, spike, res, model.grid)


def cmd_simulate(cfg, out: Path) -> int:
    try:
        model = _with_vols(sio.read_model(_path(cfg, "model")), cfg)
    except ValueError as exc:
        if isinstance(exc, StepSpikeError):
            raise
        raise InputError(f"invalid model: {exc}") from None
    n = int(cfg["n_paths"])
    horizon = None if cfg["horizon_days"] is None else float(cfg["horizon_days"]) / 365.0
    if horizon is None and not model.event_times():
        horizon = 1.0
    paths = simulate_paths(model, n, cfg["seed"], cfg["grid_step_days"], horizon, antithetic=bool(cfg["antithetic"]),
                           workers=cfg["workers"], block_size=int(cfg["block_size"]))
    sio.write_model(out / "model.json", model)
    k_out = min(n, int(cfg["paths_written"]))
    rows = [[p, t, paths.short_rate[p, k], paths.discount[p, k]]
            for p in range(k_out) for k, t in enumerate(paths.times)]
    sio.write_csv(out / "paths.csv", ["path_id", "time", "short_rate", "discount"], rows)
    init = model.initial_states()
    summary = []
    for k, t in enumerate(paths.times):
        r = paths.short_rate[:, k]
        q05, q50, q95 = np.quantile(r, [0.05, 0.5, 0.95])
        mc, se = mc_mean(paths.discount[:, k])
        bond = composite_bond(model, init, 0.0, float(t))
        ok = abs(mc - bond) <= 3.0 * se if se > 0 else abs(mc - bond) <= 1e-12 * max(1.0, bond)
        summary.append([t, model.grid.date_of(t), float(np.mean(r)), q05, q50, q95, bond, mc, se, ok])
    sio.write_csv(out / "summary.csv", ["time", "date", "mean_short_rate", "q05", "q50", "q95", "bond_closed_form",
                                        "bond_mc", "bond_mc_se", "within_3se"], summary)
    return 0


def _load_curves(cfg) -> dict:
    _require(cfg, "curves_dir")
    root = Path(cfg["curves_dir"])
    if not root.is_dir():
        raise InputError(f"curves_dir {root} is not a directory")
    found = {}
    for p in sorted(root.rglob("*.json")):
        doc = sio.read_json(p)
        if not isinstance(doc, dict) or "ff" not in doc:
            continue
        ff = sio.result_from_dict(doc["ff"])
        sofr = sio.result_from_dict(doc["sofr"]) if "sofr" in doc else None
        if ff.valuation_date in found:
            raise DataConsistencyError(f"two calibrations for {ff.valuation_date} ({p})")
        found[ff.valuation_date] = (ff, sofr)
    if not found:
        raise InputError(f"no calibration outputs under {root}")
    dates = sorted(found)
    gap = int(cfg["max_gap_days"])
    for a, b in zip(dates, dates[1:]):
        if (b - a).days > gap:
            raise DataConsistencyError(f"gap of {(b - a).days} days between calibrations {a} and {b} exceeds {gap}")
    return {d: found[d] for d in dates}


def _target_curve(ff: CalibrationResult):
    knots = list(ff.knot_dates)
    levels = list(ff.levels)

    def curve(d: dt.date) -> float:
        k = sum(1 for x in knots if x <= d)
        return levels[k]

    return curve


def cmd_r2(cfg, out: Path) -> int:
    found = _load_curves(cfg)
    realized_series = FixingSeries.from_csv(_path(cfg, "realized"), value_column="change")
    realized = list(zip(realized_series.dates, realized_series.rates))
    buckets = default_buckets(int(cfg["bucket_width"]), int(cfg["horizon_days"]))
    curves = {d: _target_curve(ff) for d, (ff, _) in found.items()}
    rows = anticipation_r2(realized, curves, buckets)
    sio.write_csv(out / "r2.csv", ["bucket_lo", "bucket_hi", "r2", "n"], [[r.lo, r.hi, r.r2, r.n] for r in rows])
    if cfg["naive"]:
        naive = {}
        for d, (ff, _) in found.items():
            prices = {(e.start.year, e.start.month): e.market for e in ff.residuals if e.kind == "FF30D"}
            naive[d] = naive_monthly_curve(prices)
        rows = anticipation_r2(realized, naive, buckets, jump=naive_jump)
        sio.write_csv(out / "r2_naive.csv", ["bucket_lo", "bucket_hi", "r2", "n"],
                      [[r.lo, r.hi, r.r2, r.n] for r in rows])
    return 0


def _add_months(d: dt.date, months: int) -> dt.date:
    y, m = divmod(d.month - 1 + months, 12)
    year, month = d.year + y, m + 1
    last = (dt.date(year + month // 12, month % 12 + 1, 1) - dt.timedelta(days=1)).day
    return dt.date(year, month, min(d.day, last))


def cmd_termrate(cfg, out: Path) -> int:
    found = _load_curves(cfg)
    bench = _fixings(cfg, "benchmark")
    bmap = bench.as_dict() if bench is not None else None
    cal = _calendar(cfg)
    rows = []
    for d, (ff, sofr) in found.items():
        grid = DateGrid(d, "ACT/365F", cal)
        model = calibrated_model(ff, grid, sofr if cfg["use_sofr"] else None)
        end = _add_months(d, int(cfg["tenor_months"]))
        rate = model_term_rate(model, None, d, d, end)
        row = [d, end, rate]
        if bmap is not None:
            b = bmap.get(d)
            row += [b, None if b is None else rate - b]
        rows.append(row)
    header = ["date", "end", "term_rate"] + (["benchmark", "spread"] if bmap is not None else [])
    sio.write_csv(out / "termrate.csv", header, rows)
    return 0


COMMANDS = {
    "decompose": cmd_decompose,
    "hurst": cmd_hurst,
    "calibrate": cmd_calibrate,
    "price": cmd_price,
    "simulate": cmd_simulate,
    "r2": cmd_r2,
    "termrate": cmd_termrate,
}

HELP = {
    "decompose": "split a rate history into target, spikes and residual",
    "hurst": "Hurst exponent from lagged-difference variances",
    "calibrate": "fit target levels and spikes to futures quotes",
    "price": "price futures quotes off a model snapshot",
    "simulate": "simulate short-rate paths and check bond prices",
    "r2": "forward-anticipation R^2 by days ahead",
    "termrate": "compounded term rates from calibrated curves",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="random / optimizer seed (non-negative integer)")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--workers", help="internal parallelism: an integer or 'max'")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (JSON value)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(
        prog="stepspike",
        description="Short-rate model with FOMC steps and end-of-month spikes. Dates are ISO-8601, rates are "
        "decimals and futures prices are index points.",
        epilog="exit codes: 0 ok, 2 input error, 3 data inconsistency, 4 no convergence, 5 missing stage",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        if name == "calibrate":
            p.add_argument("--stage", choices=["ff", "sofr", "both"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.seed is not None and args.seed < 0:
            raise InputError("--seed must be non-negative")
        cfg = resolve_config(args.command, args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        sio.write_json(out / "config.json", cfg)
        return COMMANDS[args.command](cfg, out)
    except StepSpikeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
