"""Plot-ready report CSVs assembled from pipeline outputs.

No images are rendered; every report is a CSV a plotting script can
consume directly. Smoothing is the trailing 7-day moving average from
:func:`ceikit.core.moving_average_7`, applied within each contiguous run
of days so gaps never leak values across them.

Reports
-------
report_city_trends.csv     date, cases, cei, prop_home, time_home + smoothed
report_sem_series.csv      date, param, estimate, std_error, band_lo, band_hi
report_sem_overlay.csv     date, param, estimate_smoothed (key coefficients)
report_industry_trends.csv label, date, cei, cei_smoothed, share
report_cei_vs_cases.csv    zcta, date, cei, new_cases, income_class
"""

from __future__ import annotations

import csv
from datetime import date, timedelta
from pathlib import Path

from .config import RunConfig
from .core import (
    IncomeClassTable,
    moving_average_7,
    parse_date,
    read_socioeconomics_csv,
)
from .csvio import write_csv
from .errors import DataError
from .exposure import UNATTRIBUTED
from .ingest import read_cases
from .pipeline import StageResult, read_cei_zcta_day


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; run `ceikit {produced_by}` first")
    return path


def smooth_by_runs(series: list[tuple[date, float]]) -> dict[date, float]:
    """Trailing 7-day smoothing applied per contiguous run of days."""
    series = sorted(series)
    out: dict[date, float] = {}
    run: list[tuple[date, float]] = []
    for day, value in series:
        if run and (day - run[-1][0]) != timedelta(days=1):
            for d, v in moving_average_7(run):
                out[d] = v
            run = []
        run.append((day, value))
    for d, v in moving_average_7(run):
        out[d] = v
    return out


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    """Assemble all report CSVs from pipeline outputs.

    Raises :class:`DataError` naming the stage to run when an upstream
    output is missing.
    """
    out = Path(output_dir)
    root = Path(input_dir)
    result = StageResult()

    daily_rows = _read_rows(_require(out / "mobility_daily.csv", "sdm aggregate"))
    cases, _ = read_cases(root / "cases.csv")
    socio = read_socioeconomics_csv(root / "socioeconomics.csv")
    income_class = IncomeClassTable.from_socioeconomics(socio)

    # City-wide daily trends: exposure sums, home measures device-weighted.
    per_day: dict[date, list[float]] = {}
    for row in daily_rows:
        day = parse_date(row["date"])
        acc = per_day.setdefault(day, [0.0, 0.0, 0.0, 0.0])
        acc[0] += float(row["cei"])
        devices = float(row["devices"])
        if devices > 0 and row["prop_home"]:
            acc[1] += devices * float(row["prop_home"])
            acc[2] += devices * float(row["time_home"])
            acc[3] += devices
    case_day: dict[date, float] = {}
    for (zcta, day), n in cases.items():
        case_day[day] = case_day.get(day, 0.0) + n

    days = sorted(per_day)
    cei_series = [(d, per_day[d][0]) for d in days]
    prop_series = [
        (d, per_day[d][1] / per_day[d][3]) for d in days if per_day[d][3] > 0
    ]
    time_series = [
        (d, per_day[d][2] / per_day[d][3]) for d in days if per_day[d][3] > 0
    ]
    cases_series = [(d, case_day.get(d, 0.0)) for d in days]
    smooth = {
        "cases": smooth_by_runs(cases_series),
        "cei": smooth_by_runs(cei_series),
        "prop_home": smooth_by_runs(prop_series),
        "time_home": smooth_by_runs(time_series),
    }
    prop_map = dict(prop_series)
    time_map = dict(time_series)
    trends_path = out / "report_city_trends.csv"
    write_csv(
        trends_path,
        (
            "date",
            "cases",
            "cases_smoothed",
            "cei",
            "cei_smoothed",
            "prop_home",
            "prop_home_smoothed",
            "time_home",
            "time_home_smoothed",
        ),
        [
            (
                d,
                case_day.get(d, 0.0),
                smooth["cases"].get(d),
                per_day[d][0],
                smooth["cei"].get(d),
                prop_map.get(d),
                smooth["prop_home"].get(d),
                time_map.get(d),
                smooth["time_home"].get(d),
            )
            for d in days
        ],
    )
    result.outputs.append(trends_path)

    # Coefficient series with +/- one standard error bands.
    sem_rows = _read_rows(_require(out / "sem_series.csv", "sem fit"))
    series_path = out / "report_sem_series.csv"
    out_rows = []
    overlay_input: dict[str, list[tuple[date, float]]] = {}
    for row in sem_rows:
        day = parse_date(row["date"])
        est = float(row["estimate"])
        se = float(row["std_error"]) if row["std_error"] else None
        lo = est - se if se is not None else None
        hi = est + se if se is not None else None
        out_rows.append((day, row["param_name"], est, se, lo, hi, row["converged"]))
        overlay_input.setdefault(row["param_name"], []).append((day, est))
    write_csv(
        series_path,
        ("date", "param", "estimate", "std_error", "band_lo", "band_hi", "converged"),
        sorted(out_rows, key=lambda r: (r[1], r[0])),
    )
    result.outputs.append(series_path)

    overlay_path = out / "report_sem_overlay.csv"
    overlay_rows = []
    for param in ("eta_on_income", "cases_on_eta"):
        smoothed = smooth_by_runs(overlay_input.get(param, []))
        for d in sorted(smoothed):
            overlay_rows.append((d, param, smoothed[d]))
    write_csv(
        overlay_path,
        ("date", "param", "estimate_smoothed"),
        sorted(overlay_rows, key=lambda r: (r[1], r[0])),
    )
    result.outputs.append(overlay_path)

    # Industry trends and shares.
    industry_rows = _read_rows(_require(out / "cei_industry_day.csv", "cei decompose"))
    by_label: dict[str, list[tuple[date, float]]] = {}
    shares: dict[tuple[str, date], float] = {}
    for row in industry_rows:
        day = parse_date(row["date"])
        by_label.setdefault(row["label"], []).append((day, float(row["cei"])))
        shares[(row["label"], day)] = float(row["share"])
    industry_path = out / "report_industry_trends.csv"
    rows = []
    for label in sorted(by_label):
        smoothed = smooth_by_runs(by_label[label])
        for day, value in sorted(by_label[label]):
            rows.append((label, day, value, smoothed[day], shares[(label, day)]))
    write_csv(
        industry_path,
        ("label", "date", "cei", "cei_smoothed", "share"),
        rows,
    )
    result.outputs.append(industry_path)

    # Exposure-versus-cases scatter rows with income class.
    zcta_cei = read_cei_zcta_day(_require(out / "cei_zcta_day.csv", "cei compute"))
    column = 0 if cfg.cei_attribution == "destination" else 1
    scatter_path = out / "report_cei_vs_cases.csv"
    scatter_rows = []
    for (zcta, day), values in sorted(zcta_cei.items()):
        if zcta == UNATTRIBUTED or zcta not in income_class.classes:
            continue
        n = cases.get((zcta, day))
        if n is None:
            continue
        scatter_rows.append((zcta, day, values[column], n, income_class[zcta]))
    write_csv(
        scatter_path,
        ("zcta", "date", "cei", "new_cases", "income_class"),
        scatter_rows,
    )
    result.outputs.append(scatter_path)

    result.notes["report_days"] = len(days)
    return result
