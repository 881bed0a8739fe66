"""Pipeline stages behind the CLI subcommands.

Each stage reads the raw input directory (and, where stated, an
intermediate CSV produced by an earlier stage), computes deterministically,
and writes its outputs into the output directory. Running a stage twice
on identical inputs yields byte-identical files.

Stage outputs
-------------
ingest validate   canonical/ dump + validation_report.csv
cei compute       cei_poi_day.csv, cei_zcta_day.csv
cei decompose     cei_industry_day.csv, cei_per_visit.csv   (needs cei compute)
sdm aggregate     mobility_daily.csv, mobility_window.csv   (needs cei compute)
panel build       panel.csv, panel_days.csv                 (needs sdm aggregate)
sem fit           sem_series.csv                            (needs panel build)
synth generate    a full synthetic input directory
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import distancing, exposure, synth
from .config import RunConfig
from .core import Crosswalk, parse_date, read_socioeconomics_csv, week_start
from .csvio import write_csv
from .errors import DataError
from .ingest import (
    RejectionReport,
    filter_pois,
    read_cases,
    read_poi_catalog,
    read_social_distancing,
    read_visit_patterns,
)
from .sem import PanelDay, PanelTooSmallError, SemSpec, build_panel, fit_series


@dataclass
class StageResult:
    """What a stage produced, for the run manifest."""

    outputs: list[Path] = field(default_factory=list)
    tables: dict[str, dict] = field(default_factory=dict)
    notes: dict[str, object] = field(default_factory=dict)

    def add_report(self, name: str, report: RejectionReport) -> None:
        self.tables[name] = {
            "file": report.file,
            "total": report.total_rows,
            "accepted": report.accepted,
            "rejected": report.rejected,
            "warnings": dict(sorted(report.warnings.items())),
        }


@dataclass
class Inputs:
    """All five datasets loaded, validated, and filtered."""

    pois: dict
    visits: dict
    dwell: dict
    origins: dict
    devices: dict
    cases: dict
    socio: dict
    crosswalk: Crosswalk
    reports: dict[str, RejectionReport]
    hospital_excluded: int
    days: list[date]


def _restrict_dates(table: dict, lo: date, hi: date, position: int = 1) -> dict:
    return {k: v for k, v in table.items() if lo <= k[position] <= hi}


def load_inputs(cfg: RunConfig, input_dir) -> Inputs:
    """Read and cross-validate the five datasets.

    POIs inside hospitals are dropped before visit rows are matched, so
    their visit/dwell/origin rows are silently excluded (counted in the
    returned object, not as rejections). The study range defaults to the
    span of the visit table.
    """
    root = Path(input_dir)
    catalog, poi_report = read_poi_catalog(root / "pois.csv", cfg.max_reject_frac)
    kept = filter_pois(catalog)
    crosswalk = Crosswalk.from_csv(root / "crosswalk.csv")
    socio = read_socioeconomics_csv(root / "socioeconomics.csv")
    crosswalk.validate_zctas(socio.keys())

    visits, dwell, origins, vp_reports = read_visit_patterns(
        root / "visit_patterns",
        cfg.scheme(),
        crosswalk,
        known_pois=catalog.keys(),
        max_reject_frac=cfg.max_reject_frac,
    )
    hospital_excluded = 0
    for table in (visits, dwell, origins):
        drop = [k for k in table if k[0] not in kept]
        hospital_excluded += len(drop)
        for k in drop:
            del table[k]

    devices, sd_report = read_social_distancing(
        root / "social_distancing.csv", cfg.max_reject_frac
    )
    cases, case_report = read_cases(root / "cases.csv", max_reject_frac=cfg.max_reject_frac)

    if visits:
        data_lo = min(d for _, d in visits)
        data_hi = max(d for _, d in visits)
    elif cases:
        data_lo = min(d for _, d in cases)
        data_hi = max(d for _, d in cases)
    else:
        raise DataError("no dated rows in visits or cases; nothing to process")
    lo = cfg.start_date or data_lo
    hi = cfg.end_date or data_hi
    if lo > hi:
        raise DataError(f"study range is empty: {lo.isoformat()} > {hi.isoformat()}")

    visits = _restrict_dates(visits, lo, hi)
    devices = _restrict_dates(devices, lo, hi)
    cases = _restrict_dates(cases, lo, hi)
    days = [lo + timedelta(days=i) for i in range((hi - lo).days + 1)]

    reports = {
        "pois": poi_report,
        "visits": vp_reports["visits"],
        "dwell": vp_reports["dwell"],
        "origins": vp_reports["origins"],
        "social_distancing": sd_report,
        "cases": case_report,
    }
    return Inputs(
        pois=kept,
        visits=visits,
        dwell=dwell,
        origins=origins,
        devices=devices,
        cases=cases,
        socio=socio,
        crosswalk=crosswalk,
        reports=reports,
        hospital_excluded=hospital_excluded,
        days=days,
    )


def _result_with_reports(inputs: Inputs) -> StageResult:
    result = StageResult()
    for name, report in inputs.reports.items():
        result.add_report(name, report)
    result.notes["hospital_excluded_rows"] = inputs.hospital_excluded
    return result


def stage_ingest_validate(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    """Validate all inputs and emit the canonical dump for round-trip tests."""
    inputs = load_inputs(cfg, input_dir)
    out = Path(output_dir)
    result = _result_with_reports(inputs)

    canon = out / "canonical"
    write_csv(
        canon / "pois.csv",
        ("poi_id", "naics", "area_sqft", "zcta", "enclosed_by"),
        [
            (p.id, p.naics, p.area_sqft, p.zcta, p.enclosed_by or "")
            for p in (inputs.pois[k] for k in sorted(inputs.pois))
        ],
    )
    write_csv(
        canon / "visit_patterns" / "visits.csv",
        ("poi_id", "date") + tuple(f"h{h:02d}" for h in range(24)),
        [
            (poi, day) + tuple(int(c) for c in inputs.visits[(poi, day)])
            for poi, day in sorted(inputs.visits)
        ],
    )
    k = cfg.scheme().k
    write_csv(
        canon / "visit_patterns" / "dwell.csv",
        ("poi_id", "week_start") + tuple(f"dwell_{i}" for i in range(k)),
        [
            (poi, week) + tuple(float(x) for x in inputs.dwell[(poi, week)])
            for poi, week in sorted(inputs.dwell)
        ],
    )
    write_csv(
        canon / "visit_patterns" / "origins.csv",
        ("poi_id", "week_start", "origin_zcta", "count"),
        [
            (poi, week, z, inputs.origins[(poi, week)][z])
            for poi, week in sorted(inputs.origins)
            for z in sorted(inputs.origins[(poi, week)])
        ],
    )
    write_csv(
        canon / "social_distancing.csv",
        ("cbg", "date", "devices", "prop_home", "time_home_frac"),
        [
            (cbg, day, row.devices, row.prop_home, row.time_home_frac)
            for (cbg, day), row in sorted(inputs.devices.items())
        ],
    )
    write_csv(
        canon / "cases.csv",
        ("zcta", "date", "new_cases"),
        [(z, day, n) for (z, day), n in sorted(inputs.cases.items())],
    )
    write_csv(
        canon / "socioeconomics.csv",
        ("zcta", "income_log", "low_edu", "poor", "age65", "black", "transit"),
        [
            (z, r.income_log, r.low_edu, r.poor, r.age65, r.black, r.transit)
            for z, r in sorted(inputs.socio.items())
        ],
    )
    write_csv(
        canon / "crosswalk.csv",
        ("cbg", "zcta", "weight"),
        [
            (cbg, z, w)
            for cbg in sorted(inputs.crosswalk.cbgs())
            for z, w in inputs.crosswalk.shares(cbg)
        ],
    )
    result.outputs = [
        canon / "pois.csv",
        canon / "visit_patterns" / "visits.csv",
        canon / "visit_patterns" / "dwell.csv",
        canon / "visit_patterns" / "origins.csv",
        canon / "social_distancing.csv",
        canon / "cases.csv",
        canon / "socioeconomics.csv",
        canon / "crosswalk.csv",
    ]

    report_path = out / "validation_report.csv"
    rows = []
    for name in sorted(result.tables):
        t = result.tables[name]
        warn = ";".join(f"{k}={v}" for k, v in t["warnings"].items())
        try:
            shown = str(Path(t["file"]).relative_to(input_dir))
        except ValueError:
            shown = Path(t["file"]).name
        rows.append((name, shown, t["total"], t["accepted"], t["rejected"], warn))
    write_csv(
        report_path,
        ("table", "file", "total_rows", "accepted", "rejected", "warnings"),
        rows,
    )
    result.outputs.append(report_path)
    return result


def compute_cei_tables(cfg: RunConfig, inputs: Inputs, workers: int | None = None):
    """POI-day CEI plus destination- and origin-side ZCTA-day tables."""
    areas = {pid: poi.area_sqft for pid, poi in inputs.pois.items()}
    poi_day, diag = exposure.compute_poi_day_cei(
        inputs.visits,
        inputs.dwell,
        areas,
        cfg.scheme(),
        workers=workers if workers is not None else cfg.threads,
    )
    poi_zcta = {pid: poi.zcta for pid, poi in inputs.pois.items()}
    destination = exposure.sum_to_zcta_day(poi_day, poi_zcta)
    origin = exposure.cei_origin_attribution(poi_day, inputs.origins)
    return poi_day, destination, origin, diag


def stage_cei_compute(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    inputs = load_inputs(cfg, input_dir)
    result = _result_with_reports(inputs)
    poi_day, destination, origin, diag = compute_cei_tables(cfg, inputs)
    result.notes.update(diag)

    out = Path(output_dir)
    poi_path = out / "cei_poi_day.csv"
    write_csv(
        poi_path,
        ("poi_id", "date", "cei"),
        [(poi, day, poi_day[(poi, day)]) for poi, day in sorted(poi_day)],
    )
    zcta_path = out / "cei_zcta_day.csv"
    keys = sorted(set(destination) | set(origin))
    write_csv(
        zcta_path,
        ("zcta", "date", "cei_destination", "cei_origin"),
        [
            (z, day, destination.get((z, day), 0.0), origin.get((z, day), 0.0))
            for z, day in keys
        ],
    )
    result.outputs = [poi_path, zcta_path]
    return result


def read_cei_poi_day(path) -> dict[tuple[str, date], float]:
    out: dict[tuple[str, date], float] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(row["poi_id"], parse_date(row["date"]))] = float(row["cei"])
    return out


def read_cei_zcta_day(path) -> dict[tuple[str, date], tuple[float, float]]:
    out: dict[tuple[str, date], tuple[float, float]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(row["zcta"], parse_date(row["date"]))] = (
                float(row["cei_destination"]),
                float(row["cei_origin"]),
            )
    return out


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise DataError(f"{path} not found; run `ceikit {produced_by}` first")
    return path


def stage_cei_decompose(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    inputs = load_inputs(cfg, input_dir)
    result = _result_with_reports(inputs)
    out = Path(output_dir)
    poi_day = read_cei_poi_day(_require(out / "cei_poi_day.csv", "cei compute"))

    poi_naics = {pid: poi.naics for pid, poi in inputs.pois.items()}
    totals, shares = exposure.industry_decomposition(
        poi_day, poi_naics, cfg.industry_groups
    )
    industry_path = out / "cei_industry_day.csv"
    write_csv(
        industry_path,
        ("label", "date", "cei", "share"),
        [
            (label, day, totals[(label, day)], shares[(label, day)])
            for label, day in sorted(totals)
        ],
    )

    code_to_label = {
        code: label
        for label, codes in cfg.industry_groups.items()
        for code in codes
    }
    poi_label = {
        pid: code_to_label.get(poi.naics, exposure.REMAINDER_LABEL)
        for pid, poi in inputs.pois.items()
    }
    per_visit = exposure.cei_per_visit(poi_day, inputs.visits, poi_label)
    per_visit_path = out / "cei_per_visit.csv"
    write_csv(
        per_visit_path,
        ("label", "period", "value"),
        [(label, period, per_visit[(label, period)]) for label, period in sorted(per_visit)],
    )
    result.outputs = [industry_path, per_visit_path]
    return result


def stage_sdm_aggregate(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    inputs = load_inputs(cfg, input_dir)
    result = _result_with_reports(inputs)
    out = Path(output_dir)
    zcta_cei = read_cei_zcta_day(_require(out / "cei_zcta_day.csv", "cei compute"))

    column = 0 if cfg.cei_attribution == "destination" else 1
    daily_cei = {
        key: vals[column]
        for key, vals in zcta_cei.items()
        if key[0] != exposure.UNATTRIBUTED
    }
    rows = distancing.aggregate_distancing(inputs.devices, inputs.crosswalk)
    rows = distancing.with_daily_cei(rows, daily_cei)

    daily_path = out / "mobility_daily.csv"
    write_csv(
        daily_path,
        ("zcta", "date", "cei", "prop_home", "time_home", "devices"),
        [
            (z, day, r.cei, r.prop_home, r.time_home, r.devices)
            for (z, day), r in sorted(rows.items())
        ],
    )

    window_days = [d for d in inputs.days if d - timedelta(days=cfg.window) >= inputs.days[0]]
    table = distancing.window_mobility_table(
        rows, window_days, cfg.window, cfg.prophome_mode
    )
    window_path = out / "mobility_window.csv"
    write_csv(
        window_path,
        ("zcta", "date", "cei_window", "prop_home", "time_home", "devices"),
        [
            (z, day, w.cei_window, w.prop_home, w.time_home, w.devices)
            for (z, day), w in sorted(table.items())
        ],
    )
    result.outputs = [daily_path, window_path]
    result.notes["window_rows"] = len(table)
    return result


def read_mobility_window(path) -> dict[tuple[str, date], distancing.WindowMobility]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(row["zcta"], parse_date(row["date"]))] = distancing.WindowMobility(
                cei_window=float(row["cei_window"]),
                prop_home=float(row["prop_home"]),
                time_home=float(row["time_home"]),
                devices=float(row["devices"]),
            )
    return out


def stage_panel_build(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    inputs = load_inputs(cfg, input_dir)
    result = _result_with_reports(inputs)
    out = Path(output_dir)
    window = read_mobility_window(_require(out / "mobility_window.csv", "sdm aggregate"))

    spec = SemSpec()
    panel_rows = []
    day_rows = []
    candidate_days = sorted({d for _, d in window})
    for t in candidate_days:
        try:
            panel = build_panel(
                t,
                window,
                inputs.cases,
                inputs.socio,
                spec=spec,
                lag=cfg.lag,
                min_rows=cfg.min_rows,
            )
        except PanelTooSmallError as exc:
            day_rows.append((t, "skipped", 0, 0, str(exc)))
            continue
        day_rows.append((t, "ok", len(panel.zctas), panel.n_excluded, ""))
        for zcta, row in zip(panel.zctas, panel.X):
            panel_rows.append((zcta, t) + tuple(float(v) for v in row))

    panel_path = out / "panel.csv"
    write_csv(panel_path, ("zcta", "date") + spec.observed, panel_rows)
    days_path = out / "panel_days.csv"
    write_csv(
        days_path,
        ("date", "status", "n_rows", "n_excluded", "note"),
        day_rows,
    )
    result.outputs = [panel_path, days_path]
    result.notes["panel_days_ok"] = sum(1 for r in day_rows if r[1] == "ok")
    return result


def read_panel(path, spec: SemSpec) -> list[PanelDay]:
    by_day: dict[date, list[tuple[str, list[float]]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            day = parse_date(row["date"])
            values = [float(row[c]) for c in spec.observed]
            by_day.setdefault(day, []).append((row["zcta"], values))
    panels = []
    for day in sorted(by_day):
        rows = sorted(by_day[day])
        panels.append(
            PanelDay(
                day=day,
                zctas=tuple(z for z, _ in rows),
                X=np.array([v for _, v in rows]),
                n_excluded=0,
                columns=spec.observed,
            )
        )
    return panels


def stage_sem_fit(cfg: RunConfig, input_dir, output_dir) -> StageResult:
    out = Path(output_dir)
    spec = SemSpec()
    panels = read_panel(_require(out / "panel.csv", "panel build"), spec)

    excluded: dict[date, int] = {}
    skipped: list[tuple[date, str]] = []
    days_path = out / "panel_days.csv"
    if days_path.exists():
        with open(days_path, newline="") as fh:
            for row in csv.DictReader(fh):
                day = parse_date(row["date"])
                if row["status"] == "ok":
                    excluded[day] = int(row["n_excluded"])
                else:
                    skipped.append((day, row["note"]))

    panels = [
        PanelDay(p.day, p.zctas, p.X, excluded.get(p.day, 0), p.columns) for p in panels
    ]
    series = fit_series(
        list(panels) + list(skipped),
        spec=spec,
        max_iter=cfg.max_iter,
        grad_tol=cfg.grad_tol,
        f_rel_tol=cfg.f_rel_tol,
        n_restarts=cfg.restarts,
        hessian_step=cfg.hessian_step,
        random_state=cfg.seed,
    )

    rows = []
    for est in series.estimates:
        ses = est.std_errors
        for i, name in enumerate(est.param_names):
            se = None if ses is None or not np.isfinite(ses[i]) else float(ses[i])
            rows.append(
                (
                    est.day,
                    name,
                    float(est.estimates[i]),
                    se,
                    est.converged,
                    est.n_obs,
                    est.f_ml,
                )
            )
    series_path = out / "sem_series.csv"
    write_csv(
        series_path,
        ("date", "param_name", "estimate", "std_error", "converged", "n_obs", "f_ml"),
        rows,
    )
    result = StageResult(outputs=[series_path])
    result.notes["fitted_days"] = len(series.estimates)
    result.notes["skipped_days"] = len(series.skipped)
    result.notes["converged_days"] = sum(1 for e in series.estimates if e.converged)
    return result


def stage_synth_generate(cfg: RunConfig, output_dir) -> StageResult:
    """Write a complete synthetic input directory."""
    sc = synth.SynthConfig(
        seed=cfg.seed,
        n_zcta=cfg.n_zcta,
        n_poi=cfg.n_poi,
        start=cfg.start_date or date(2020, 3, 2),
        n_days=cfg.n_days,
    )
    city = synth.gen_city(sc)
    visits, dwell, origins, devices, cases = synth.gen_micro(sc, city)
    out = Path(output_dir)
    paths = synth.write_city(out, city)
    paths += synth.write_micro(out, city, visits, dwell, origins, devices, cases)
    result = StageResult(outputs=list(paths))
    result.notes["n_zcta"] = sc.n_zcta
    result.notes["n_poi"] = sc.n_poi
    result.notes["n_days"] = sc.n_days
    return result
