"""Readers for the five input datasets.

Each reader validates rows against the documented schema, collects bad
rows into a :class:`RejectionReport` instead of failing, and aborts only
when the rejected fraction of a file exceeds a configurable threshold.
All dates are ISO-8601.

File schemas
------------
POI catalog (``pois.csv``):
    poi_id,naics,area_sqft,zcta,enclosed_by   (enclosed_by may be empty)
Visit patterns (a directory):
    visits.csv   poi_id,date,h00,...,h23
    dwell.csv    poi_id,week_start,dwell_0,...,dwell_{k-1}
    origins.csv  poi_id,week_start,origin_cbg,count
                 (or origin_zcta instead of origin_cbg for pre-aggregated
                 dumps; week_start is the Monday of the week)
Social distancing (``social_distancing.csv``):
    cbg,date,devices,prop_home,median_time_home_minutes
Cases (``cases.csv``):
    zcta,date,new_cases   (cumulative totals supported behind a flag)
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import BucketScheme, Crosswalk, parse_date, week_start
from .errors import DataError, DataQualityWarning, SchemaError

#: NAICS prefix identifying hospitals for the enclosure filter.
HOSPITAL_NAICS_PREFIX = "622"

#: Abort a file when more than this fraction of its rows is rejected.
DEFAULT_MAX_REJECT_FRAC = 0.10

MINUTES_PER_DAY = 1440.0

HOUR_COLUMNS = tuple(f"h{h:02d}" for h in range(24))


@dataclass(frozen=True)
class Poi:
    """One place of interest from the catalog."""

    id: str
    naics: str
    area_sqft: float
    zcta: str
    enclosed_by: str | None = None


@dataclass
class RejectionReport:
    """Per-file accounting of accepted, rejected, and repaired rows.

    Accepted + rejected always equals the number of data rows read, so
    ingest is lossless modulo explicit rejections.
    """

    file: str
    total_rows: int = 0
    accepted: int = 0
    rejections: list[tuple[int, str]] = field(default_factory=list)
    warnings: dict[str, int] = field(default_factory=dict)

    @property
    def rejected(self) -> int:
        return len(self.rejections)

    def reject(self, lineno: int, reason: str) -> None:
        self.rejections.append((lineno, reason))

    def warn(self, kind: str) -> None:
        self.warnings[kind] = self.warnings.get(kind, 0) + 1

    def check_threshold(self, max_reject_frac: float) -> None:
        if self.total_rows and self.rejected / self.total_rows > max_reject_frac:
            examples = "; ".join(
                f"line {ln}: {why}" for ln, why in self.rejections[:3]
            )
            raise DataError(
                f"{self.file}: {self.rejected}/{self.total_rows} rows rejected "
                f"(threshold {max_reject_frac:.0%}); first rejections: {examples}"
            )


# Table aliases. All are frozen after their reader returns.
VisitTable = dict[tuple[str, date], np.ndarray]  # (poi, day) -> 24 hourly counts
DwellDistribution = dict[tuple[str, date], np.ndarray]  # (poi, week) -> k shares
OriginTable = dict[tuple[str, date], dict[str, float]]  # (poi, week) -> zcta counts
CasesSeries = dict[tuple[str, date], int]  # (zcta, day) -> new cases


@dataclass(frozen=True)
class DeviceDay:
    """Per-CBG-day device statistics."""

    devices: int
    prop_home: float
    time_home_frac: float


DeviceDayStats = dict[tuple[str, date], DeviceDay]


def _open_reader(path) -> tuple[csv.DictReader, object]:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return csv.DictReader(fh), fh


def _require_columns(path, reader: csv.DictReader, required: Iterable[str]) -> None:
    have = set(reader.fieldnames or ())
    missing = sorted(set(required) - have)
    if missing:
        raise SchemaError(f"{path}: missing columns {', '.join(missing)}")


def read_poi_catalog(
    path, max_reject_frac: float = DEFAULT_MAX_REJECT_FRAC
) -> tuple[dict[str, Poi], RejectionReport]:
    """Read the POI catalog, rejecting rows that violate invariants.

    A POI needs a unique id, a 6-digit NAICS code, a positive floor area,
    and a containing ZCTA. Rejected rows are reported with reasons.
    """
    report = RejectionReport(str(path))
    reader, fh = _open_reader(path)
    pois: dict[str, Poi] = {}
    with fh:
        _require_columns(path, reader, ("poi_id", "naics", "area_sqft", "zcta"))
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            poi_id = (row.get("poi_id") or "").strip()
            naics = (row.get("naics") or "").strip()
            zcta = (row.get("zcta") or "").strip()
            parent = (row.get("enclosed_by") or "").strip() or None
            if not poi_id:
                report.reject(lineno, "empty poi_id")
                continue
            if poi_id in pois:
                report.reject(lineno, f"duplicate poi_id {poi_id}")
                continue
            if len(naics) != 6 or not naics.isdigit():
                report.reject(lineno, f"naics {naics!r} is not 6 digits")
                continue
            try:
                area = float(row.get("area_sqft") or "")
            except ValueError:
                report.reject(lineno, f"unparseable area {row.get('area_sqft')!r}")
                continue
            if not (area > 0 and math.isfinite(area)):
                report.reject(lineno, "nonpositive area")
                continue
            if not zcta:
                report.reject(lineno, "empty zcta")
                continue
            pois[poi_id] = Poi(poi_id, naics, area, zcta, parent)
            report.accepted += 1
    report.check_threshold(max_reject_frac)
    return pois, report


def filter_pois(pois: Mapping[str, Poi]) -> dict[str, Poi]:
    """Drop POIs enclosed (directly or transitively) by a hospital.

    A POI is removed when following its ``enclosed_by`` chain reaches a
    POI whose NAICS starts with 622. Hospitals themselves are retained:
    the exclusion targets venues inside hospitals, not hospitals. A
    parent id absent from the catalog ends the chain. Idempotent.
    """
    inside: dict[str, bool] = {}

    def chain_is_inside(poi_id: str) -> bool:
        seen: list[str] = []
        cursor = poi_id
        while True:
            if cursor in inside:
                verdict = inside[cursor]
                break
            if cursor in seen:
                cycle = " -> ".join(seen[seen.index(cursor):] + [cursor])
                raise DataError(f"cyclic enclosure chain: {cycle}")
            seen.append(cursor)
            parent = pois[cursor].enclosed_by
            if parent is None or parent not in pois:
                verdict = False
                break
            if pois[parent].naics.startswith(HOSPITAL_NAICS_PREFIX):
                verdict = True
                break
            cursor = parent
        for step in seen:
            inside[step] = verdict
        return verdict

    return {pid: poi for pid, poi in pois.items() if not chain_is_inside(pid)}


def read_visit_patterns(
    path,
    scheme: BucketScheme,
    crosswalk: Crosswalk,
    known_pois: Iterable[str] | None = None,
    max_reject_frac: float = DEFAULT_MAX_REJECT_FRAC,
) -> tuple[VisitTable, DwellDistribution, OriginTable, dict[str, RejectionReport]]:
    """Read the visit-pattern directory into the three mobility tables.

    ``path`` must contain visits.csv, dwell.csv, and origins.csv (see the
    module docstring for schemas). Origin counts given per CBG are split
    across ZCTAs through the crosswalk; dumps already keyed by
    origin_zcta pass through unchanged. When ``known_pois`` is given,
    rows for other POIs are rejected.
    """
    root = Path(path)
    known = set(known_pois) if known_pois is not None else None
    reports = {}

    visits: VisitTable = {}
    vpath = root / "visits.csv"
    report = RejectionReport(str(vpath))
    reader, fh = _open_reader(vpath)
    with fh:
        _require_columns(vpath, reader, ("poi_id", "date") + HOUR_COLUMNS)
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            poi_id = row["poi_id"]
            if known is not None and poi_id not in known:
                report.reject(lineno, f"unknown poi_id {poi_id}")
                continue
            try:
                day = parse_date(row["date"])
                counts = np.array([int(row[c]) for c in HOUR_COLUMNS])
            except (DataError, ValueError) as exc:
                report.reject(lineno, f"bad row: {exc}")
                continue
            if (counts < 0).any():
                report.reject(lineno, "negative hourly count")
                continue
            if (poi_id, day) in visits:
                report.reject(lineno, f"duplicate (poi_id, date) ({poi_id}, {row['date']})")
                continue
            visits[(poi_id, day)] = counts
            report.accepted += 1
    report.check_threshold(max_reject_frac)
    reports["visits"] = report

    dwell: DwellDistribution = {}
    dpath = root / "dwell.csv"
    report = RejectionReport(str(dpath))
    reader, fh = _open_reader(dpath)
    with fh:
        share_cols = [
            c for c in (reader.fieldnames or ()) if c.startswith("dwell_")
        ]
        if len(share_cols) != scheme.k:
            raise SchemaError(
                f"{dpath}: {len(share_cols)} dwell bucket columns, scheme has {scheme.k}"
            )
        share_cols.sort(key=lambda c: int(c.split("_")[1]))
        _require_columns(dpath, reader, ("poi_id", "week_start"))
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            poi_id = row["poi_id"]
            if known is not None and poi_id not in known:
                report.reject(lineno, f"unknown poi_id {poi_id}")
                continue
            try:
                week = parse_date(row["week_start"])
                shares = np.array([float(row[c]) for c in share_cols])
            except (DataError, ValueError) as exc:
                report.reject(lineno, f"bad row: {exc}")
                continue
            if (shares < 0).any():
                report.reject(lineno, "negative dwell share")
                continue
            total = float(shares.sum())
            if abs(total - 1.0) > 1e-6:
                report.reject(lineno, f"dwell shares sum to {total!r}")
                continue
            # Deviations at float-rounding scale are left untouched so that
            # canonical dumps round-trip bit-exactly.
            if abs(total - 1.0) > 1e-12:
                shares = shares / total
                report.warn("renormalized_dwell")
            if (poi_id, week) in dwell:
                report.reject(lineno, f"duplicate (poi_id, week) ({poi_id}, {row['week_start']})")
                continue
            dwell[(poi_id, week)] = shares
            report.accepted += 1
    report.check_threshold(max_reject_frac)
    reports["dwell"] = report

    origins: OriginTable = {}
    opath = root / "origins.csv"
    report = RejectionReport(str(opath))
    reader, fh = _open_reader(opath)
    with fh:
        fields = set(reader.fieldnames or ())
        by_zcta = "origin_zcta" in fields
        origin_col = "origin_zcta" if by_zcta else "origin_cbg"
        _require_columns(opath, reader, ("poi_id", "week_start", origin_col, "count"))
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            poi_id = row["poi_id"]
            if known is not None and poi_id not in known:
                report.reject(lineno, f"unknown poi_id {poi_id}")
                continue
            try:
                week = parse_date(row["week_start"])
                count = float(row["count"])
            except (DataError, ValueError) as exc:
                report.reject(lineno, f"bad row: {exc}")
                continue
            if count < 0:
                report.reject(lineno, "negative visitor count")
                continue
            cell = origins.setdefault((poi_id, week), {})
            if by_zcta:
                cell[row[origin_col]] = cell.get(row[origin_col], 0.0) + count
            else:
                cbg = row[origin_col]
                if cbg not in crosswalk:
                    report.reject(lineno, f"origin CBG {cbg} missing from crosswalk")
                    continue
                for zcta, share in crosswalk.shares(cbg):
                    cell[zcta] = cell.get(zcta, 0.0) + share * count
            report.accepted += 1
    report.check_threshold(max_reject_frac)
    reports["origins"] = report

    return visits, dwell, origins, reports


def read_social_distancing(
    path, max_reject_frac: float = DEFAULT_MAX_REJECT_FRAC
) -> tuple[DeviceDayStats, RejectionReport]:
    """Read per-CBG-day device statistics.

    ``median_time_home_minutes`` is converted to a fraction of the day
    and clamped to [0, 1] with a warning when clamping occurs. Rows with
    ``prop_home`` outside [0, 1] are rejected. Rows with zero devices are
    retained; downstream weighted means give them zero weight.
    """
    report = RejectionReport(str(path))
    reader, fh = _open_reader(path)
    stats: DeviceDayStats = {}
    with fh:
        fields = set(reader.fieldnames or ())
        # Canonical dumps carry the day fraction directly; vendor files
        # carry minutes. The fraction column round-trips bit-exactly.
        by_frac = "time_home_frac" in fields
        time_col = "time_home_frac" if by_frac else "median_time_home_minutes"
        _require_columns(path, reader, ("cbg", "date", "devices", "prop_home", time_col))
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            try:
                day = parse_date(row["date"])
                devices = int(row["devices"])
                prop_home = float(row["prop_home"])
                time_value = float(row[time_col])
            except (DataError, ValueError) as exc:
                report.reject(lineno, f"bad row: {exc}")
                continue
            if devices < 0:
                report.reject(lineno, "negative device count")
                continue
            if not 0.0 <= prop_home <= 1.0:
                report.reject(lineno, f"prop_home {prop_home!r} outside [0,1]")
                continue
            frac = time_value if by_frac else time_value / MINUTES_PER_DAY
            if frac < 0.0 or frac > 1.0:
                report.warn("clamped_time_home")
                warnings.warn(
                    f"{path}:{lineno}: time-home fraction {frac:.4f} clamped to [0,1]",
                    DataQualityWarning,
                    stacklevel=2,
                )
                frac = min(max(frac, 0.0), 1.0)
            key = (row["cbg"], day)
            if key in stats:
                report.reject(lineno, f"duplicate (cbg, date) {key}")
                continue
            stats[key] = DeviceDay(devices, prop_home, frac)
            report.accepted += 1
    report.check_threshold(max_reject_frac)
    return stats, report


def read_cases(
    path,
    cumulative: bool = False,
    date_range: tuple[date, date] | None = None,
    max_reject_frac: float = DEFAULT_MAX_REJECT_FRAC,
) -> tuple[CasesSeries, RejectionReport]:
    """Read daily new positive cases per ZCTA.

    With ``cumulative=True`` the ``new_cases`` column holds running
    totals, which are first-differenced per ZCTA in date order (the
    earliest day keeps its total). Negative daily values, reporting
    corrections in either format, are floored at 0 with a warning count.
    Duplicate (zcta, date) rows are a fatal data error.
    """
    report = RejectionReport(str(path))
    reader, fh = _open_reader(path)
    raw: dict[tuple[str, date], int] = {}
    with fh:
        _require_columns(path, reader, ("zcta", "date", "new_cases"))
        for lineno, row in enumerate(reader, start=2):
            report.total_rows += 1
            try:
                day = parse_date(row["date"])
                count = int(row["new_cases"])
            except (DataError, ValueError) as exc:
                report.reject(lineno, f"bad row: {exc}")
                continue
            key = (row["zcta"], day)
            if key in raw:
                raise DataError(f"{path}:{lineno}: duplicate (zcta, date) {key}")
            if date_range is not None and not (date_range[0] <= day <= date_range[1]):
                report.reject(lineno, f"date {row['date']} outside study range")
                continue
            raw[key] = count
            report.accepted += 1
    report.check_threshold(max_reject_frac)

    series: CasesSeries = {}
    if cumulative:
        by_zcta: dict[str, list[tuple[date, int]]] = {}
        for (zcta, day), count in raw.items():
            by_zcta.setdefault(zcta, []).append((day, count))
        for zcta, rows in sorted(by_zcta.items()):
            rows.sort()
            prev = 0
            for day, total in rows:
                daily = total - prev
                prev = total
                if daily < 0:
                    report.warn("floored_negative_daily")
                    daily = 0
                series[(zcta, day)] = daily
    else:
        for key in sorted(raw):
            count = raw[key]
            if count < 0:
                report.warn("floored_negative_daily")
                count = 0
            series[key] = count
    return series, report
