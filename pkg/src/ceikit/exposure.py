"""Contact duration and the Contact Exposure Index (CEI).

The index for one POI and hour is the worst-case total pairwise contact
duration of its visitors divided by the square root of the POI floor
area (units: minutes/foot). Daily and ZCTA values are plain sums over
hours and over the POIs located in a ZCTA. Origin-side values distribute
each POI's daily index across the home ZCTAs of its visitors in
proportion to that week's visitor counts.

Modeling assumptions for the duration term: visitors spread uniformly
over the floor area, all arrive at the top of the hour, and in the worst
case every visitor contacts every other visitor for the overlap of their
stays. A pair's contact duration is therefore the minimum of the two
dwell times, and an hour with fewer than two visits carries no exposure.

The closed form implemented here prices a within-bucket pair at the
bucket's representative dwell time and a cross-bucket pair at the
smaller bucket's representative:

    tau = sum_i mu_i * ( n_i (n_i - 1) / 2  +  n_i * sum_{j>i} n_j )

The cross-bucket term is intentionally not halved: pairs (i, j) with
j > i are enumerated once. ``contact_duration_oracle`` is the brute-force
arbiter for this form and the tests hold the two equal.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BucketScheme
from .errors import ConfigurationError, DataError, DomainError

#: Pseudo-ZCTA absorbing POI-day exposure with no recorded origin visitors.
UNATTRIBUTED = "UNATTRIBUTED"

#: Label for POIs outside every configured industry group.
REMAINDER_LABEL = "other"


def allocate_dwell_to_hours(
    hour_counts: Sequence[int] | np.ndarray,
    weekly_shares: Sequence[float] | np.ndarray,
) -> np.ndarray:
    """Spread hourly visit counts over dwell buckets using weekly shares.

    Returns a (24, k) array of real-valued bucket counts: ``counts[h] *
    shares`` for each hour. No rounding is applied, so totals are exact.
    Hours with fewer than two visits produce a zero row (a lone visit has
    no contact pair and is excluded from all exposure accounting).
    """
    counts = np.asarray(hour_counts, dtype=float)
    shares = np.asarray(weekly_shares, dtype=float)
    if counts.shape != (24,):
        raise DomainError(f"expected 24 hourly counts, got shape {counts.shape}")
    if (counts < 0).any():
        raise DomainError("negative hourly visit count")
    if abs(shares.sum() - 1.0) > 1e-9 or (shares < 0).any():
        raise DomainError("dwell shares must be nonnegative and sum to 1")
    multi = np.where(counts >= 2, counts, 0.0)
    return multi[:, None] * shares[None, :]


def contact_duration(n: Sequence[float] | np.ndarray, scheme: BucketScheme) -> float:
    """Worst-case total pairwise contact duration (minutes) for one hour.

    ``n`` holds the (possibly real-valued) visit count per dwell bucket in
    the scheme's ascending order. With real-valued counts the within-bucket
    pair count n_i (n_i - 1) / 2 can dip slightly below zero for
    n_i in (0, 1); those terms are floored at 0 per bucket.
    """
    vec = np.asarray(n, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != scheme.k:
        raise DomainError(f"expected {scheme.k} bucket counts, got shape {vec.shape}")
    if (vec < 0).any():
        raise DomainError("negative bucket count")
    mu = np.asarray(scheme.representatives)
    if not (np.diff(mu) > 0).all():
        raise DomainError("bucket representatives must be ascending")
    if vec.sum() <= 1.0:
        return 0.0  # at most one visitor, no pair
    rev = np.cumsum(vec[::-1])[::-1]  # rev[i] = sum_{j >= i} n_j
    later = np.append(rev[1:], 0.0)
    within = np.maximum(vec * (vec - 1.0) / 2.0, 0.0)
    return float(np.dot(mu, within + vec * later))


def contact_duration_oracle(dwell_times: Sequence[float] | np.ndarray) -> float:
    """Brute-force total contact duration: sum of min(a, b) over all
    unordered visitor pairs. Ground truth for :func:`contact_duration`."""
    d = np.asarray(dwell_times, dtype=float)
    if (d < 0).any():
        raise DomainError("negative dwell time")
    if d.size < 2:
        return 0.0
    pair_matrix = np.minimum.outer(d, d)
    # Full matrix counts each pair twice plus min(a, a) = a on the diagonal.
    return float((pair_matrix.sum() - d.sum()) / 2.0)


def cei_poi_hour(tau: float, area_sqft: float) -> float:
    """POI-hour CEI: contact duration divided by sqrt(floor area)."""
    if area_sqft <= 0:
        raise DomainError(f"floor area must be positive, got {area_sqft}")
    if tau < 0:
        raise DomainError(f"contact duration must be nonnegative, got {tau}")
    return tau / math.sqrt(area_sqft)


def _poi_day_block(counts: np.ndarray, shares: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Vectorized POI-day contact duration for a block of POI-days.

    counts: (m, 24) hourly visits; shares: (m, k) dwell shares.
    Returns (m,) total minutes, applying the lone-visit exclusion per hour.
    """
    multi = np.where(counts >= 2, counts, 0.0)  # (m, 24)
    n = multi[:, :, None] * shares[:, None, :]  # (m, 24, k)
    rev = np.cumsum(n[:, :, ::-1], axis=2)[:, :, ::-1]  # rev[i] = sum_{j >= i} n_j
    later = np.zeros_like(n)
    later[:, :, :-1] = rev[:, :, 1:]
    within = np.maximum(n * (n - 1.0) / 2.0, 0.0)
    tau_h = (within + n * later) @ mu  # (m, 24)
    return tau_h.sum(axis=1)


def compute_poi_day_cei(
    visits: Mapping[tuple[str, date], np.ndarray],
    dwell: Mapping[tuple[str, date], np.ndarray],
    areas: Mapping[str, float],
    scheme: BucketScheme,
    week_of=None,
    workers: int = 1,
) -> tuple[dict[tuple[str, date], float], dict[str, int]]:
    """POI-day CEI for every (poi, date) in the visit table.

    ``dwell`` is keyed by (poi, week_start); ``week_of`` maps a date to its
    week key (defaults to :func:`ceikit.core.week_start`). POI-days whose
    dwell row is absent are skipped and counted in the returned
    diagnostics under ``"missing_dwell"``; POIs absent from ``areas``
    raise, since the catalog is the source of truth.

    The computation is data-parallel over fixed POI-day chunks with a
    deterministic merge, so results are identical for any ``workers``.
    """
    if week_of is None:
        from .core import week_start as week_of  # noqa: PLC0415

    keys = sorted(visits.keys())
    rows: list[tuple[str, date]] = []
    counts_list: list[np.ndarray] = []
    shares_list: list[np.ndarray] = []
    missing_dwell = 0
    missing_area = [k for k in keys if k[0] not in areas]
    if missing_area:
        raise DataError(f"POI {missing_area[0][0]} missing from catalog")
    for key in keys:
        poi, day = key
        share = dwell.get((poi, week_of(day)))
        if share is None:
            missing_dwell += 1
            continue
        rows.append(key)
        counts_list.append(np.asarray(visits[key], dtype=float))
        shares_list.append(np.asarray(share, dtype=float))

    diagnostics = {"missing_dwell": missing_dwell, "poi_days": len(rows)}
    if not rows:
        return {}, diagnostics

    counts = np.stack(counts_list)
    shares = np.stack(shares_list)
    if shares.shape[1] != scheme.k:
        raise DataError(
            f"dwell rows have {shares.shape[1]} buckets, scheme has {scheme.k}"
        )
    mu = np.asarray(scheme.representatives, dtype=float)
    root_area = np.sqrt(np.array([areas[poi] for poi, _ in rows], dtype=float))

    m = counts.shape[0]
    workers = max(1, int(workers))
    tau = np.empty(m, dtype=float)
    bounds = [(i * m) // workers for i in range(workers + 1)]
    slices = [slice(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]
    if len(slices) <= 1:
        tau[:] = _poi_day_block(counts, shares, mu)
    else:
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            futures = [
                pool.submit(_poi_day_block, counts[s], shares[s], mu) for s in slices
            ]
            for s, fut in zip(slices, futures):
                tau[s] = fut.result()

    cei = tau / root_area
    return {key: float(v) for key, v in zip(rows, cei)}, diagnostics


def cei_aggregate(
    poi_hour: Mapping[tuple[str, date, int], float],
    poi_zcta: Mapping[str, str],
) -> tuple[dict[tuple[str, date], float], dict[tuple[str, date], float]]:
    """Sum POI-hour CEI to POI-day, then POI-day to destination ZCTA-day.

    ``poi_zcta`` maps each POI to its containing ZCTA; a POI missing from
    it is a catalog inconsistency and raises. Sums run in sorted key
    order so results do not depend on input ordering.
    """
    poi_day: dict[tuple[str, date], float] = {}
    for poi, day, hour in sorted(poi_hour):
        if not 0 <= hour <= 23:
            raise DataError(f"hour {hour} out of range for POI {poi}")
        key = (poi, day)
        poi_day[key] = poi_day.get(key, 0.0) + poi_hour[(poi, day, hour)]
    zcta_day = sum_to_zcta_day(poi_day, poi_zcta)
    return poi_day, zcta_day


def sum_to_zcta_day(
    poi_day: Mapping[tuple[str, date], float],
    poi_zcta: Mapping[str, str],
) -> dict[tuple[str, date], float]:
    """Destination ZCTA-day CEI: sum of POI-day CEI over POIs in the ZCTA."""
    out: dict[tuple[str, date], float] = {}
    for poi, day in sorted(poi_day):
        try:
            zcta = poi_zcta[poi]
        except KeyError:
            raise DataError(f"POI {poi} missing from catalog") from None
        key = (zcta, day)
        out[key] = out.get(key, 0.0) + poi_day[(poi, day)]
    return out


def cei_origin_attribution(
    poi_day: Mapping[tuple[str, date], float],
    origins: Mapping[tuple[str, date], Mapping[str, float]],
    week_of=None,
) -> dict[tuple[str, date], float]:
    """Distribute POI-day CEI to visitor-origin ZCTAs.

    Each POI's daily value is split across origin ZCTAs in proportion to
    that week's visitor counts (an unweighted gravity-style allocation).
    POI-days with no recorded origin visitors flow into the
    :data:`UNATTRIBUTED` sink so that the origin-side total always equals
    the destination-side total.
    """
    if week_of is None:
        from .core import week_start as week_of  # noqa: PLC0415
    out: dict[tuple[str, date], float] = {}
    for poi, day in sorted(poi_day):
        value = poi_day[(poi, day)]
        counts = origins.get((poi, week_of(day)), {})
        total = sum(counts.values())
        if total <= 0:
            key = (UNATTRIBUTED, day)
            out[key] = out.get(key, 0.0) + value
            continue
        for zcta in sorted(counts):
            share = counts[zcta] / total
            key = (zcta, day)
            out[key] = out.get(key, 0.0) + value * share
    return out


def industry_decomposition(
    poi_day: Mapping[tuple[str, date], float],
    poi_naics: Mapping[str, str],
    industry_groups: Mapping[str, Iterable[str]],
) -> tuple[dict[tuple[str, date], float], dict[tuple[str, date], float]]:
    """Per-industry daily CEI totals plus each label's share of the total.

    ``industry_groups`` maps a label to the set of 6-digit NAICS codes it
    covers; groups must be disjoint. POIs in no group are accumulated
    under :data:`REMAINDER_LABEL`, so labels plus remainder resum to the
    all-POI total. Returns (totals, shares), both keyed by (label, date).
    """
    code_to_label: dict[str, str] = {}
    for label in sorted(industry_groups):
        for code in industry_groups[label]:
            if code in code_to_label:
                raise ConfigurationError(
                    f"NAICS {code} appears in groups {code_to_label[code]!r} and {label!r}"
                )
            code_to_label[code] = label

    totals: dict[tuple[str, date], float] = {}
    day_total: dict[date, float] = {}
    labels = sorted(industry_groups) + [REMAINDER_LABEL]
    days = sorted({day for _, day in poi_day})
    for label in labels:
        for day in days:
            totals[(label, day)] = 0.0
    for poi, day in sorted(poi_day):
        value = poi_day[(poi, day)]
        try:
            naics = poi_naics[poi]
        except KeyError:
            raise DataError(f"POI {poi} missing from catalog") from None
        label = code_to_label.get(naics, REMAINDER_LABEL)
        totals[(label, day)] += value
        day_total[day] = day_total.get(day, 0.0) + value

    shares = {
        (label, day): (totals[(label, day)] / day_total[day] if day_total.get(day) else 0.0)
        for label, day in totals
    }
    return totals, shares


def multi_person_visits(
    visits: Mapping[tuple[str, date], np.ndarray],
) -> dict[tuple[str, date], int]:
    """Visits per POI-day counting only hours with at least two visits."""
    out: dict[tuple[str, date], int] = {}
    for key in sorted(visits):
        counts = np.asarray(visits[key])
        out[key] = int(counts[counts >= 2].sum())
    return out


def default_periods(days: Sequence[date]) -> dict[date, str]:
    """Calendar-month periods with March split at the 15th.

    March days before the 15th fall in "YYYY-03a", the rest in
    "YYYY-03b"; every other month is "YYYY-MM".
    """
    out = {}
    for day in days:
        if day.month == 3:
            out[day] = f"{day.year:04d}-03a" if day.day < 15 else f"{day.year:04d}-03b"
        else:
            out[day] = f"{day.year:04d}-{day.month:02d}"
    return out


def cei_per_visit(
    poi_day: Mapping[tuple[str, date], float],
    visits: Mapping[tuple[str, date], np.ndarray],
    poi_label: Mapping[str, str],
    period_of: Mapping[date, str] | None = None,
) -> dict[tuple[str, str], float]:
    """Average CEI per multi-person visit by (label, period).

    The denominator counts visits only in hours with two or more visits,
    matching the exposure accounting (lone visits generate none). Groups
    with zero qualifying visits in a period are absent from the result
    rather than reported as 0.
    """
    days = sorted({day for _, day in poi_day})
    if period_of is None:
        period_of = default_periods(days)
    missing = [d for d in days if d not in period_of]
    if missing:
        raise ConfigurationError(f"day {missing[0].isoformat()} not covered by any period")
    visit_counts = multi_person_visits(visits)
    cei_sum: dict[tuple[str, str], float] = {}
    visit_sum: dict[tuple[str, str], int] = {}
    for poi, day in sorted(poi_day):
        label = poi_label.get(poi, REMAINDER_LABEL)
        key = (label, period_of[day])
        cei_sum[key] = cei_sum.get(key, 0.0) + poi_day[(poi, day)]
        visit_sum[key] = visit_sum.get(key, 0) + visit_counts.get((poi, day), 0)
    return {
        key: cei_sum[key] / visit_sum[key]
        for key in sorted(cei_sum)
        if visit_sum.get(key, 0) > 0
    }
