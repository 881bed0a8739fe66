"""Stay-at-home aggregation: CBG-day device stats to ZCTA-day and 7-day windows.

Daily device counts sum through the crosswalk; the proportion-home and
time-home measures are device-weighted means, so CBGs with more tracked
devices carry proportionally more weight and zero-device CBGs carry
none. Window values follow the model convention: exposure is the log1p
of the summed daily CEI over [t-7, t), while the two home measures are
device-weighted means over the same window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Mapping

from .core import Crosswalk, log1p_transform
from .errors import ConfigurationError, DataQualityWarning, MissingDataError
from .ingest import DeviceDayStats

PROPHOME_MODES = ("weighted_mean", "any_day")


@dataclass(frozen=True)
class ZctaMobilityDay:
    """One ZCTA-day of mobility measures.

    ``cei`` is the daily contact-exposure value attributed to the ZCTA
    (destination- or origin-side, chosen by the pipeline). ``prop_home``
    and ``time_home`` are None when no devices were observed.
    """

    cei: float
    prop_home: float | None
    time_home: float | None
    devices: float

    def __post_init__(self):
        if self.cei < 0 or self.devices < 0:
            raise ValueError("cei and devices must be nonnegative")
        for name in ("prop_home", "time_home"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0,1], got {v}")


@dataclass(frozen=True)
class WindowMobility:
    """Windowed mobility regressors for one (zcta, day)."""

    cei_window: float  # log1p of the summed daily CEI over [t-7, t)
    prop_home: float
    time_home: float
    devices: float  # total device-days of weight in the window


def aggregate_distancing(
    stats: DeviceDayStats, crosswalk: Crosswalk
) -> dict[tuple[str, date], ZctaMobilityDay]:
    """Aggregate device statistics from CBG-day to ZCTA-day.

    Device counts are crosswalk-weighted sums; prop-home and time-home
    are device-weighted means across the constituent CBGs. A ZCTA-day
    with zero devices keeps N = 0 and has no P or T. The daily ``cei``
    field is initialized to 0 and merged in by the pipeline.
    """
    dev: dict[tuple[str, date], float] = {}
    p_num: dict[tuple[str, date], float] = {}
    t_num: dict[tuple[str, date], float] = {}
    for cbg, day in sorted(stats):
        row = stats[(cbg, day)]
        for zcta, share in crosswalk.shares(cbg):
            key = (zcta, day)
            w = share * row.devices
            dev[key] = dev.get(key, 0.0) + w
            p_num[key] = p_num.get(key, 0.0) + w * row.prop_home
            t_num[key] = t_num.get(key, 0.0) + w * row.time_home_frac
    out: dict[tuple[str, date], ZctaMobilityDay] = {}
    for key in sorted(dev):
        n = dev[key]
        if n > 0:
            out[key] = ZctaMobilityDay(0.0, p_num[key] / n, t_num[key] / n, n)
        else:
            out[key] = ZctaMobilityDay(0.0, None, None, 0.0)
    return out


def with_daily_cei(
    rows: Mapping[tuple[str, date], ZctaMobilityDay],
    zcta_day_cei: Mapping[tuple[str, date], float],
) -> dict[tuple[str, date], ZctaMobilityDay]:
    """Merge daily CEI into the mobility rows.

    Keys present on only one side are kept: a ZCTA-day with exposure but
    no device data gets N = 0, and one with devices but no POI visits
    gets CEI = 0.
    """
    out: dict[tuple[str, date], ZctaMobilityDay] = {}
    for key in sorted(set(rows) | set(zcta_day_cei)):
        base = rows.get(key, ZctaMobilityDay(0.0, None, None, 0.0))
        cei = zcta_day_cei.get(key, 0.0)
        out[key] = ZctaMobilityDay(cei, base.prop_home, base.time_home, base.devices)
    return out


def window_mobility(
    rows: Mapping[tuple[str, date], ZctaMobilityDay],
    zcta: str,
    t: date,
    window: int = 7,
    prophome_mode: str = "weighted_mean",
) -> WindowMobility | None:
    """Windowed regressors for ``zcta`` at day ``t`` over [t-window, t).

    The exposure term is log1p of the summed daily CEI. Prop-home and
    time-home are device-weighted means over the window; days with zero
    devices carry no weight. Returns None (with a warning) when the
    window holds no device weight at all, since the home measures are
    then undefined. A day absent from ``rows`` raises
    :class:`MissingDataError` naming the day.

    ``prophome_mode="any_day"`` instead estimates the share of devices
    home all day on at least one window day as 1 - prod(1 - P_z),
    treating days as independent. The weighted mean is the default.
    """
    if prophome_mode not in PROPHOME_MODES:
        raise ConfigurationError(f"unknown prophome_mode {prophome_mode!r}")
    cei_sum = 0.0
    wsum = 0.0
    p_acc = 0.0
    t_acc = 0.0
    miss_prob = 1.0
    for back in range(window, 0, -1):
        day = t - timedelta(days=back)
        row = rows.get((zcta, day))
        if row is None:
            raise MissingDataError(
                f"mobility day {day.isoformat()} missing for ZCTA {zcta}"
            )
        cei_sum += row.cei
        if row.devices > 0 and row.prop_home is not None:
            wsum += row.devices
            p_acc += row.devices * row.prop_home
            t_acc += row.devices * row.time_home
            miss_prob *= 1.0 - row.prop_home
    if wsum <= 0:
        warnings.warn(
            f"ZCTA {zcta} window ending {t.isoformat()} has no device weight; dropped",
            DataQualityWarning,
            stacklevel=2,
        )
        return None
    prop = 1.0 - miss_prob if prophome_mode == "any_day" else p_acc / wsum
    return WindowMobility(
        cei_window=log1p_transform(cei_sum),
        prop_home=min(max(prop, 0.0), 1.0),
        time_home=t_acc / wsum,
        devices=wsum,
    )


def window_mobility_table(
    rows: Mapping[tuple[str, date], ZctaMobilityDay],
    days: list[date],
    window: int = 7,
    prophome_mode: str = "weighted_mean",
) -> dict[tuple[str, date], WindowMobility]:
    """Windowed mobility for every ZCTA with full coverage on each day.

    ZCTA-days whose window is incomplete or holds no device weight are
    simply absent from the result; panel assembly counts them as
    exclusions.
    """
    zctas = sorted({z for z, _ in rows})
    out: dict[tuple[str, date], WindowMobility] = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataQualityWarning)
        for t in days:
            for zcta in zctas:
                try:
                    wm = window_mobility(rows, zcta, t, window, prophome_mode)
                except MissingDataError:
                    continue
                if wm is not None:
                    out[(zcta, t)] = wm
    return out


def weighted_mean_bounds_ok(values: list[float], weights: list[float], result: float) -> bool:
    """True when ``result`` lies within [min, max] of positively weighted values."""
    pos = [v for v, w in zip(values, weights) if w > 0]
    if not pos:
        return False
    return min(pos) - 1e-12 <= result <= max(pos) + 1e-12


def city_daily_means(
    rows: Mapping[tuple[str, date], ZctaMobilityDay],
) -> dict[date, tuple[float, float, float, float]]:
    """City-wide daily (cei_total, prop_home, time_home, devices) series.

    Exposure sums over ZCTAs; the home measures are device-weighted means
    across ZCTAs. Days with no device weight report NaN home measures.
    """
    agg: dict[date, list[float]] = {}
    for zcta, day in sorted(rows):
        row = rows[(zcta, day)]
        acc = agg.setdefault(day, [0.0, 0.0, 0.0, 0.0])
        acc[0] += row.cei
        if row.devices > 0 and row.prop_home is not None:
            acc[1] += row.devices * row.prop_home
            acc[2] += row.devices * row.time_home
            acc[3] += row.devices
    out: dict[date, tuple[float, float, float, float]] = {}
    for day in sorted(agg):
        cei, p_num, t_num, w = agg[day]
        if w > 0:
            out[day] = (cei, p_num / w, t_num / w, w)
        else:
            out[day] = (cei, math.nan, math.nan, 0.0)
    return out
