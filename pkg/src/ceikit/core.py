"""Shared domain types and scalar utilities.

Holds the dwell-time bucket scheme, the CBG-to-ZCTA crosswalk, per-ZCTA
socioeconomic records, and the small numeric helpers (log transform,
income quintiles, window sums, trailing moving average, crosswalk
aggregation) used by every downstream stage.

All types are immutable after construction and all operations are pure,
so everything here is safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConfigurationError,
    DataError,
    DataQualityWarning,
    DomainError,
    MissingDataError,
    SchemaError,
)

#: Number of income classes (quintiles).
N_INCOME_CLASSES = 5

#: Window length (days) used for mobility aggregation, w = [t-7, t).
DEFAULT_WINDOW = 7


@dataclass(frozen=True)
class BucketScheme:
    """Dwell-time bucketing: half-open intervals and their representative points.

    Parameters
    ----------
    boundaries : sequence of (low, high) pairs, minutes
        Half-open intervals [low, high) that must be disjoint, contiguous,
        ascending, and cover [0, inf). The last interval's high must be inf.
    representatives : sequence of float, minutes
        One positive representative dwell time per bucket, lying inside
        its interval.
    """

    boundaries: tuple[tuple[float, float], ...]
    representatives: tuple[float, ...]

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.boundaries)
        reps = tuple(float(r) for r in self.representatives)
        object.__setattr__(self, "boundaries", bounds)
        object.__setattr__(self, "representatives", reps)
        if len(bounds) < 1:
            raise ConfigurationError("bucket scheme needs at least one bucket")
        if len(bounds) != len(reps):
            raise ConfigurationError(
                f"{len(bounds)} intervals but {len(reps)} representatives"
            )
        if bounds[0][0] != 0.0:
            raise ConfigurationError("first bucket must start at 0")
        if not math.isinf(bounds[-1][1]):
            raise ConfigurationError("last bucket must extend to infinity")
        for i, (lo, hi) in enumerate(bounds):
            if not lo < hi:
                raise ConfigurationError(f"bucket {i} is empty: [{lo}, {hi})")
            if i > 0 and lo != bounds[i - 1][1]:
                raise ConfigurationError(
                    f"bucket {i} does not continue from bucket {i - 1}"
                )
        for i, r in enumerate(reps):
            if r <= 0:
                raise ConfigurationError(f"representative {i} must be positive")
            lo, hi = bounds[i]
            if not (lo <= r < hi):
                raise ConfigurationError(
                    f"representative {r} outside bucket [{lo}, {hi})"
                )

    @property
    def k(self) -> int:
        return len(self.representatives)

    @classmethod
    def default(cls) -> "BucketScheme":
        """The 4-bucket scheme [0,5), [5,20), [20,60), [60,inf) with
        representatives 2.5, 12.5, 40, 60 minutes."""
        return cls(
            boundaries=((0, 5), (5, 20), (20, 60), (60, math.inf)),
            representatives=(2.5, 12.5, 40.0, 60.0),
        )

    def bucket_of(self, dwell_minutes: float) -> int:
        """Index of the bucket containing a dwell time."""
        if dwell_minutes < 0:
            raise DomainError(f"negative dwell time {dwell_minutes}")
        for i, (lo, hi) in enumerate(self.boundaries):
            if lo <= dwell_minutes < hi:
                return i
        raise DomainError(f"no bucket for dwell time {dwell_minutes}")


class Crosswalk:
    """Mapping from CBG identifier to weighted ZCTA shares.

    Weights per CBG must be nonnegative and sum to 1 (within 1e-9); a CBG
    mapped to a single ZCTA with weight 1 is the dominant-ZCTA special
    case. Instances are immutable.
    """

    __slots__ = ("_map",)

    def __init__(self, mapping: Mapping[str, Sequence[tuple[str, float]]]):
        built: dict[str, tuple[tuple[str, float], ...]] = {}
        for cbg, pairs in mapping.items():
            pairs = tuple((str(z), float(w)) for z, w in pairs)
            if not pairs:
                raise DataError(f"CBG {cbg} maps to no ZCTA")
            total = 0.0
            for z, w in pairs:
                if w < 0:
                    raise DataError(f"negative crosswalk weight for CBG {cbg}")
                total += w
            if abs(total - 1.0) > 1e-9:
                raise DataError(
                    f"crosswalk weights for CBG {cbg} sum to {total!r}, not 1"
                )
            built[str(cbg)] = pairs
        self._map = built

    def __contains__(self, cbg: str) -> bool:
        return cbg in self._map

    def __len__(self) -> int:
        return len(self._map)

    def cbgs(self) -> Iterable[str]:
        return self._map.keys()

    def shares(self, cbg: str) -> tuple[tuple[str, float], ...]:
        try:
            return self._map[cbg]
        except KeyError:
            raise DataError(f"CBG {cbg} missing from crosswalk") from None

    def zctas(self) -> set[str]:
        """All ZCTAs referenced by any CBG."""
        return {z for pairs in self._map.values() for z, _ in pairs}

    def validate_zctas(self, registry: Iterable[str]) -> None:
        """Check that every referenced ZCTA is present in ``registry``."""
        known = set(registry)
        unknown = sorted(self.zctas() - known)
        if unknown:
            raise DataError(
                "crosswalk references ZCTAs absent from the registry: "
                + ", ".join(unknown[:10])
            )

    @classmethod
    def identity(cls, cbg_to_zcta: Mapping[str, str]) -> "Crosswalk":
        """1:1 crosswalk assigning each CBG fully to one ZCTA."""
        return cls({cbg: [(z, 1.0)] for cbg, z in cbg_to_zcta.items()})

    @classmethod
    def from_csv(cls, path) -> "Crosswalk":
        """Read a crosswalk from CSV with columns cbg,zcta,weight.

        The weight column is optional and defaults to 1.0 (dominant-ZCTA
        mapping). Weights for each CBG must sum to 1.
        """
        mapping: dict[str, list[tuple[str, float]]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            cols = set(reader.fieldnames or ())
            if not {"cbg", "zcta"} <= cols:
                raise SchemaError(f"{path}: expected columns cbg,zcta[,weight]")
            for lineno, row in enumerate(reader, start=2):
                w = row.get("weight")
                try:
                    weight = 1.0 if w in (None, "") else float(w)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: bad weight {w!r}") from None
                mapping.setdefault(row["cbg"], []).append((row["zcta"], weight))
        return cls(mapping)


@dataclass(frozen=True)
class SocioRow:
    """Static socioeconomic profile of one ZCTA.

    ``income_log`` is the natural log of mean household income; the other
    five fields are population fractions in [0, 1].
    """

    income_log: float
    low_edu: float
    poor: float
    age65: float
    black: float
    transit: float

    def __post_init__(self):
        if not math.isfinite(self.income_log) or self.income_log < 0:
            raise DataError(f"income_log must be finite and >= 0, got {self.income_log}")
        for name in ("low_edu", "poor", "age65", "black", "transit"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise DataError(f"{name} must lie in [0,1], got {v}")

    def vector(self) -> tuple[float, ...]:
        """The 6 socioeconomic covariates in canonical order."""
        return (
            self.income_log,
            self.low_edu,
            self.poor,
            self.age65,
            self.black,
            self.transit,
        )


#: Canonical order of the socioeconomic covariates.
SOCIO_FIELDS = ("income_log", "low_edu", "poor", "age65", "black", "transit")

#: Per-ZCTA socioeconomic table.
Socioeconomics = dict[str, SocioRow]


def log1p_transform(x: float) -> float:
    """ln(1 + x) for nonnegative x; strictly increasing with f(0) = 0."""
    if x < 0:
        raise DomainError(f"log1p_transform requires x >= 0, got {x}")
    return math.log1p(x)


def income_quintiles(incomes: Mapping[str, float]) -> dict[str, int]:
    """Assign each ZCTA an income quintile label in {1, ..., 5}.

    Classes are equal-count by ZCTA (class sizes differ by at most one);
    label 1 is the lowest-income fifth. Ties are broken by ascending ZCTA
    identifier, so the assignment is deterministic.
    """
    if len(incomes) < N_INCOME_CLASSES:
        raise ConfigurationError(
            f"need at least {N_INCOME_CLASSES} ZCTAs for quintiles, got {len(incomes)}"
        )
    for z, v in incomes.items():
        if not v > 0:
            raise DomainError(f"income for ZCTA {z} must be positive, got {v}")
    ranked = sorted(incomes, key=lambda z: (incomes[z], z))
    n = len(ranked)
    out: dict[str, int] = {}
    start = 0
    for label in range(1, N_INCOME_CLASSES + 1):
        size = n // N_INCOME_CLASSES + (1 if label <= n % N_INCOME_CLASSES else 0)
        for z in ranked[start : start + size]:
            out[z] = label
        start += size
    return out


def window_sum(series: Mapping[date, float], t: date, length: int = DEFAULT_WINDOW) -> float:
    """Sum of ``series`` over the half-open window [t - length, t).

    Day t itself is excluded. Every day in the window must be present.
    """
    total = 0.0
    for back in range(length, 0, -1):
        day = t - timedelta(days=back)
        if day not in series:
            raise MissingDataError(f"day {day.isoformat()} missing from window [{t - timedelta(days=length)}, {t})")
        total += series[day]
    return total


def moving_average_7(series: Sequence[tuple[date, float]]) -> list[tuple[date, float]]:
    """Trailing 7-day moving average for report overlays.

    Value at day t is the mean of the raw values over [t-6, t]; the first
    six days use the partial window that is available. Never used in
    estimation, only when emitting report series.

    The direction of the smoothing window is a documented choice: trailing
    rather than centered, so smoothed values never depend on future days.
    """
    if not series:
        return []
    days = [d for d, _ in series]
    for prev, nxt in zip(days, days[1:]):
        if nxt - prev != timedelta(days=1):
            raise DataError(f"series days not contiguous at {prev.isoformat()} -> {nxt.isoformat()}")
    values = [v for _, v in series]
    out: list[tuple[date, float]] = []
    for i, (day, _) in enumerate(series):
        width = min(i + 1, DEFAULT_WINDOW)
        window = values[i - width + 1 : i + 1]
        out.append((day, math.fsum(window) / width))
    return out


def aggregate_cbg_to_zcta(
    values: Mapping[str, float],
    weights: Mapping[str, float] | None,
    crosswalk: Crosswalk,
    mode: str,
) -> dict[str, float]:
    """Aggregate per-CBG values to ZCTAs through the crosswalk.

    ``sum`` mode splits each CBG value across its ZCTAs by crosswalk share
    and sums, conserving the total. ``weighted_mean`` computes a
    crosswalk-and-weight weighted average per ZCTA; ZCTAs whose total
    weight is zero are omitted with a :class:`DataQualityWarning`.
    """
    if mode not in ("sum", "weighted_mean"):
        raise ConfigurationError(f"unknown aggregation mode {mode!r}")
    missing = sorted(c for c in values if c not in crosswalk)
    if missing:
        raise DataError("CBGs missing from crosswalk: " + ", ".join(missing[:10]))
    if mode == "sum":
        out: dict[str, float] = {}
        for cbg in sorted(values):
            v = values[cbg]
            for zcta, share in crosswalk.shares(cbg):
                out[zcta] = out.get(zcta, 0.0) + share * v
        return out
    if weights is None:
        raise ConfigurationError("weighted_mean mode requires weights")
    num: dict[str, float] = {}
    den: dict[str, float] = {}
    for cbg in sorted(values):
        v = values[cbg]
        w = weights.get(cbg, 0.0)
        if w < 0:
            raise DomainError(f"negative weight for CBG {cbg}")
        for zcta, share in crosswalk.shares(cbg):
            num[zcta] = num.get(zcta, 0.0) + share * w * v
            den[zcta] = den.get(zcta, 0.0) + share * w
    out = {}
    for zcta in sorted(den):
        if den[zcta] > 0:
            out[zcta] = num[zcta] / den[zcta]
        else:
            warnings.warn(
                f"ZCTA {zcta} has zero total weight; omitted from weighted mean",
                DataQualityWarning,
                stacklevel=2,
            )
    return out


def week_start(day: date) -> date:
    """Monday of the week containing ``day`` (weekly tables are keyed by it)."""
    return day - timedelta(days=day.weekday())


def parse_date(text: str) -> date:
    """Parse an ISO-8601 (YYYY-MM-DD) date."""
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise DataError(f"bad ISO date {text!r}") from None


def read_socioeconomics_csv(path) -> Socioeconomics:
    """Read the per-ZCTA socioeconomic table.

    CSV columns: zcta,income_log,low_edu,poor,age65,black,transit.
    """
    out: Socioeconomics = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"zcta", *SOCIO_FIELDS}
        if set(reader.fieldnames or ()) < expected:
            raise SchemaError(f"{path}: expected columns zcta," + ",".join(SOCIO_FIELDS))
        for lineno, row in enumerate(reader, start=2):
            zcta = row["zcta"]
            if zcta in out:
                raise DataError(f"{path}:{lineno}: duplicate ZCTA {zcta}")
            try:
                out[zcta] = SocioRow(**{f: float(row[f]) for f in SOCIO_FIELDS})
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


@dataclass(frozen=True)
class IncomeClassTable:
    """ZCTA -> quintile label, kept with the incomes it was derived from."""

    classes: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, zcta: str) -> int:
        return self.classes[zcta]

    @classmethod
    def from_socioeconomics(cls, socio: Socioeconomics) -> "IncomeClassTable":
        incomes = {z: math.exp(row.income_log) for z, row in socio.items()}
        return cls(income_quintiles(incomes))
