"""Seeded synthetic data at two levels.

Micro level: a small city of POIs, visit patterns, dwell shares,
visitor origins, device statistics, and case counts in exactly the CSV
schemas the ingest readers consume, for end-to-end pipeline testing.

Panel level: ZCTA-day cross-sections drawn directly from the structural
model at a known parameter vector, in centered scale, for estimator
recovery testing. Case intensities at the micro level are plain Poisson
placeholders; only the panel generator is model-faithful.

Everything is drawn from one ``numpy.random.default_rng(seed)`` stream
in a fixed iteration order, so a fixed config yields byte-identical
emitted files.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .core import Crosswalk, SocioRow, Socioeconomics, week_start
from .csvio import write_csv
from .errors import ConfigurationError
from .ingest import (
    CasesSeries,
    DeviceDay,
    DeviceDayStats,
    DwellDistribution,
    HOUR_COLUMNS,
    OriginTable,
    Poi,
    VisitTable,
)
from .sem import PanelDay, SemSpec

#: Twelve high-traffic industry labels and their NAICS codes.
DEFAULT_INDUSTRY_GROUPS: dict[str, tuple[str, ...]] = {
    "schools": ("611110",),
    "daycare": ("624410",),
    "restaurants": ("722511",),
    "fast_food": ("722513",),
    "bars": ("722410",),
    "fitness": ("713940",),
    "supermarkets": ("445110",),
    "malls": ("531120",),
    "gas_stations": ("447110",),
    "hospitals": ("622110",),
    "pharmacies": ("446110",),
    "department_stores": ("452210",),
}

_EXTRA_NAICS = ("812112", "813110", "541110")  # remainder-industry POIs


def default_theta_star() -> dict[str, float]:
    """True parameters used by the recovery suite.

    The income coefficient is negative: wealthier neighborhoods generate
    less contact exposure, and staying home loads negatively on the
    latent factor.
    """
    return {
        "eta_on_income": -0.6,
        "eta_on_low_edu": 0.3,
        "eta_on_poor": 0.25,
        "eta_on_age65": 0.15,
        "eta_on_black": 0.35,
        "eta_on_transit": 0.3,
        "load_prop_home": -0.5,
        "load_time_home": -0.45,
        "cases_on_lag": 0.4,
        "cases_on_eta": 0.5,
        "var_eta": 0.5,
        "var_e_cei": 0.3,
        "var_e_prop_home": 0.35,
        "var_e_time_home": 0.35,
        "var_e_cases": 0.4,
    }


@dataclass(frozen=True)
class SynthConfig:
    """Settings for both generation levels."""

    seed: int = 42
    n_zcta: int = 20
    n_poi: int = 100
    start: date = date(2020, 3, 2)
    n_days: int = 21
    mean_hourly_visits: float = 3.0
    dwell_concentration: float = 8.0
    mean_weekly_visitors: float = 40.0
    mean_devices: float = 120.0
    mean_daily_cases: float = 3.0
    socio_scale: float = 1.0
    socio_rho: float = 0.3
    y0_scale: float = 1.0
    theta_star: dict[str, float] = field(default_factory=default_theta_star)

    def __post_init__(self):
        if self.n_zcta < 0 or self.n_poi < 0 or self.n_days < 0:
            raise ConfigurationError("sizes must be nonnegative")
        spec = SemSpec()
        missing = set(spec.param_names) - set(self.theta_star)
        if missing:
            raise ConfigurationError(f"theta_star missing {sorted(missing)}")
        for name in spec.param_names[spec.variance_indices[0]:]:
            if self.theta_star[name] <= 0:
                raise ConfigurationError(f"{name} must be positive")

    def theta_vector(self, spec: SemSpec | None = None) -> np.ndarray:
        spec = spec or SemSpec()
        return np.array([self.theta_star[name] for name in spec.param_names])

    def days(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.n_days)]

    def with_seed(self, seed: int) -> "SynthConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SynthCity:
    """Generated geography: POIs, socioeconomics, and a 1:1 crosswalk."""

    pois: dict[str, Poi]
    socio: Socioeconomics
    crosswalk: Crosswalk
    cbg_of_zcta: dict[str, str]

    @property
    def zctas(self) -> list[str]:
        return sorted(self.socio)


def gen_city(config: SynthConfig) -> SynthCity:
    """Generate POIs with positive areas and 6-digit codes, valid
    socioeconomic rows, and the identity CBG-to-ZCTA crosswalk."""
    rng = np.random.default_rng(config.seed)
    zctas = [f"Z{i:05d}" for i in range(config.n_zcta)]
    cbg_of_zcta = {z: f"B{i:05d}" for i, z in enumerate(zctas)}

    socio: Socioeconomics = {}
    for z in zctas:
        socio[z] = SocioRow(
            income_log=float(rng.normal(10.8, 0.5)),
            low_edu=float(rng.beta(3, 4)),
            poor=float(rng.beta(2, 8)),
            age65=float(rng.beta(2, 9)),
            black=float(rng.beta(2, 5)),
            transit=float(rng.beta(2, 4)),
        )

    codes = [c for group in DEFAULT_INDUSTRY_GROUPS.values() for c in group]
    codes += list(_EXTRA_NAICS)
    pois: dict[str, Poi] = {}
    for i in range(config.n_poi):
        poi_id = f"P{i:06d}"
        naics = codes[int(rng.integers(len(codes)))]
        area = float(np.exp(rng.normal(7.5, 0.8)))
        zcta = zctas[int(rng.integers(len(zctas)))] if zctas else "Z00000"
        pois[poi_id] = Poi(poi_id, naics, area, zcta, None)

    crosswalk = Crosswalk.identity({cbg: z for z, cbg in cbg_of_zcta.items()})
    return SynthCity(pois, socio, crosswalk, cbg_of_zcta)


def gen_micro(
    config: SynthConfig, city: SynthCity
) -> tuple[VisitTable, DwellDistribution, OriginTable, DeviceDayStats, CasesSeries]:
    """Generate the mobility and health tables for the city.

    Hourly visit counts are Poisson with the configured mean, dwell
    shares are Dirichlet rows summing to 1, and weekly origins are
    multinomial over a static ZCTA popularity vector. The popularity
    vector also tilts stay-at-home measures down and case intensities up
    in busier ZCTAs, so the assembled panel has cross-sectional
    structure rather than pure noise. Case series carry explicit zeros
    so panel assembly sees complete series.
    """
    rng = np.random.default_rng(config.seed + 1)
    days = config.days()
    weeks = sorted({week_start(d) for d in days})
    poi_ids = sorted(city.pois)
    zctas = city.zctas

    visits: VisitTable = {}
    for poi_id in poi_ids:
        counts = rng.poisson(config.mean_hourly_visits, size=(len(days), 24))
        for day, row in zip(days, counts):
            visits[(poi_id, day)] = row.astype(np.int64)

    base = np.array([0.30, 0.30, 0.25, 0.15])
    alpha = config.dwell_concentration * base
    dwell: DwellDistribution = {}
    for poi_id in poi_ids:
        for week in weeks:
            shares = rng.dirichlet(alpha)
            dwell[(poi_id, week)] = shares / shares.sum()

    popularity = rng.dirichlet(np.full(len(zctas), 2.0)) if zctas else np.array([])
    # Percentile rank of each ZCTA's popularity in [0, 1].
    order = np.argsort(popularity)
    activity = np.empty(len(zctas))
    if len(zctas) > 1:
        activity[order] = np.linspace(0.0, 1.0, len(zctas))
    elif len(zctas) == 1:
        activity[:] = 0.5

    origins: OriginTable = {}
    for poi_id in poi_ids:
        for week in weeks:
            total = int(rng.poisson(config.mean_weekly_visitors))
            cell: dict[str, float] = {}
            if total > 0 and len(zctas) > 0:
                counts = rng.multinomial(total, popularity)
                cell = {z: float(c) for z, c in zip(zctas, counts) if c > 0}
            origins[(poi_id, week)] = cell

    devices: DeviceDayStats = {}
    for i, z in enumerate(zctas):
        cbg = city.cbg_of_zcta[z]
        p_mean = 0.55 - 0.25 * activity[i]
        t_mean = 0.65 - 0.20 * activity[i]
        for day in days:
            n = int(rng.poisson(config.mean_devices))
            prop = float(rng.beta(12.0 * p_mean, 12.0 * (1.0 - p_mean)))
            frac = float(rng.beta(12.0 * t_mean, 12.0 * (1.0 - t_mean)))
            devices[(cbg, day)] = DeviceDay(n, prop, frac)

    cases: CasesSeries = {}
    for i, z in enumerate(zctas):
        intensity = config.mean_daily_cases * (0.4 + 1.2 * activity[i])
        for day in days:
            cases[(z, day)] = int(rng.poisson(intensity))

    return visits, dwell, origins, devices, cases


def _socio_matrix(config: SynthConfig, n: int, rng) -> np.ndarray:
    """Centered socioeconomic draws with exchangeable correlation."""
    k = 6
    rho = config.socio_rho
    cov = np.full((k, k), rho) + (1.0 - rho) * np.eye(k)
    chol = np.linalg.cholesky(cov)
    return config.socio_scale * rng.standard_normal((n, k)) @ chol.T


def gen_panel(
    config: SynthConfig, city: SynthCity | None = None, spec: SemSpec | None = None
) -> list[PanelDay]:
    """Draw model-faithful ZCTA-day cross-sections at ``theta_star``.

    Disturbances are zero-mean normals with the true variances; the
    lagged outcome carries over from the previously generated day, with
    day 0 using a fresh scaled draw. All values are in centered scale,
    matching the estimator's convention.
    """
    spec = spec or SemSpec()
    rng = np.random.default_rng(config.seed + 2)
    zctas = city.zctas if city is not None else [f"Z{i:05d}" for i in range(config.n_zcta)]
    n = len(zctas)
    theta = config.theta_vector(spec)
    names = spec.param_names
    of = {name: theta[i] for i, name in enumerate(names)}
    beta_s = np.array([of[f"eta_on_{s}"] for s in spec.socio_vars])
    loads = np.array([of[f"load_{v}"] for v in spec.indicator_vars[1:]])
    b_lag = of[f"{spec.outcome_var}_on_lag"]
    b_eta = of[f"{spec.outcome_var}_on_eta"]
    psi = of["var_eta"]
    resid = np.array(
        [of[f"var_e_{v}"] for v in spec.indicator_vars]
        + [of[f"var_e_{spec.outcome_var}"]]
    )

    s_mat = _socio_matrix(config, n, rng)
    y_prev = config.y0_scale * rng.standard_normal(n)
    panels: list[PanelDay] = []
    for day in config.days():
        zeta = rng.normal(0.0, np.sqrt(psi), size=n)
        eps = rng.standard_normal((n, len(resid))) * np.sqrt(resid)
        eta = s_mat @ beta_s + zeta
        first = eta + eps[:, 0]
        others = eta[:, None] * loads[None, :] + eps[:, 1:-1]
        y = b_lag * y_prev + b_eta * eta + eps[:, -1]
        X = np.column_stack([s_mat, y_prev, first, others, y])
        panels.append(
            PanelDay(
                day=day,
                zctas=tuple(zctas),
                X=X,
                n_excluded=0,
                columns=spec.observed,
            )
        )
        y_prev = y
    return panels


def write_city(out_dir, city: SynthCity) -> list[Path]:
    """Emit pois.csv, socioeconomics.csv, and crosswalk.csv."""
    out = Path(out_dir)
    paths = []
    paths.append(out / "pois.csv")
    write_csv(
        paths[-1],
        ("poi_id", "naics", "area_sqft", "zcta", "enclosed_by"),
        [
            (p.id, p.naics, p.area_sqft, p.zcta, p.enclosed_by or "")
            for p in (city.pois[k] for k in sorted(city.pois))
        ],
    )
    paths.append(out / "socioeconomics.csv")
    write_csv(
        paths[-1],
        ("zcta", "income_log", "low_edu", "poor", "age65", "black", "transit"),
        [
            (z, r.income_log, r.low_edu, r.poor, r.age65, r.black, r.transit)
            for z, r in ((z, city.socio[z]) for z in sorted(city.socio))
        ],
    )
    paths.append(out / "crosswalk.csv")
    write_csv(
        paths[-1],
        ("cbg", "zcta", "weight"),
        [
            (cbg, z, w)
            for cbg in sorted(city.crosswalk.cbgs())
            for z, w in city.crosswalk.shares(cbg)
        ],
    )
    return paths


def write_micro(
    out_dir,
    city: SynthCity,
    visits: VisitTable,
    dwell: DwellDistribution,
    origins: OriginTable,
    devices: DeviceDayStats,
    cases: CasesSeries,
) -> list[Path]:
    """Emit the visit-pattern directory plus social_distancing.csv and
    cases.csv in the ingest schemas."""
    out = Path(out_dir)
    paths = []
    vp = out / "visit_patterns"
    paths.append(vp / "visits.csv")
    write_csv(
        paths[-1],
        ("poi_id", "date") + HOUR_COLUMNS,
        [
            (poi, day) + tuple(int(c) for c in visits[(poi, day)])
            for poi, day in sorted(visits)
        ],
    )
    k = len(next(iter(dwell.values()))) if dwell else 4
    paths.append(vp / "dwell.csv")
    write_csv(
        paths[-1],
        ("poi_id", "week_start") + tuple(f"dwell_{i}" for i in range(k)),
        [
            (poi, week) + tuple(float(x) for x in dwell[(poi, week)])
            for poi, week in sorted(dwell)
        ],
    )
    paths.append(vp / "origins.csv")
    write_csv(
        paths[-1],
        ("poi_id", "week_start", "origin_cbg", "count"),
        [
            (poi, week, city.cbg_of_zcta[z], origins[(poi, week)][z])
            for poi, week in sorted(origins)
            for z in sorted(origins[(poi, week)])
        ],
    )
    paths.append(out / "social_distancing.csv")
    write_csv(
        paths[-1],
        ("cbg", "date", "devices", "prop_home", "median_time_home_minutes"),
        [
            (
                cbg,
                day,
                devices[(cbg, day)].devices,
                devices[(cbg, day)].prop_home,
                devices[(cbg, day)].time_home_frac * 1440.0,
            )
            for cbg, day in sorted(devices)
        ],
    )
    paths.append(out / "cases.csv")
    write_csv(
        paths[-1],
        ("zcta", "date", "new_cases"),
        [(z, day, cases[(z, day)]) for z, day in sorted(cases)],
    )
    return paths
