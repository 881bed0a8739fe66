"""Contact-exposure analytics for POI foot traffic.

Computes a contact exposure index from hourly visit counts, dwell-time
distributions, and floor areas; aggregates it across POI, ZCTA, origin,
and industry scopes; aggregates device-based stay-at-home measures; and
fits a daily latent-exposure structural model linking neighborhood
socioeconomics to new case counts.
"""

from .core import (
    BucketScheme,
    Crosswalk,
    IncomeClassTable,
    SocioRow,
    aggregate_cbg_to_zcta,
    income_quintiles,
    log1p_transform,
    moving_average_7,
    window_sum,
)
from .distancing import WindowMobility, ZctaMobilityDay, aggregate_distancing, window_mobility
from .errors import (
    CeikitError,
    ConfigurationError,
    DataError,
    DataQualityWarning,
    DomainError,
    MissingDataError,
    SchemaError,
)
from .exposure import (
    allocate_dwell_to_hours,
    cei_aggregate,
    cei_origin_attribution,
    cei_per_visit,
    cei_poi_hour,
    contact_duration,
    contact_duration_oracle,
    industry_decomposition,
)
from .ingest import (
    DeviceDay,
    Poi,
    RejectionReport,
    filter_pois,
    read_cases,
    read_poi_catalog,
    read_social_distancing,
    read_visit_patterns,
)
from .sem import (
    DailyExposureSem,
    PanelDay,
    SemEstimate,
    SemSpec,
    build_panel,
    fit_daily,
    fit_series,
    implied_covariance,
    ml_discrepancy,
)
from .synth import SynthCity, SynthConfig, gen_city, gen_micro, gen_panel

__version__ = "0.1.0"

__all__ = [
    "BucketScheme",
    "Crosswalk",
    "IncomeClassTable",
    "SocioRow",
    "aggregate_cbg_to_zcta",
    "income_quintiles",
    "log1p_transform",
    "moving_average_7",
    "window_sum",
    "WindowMobility",
    "ZctaMobilityDay",
    "aggregate_distancing",
    "window_mobility",
    "CeikitError",
    "ConfigurationError",
    "DataError",
    "DataQualityWarning",
    "DomainError",
    "MissingDataError",
    "SchemaError",
    "allocate_dwell_to_hours",
    "cei_aggregate",
    "cei_origin_attribution",
    "cei_per_visit",
    "cei_poi_hour",
    "contact_duration",
    "contact_duration_oracle",
    "industry_decomposition",
    "DeviceDay",
    "Poi",
    "RejectionReport",
    "filter_pois",
    "read_cases",
    "read_poi_catalog",
    "read_social_distancing",
    "read_visit_patterns",
    "DailyExposureSem",
    "PanelDay",
    "SemEstimate",
    "SemSpec",
    "build_panel",
    "fit_daily",
    "fit_series",
    "implied_covariance",
    "ml_discrepancy",
    "SynthCity",
    "SynthConfig",
    "gen_city",
    "gen_micro",
    "gen_panel",
    "__version__",
]
