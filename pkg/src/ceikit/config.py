"""Run configuration: documented key-value (INI) format plus CLI overrides.

Sections and keys, all optional with the defaults shown:

    [run]
    start_date = 2020-03-02        ; first day of the study range
    end_date = 2020-03-22          ; last day (inclusive)
    threads = 1                    ; CEI worker count
    cei_attribution = origin       ; origin | destination
    prophome_mode = weighted_mean  ; weighted_mean | any_day
    max_reject_frac = 0.1          ; per-file rejection threshold

    [buckets]
    edges = 0,5,20,60              ; dwell bucket lower edges, minutes
    representatives = 2.5,12.5,40,60

    [sem]
    window = 7                     ; mobility window length, days
    lag = 1                        ; case lag, days
    min_rows = 30                  ; minimum complete rows per day
    grad_tol = 1e-6
    f_rel_tol = 1e-10
    max_iter = 500
    restarts = 3
    hessian_step = 1e-4

    [synth]
    seed = 42
    n_zcta = 40
    n_poi = 150
    n_days = 21

    [industry_groups]              ; label = comma-separated NAICS codes
    schools = 611110
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path

from .core import BucketScheme, parse_date
from .errors import ConfigurationError


def _default_groups() -> dict[str, tuple[str, ...]]:
    from .synth import DEFAULT_INDUSTRY_GROUPS  # noqa: PLC0415 (cycle guard)

    return dict(DEFAULT_INDUSTRY_GROUPS)


@dataclass(frozen=True)
class RunConfig:
    start_date: date | None = None
    end_date: date | None = None
    threads: int = 1
    cei_attribution: str = "origin"
    prophome_mode: str = "weighted_mean"
    max_reject_frac: float = 0.1
    bucket_edges: tuple[float, ...] = (0.0, 5.0, 20.0, 60.0)
    bucket_representatives: tuple[float, ...] = (2.5, 12.5, 40.0, 60.0)
    window: int = 7
    lag: int = 1
    min_rows: int = 30
    grad_tol: float = 1e-6
    f_rel_tol: float = 1e-10
    max_iter: int = 500
    restarts: int = 3
    hessian_step: float = 1e-4
    seed: int = 42
    n_zcta: int = 40
    n_poi: int = 150
    n_days: int = 21
    industry_groups: dict[str, tuple[str, ...]] = field(default_factory=_default_groups)

    def __post_init__(self):
        if self.cei_attribution not in ("origin", "destination"):
            raise ConfigurationError(
                f"cei_attribution must be origin or destination, got {self.cei_attribution!r}"
            )
        if self.prophome_mode not in ("weighted_mean", "any_day"):
            raise ConfigurationError(
                f"prophome_mode must be weighted_mean or any_day, got {self.prophome_mode!r}"
            )
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if self.window < 1 or self.lag < 0 or self.min_rows < 2:
            raise ConfigurationError("bad sem window/lag/min_rows settings")
        if len(self.bucket_edges) != len(self.bucket_representatives):
            raise ConfigurationError("bucket edges and representatives must align")

    def scheme(self) -> BucketScheme:
        edges = list(self.bucket_edges) + [math.inf]
        return BucketScheme(
            boundaries=tuple(zip(edges[:-1], edges[1:])),
            representatives=self.bucket_representatives,
        )

    def with_overrides(self, **kwargs) -> "RunConfig":
        clean = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **clean) if clean else self


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def load_config(path) -> RunConfig:
    """Parse the key-value config file into a :class:`RunConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"cannot read config file {path}")

    kwargs = {}
    run = parser["run"] if parser.has_section("run") else {}
    if "start_date" in run:
        kwargs["start_date"] = parse_date(run["start_date"])
    if "end_date" in run:
        kwargs["end_date"] = parse_date(run["end_date"])
    try:
        if "threads" in run:
            kwargs["threads"] = int(run["threads"])
        if "cei_attribution" in run:
            kwargs["cei_attribution"] = run["cei_attribution"]
        if "prophome_mode" in run:
            kwargs["prophome_mode"] = run["prophome_mode"]
        if "max_reject_frac" in run:
            kwargs["max_reject_frac"] = float(run["max_reject_frac"])

        if parser.has_section("buckets"):
            buckets = parser["buckets"]
            if "edges" in buckets:
                kwargs["bucket_edges"] = _floats(buckets["edges"])
            if "representatives" in buckets:
                kwargs["bucket_representatives"] = _floats(buckets["representatives"])

        if parser.has_section("sem"):
            sem = parser["sem"]
            for key, cast in (
                ("window", int),
                ("lag", int),
                ("min_rows", int),
                ("grad_tol", float),
                ("f_rel_tol", float),
                ("max_iter", int),
                ("restarts", int),
                ("hessian_step", float),
            ):
                if key in sem:
                    kwargs[key] = cast(sem[key])

        if parser.has_section("synth"):
            synth = parser["synth"]
            for key in ("seed", "n_zcta", "n_poi", "n_days"):
                if key in synth:
                    kwargs[key] = int(synth[key])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None

    if parser.has_section("industry_groups"):
        groups = {}
        for label, codes in parser["industry_groups"].items():
            parsed = tuple(c.strip() for c in codes.split(",") if c.strip())
            if not parsed:
                raise ConfigurationError(f"industry group {label!r} has no NAICS codes")
            for code in parsed:
                if len(code) != 6 or not code.isdigit():
                    raise ConfigurationError(
                        f"industry group {label!r}: {code!r} is not a 6-digit NAICS code"
                    )
            groups[label] = parsed
        kwargs["industry_groups"] = groups

    return RunConfig(**kwargs)


def file_digest(path) -> str:
    """sha256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(path) -> str:
    """Digest of the config file, or of the defaults when none is given."""
    if path is None:
        return hashlib.sha256(b"defaults").hexdigest()
    return file_digest(Path(path))
