"""Command-line entry point.

Subcommands (group + verb):

    ceikit synth generate    write a synthetic input directory
    ceikit ingest validate   validate inputs, emit the canonical dump
    ceikit cei compute       POI-day and ZCTA-day exposure tables
    ceikit cei decompose     industry totals/shares and CEI per visit
    ceikit sdm aggregate     stay-at-home aggregation and 7-day windows
    ceikit panel build       daily model cross-sections
    ceikit sem fit           daily coefficient series
    ceikit report emit       plot-ready report CSVs

Exit codes: 0 success, 1 data error (bad or missing input data),
2 configuration error (bad config or usage). Every invocation updates
``run_manifest.json`` in the output directory with input digests,
row/rejection counts, stage wall time, and the full output listing.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import metadata
from pathlib import Path

from .config import RunConfig, config_digest, file_digest, load_config
from .core import parse_date
from .errors import CeikitError, ConfigurationError, DataError, DomainError
from .pipeline import (
    StageResult,
    stage_cei_compute,
    stage_cei_decompose,
    stage_ingest_validate,
    stage_panel_build,
    stage_sdm_aggregate,
    stage_sem_fit,
    stage_synth_generate,
)
from .report import emit_report

MANIFEST_NAME = "run_manifest.json"

INPUT_FILES = (
    "pois.csv",
    "visit_patterns/visits.csv",
    "visit_patterns/dwell.csv",
    "visit_patterns/origins.csv",
    "social_distancing.csv",
    "cases.csv",
    "socioeconomics.csv",
    "crosswalk.csv",
)


def _tool_version() -> str:
    try:
        return metadata.version("ceikit")
    except metadata.PackageNotFoundError:
        return "unknown"


def _load_manifest(output_dir: Path) -> dict:
    path = output_dir / MANIFEST_NAME
    if path.exists():
        with open(path) as fh:
            return json.load(fh)
    return {
        "tool_version": _tool_version(),
        "config_digest": None,
        "inputs": {},
        "tables": {},
        "stages": {},
        "outputs": [],
    }


def _save_manifest(output_dir: Path, manifest: dict) -> None:
    manifest["outputs"] = sorted(set(manifest["outputs"]))
    path = output_dir / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _update_manifest(
    output_dir: Path,
    stage: str,
    result: StageResult,
    wall_time: float,
    config_path,
    input_dir: Path | None,
) -> None:
    manifest = _load_manifest(output_dir)
    manifest["tool_version"] = _tool_version()
    manifest["config_digest"] = config_digest(config_path)
    if input_dir is not None:
        for rel in INPUT_FILES:
            path = input_dir / rel
            if path.exists():
                manifest["inputs"][str(path)] = file_digest(path)
    for name, table in result.tables.items():
        manifest["tables"][name] = table
    rel_outputs = [str(p.relative_to(output_dir)) for p in result.outputs]
    manifest["stages"][stage] = {
        "wall_time_s": round(wall_time, 6),
        "outputs": rel_outputs,
        "notes": {k: result.notes[k] for k in sorted(result.notes)},
    }
    manifest["outputs"].extend(rel_outputs)
    _save_manifest(output_dir, manifest)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ceikit",
        description="Contact-exposure analytics pipeline for POI foot traffic.",
    )
    parser.add_argument("--config", metavar="PATH", help="key-value config file")
    parser.add_argument("--input-dir", default=".", help="directory of input CSVs")
    parser.add_argument("--output-dir", default="outputs", help="directory for outputs")
    parser.add_argument("--start-date", metavar="YYYY-MM-DD")
    parser.add_argument("--end-date", metavar="YYYY-MM-DD")
    parser.add_argument("--seed", type=int, help="synthetic-data / restart seed")
    parser.add_argument("--threads", type=int, help="CEI worker count")
    parser.add_argument(
        "--cei-attribution",
        choices=("destination", "origin"),
        help="which ZCTA-day exposure feeds the mobility window",
    )
    parser.add_argument(
        "--prophome-mode",
        choices=("weighted_mean", "any_day"),
        help="window estimator for the proportion-home measure",
    )

    sub = parser.add_subparsers(dest="group", required=True)
    for group, verbs in (
        ("ingest", ("validate",)),
        ("cei", ("compute", "decompose")),
        ("sdm", ("aggregate",)),
        ("panel", ("build",)),
        ("sem", ("fit",)),
        ("synth", ("generate",)),
        ("report", ("emit",)),
    ):
        sp = sub.add_parser(group)
        sp.add_argument("verb", choices=verbs)
    return parser


def _make_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(
        start_date=parse_date(args.start_date) if args.start_date else None,
        end_date=parse_date(args.end_date) if args.end_date else None,
        seed=args.seed,
        threads=args.threads,
        cei_attribution=args.cei_attribution,
        prophome_mode=args.prophome_mode,
    )


def run_pipeline(args) -> int:
    cfg = _make_config(args)
    stage = f"{args.group} {args.verb}"
    input_dir = Path(args.input_dir)
    output_dir = Path(args.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    if stage == "synth generate":
        result = stage_synth_generate(cfg, output_dir)
        used_inputs = None
    elif stage == "ingest validate":
        result = stage_ingest_validate(cfg, input_dir, output_dir)
        used_inputs = input_dir
    elif stage == "cei compute":
        result = stage_cei_compute(cfg, input_dir, output_dir)
        used_inputs = input_dir
    elif stage == "cei decompose":
        result = stage_cei_decompose(cfg, input_dir, output_dir)
        used_inputs = input_dir
    elif stage == "sdm aggregate":
        result = stage_sdm_aggregate(cfg, input_dir, output_dir)
        used_inputs = input_dir
    elif stage == "panel build":
        result = stage_panel_build(cfg, input_dir, output_dir)
        used_inputs = input_dir
    elif stage == "sem fit":
        result = stage_sem_fit(cfg, input_dir, output_dir)
        used_inputs = None
    elif stage == "report emit":
        result = emit_report(cfg, input_dir, output_dir)
        used_inputs = input_dir
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigurationError(f"unknown subcommand {stage!r}")
    wall = time.perf_counter() - started

    _update_manifest(output_dir, stage, result, wall, args.config, used_inputs)
    for line in sorted(f"  {p}" for p in result.outputs):
        print(line)
    print(f"{stage}: ok ({wall:.2f}s)")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run_pipeline(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    except CeikitError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
