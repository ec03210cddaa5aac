"""Pipeline orchestration: subcommands per stage, config file, run manifest.

Stage boundaries are files inside the configured output directory, so every
stage can be re-run independently and a full run is resumable and diffable.
All outputs are written temp-then-rename; a failed stage leaves no partial
files behind. Identical inputs produce byte-identical outputs regardless of
worker count.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from . import __version__
from .geo import GeoPoint, tile_bbox
from .harvest import (
    GRAPH_BUDGET,
    MapillaryClient,
    RateLimiter,
    TILE_BUDGET,
    atomic_write_text,
    harvest_image_metadata,
    harvest_sequences,
    load_checkpoint,
    merge_image_files,
    merge_sequence_files,
)
from .ingest import (
    ImageRecord,
    group_by_sequence,
    join_country_hdi,
    classify_urban_records,
    load_countries_geojson,
    load_hdi_csv,
    load_segments_geojson,
    load_sequences_ndjson,
    load_urban_areas_geojson,
    read_image_records,
    sequence_record,
    thin_sequence,
)
from .matching import Assignment, MatchResult, match_all, tier_summary
from .stats import (
    RegressionPoint,
    breakdown_by_highway_class,
    compute_tile_stats,
    confusion_metrics,
    country_report,
    evaluate_against_osm,
    hdi_regression,
    segment_coverage_lengths,
    segment_urban_flags,
)
from .surface import PredictionRecord, combination_filter, label_all_segments

STAGES = ("harvest", "thin", "enrich", "match", "filter", "aggregate", "stats", "eval")

PREDICTION_COLUMNS = (
    "image_id",
    "pred_label",
    "pred_class",
    "pred_score",
    "zs_pred_class",
    "zs_pred_score",
    "road_pixel_percentage",
)


class CliError(RuntimeError):
    """User-facing error: bad config, missing input, failed precondition."""


# --------------------------------------------------------------------- config


@dataclass
class PipelineConfig:
    paths: dict[str, str]
    zoom: int = 8
    match_radii_m: tuple[float, ...] = (10.0, 20.0, 30.0)
    bbox_buffer_m: float = 30.0
    thin_gaps_m: Mapping[str, float] = field(default_factory=lambda: {"urban": 100.0, "rural": 1000.0})
    filter_thresholds: Mapping[str, float] = field(
        default_factory=lambda: {"road_pixel": 0.10, "no_road_prob": 0.90}
    )
    aggregation: Mapping[str, object] = field(
        default_factory=lambda: {"weight": "linear-30m", "tie": "unpaved", "score_weighted": False}
    )
    workers: int = 1
    api: Mapping[str, object] | None = None
    raw: dict = field(default_factory=dict)

    @property
    def out_dir(self) -> Path:
        return Path(self.paths["out_dir"])

    def path(self, name: str) -> Path | None:
        value = self.paths.get(name)
        return Path(value) if value else None

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg = PipelineConfig(
        paths=dict(raw.get("paths", {})),
        zoom=raw.get("zoom", 8),
        match_radii_m=tuple(raw.get("match_radii_m", (10.0, 20.0, 30.0))),
        bbox_buffer_m=raw.get("bbox_buffer_m", 30.0),
        thin_gaps_m=raw.get("thin_gaps_m", {"urban": 100.0, "rural": 1000.0}),
        filter_thresholds=raw.get("filter_thresholds", {"road_pixel": 0.10, "no_road_prob": 0.90}),
        aggregation=raw.get("aggregation", {}),
        workers=raw.get("workers", 1),
        api=raw.get("api"),
        raw=raw,
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    radii = cfg.match_radii_m
    if list(radii) != sorted(radii) or any(r <= 0 for r in radii):
        raise CliError(f"match_radii_m must be positive and strictly increasing: {list(radii)}")
    if len(set(radii)) != len(radii):
        raise CliError(f"match_radii_m must not repeat: {list(radii)}")
    if cfg.bbox_buffer_m < 0:
        raise CliError(f"bbox_buffer_m must be >= 0: {cfg.bbox_buffer_m}")
    for key in ("road_pixel", "no_road_prob"):
        v = cfg.filter_thresholds.get(key)
        if v is None or not 0.0 <= float(v) <= 1.0:
            raise CliError(f"filter_thresholds.{key} must be in [0,1]: {v}")
    for key in ("urban", "rural"):
        v = cfg.thin_gaps_m.get(key)
        if v is None or float(v) <= 0:
            raise CliError(f"thin_gaps_m.{key} must be > 0: {v}")
    if cfg.zoom < 0 or cfg.zoom > 22:
        raise CliError(f"zoom out of range: {cfg.zoom}")
    if cfg.workers < 1:
        raise CliError(f"workers must be >= 1: {cfg.workers}")
    if "out_dir" not in cfg.paths:
        raise CliError("paths.out_dir is required")


# ----------------------------------------------------------------- formatting


def _f3(v: float) -> str:
    return f"{v:.3f}"


def _f4(v: float) -> str:
    return f"{v:.4f}"


def _f6(v: float) -> str:
    return f"{v:.6f}"


def _opt(v: float | None, fmt: Callable[[float], str]) -> str:
    return fmt(v) if v is not None else ""


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class StageOutput:
    """Collects files for one stage; everything lands atomically on commit."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self._pending: list[tuple[Path, str]] = []

    def add(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        self._pending.append((path, text))
        return path

    def commit(self) -> list[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        tmps = []
        for path, text in self._pending:
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            tmps.append((tmp, path))
        for tmp, path in tmps:
            os.replace(tmp, path)
        return [path for _, path in self._pending]


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise CliError(f"no path configured for {what}")
    if not path.exists():
        raise CliError(f"missing input for this stage: {what} ({path})")
    return path


@dataclass
class StageResult:
    name: str
    n_in: int
    n_out: int
    seconds: float
    outputs: list[Path] = field(default_factory=list)


# ----------------------------------------------------------- matches file i/o


def write_matches_csv(results: Sequence[MatchResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["image_id", "tier", "osm_ids", "distances_meter", "abs_dif", "percent_dif", "osm_id"]
    )
    for m in results:
        writer.writerow(
            [
                m.image_id,
                m.tier,
                "|".join(a.osm_id for a in m.assignments),
                "|".join(_f3(a.distance_m) for a in m.assignments),
                "|".join(_f3(a.abs_diff_m) for a in m.assignments),
                "|".join(_f4(a.percent_diff) for a in m.assignments),
                m.primary_osm_id or "",
            ]
        )
    return buf.getvalue()


def read_matches_csv(path: Path) -> list[MatchResult]:
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if not row["osm_ids"]:
                out.append(MatchResult(image_id=row["image_id"], tier=row["tier"]))
                continue
            osm_ids = row["osm_ids"].split("|")
            distances = [float(v) for v in row["distances_meter"].split("|")]
            abs_difs = [float(v) for v in row["abs_dif"].split("|")]
            pct_difs = [float(v) for v in row["percent_dif"].split("|")]
            assignments = tuple(
                Assignment(osm, d, ad, pd, GeoPoint(0.0, 0.0))
                for osm, d, ad, pd in zip(osm_ids, distances, abs_difs, pct_difs)
            )
            out.append(MatchResult(image_id=row["image_id"], tier=row["tier"], assignments=assignments))
    return out


def read_predictions_csv(path: Path, *, only_kept: bool = False) -> list[PredictionRecord]:
    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise CliError(f"predictions file missing column(s): {', '.join(missing)}")
        for row in reader:
            if only_kept and row.get("no_road_image_filter") == "0":
                continue
            out.append(
                PredictionRecord(
                    image_id=row["image_id"],
                    pred_label=int(row["pred_label"]),
                    pred_class=row["pred_class"],
                    pred_score=float(row["pred_score"]),
                    zs_pred_class=row["zs_pred_class"],
                    zs_pred_score=float(row["zs_pred_score"]),
                    road_pixel_percentage=float(row["road_pixel_percentage"]),
                )
            )
    return out


# --------------------------------------------------------------------- stages


def cmd_harvest(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    if not cfg.api:
        raise CliError("harvest requires an 'api' section (tiles_url, graph_url, tiles)")
    tiles_url = cfg.api.get("tiles_url")
    graph_url = cfg.api.get("graph_url")
    tile_keys = cfg.api.get("tiles", [])
    if not tiles_url or not graph_url:
        raise CliError("api.tiles_url and api.graph_url are required for harvest")
    from .geo import TileId

    tiles = [TileId.from_key(k) for k in tile_keys]
    budgets = cfg.api.get("budgets", {})
    tile_budget = tuple(budgets.get("tiles", TILE_BUDGET))
    graph_budget = tuple(budgets.get("graph", GRAPH_BUDGET))
    client = MapillaryClient(
        tiles_url=tiles_url,
        graph_url=graph_url,
        token=cfg.api.get("token"),
        tile_limiter=RateLimiter(*tile_budget),
        graph_limiter=RateLimiter(*graph_budget),
    )
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = load_checkpoint(out_dir / "checkpoint.json")
    checkpoint = harvest_sequences(tiles, client, checkpoint, out_dir)
    seq_path = merge_sequence_files(out_dir)
    seq_ids = [json.loads(l)["id"] for l in seq_path.read_text().splitlines() if l.strip()]
    harvest_image_metadata(seq_ids, client, checkpoint, out_dir)
    images_path = merge_image_files(out_dir)
    n_images = sum(1 for l in images_path.read_text().splitlines() if l.strip())
    return StageResult("harvest", len(tiles), n_images, time.perf_counter() - t0, [seq_path, images_path])


def cmd_thin(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    harvested = cfg.out_dir / "images_harvested.ndjson"
    images_path = harvested if harvested.exists() else _require(cfg.path("images"), "paths.images")
    report = read_image_records(images_path)
    urban_areas = load_urban_areas_geojson(_require(cfg.path("urban_areas"), "paths.urban_areas"))
    kept: list[ImageRecord] = []
    for sid, group in group_by_sequence(report.records).items():
        kept.extend(
            thin_sequence(
                group,
                urban_areas,
                urban_gap_m=float(cfg.thin_gaps_m["urban"]),
                rural_gap_m=float(cfg.thin_gaps_m["rural"]),
            )
        )
    from .ingest import record_to_row

    out = StageOutput(cfg.out_dir)
    text = "".join(json.dumps(record_to_row(rec), separators=(",", ":")) + "\n" for rec in kept)
    n_kept = len(kept)
    outputs = [out.add("images_thinned.ndjson", text)]
    if report.rejects:
        rej = io.StringIO()
        w = csv.writer(rej, lineterminator="\n")
        w.writerow(["line", "reason"])
        for r in report.rejects:
            w.writerow([r.line, r.reason])
        outputs.append(out.add("rejects.csv", rej.getvalue()))
        print(f"thin: {len(report.rejects)} malformed row(s) recorded in rejects.csv", file=sys.stderr)
    out.commit()
    return StageResult("thin", report.n_read, n_kept, time.perf_counter() - t0, outputs)


def cmd_enrich(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    thinned = _require(cfg.out_dir / "images_thinned.ndjson", "thin output (run `thin` first)")
    report = read_image_records(thinned)
    urban_areas = load_urban_areas_geojson(_require(cfg.path("urban_areas"), "paths.urban_areas"))
    countries = load_countries_geojson(_require(cfg.path("countries"), "paths.countries"))
    hdi_path = cfg.path("hdi")
    hdi = load_hdi_csv(hdi_path) if hdi_path and hdi_path.exists() else None
    records = classify_urban_records(report.records, urban_areas)
    records, join_report = join_country_hdi(records, countries, hdi)
    records.sort(key=lambda r: (r.sequence, r.timestamp, r.id))
    from .ingest import record_to_row

    text = "".join(json.dumps(record_to_row(r), separators=(",", ":")) + "\n" for r in records)
    out = StageOutput(cfg.out_dir)
    outputs = [out.add("images_enriched.ndjson", text)]
    out.commit()
    if join_report.unmatched:
        print(f"enrich: {join_report.unmatched} image(s) outside all countries", file=sys.stderr)
    return StageResult("enrich", report.n_read, len(records), time.perf_counter() - t0, outputs)


def cmd_match(cfg: PipelineConfig, workers: int | None = None) -> StageResult:
    t0 = time.perf_counter()
    enriched = _require(cfg.out_dir / "images_enriched.ndjson", "enrich output (run `enrich` first)")
    report = read_image_records(enriched)
    segments = load_segments_geojson(_require(cfg.path("segments"), "paths.segments"))
    results = match_all(
        report.records,
        segments,
        radii=cfg.match_radii_m,
        buffer_m=cfg.bbox_buffer_m,
        workers=workers or cfg.workers,
    )
    out = StageOutput(cfg.out_dir)
    outputs = [out.add("matches.csv", write_matches_csv(results))]
    out.commit()
    print(f"match: {tier_summary(results)}", file=sys.stderr)
    return StageResult("match", len(report.records), len(results), time.perf_counter() - t0, outputs)


def cmd_filter(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    pred_path = _require(cfg.path("predictions"), "paths.predictions")
    predictions = read_predictions_csv(pred_path)
    road_pixel = float(cfg.filter_thresholds["road_pixel"])
    no_road_prob = float(cfg.filter_thresholds["no_road_prob"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(PREDICTION_COLUMNS) + ["no_road_image_filter"])
    n_kept = 0
    for p in sorted(predictions, key=lambda p: p.image_id):
        keep = combination_filter(
            p, road_pixel_threshold=road_pixel, no_road_prob_threshold=no_road_prob
        )
        n_kept += keep
        writer.writerow(
            [
                p.image_id,
                p.pred_label,
                p.pred_class,
                repr(p.pred_score),
                p.zs_pred_class,
                repr(p.zs_pred_score),
                repr(p.road_pixel_percentage),
                1 if keep else 0,
            ]
        )
    out = StageOutput(cfg.out_dir)
    outputs = [out.add("predictions_filtered.csv", buf.getvalue())]
    out.commit()
    print(f"filter: kept {n_kept}/{len(predictions)}", file=sys.stderr)
    return StageResult("filter", len(predictions), n_kept, time.perf_counter() - t0, outputs)


def cmd_aggregate(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    matches = read_matches_csv(_require(cfg.out_dir / "matches.csv", "match output (run `match` first)"))
    predictions = read_predictions_csv(
        _require(cfg.out_dir / "predictions_filtered.csv", "filter output (run `filter` first)")
    )
    labels, diag = label_all_segments(
        matches,
        predictions,
        max_distance_m=cfg.match_radii_m[-1],
        road_pixel_threshold=float(cfg.filter_thresholds["road_pixel"]),
        no_road_prob_threshold=float(cfg.filter_thresholds["no_road_prob"]),
        score_weighted=bool(cfg.aggregation.get("score_weighted", False)),
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["osm_id", "label", "weighted_score", "n_points"])
    for l in labels:
        writer.writerow([l.osm_id, l.label.value, _f4(l.weighted_score), l.n_points])
    out = StageOutput(cfg.out_dir)
    outputs = [out.add("segments_labeled.csv", buf.getvalue())]
    out.commit()
    print(
        f"aggregate: {len(labels)} segment(s); filtered={diag.n_filtered} "
        f"missing_prediction={diag.n_missing_prediction} unmatched={diag.n_unmatched}",
        file=sys.stderr,
    )
    return StageResult("aggregate", diag.n_results, len(labels), time.perf_counter() - t0, outputs)


def _load_labels_csv(path: Path):
    from .surface import SegmentLabel, SurfaceLabel

    out = []
    with path.open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                SegmentLabel(
                    osm_id=row["osm_id"],
                    label=SurfaceLabel(row["label"]),
                    weighted_score=float(row["weighted_score"]),
                    n_points=int(row["n_points"]),
                    weights_sum=0.0,
                )
            )
    return out


def _sequence_geometries(cfg: PipelineConfig) -> dict:
    seq_path = cfg.path("sequences")
    if seq_path and seq_path.exists():
        return load_sequences_ndjson(seq_path)
    harvested = cfg.out_dir / "sequences.ndjson"
    if harvested.exists():
        return load_sequences_ndjson(harvested)
    # fall back to the node chains of the raw images file
    images_path = _require(cfg.path("images"), "paths.images or paths.sequences")
    report = read_image_records(images_path)
    return {
        sid: sequence_record(sid, group).geometry
        for sid, group in group_by_sequence(report.records).items()
    }


def cmd_stats(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    segments = load_segments_geojson(_require(cfg.path("segments"), "paths.segments"))
    matches = read_matches_csv(_require(cfg.out_dir / "matches.csv", "match output (run `match` first)"))
    labels = _load_labels_csv(
        _require(cfg.out_dir / "segments_labeled.csv", "aggregate output (run `aggregate` first)")
    )
    enriched = read_image_records(
        _require(cfg.out_dir / "images_enriched.ndjson", "enrich output (run `enrich` first)")
    )
    urban_areas = load_urban_areas_geojson(_require(cfg.path("urban_areas"), "paths.urban_areas"))
    countries = load_countries_geojson(_require(cfg.path("countries"), "paths.countries"))
    hdi_path = cfg.path("hdi")
    hdi = load_hdi_csv(hdi_path) if hdi_path and hdi_path.exists() else {}
    seq_geoms = {sid: g for sid, g in _sequence_geometries(cfg).items() if g is not None}
    image_sequences = {r.id: r.sequence for r in enriched.records}
    urban_flags = segment_urban_flags(segments, urban_areas)

    tiles = compute_tile_stats(
        segments, labels, matches, image_sequences, seq_geoms, urban_flags, zoom=cfg.zoom
    )

    tile_header = [
        "z", "x", "y",
        "osm_length_m", "covered_length_m", "coverage_ratio", "paved_ratio",
        "urban_osm_length_m", "urban_covered_length_m", "urban_coverage_ratio", "urban_paved_ratio",
        "rural_osm_length_m", "rural_covered_length_m", "rural_coverage_ratio", "rural_paved_ratio",
        "n_segments",
    ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(tile_header)
    features = []
    for t in tiles:
        row = [t.tile.z, t.tile.x, t.tile.y]
        props: dict[str, object] = {"z": t.tile.z, "x": t.tile.x, "y": t.tile.y}
        for name in ("total", "urban", "rural"):
            band = t.bands()[name]
            prefix = "" if name == "total" else f"{name}_"
            row += [
                _f3(band.osm_length_m),
                _f3(band.covered_length_m),
                _opt(band.coverage_ratio, _f6),
                _opt(band.paved_ratio, _f6),
            ]
            props[f"{prefix}osm_length_m"] = round(band.osm_length_m, 3)
            props[f"{prefix}covered_length_m"] = round(band.covered_length_m, 3)
            props[f"{prefix}coverage_ratio"] = (
                round(band.coverage_ratio, 6) if band.coverage_ratio is not None else None
            )
            props[f"{prefix}paved_ratio"] = (
                round(band.paved_ratio, 6) if band.paved_ratio is not None else None
            )
        row.append(t.n_segments)
        props["n_segments"] = t.n_segments
        writer.writerow(row)
        box = tile_bbox(t.tile)
        features.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [
                        [
                            [box.min_lon, box.min_lat],
                            [box.max_lon, box.min_lat],
                            [box.max_lon, box.max_lat],
                            [box.min_lon, box.max_lat],
                            [box.min_lon, box.min_lat],
                        ]
                    ],
                },
            }
        )

    # country report and regression need per-segment country assignment
    from .geo import polyline_midpoint
    from .ingest import point_in_rings

    ordered_countries = sorted(countries, key=lambda c: c.iso3)
    segment_country: dict[str, str | None] = {}
    for seg in segments:
        mid = polyline_midpoint(seg.geometry)
        segment_country[seg.osm_id] = next(
            (c.iso3 for c in ordered_countries if point_in_rings(mid, c.rings)), None
        )
    country_rows, continent_rows = country_report(
        segments, labels, segment_country, urban_flags, countries
    )
    cbuf = io.StringIO()
    cwriter = csv.writer(cbuf, lineterminator="\n")
    cwriter.writerow(
        ["iso3", "continent", "total_paved_ratio", "urban_paved_ratio", "rural_paved_ratio", "labeled_length_km"]
    )
    for r in country_rows:
        cwriter.writerow(
            [
                r.iso3,
                r.continent,
                _opt(r.total_paved_ratio, _f4),
                _opt(r.urban_paved_ratio, _f4),
                _opt(r.rural_paved_ratio, _f4),
                _f3(r.labeled_length_km),
            ]
        )

    coverage = segment_coverage_lengths(segments, matches, image_sequences, seq_geoms)
    hbuf = io.StringIO()
    hwriter = csv.writer(hbuf, lineterminator="\n")
    hwriter.writerow(["highway", "total_length_m", "covered_length_m", "coverage_pct", "paved_ratio"])
    for row in breakdown_by_highway_class(segments, labels, coverage):
        hwriter.writerow(
            [
                row.highway,
                _f3(row.total_length_m),
                _f3(row.covered_length_m),
                f"{row.coverage_pct:.2f}",
                _opt(row.paved_ratio, _f4),
            ]
        )

    hdi_by_iso = dict(hdi)
    for c in countries:
        if c.iso3 not in hdi_by_iso and c.hdi is not None:
            hdi_by_iso[c.iso3] = c.hdi
    regression = {}
    for band_name, getter in (
        ("total", lambda r: r.total_paved_ratio),
        ("urban", lambda r: r.urban_paved_ratio),
        ("rural", lambda r: r.rural_paved_ratio),
    ):
        points = [
            RegressionPoint(hdi_by_iso[r.iso3], getter(r), r.labeled_length_km)
            for r in country_rows
            if r.iso3 in hdi_by_iso and getter(r) is not None
        ]
        try:
            res = hdi_regression(points)
            regression[band_name] = {
                "pearson_r": round(res.pearson_r, 9),
                "r_squared": round(res.r_squared, 9),
                "slope": round(res.slope, 9),
                "intercept": round(res.intercept, 9),
                "n": res.n,
            }
        except ValueError as exc:
            regression[band_name] = {"n": len(points), "error": str(exc)}

    out = StageOutput(cfg.out_dir)
    outputs = [
        out.add("tiles.csv", buf.getvalue()),
        out.add(
            "tiles.geojson",
            json.dumps({"type": "FeatureCollection", "features": features}, sort_keys=True) + "\n",
        ),
        out.add("countries.csv", cbuf.getvalue()),
        out.add("highway_classes.csv", hbuf.getvalue()),
        out.add("hdi_regression.json", json.dumps(regression, indent=1, sort_keys=True) + "\n"),
    ]
    out.commit()
    return StageResult("stats", len(segments), len(tiles), time.perf_counter() - t0, outputs)


def cmd_eval(cfg: PipelineConfig) -> StageResult:
    t0 = time.perf_counter()
    enriched = read_image_records(
        _require(cfg.out_dir / "images_enriched.ndjson", "enrich output (run `enrich` first)")
    )
    predictions = read_predictions_csv(
        _require(cfg.out_dir / "predictions_filtered.csv", "filter output (run `filter` first)"),
        only_kept=True,
    )
    matches = read_matches_csv(_require(cfg.out_dir / "matches.csv", "match output (run `match` first)"))
    segments = load_segments_geojson(_require(cfg.path("segments"), "paths.segments"))
    counts, diag = evaluate_against_osm(enriched.records, predictions, matches, segments)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["continent", "total", "tp", "fp", "tn", "fn", "accuracy", "f1", "precision", "recall", "mcc"]
    )
    n_rows = 0
    for continent in sorted(counts):
        c = counts[continent]
        m = confusion_metrics(c)
        writer.writerow(
            [
                continent, c.total, c.tp, c.fp, c.tn, c.fn,
                _f6(m["accuracy"]), _f6(m["f1"]), _f6(m["precision"]), _f6(m["recall"]), _f6(m["mcc"]),
            ]
        )
        n_rows += 1
    out = StageOutput(cfg.out_dir)
    outputs = [out.add("evaluation.csv", buf.getvalue())]
    out.commit()
    print(
        f"eval: counted={diag.n_counted} unknown_surface={diag.n_unknown_surface} "
        f"unmatched={diag.n_unmatched}",
        file=sys.stderr,
    )
    return StageResult("eval", diag.n_images, n_rows, time.perf_counter() - t0, outputs)


def cmd_run(cfg: PipelineConfig, workers: int | None = None) -> list[StageResult]:
    """All stages in pipeline order; harvest only when an API is configured."""
    results = []
    if cfg.api:
        results.append(cmd_harvest(cfg))
    results.append(cmd_thin(cfg))
    results.append(cmd_enrich(cfg))
    results.append(cmd_match(cfg, workers=workers))
    results.append(cmd_filter(cfg))
    results.append(cmd_aggregate(cfg))
    results.append(cmd_stats(cfg))
    results.append(cmd_eval(cfg))
    write_manifest(cfg, results)
    return results


# stages that map or drop rows; joins and aggregations may legitimately
# produce more rows than they consume and are exempt
_ROW_WISE_STAGES = {"thin", "match", "filter", "aggregate"}


def write_manifest(cfg: PipelineConfig, results: Sequence[StageResult]) -> Path:
    for r in results:
        if r.name in _ROW_WISE_STAGES and r.n_out > r.n_in:
            raise CliError(f"stage {r.name} produced more rows than it consumed: {r.n_out} > {r.n_in}")
    inputs = {}
    for name in ("images", "sequences", "segments", "predictions", "urban_areas", "countries", "hdi"):
        p = cfg.path(name)
        if p and p.exists():
            inputs[name] = _sha256_file(p)
    outputs = {}
    for r in results:
        for p in r.outputs:
            if p.exists():
                outputs[p.name] = _sha256_file(p)
    stages = [
        {"name": r.name, "n_in": r.n_in, "n_out": r.n_out, "seconds": round(r.seconds, 3)}
        for r in results
    ]
    deterministic = {
        "config_hash": cfg.config_hash(),
        "inputs": inputs,
        "outputs": outputs,
        "counts": [{k: s[k] for k in ("name", "n_in", "n_out")} for s in stages],
    }
    run_hash = hashlib.sha256(
        json.dumps(deterministic, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    manifest = {
        "tool_version": __version__,
        "config_hash": deterministic["config_hash"],
        "inputs": inputs,
        "stages": stages,
        "outputs": outputs,
        "run_hash": run_hash,
    }
    path = cfg.out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


# ----------------------------------------------------------------------- main


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="surface-forge",
        description="Road-surface enrichment pipeline: thin, enrich, match, filter, aggregate, stats, eval.",
    )
    parser.add_argument("command", choices=list(STAGES) + ["run"], help="pipeline stage to execute")
    parser.add_argument("--config", required=True, help="path to the pipeline config (json)")
    parser.add_argument("--workers", type=int, default=None, help="override config workers")
    parser.add_argument("--stage-dir", default=None, help="override the configured output directory")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.stage_dir:
            cfg.paths["out_dir"] = args.stage_dir
        if args.workers is not None:
            if args.workers < 1:
                raise CliError(f"workers must be >= 1: {args.workers}")
            cfg.workers = args.workers
        if args.command == "run":
            results = cmd_run(cfg, workers=args.workers)
            for r in results:
                print(f"{r.name}: in={r.n_in} out={r.n_out} ({r.seconds:.2f}s)")
        else:
            fn = {
                "harvest": cmd_harvest,
                "thin": cmd_thin,
                "enrich": cmd_enrich,
                "match": lambda c: cmd_match(c, workers=args.workers),
                "filter": cmd_filter,
                "aggregate": cmd_aggregate,
                "stats": cmd_stats,
                "eval": cmd_eval,
            }[args.command]
            r = fn(cfg)
            print(f"{r.name}: in={r.n_in} out={r.n_out} ({r.seconds:.2f}s)")
        return 0
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
