"""Tile-grid coverage and pavedness analytics, evaluation, and regression.

Coverage per tile follows the longest-sequence rule: for each road segment
the longest matched sequence (clipped to the tile) counts as covered length,
capped at the segment's own clipped length so ratios stay in [0, 1].
Pavedness is length-weighted over labeled segments. Confusion metrics treat
paved as the positive class; any zero denominator yields 0 by convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .geo import (
    Polyline,
    TileId,
    bbox_of_points,
    clip_length_to_bbox,
    polyline_midpoint,
    tile_bbox,
    tiles_for_bbox,
)
from .matching import MatchResult, RoadSegment, UNMATCHED
from .surface import SegmentLabel, SurfaceLabel

HIGHWAY_ORDER = (
    "motorway",
    "trunk",
    "primary",
    "secondary",
    "tertiary",
    "unclassified",
    "residential",
    "motorway_link",
    "trunk_link",
    "primary_link",
    "secondary_link",
    "tertiary_link",
    "living_street",
    "service",
    "pedestrian",
    "track",
    "busway",
    "footway",
    "bridleway",
    "steps",
    "cycleway",
    "path",
)


# ------------------------------------------------------------------ tiles


@dataclass(frozen=True)
class TileSegmentSlice:
    """One road segment's share of one tile, plus what matched to it."""

    osm_id: str
    clipped_length_m: float
    is_urban: bool
    label: SurfaceLabel | None = None
    matched_sequence_clipped_lengths: tuple[float, ...] = ()


@dataclass
class TileBand:
    osm_length_m: float = 0.0
    covered_length_m: float = 0.0
    coverage_ratio: float | None = None
    paved_ratio: float | None = None


@dataclass
class TileStats:
    tile: TileId
    total: TileBand = field(default_factory=TileBand)
    urban: TileBand = field(default_factory=TileBand)
    rural: TileBand = field(default_factory=TileBand)
    n_segments: int = 0

    def bands(self) -> dict[str, TileBand]:
        return {"total": self.total, "urban": self.urban, "rural": self.rural}


def _band_slices(slices: Sequence[TileSegmentSlice]) -> dict[str, list[TileSegmentSlice]]:
    return {
        "total": list(slices),
        "urban": [s for s in slices if s.is_urban],
        "rural": [s for s in slices if not s.is_urban],
    }


def tile_coverage(tile: TileId, slices: Sequence[TileSegmentSlice]) -> TileStats:
    """Coverage ratio per band; undefined (None) when a band has no road length."""
    stats = TileStats(tile=tile, n_segments=sum(1 for s in slices if s.clipped_length_m > 0))
    for name, members in _band_slices(slices).items():
        band = stats.bands()[name]
        osm_len = sum(s.clipped_length_m for s in members)
        covered = 0.0
        for s in members:
            if s.matched_sequence_clipped_lengths:
                longest = max(s.matched_sequence_clipped_lengths)
                covered += min(longest, s.clipped_length_m)
        band.osm_length_m = osm_len
        band.covered_length_m = covered
        band.coverage_ratio = covered / osm_len if osm_len > 0 else None
    return stats


def tile_pavedness(tile: TileId, slices: Sequence[TileSegmentSlice]) -> TileStats:
    """Length-weighted paved share per band over labeled segments only."""
    stats = TileStats(tile=tile, n_segments=sum(1 for s in slices if s.clipped_length_m > 0))
    for name, members in _band_slices(slices).items():
        band = stats.bands()[name]
        labeled = [s for s in members if s.label in (SurfaceLabel.PAVED, SurfaceLabel.UNPAVED)]
        labeled_len = sum(s.clipped_length_m for s in labeled)
        paved_len = sum(s.clipped_length_m for s in labeled if s.label == SurfaceLabel.PAVED)
        band.paved_ratio = paved_len / labeled_len if labeled_len > 0 else None
    return stats


def merge_tile_stats(coverage: TileStats, pavedness: TileStats) -> TileStats:
    assert coverage.tile == pavedness.tile
    merged = TileStats(tile=coverage.tile, n_segments=coverage.n_segments)
    for name in ("total", "urban", "rural"):
        src_c = coverage.bands()[name]
        merged.bands()[name].osm_length_m = src_c.osm_length_m
        merged.bands()[name].covered_length_m = src_c.covered_length_m
        merged.bands()[name].coverage_ratio = src_c.coverage_ratio
        merged.bands()[name].paved_ratio = pavedness.bands()[name].paved_ratio
    return merged


def build_tile_slices(
    segments: Sequence[RoadSegment],
    labels: Mapping[str, SegmentLabel],
    segment_sequences: Mapping[str, set[str]],
    sequence_geometries: Mapping[str, Polyline],
    segment_is_urban: Mapping[str, bool],
    zoom: int = 8,
) -> dict[TileId, list[TileSegmentSlice]]:
    """Clip segments (and their matched sequences) into zoom-``zoom`` tiles.

    ``segment_sequences`` maps osm_id to the ids of sequences with at least
    one image matched to that segment.
    """
    out: dict[TileId, list[TileSegmentSlice]] = {}
    for seg in segments:
        seg_box = bbox_of_points(seg.geometry.points)
        label = labels.get(seg.osm_id)
        seq_ids = sorted(segment_sequences.get(seg.osm_id, ()))
        urban = segment_is_urban.get(seg.osm_id, False)
        for tile in tiles_for_bbox(seg_box, zoom):
            box = tile_bbox(tile)
            clipped = clip_length_to_bbox(seg.geometry, box)
            if clipped <= 0.0:
                continue
            seq_lengths = []
            for sid in seq_ids:
                geom = sequence_geometries.get(sid)
                if geom is None:
                    continue
                length = clip_length_to_bbox(geom, box)
                if length > 0.0:
                    seq_lengths.append(length)
            out.setdefault(tile, []).append(
                TileSegmentSlice(
                    osm_id=seg.osm_id,
                    clipped_length_m=clipped,
                    is_urban=urban,
                    label=label.label if label else None,
                    matched_sequence_clipped_lengths=tuple(seq_lengths),
                )
            )
    return out


def compute_tile_stats(
    segments: Sequence[RoadSegment],
    labels: Iterable[SegmentLabel],
    match_results: Iterable[MatchResult],
    image_sequences: Mapping[str, str],
    sequence_geometries: Mapping[str, Polyline],
    segment_is_urban: Mapping[str, bool],
    zoom: int = 8,
) -> list[TileStats]:
    """End-to-end per-tile statistics, sorted by tile id."""
    label_map = {l.osm_id: l for l in labels}
    segment_sequences: dict[str, set[str]] = {}
    for result in match_results:
        if result.tier == UNMATCHED:
            continue
        sid = image_sequences.get(result.image_id)
        if sid is None:
            continue
        for a in result.assignments:
            segment_sequences.setdefault(a.osm_id, set()).add(sid)
    sliced = build_tile_slices(
        segments, label_map, segment_sequences, sequence_geometries, segment_is_urban, zoom
    )
    out = []
    for tile in sorted(sliced, key=lambda t: (t.z, t.x, t.y)):
        slices = sliced[tile]
        out.append(merge_tile_stats(tile_coverage(tile, slices), tile_pavedness(tile, slices)))
    return out


def segment_urban_flags(
    segments: Sequence[RoadSegment], urban_areas: Sequence[object]
) -> dict[str, bool]:
    """Urban identity of each segment: is its arc-length midpoint inside any urban polygon."""
    from .ingest import classify_urban

    return {
        seg.osm_id: classify_urban(polyline_midpoint(seg.geometry), urban_areas) is not None
        for seg in segments
    }


# ------------------------------------------------------------ highway classes


@dataclass
class HighwayClassRow:
    highway: str
    total_length_m: float
    covered_length_m: float
    coverage_pct: float
    paved_ratio: float | None


def breakdown_by_highway_class(
    segments: Sequence[RoadSegment],
    labels: Iterable[SegmentLabel],
    segment_coverage: Mapping[str, float] | None = None,
) -> list[HighwayClassRow]:
    """Per-highway-class length, coverage, and pavedness.

    ``segment_coverage`` maps osm_id to covered meters (longest matched
    sequence capped at segment length); without it coverage reads as zero.
    Classes absent from the data are omitted. Rows follow conventional road
    importance, unknown classes come last alphabetically.
    """
    label_map = {l.osm_id: l for l in labels}
    per_class: dict[str, dict[str, float]] = {}
    for seg in segments:
        acc = per_class.setdefault(
            seg.highway, {"length": 0.0, "covered": 0.0, "paved": 0.0, "labeled": 0.0}
        )
        acc["length"] += seg.length_m
        if segment_coverage:
            acc["covered"] += min(segment_coverage.get(seg.osm_id, 0.0), seg.length_m)
        label = label_map.get(seg.osm_id)
        if label and label.label in (SurfaceLabel.PAVED, SurfaceLabel.UNPAVED):
            acc["labeled"] += seg.length_m
            if label.label == SurfaceLabel.PAVED:
                acc["paved"] += seg.length_m
    rank = {name: i for i, name in enumerate(HIGHWAY_ORDER)}
    rows = []
    for highway in sorted(per_class, key=lambda h: (rank.get(h, len(rank)), h)):
        acc = per_class[highway]
        rows.append(
            HighwayClassRow(
                highway=highway,
                total_length_m=acc["length"],
                covered_length_m=acc["covered"],
                coverage_pct=100.0 * acc["covered"] / acc["length"] if acc["length"] else 0.0,
                paved_ratio=acc["paved"] / acc["labeled"] if acc["labeled"] > 0 else None,
            )
        )
    return rows


def segment_coverage_lengths(
    segments: Sequence[RoadSegment],
    match_results: Iterable[MatchResult],
    image_sequences: Mapping[str, str],
    sequence_geometries: Mapping[str, Polyline],
) -> dict[str, float]:
    """Covered meters per segment: longest matched sequence capped at segment length."""
    seg_len = {s.osm_id: s.length_m for s in segments}
    best: dict[str, float] = {}
    for result in match_results:
        if result.tier == UNMATCHED:
            continue
        sid = image_sequences.get(result.image_id)
        geom = sequence_geometries.get(sid) if sid else None
        if geom is None:
            continue
        for a in result.assignments:
            if a.osm_id in seg_len:
                best[a.osm_id] = max(best.get(a.osm_id, 0.0), geom.length_m)
    return {osm_id: min(length, seg_len[osm_id]) for osm_id, length in best.items()}


# ----------------------------------------------------------------- confusion


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, predicted_paved: bool, osm_paved: bool) -> None:
        if predicted_paved and osm_paved:
            self.tp += 1
        elif predicted_paved and not osm_paved:
            self.fp += 1
        elif not predicted_paved and not osm_paved:
            self.tn += 1
        else:
            self.fn += 1


def confusion_metrics(c: ConfusionCounts) -> dict[str, float]:
    """Accuracy, precision, recall, F1 and MCC with paved as positive class.

    Zero denominators yield 0 for the affected metric.
    """
    n = c.total
    if n == 0:
        raise ValueError("empty confusion matrix")
    accuracy = (c.tp + c.tn) / n
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom) if denom else 0.0
    return {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1, "mcc": mcc}


@dataclass
class EvalDiagnostics:
    n_images: int = 0
    n_unmatched: int = 0
    n_missing_prediction: int = 0
    n_unknown_surface: int = 0
    n_counted: int = 0


def evaluate_against_osm(
    images: Iterable[object],
    predictions: Iterable[object],
    match_results: Iterable[MatchResult],
    segments: Sequence[RoadSegment],
) -> tuple[dict[str, ConfusionCounts], EvalDiagnostics]:
    """Per-continent confusion counts of model label vs normalized OSM surface.

    Only images whose primary (nearest) segment carries a known normalized
    surface tag participate; the rest land in the diagnostics. ``images``
    need ``id`` and ``continent`` attributes, ``predictions`` need
    ``image_id`` and ``pred_label``.
    """
    from .surface import LABEL_PAVED, normalize_surface

    continent_of = {img.id: (img.continent or "Unknown") for img in images}
    pred_of = {p.image_id: p for p in predictions}
    surface_of = {s.osm_id: normalize_surface(s.surface_tag) for s in segments}
    counts: dict[str, ConfusionCounts] = {}
    diag = EvalDiagnostics()
    for result in match_results:
        diag.n_images += 1
        if result.tier == UNMATCHED:
            diag.n_unmatched += 1
            continue
        pred = pred_of.get(result.image_id)
        if pred is None:
            diag.n_missing_prediction += 1
            continue
        osm_surface = surface_of.get(result.primary_osm_id, SurfaceLabel.UNKNOWN)
        if osm_surface == SurfaceLabel.UNKNOWN:
            diag.n_unknown_surface += 1
            continue
        continent = continent_of.get(result.image_id, "Unknown")
        bucket = counts.setdefault(continent, ConfusionCounts())
        bucket.add(
            predicted_paved=(pred.pred_label == LABEL_PAVED),
            osm_paved=(osm_surface == SurfaceLabel.PAVED),
        )
        diag.n_counted += 1
    return counts, diag


# ---------------------------------------------------------------- regression


@dataclass(frozen=True)
class RegressionPoint:
    hdi: float
    pavedness: float
    weight: float = 1.0  # plotting channel (road length), not a fit weight


@dataclass(frozen=True)
class RegressionResult:
    pearson_r: float
    r_squared: float
    slope: float
    intercept: float
    n: int


def hdi_regression(points: Sequence[RegressionPoint], *, weighted: bool = False) -> RegressionResult:
    """Simple least-squares fit of pavedness on HDI.

    Unweighted by default; ``weighted`` switches to length-weighted moments.
    Degenerate inputs (fewer than two points, zero variance) are rejected.
    """
    if len(points) < 2:
        raise ValueError(f"need at least 2 points, got {len(points)}")
    ws = [p.weight if weighted else 1.0 for p in points]
    wsum = sum(ws)
    if wsum <= 0:
        raise ValueError("non-positive total weight")
    mean_x = sum(w * p.hdi for w, p in zip(ws, points)) / wsum
    mean_y = sum(w * p.pavedness for w, p in zip(ws, points)) / wsum
    var_x = sum(w * (p.hdi - mean_x) ** 2 for w, p in zip(ws, points)) / wsum
    var_y = sum(w * (p.pavedness - mean_y) ** 2 for w, p in zip(ws, points)) / wsum
    if var_x == 0.0 or var_y == 0.0:
        raise ValueError("degenerate variance: regression undefined")
    cov = sum(w * (p.hdi - mean_x) * (p.pavedness - mean_y) for w, p in zip(ws, points)) / wsum
    r = cov / math.sqrt(var_x * var_y)
    slope = cov / var_x
    return RegressionResult(
        pearson_r=r,
        r_squared=r * r,
        slope=slope,
        intercept=mean_y - slope * mean_x,
        n=len(points),
    )


# ------------------------------------------------------------ country report


@dataclass
class CountryRow:
    iso3: str
    continent: str
    total_paved_ratio: float | None
    urban_paved_ratio: float | None
    rural_paved_ratio: float | None
    labeled_length_km: float


def country_report(
    segments: Sequence[RoadSegment],
    labels: Iterable[SegmentLabel],
    segment_country: Mapping[str, str | None],
    segment_is_urban: Mapping[str, bool],
    countries: Sequence[object],
) -> tuple[list[CountryRow], list[CountryRow]]:
    """Length-weighted paved ratios per country and per continent.

    Country rows come back sorted ascending by total pavedness (the
    "lowest first" view); continent rows aggregate the same segments.
    Bands with no labeled length report None. ``countries`` need ``iso3``
    and ``continent`` attributes.
    """
    label_map = {l.osm_id: l for l in labels}
    continent_of = {c.iso3: c.continent for c in countries}

    def blank():
        return {"paved": 0.0, "labeled": 0.0, "u_paved": 0.0, "u_labeled": 0.0, "r_paved": 0.0, "r_labeled": 0.0}

    per_country: dict[str, dict[str, float]] = {}
    per_continent: dict[str, dict[str, float]] = {}
    for seg in segments:
        label = label_map.get(seg.osm_id)
        if not label or label.label not in (SurfaceLabel.PAVED, SurfaceLabel.UNPAVED):
            continue
        iso3 = segment_country.get(seg.osm_id)
        if iso3 is None:
            continue
        paved = label.label == SurfaceLabel.PAVED
        urban = segment_is_urban.get(seg.osm_id, False)
        for acc in (
            per_country.setdefault(iso3, blank()),
            per_continent.setdefault(continent_of.get(iso3, "Unknown"), blank()),
        ):
            acc["labeled"] += seg.length_m
            key = "u" if urban else "r"
            acc[f"{key}_labeled"] += seg.length_m
            if paved:
                acc["paved"] += seg.length_m
                acc[f"{key}_paved"] += seg.length_m

    def to_row(key: str, continent: str, acc: dict[str, float]) -> CountryRow:
        def ratio(p, l):
            return acc[p] / acc[l] if acc[l] > 0 else None

        return CountryRow(
            iso3=key,
            continent=continent,
            total_paved_ratio=ratio("paved", "labeled"),
            urban_paved_ratio=ratio("u_paved", "u_labeled"),
            rural_paved_ratio=ratio("r_paved", "r_labeled"),
            labeled_length_km=acc["labeled"] / 1000.0,
        )

    country_rows = [
        to_row(iso3, continent_of.get(iso3, "Unknown"), acc) for iso3, acc in per_country.items()
    ]
    country_rows.sort(key=lambda r: (r.total_paved_ratio if r.total_paved_ratio is not None else 2.0, r.iso3))
    continent_rows = [to_row(name, name, acc) for name, acc in sorted(per_continent.items())]
    return country_rows, continent_rows
