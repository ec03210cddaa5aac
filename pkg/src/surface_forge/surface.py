"""Surface tag normalization, the non-road image filter, and label aggregation.

Per-image paved/unpaved predictions (and the zero-shot/segmentation scores
used to weed out non-road photos) arrive precomputed; this module turns them
into one paved/unpaved attribute per road segment via a distance-weighted
vote: weight = 1 - d/30 with a floor of 1/30 so a point at the full 30 m
match radius still counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .matching import MatchResult, RoadSegment, UNMATCHED


class SurfaceLabel(Enum):
    PAVED = "paved"
    UNPAVED = "unpaved"
    UNKNOWN = "unknown"


PAVED_TOKENS = frozenset(
    {
        "paved",
        "asphalt",
        "chipseal",
        "concrete",
        "concrete:lanes",
        "concrete:plates",
        "paving_stones",
        "sett",
        "unhewn_cobblestone",
        "cobblestone",
        "bricks",
        "metal",
        "wood",
    }
)

UNPAVED_TOKENS = frozenset(
    {
        "unpaved",
        "compacted",
        "fine_gravel",
        "gravel",
        "shells",
        "rock",
        "pebblestone",
        "ground",
        "dirt",
        "earth",
        "grass",
        "grass_paver",
        "metal_grid",
        "mud",
        "sand",
        "woodchips",
        "snow",
        "ice",
        "salt",
    }
)

assert not (PAVED_TOKENS & UNPAVED_TOKENS), "surface token lists must be disjoint"

ROAD_CLASS = "a photo of a road"
NO_ROAD_CLASS = "a photo with no road in it"

LABEL_PAVED = 0
LABEL_UNPAVED = 1


def normalize_surface(tag: str | None) -> SurfaceLabel:
    """Map a raw OSM surface tag onto paved/unpaved/unknown.

    Matching is exact-token after trimming and lowercasing; anything outside
    the two known lists (including empty or missing) is unknown.
    """
    if tag is None:
        return SurfaceLabel.UNKNOWN
    token = tag.strip().lower()
    if token in PAVED_TOKENS:
        return SurfaceLabel.PAVED
    if token in UNPAVED_TOKENS:
        return SurfaceLabel.UNPAVED
    return SurfaceLabel.UNKNOWN


@dataclass(frozen=True)
class PredictionRecord:
    """Per-image model outputs: surface vote plus the non-road filter inputs."""

    image_id: str
    pred_label: int  # 0 paved, 1 unpaved
    pred_class: str
    pred_score: float
    zs_pred_class: str
    zs_pred_score: float
    road_pixel_percentage: float

    def __post_init__(self) -> None:
        if self.pred_label not in (LABEL_PAVED, LABEL_UNPAVED):
            raise ValueError(f"pred_label must be 0 or 1: {self.pred_label}")
        for name in ("pred_score", "zs_pred_score", "road_pixel_percentage"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} out of [0,1]: {v}")
        if self.pred_class in ("paved", "unpaved"):
            expected = LABEL_PAVED if self.pred_class == "paved" else LABEL_UNPAVED
            if self.pred_label != expected:
                raise ValueError(
                    f"pred_label {self.pred_label} inconsistent with pred_class {self.pred_class!r}"
                )


def combination_filter(
    r: PredictionRecord,
    *,
    road_pixel_threshold: float = 0.10,
    no_road_prob_threshold: float = 0.90,
) -> bool:
    """True to keep the image, False to drop it as a non-road photo.

    Dropped when the zero-shot class is "no road" and either the road pixel
    share is below 10% (any zero-shot score) or the zero-shot score itself
    exceeds 90%.
    """
    if r.zs_pred_class == NO_ROAD_CLASS:
        if r.road_pixel_percentage < road_pixel_threshold:
            return False
        if r.zs_pred_score > no_road_prob_threshold:
            return False
    return True


@dataclass(frozen=True)
class SegmentObservation:
    """One matched image's contribution to a segment."""

    distance_m: float
    pred_label: int
    pred_score: float = 1.0


@dataclass(frozen=True)
class SegmentLabel:
    osm_id: str
    label: SurfaceLabel
    weighted_score: float  # weighted fraction paved, 0 when unknown
    n_points: int
    weights_sum: float


def aggregate_segment(
    osm_id: str,
    observations: Sequence[SegmentObservation],
    *,
    max_distance_m: float = 30.0,
    score_weighted: bool = False,
) -> SegmentLabel:
    """Distance-weighted paved/unpaved vote for one segment.

    Ties (weighted score exactly 0.5) resolve to unpaved; an empty
    observation list yields unknown. ``score_weighted`` additionally scales
    each weight by the model confidence (off by default).
    """
    if not observations:
        return SegmentLabel(osm_id, SurfaceLabel.UNKNOWN, 0.0, 0, 0.0)
    floor = 1.0 / max_distance_m
    total = 0.0
    paved = 0.0
    # canonical accumulation order so the float result ignores input ordering
    ordered = sorted(observations, key=lambda o: (o.distance_m, o.pred_label, o.pred_score))
    for obs in ordered:
        w = max(1.0 - obs.distance_m / max_distance_m, floor)
        if score_weighted:
            w *= obs.pred_score
        total += w
        if obs.pred_label == LABEL_PAVED:
            paved += w
    score = paved / total
    label = SurfaceLabel.PAVED if score > 0.5 else SurfaceLabel.UNPAVED
    return SegmentLabel(osm_id, label, score, len(observations), total)


@dataclass
class LabelDiagnostics:
    n_results: int = 0
    n_unmatched: int = 0
    n_filtered: int = 0
    n_missing_prediction: int = 0
    n_contributions: int = 0


def label_all_segments(
    match_results: Iterable[MatchResult],
    predictions: Iterable[PredictionRecord],
    segments: Sequence[RoadSegment] | None = None,
    *,
    max_distance_m: float = 30.0,
    road_pixel_threshold: float = 0.10,
    no_road_prob_threshold: float = 0.90,
    score_weighted: bool = False,
) -> tuple[list[SegmentLabel], LabelDiagnostics]:
    """Aggregate every matched, filter-surviving image into per-segment labels.

    Images assigned to several segments contribute fully to each one.
    Segments that end up with no surviving image are absent from the output
    rather than emitted as unknown. Output is sorted by osm_id.
    """
    preds: Mapping[str, PredictionRecord] = {p.image_id: p for p in predictions}
    known_ids = {s.osm_id for s in segments} if segments is not None else None
    diag = LabelDiagnostics()
    per_segment: dict[str, list[SegmentObservation]] = {}
    for result in match_results:
        diag.n_results += 1
        if result.tier == UNMATCHED:
            diag.n_unmatched += 1
            continue
        pred = preds.get(result.image_id)
        if pred is None:
            diag.n_missing_prediction += 1
            continue
        if not combination_filter(
            pred,
            road_pixel_threshold=road_pixel_threshold,
            no_road_prob_threshold=no_road_prob_threshold,
        ):
            diag.n_filtered += 1
            continue
        for a in result.assignments:
            if known_ids is not None and a.osm_id not in known_ids:
                continue
            per_segment.setdefault(a.osm_id, []).append(
                SegmentObservation(a.distance_m, pred.pred_label, pred.pred_score)
            )
            diag.n_contributions += 1
    labels = [
        aggregate_segment(
            osm_id,
            per_segment[osm_id],
            max_distance_m=max_distance_m,
            score_weighted=score_weighted,
        )
        for osm_id in sorted(per_segment)
    ]
    return labels, diag
