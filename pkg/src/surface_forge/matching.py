"""Assign image points to nearby road segments with a tiered distance rule.

A point is matched to the segments within the innermost of three radii
(10, 20, 30 m by default) that contains at least one candidate. Candidates
come from a bbox test against segment bounds buffered by 30 m, then exact
point-to-polyline distances decide. Each extra assignment carries a
normalized confidence contrast against the nearest segment:

    percent_diff = (d_current - d_nearest) / (d_current + d_nearest)

which is 0 for the nearest segment itself and approaches 1 for far ones.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

from .geo import GeoPoint, Polyline, SegmentIndex, build_segment_index, point_to_polyline_distance

DEFAULT_RADII_M = (10.0, 20.0, 30.0)

TIER_NAMES = {10.0: "T10", 20.0: "T20", 30.0: "T30"}
UNMATCHED = "unmatched"


@dataclass(frozen=True)
class RoadSegment:
    """One OSM way: id, highway class, optional raw surface tag, geometry."""

    osm_id: str
    highway: str
    geometry: Polyline
    surface_tag: str | None = None
    changeset_timestamp: int | None = None

    @property
    def length_m(self) -> float:
        return self.geometry.length_m


@dataclass(frozen=True)
class Assignment:
    osm_id: str
    distance_m: float
    abs_diff_m: float
    percent_diff: float
    closest_point: GeoPoint


@dataclass(frozen=True)
class MatchResult:
    image_id: str
    tier: str
    assignments: tuple[Assignment, ...] = ()

    @property
    def primary_osm_id(self) -> str | None:
        return self.assignments[0].osm_id if self.assignments else None


def percent_diff(d_current: float, d_nearest: float) -> float:
    """Normalized distance contrast of a candidate against the nearest segment.

    Zero when the candidate is the nearest segment (or both distances are
    zero, e.g. a point sitting on two crossing ways); strictly below 1 for
    any positive nearest distance.
    """
    assert d_current >= d_nearest >= 0.0, f"d_current={d_current} < d_nearest={d_nearest}"
    total = d_current + d_nearest
    if total == 0.0:
        return 0.0
    return (d_current - d_nearest) / total


def _tier_for(distance: float, radii: Sequence[float]) -> str | None:
    for r in radii:
        if distance <= r:
            return TIER_NAMES.get(r, f"T{r:g}")
    return None


def match_point(
    p: GeoPoint,
    index: SegmentIndex,
    *,
    image_id: str = "",
    radii: Sequence[float] = DEFAULT_RADII_M,
) -> MatchResult:
    """Match one point against an index built over 30 m buffered segment bboxes.

    The tier is set by the nearest candidate; every candidate inside the tier
    radius becomes an assignment, sorted by distance (ties by osm_id). Points
    with no candidate inside the outermost radius come back unmatched.
    """
    max_r = radii[-1]
    measured: list[tuple[float, RoadSegment, GeoPoint]] = []
    for seg in index.query(p):
        d, closest = point_to_polyline_distance(p, seg.geometry)
        if d <= max_r:
            measured.append((d, seg, closest))
    if not measured:
        return MatchResult(image_id=image_id, tier=UNMATCHED)
    measured.sort(key=lambda item: (item[0], item[1].osm_id))
    d_nearest = measured[0][0]
    tier_radius = next(r for r in radii if d_nearest <= r)
    assignments = tuple(
        Assignment(
            osm_id=seg.osm_id,
            distance_m=d,
            abs_diff_m=d - d_nearest,
            percent_diff=percent_diff(d, d_nearest),
            closest_point=closest,
        )
        for d, seg, closest in measured
        if d <= tier_radius
    )
    return MatchResult(image_id=image_id, tier=_tier_for(d_nearest, radii), assignments=assignments)


# ---------------------------------------------------------------- match_all

_WORKER_INDEX: SegmentIndex | None = None
_WORKER_RADII: Sequence[float] = DEFAULT_RADII_M


def _init_worker(index: SegmentIndex, radii: Sequence[float]) -> None:
    global _WORKER_INDEX, _WORKER_RADII
    _WORKER_INDEX = index
    _WORKER_RADII = radii


def _match_chunk(chunk: list[tuple[str, float, float]]) -> list[MatchResult]:
    assert _WORKER_INDEX is not None
    return [
        match_point(GeoPoint(lon, lat), _WORKER_INDEX, image_id=image_id, radii=_WORKER_RADII)
        for image_id, lon, lat in chunk
    ]


def match_all(
    images: Iterable[object],
    segments: Sequence[RoadSegment],
    *,
    radii: Sequence[float] = DEFAULT_RADII_M,
    buffer_m: float = 30.0,
    workers: int = 1,
) -> list[MatchResult]:
    """Match every image point; output is sorted by image id and independent
    of the worker count.

    ``images`` only need ``id`` and ``point`` attributes.
    """
    if list(radii) != sorted(radii) or any(r <= 0 for r in radii):
        raise ValueError(f"radii must be positive and increasing: {radii}")
    index = build_segment_index(segments, buffer_m=buffer_m) if segments else None
    rows = [(img.id, img.point.lon, img.point.lat) for img in images]
    if index is None:
        results = [MatchResult(image_id=i, tier=UNMATCHED) for i, _, _ in rows]
    elif workers <= 1 or len(rows) < 2 * workers:
        _init_worker(index, radii)
        results = _match_chunk(rows)
    else:
        chunk_size = max(1, (len(rows) + workers - 1) // workers)
        chunks = [rows[i : i + chunk_size] for i in range(0, len(rows), chunk_size)]
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(index, radii)
        ) as pool:
            results = [r for part in pool.map(_match_chunk, chunks) for r in part]
    results.sort(key=lambda m: m.image_id)
    return results


def tier_summary(results: Iterable[MatchResult]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for m in results:
        counts[m.tier] = counts.get(m.tier, 0) + 1
    return counts
