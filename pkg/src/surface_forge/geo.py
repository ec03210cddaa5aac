"""Geodesy, polyline geometry, slippy-map tile math, and a static spatial index.

Distances are great-circle meters on a sphere of radius 6,371,000 m. Point to
segment projection happens in a local equirectangular plane centered on the
query point, which is metrically indistinguishable from a geodesic solution at
the sub-100 m scales this library cares about.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

EARTH_RADIUS_M = 6_371_000.0
# meters spanned by one degree of latitude (and of longitude at the equator)
METERS_PER_DEGREE = math.pi * EARTH_RADIUS_M / 180.0  # 111,194.926...
# largest latitude representable in Web-Mercator: atan(sinh(pi))
MERCATOR_MAX_LAT = math.degrees(math.atan(math.sinh(math.pi)))


@dataclass(frozen=True)
class GeoPoint:
    """A WGS-ish lon/lat position in degrees."""

    lon: float
    lat: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate: ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    lon1, lat1, lon2, lat2 = map(math.radians, (a.lon, a.lat, b.lon, b.lat))
    s = (
        math.sin((lat2 - lat1) / 2.0) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


@dataclass(frozen=True)
class Polyline:
    """An ordered chain of at least two points with a cached length.

    Consecutive duplicate points are rejected; use ``dedupe_points`` first if
    the source data may contain them.
    """

    points: tuple[GeoPoint, ...]
    length_m: float = field(init=False)

    def __post_init__(self) -> None:
        pts = tuple(self.points)
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        total = 0.0
        for prev, cur in zip(pts, pts[1:]):
            if prev == cur:
                raise ValueError("consecutive duplicate points in polyline")
            total += haversine(prev, cur)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "length_m", total)

    def segments(self) -> Iterator[tuple[GeoPoint, GeoPoint]]:
        return zip(self.points, self.points[1:])


def dedupe_points(points: Iterable[GeoPoint]) -> list[GeoPoint]:
    """Drop consecutive duplicates, preserving order."""
    out: list[GeoPoint] = []
    for p in points:
        if not out or out[-1] != p:
            out.append(p)
    return out


def point_to_polyline_distance(p: GeoPoint, line: Polyline) -> tuple[float, GeoPoint]:
    """Shortest distance from ``p`` to ``line`` and the closest point on it.

    Each segment is projected into an equirectangular plane centered at ``p``,
    the perpendicular foot is clamped to the segment, and the winning
    candidate is re-measured with the haversine formula.
    """
    cos_lat = math.cos(math.radians(p.lat))
    best_d = math.inf
    best_pt = line.points[0]
    for a, b in line.segments():
        ax = math.radians(a.lon - p.lon) * cos_lat
        ay = math.radians(a.lat - p.lat)
        bx = math.radians(b.lon - p.lon) * cos_lat
        by = math.radians(b.lat - p.lat)
        dx, dy = bx - ax, by - ay
        seg_len2 = dx * dx + dy * dy
        if seg_len2 > 0.0:
            t = -(ax * dx + ay * dy) / seg_len2
            t = min(1.0, max(0.0, t))
        else:
            t = 0.0
        closest = GeoPoint(a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat))
        d = haversine(p, closest)
        if d < best_d:
            best_d = d
            best_pt = closest
    return best_d, best_pt


@dataclass(frozen=True)
class TileId:
    """XYZ slippy-map tile address (y = 0 at the north edge)."""

    z: int
    x: int
    y: int

    def __post_init__(self) -> None:
        if self.z < 0:
            raise ValueError(f"negative zoom: {self.z}")
        n = 1 << self.z
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile index out of range for z={self.z}: ({self.x}, {self.y})")

    def key(self) -> str:
        return f"{self.z}/{self.x}/{self.y}"

    @classmethod
    def from_key(cls, key: str) -> "TileId":
        z, x, y = (int(part) for part in key.split("/"))
        return cls(z, x, y)


def lonlat_to_tile(p: GeoPoint, z: int) -> TileId:
    """Map a point to its XYZ tile at zoom ``z``.

    Latitudes beyond the Web-Mercator limit (~85.05 degrees) are rejected.
    Points exactly on the east/south world edge land in the last tile.
    """
    if abs(p.lat) > MERCATOR_MAX_LAT:
        raise ValueError(f"latitude {p.lat} outside Web-Mercator range (+/-{MERCATOR_MAX_LAT:.4f})")
    n = 1 << z
    x = int((p.lon + 180.0) / 360.0 * n)
    lat_rad = math.radians(p.lat)
    y = int((1.0 - math.log(math.tan(lat_rad) + 1.0 / math.cos(lat_rad)) / math.pi) / 2.0 * n)
    return TileId(z, min(x, n - 1), min(max(y, 0), n - 1))


@dataclass(frozen=True)
class BBox:
    min_lon: float
    min_lat: float
    max_lon: float
    max_lat: float

    def __post_init__(self) -> None:
        if self.min_lon > self.max_lon or self.min_lat > self.max_lat:
            raise ValueError(f"inverted bbox: {self}")

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lon <= p.lon <= self.max_lon and self.min_lat <= p.lat <= self.max_lat

    def center(self) -> GeoPoint:
        return GeoPoint((self.min_lon + self.max_lon) / 2.0, (self.min_lat + self.max_lat) / 2.0)

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.min_lon, other.min_lon),
            min(self.min_lat, other.min_lat),
            max(self.max_lon, other.max_lon),
            max(self.max_lat, other.max_lat),
        )


def _inv_mercator_lat(y_norm: float) -> float:
    """Latitude of a normalized Mercator row coordinate (0 = north edge)."""
    return math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y_norm))))


def tile_bbox(t: TileId) -> BBox:
    """Lon/lat bounds of a tile; adjacent tiles share exactly one edge."""
    n = 1 << t.z
    min_lon = t.x / n * 360.0 - 180.0
    max_lon = (t.x + 1) / n * 360.0 - 180.0
    max_lat = _inv_mercator_lat(t.y / n)
    min_lat = _inv_mercator_lat((t.y + 1) / n)
    return BBox(min_lon, min_lat, max_lon, max_lat)


def tiles_for_bbox(b: BBox, z: int) -> list[TileId]:
    """All tiles at zoom ``z`` whose bbox intersects ``b`` (lat clamped to Mercator range)."""
    lat_lo = max(b.min_lat, -MERCATOR_MAX_LAT)
    lat_hi = min(b.max_lat, MERCATOR_MAX_LAT)
    if lat_lo > lat_hi:
        return []
    sw = lonlat_to_tile(GeoPoint(b.min_lon, lat_lo), z)
    ne = lonlat_to_tile(GeoPoint(b.max_lon, lat_hi), z)
    return [
        TileId(z, x, y)
        for x in range(sw.x, ne.x + 1)
        for y in range(ne.y, sw.y + 1)
    ]


def buffer_bbox(b: BBox, meters: float) -> BBox:
    """Grow a bbox outward by ``meters`` on every side.

    The meter-to-degree conversion uses the bbox center latitude, so this is
    not usable close to the poles (center latitude >= 89.9 degrees raises).
    """
    if meters < 0:
        raise ValueError("buffer must be non-negative")
    lat_c = (b.min_lat + b.max_lat) / 2.0
    if abs(lat_c) >= 89.9:
        raise ValueError(f"bbox center latitude {lat_c} too close to pole for a metric buffer")
    d_lat = meters / METERS_PER_DEGREE
    d_lon = meters / (METERS_PER_DEGREE * math.cos(math.radians(lat_c)))
    return BBox(b.min_lon - d_lon, b.min_lat - d_lat, b.max_lon + d_lon, b.max_lat + d_lat)


def bbox_of_points(points: Sequence[GeoPoint]) -> BBox:
    if not points:
        raise ValueError("empty point list")
    return BBox(
        min(p.lon for p in points),
        min(p.lat for p in points),
        max(p.lon for p in points),
        max(p.lat for p in points),
    )


def interpolate_along(line: Polyline, fraction: float) -> GeoPoint:
    """Point at ``fraction`` (0..1) of the polyline's arc length."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction out of range: {fraction}")
    target = fraction * line.length_m
    walked = 0.0
    for a, b in line.segments():
        step = haversine(a, b)
        if walked + step >= target and step > 0.0:
            t = (target - walked) / step
            return GeoPoint(a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat))
        walked += step
    return line.points[-1]


def polyline_midpoint(line: Polyline) -> GeoPoint:
    return interpolate_along(line, 0.5)


def clip_length_to_bbox(line: Polyline, b: BBox) -> float:
    """Length in meters of the parts of ``line`` that fall inside ``b``.

    Segments are treated as straight in lon/lat space (Liang-Barsky clipping);
    clipped pieces are re-measured with the haversine formula.
    """
    total = 0.0
    for a, p2 in line.segments():
        span = _clip_segment(a, p2, b)
        if span is None:
            continue
        t0, t1 = span
        if t1 <= t0:
            continue
        pa = GeoPoint(a.lon + t0 * (p2.lon - a.lon), a.lat + t0 * (p2.lat - a.lat))
        pb = GeoPoint(a.lon + t1 * (p2.lon - a.lon), a.lat + t1 * (p2.lat - a.lat))
        total += haversine(pa, pb)
    return total


def _clip_segment(a: GeoPoint, b: GeoPoint, box: BBox) -> tuple[float, float] | None:
    """Liang-Barsky: parametric interval of segment a->b inside box, or None."""
    dx = b.lon - a.lon
    dy = b.lat - a.lat
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, a.lon - box.min_lon),
        (dx, box.max_lon - a.lon),
        (-dy, a.lat - box.min_lat),
        (dy, box.max_lat - a.lat),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return t0, t1


class SegmentIndex:
    """Static bulk-loaded bounding-box tree over buffered segment bboxes.

    Built once, then read-only: queries return exactly the payloads whose
    buffered bbox contains the query point, identical to a linear scan.
    """

    _LEAF_CAPACITY = 16

    def __init__(self, boxes: Sequence[BBox], payloads: Sequence[object]):
        if len(boxes) != len(payloads):
            raise ValueError("boxes and payloads must align")
        self._boxes = list(boxes)
        self._payloads = list(payloads)
        self._root = self._bulk_load(list(range(len(boxes)))) if boxes else None

    # ---- construction -------------------------------------------------

    def _bulk_load(self, idxs: list[int]):
        # Sort-Tile-Recursive packing: slice by center lon, pack runs by center lat.
        leaves = self._pack(idxs, self._leaf_node)
        while len(leaves) > 1:
            leaves = self._pack(list(range(len(leaves))), self._inner_node, leaves)
        return leaves[0]

    def _leaf_node(self, member_idxs: list[int], _source=None):
        box = self._boxes[member_idxs[0]]
        for i in member_idxs[1:]:
            box = box.union(self._boxes[i])
        return (box, None, member_idxs)

    def _inner_node(self, member_idxs: list[int], source):
        children = [source[i] for i in member_idxs]
        box = children[0][0]
        for child in children[1:]:
            box = box.union(child[0])
        return (box, children, None)

    def _pack(self, idxs, make_node, source=None):
        def center(i):
            box = self._boxes[i] if source is None else source[i][0]
            return ((box.min_lon + box.max_lon) / 2.0, (box.min_lat + box.max_lat) / 2.0)

        cap = self._LEAF_CAPACITY
        n_groups = math.ceil(len(idxs) / cap)
        n_slices = math.ceil(math.sqrt(n_groups))
        by_lon = sorted(idxs, key=lambda i: (center(i)[0], i))
        slice_size = n_slices * cap
        nodes = []
        for s in range(0, len(by_lon), slice_size):
            vertical = sorted(by_lon[s : s + slice_size], key=lambda i: (center(i)[1], i))
            for g in range(0, len(vertical), cap):
                nodes.append(make_node(vertical[g : g + cap], source))
        return nodes

    # ---- queries -------------------------------------------------------

    def query(self, p: GeoPoint) -> list[object]:
        """Payloads whose buffered bbox contains ``p``, in insertion order."""
        if self._root is None:
            return []
        hits: list[int] = []
        stack = [self._root]
        while stack:
            box, children, members = stack.pop()
            if not box.contains(p):
                continue
            if children is not None:
                stack.extend(children)
            else:
                hits.extend(i for i in members if self._boxes[i].contains(p))
        hits.sort()
        return [self._payloads[i] for i in hits]

    def __len__(self) -> int:
        return len(self._payloads)


def build_segment_index(segments: Sequence[object], buffer_m: float = 30.0) -> SegmentIndex:
    """Index road segments by their bbox grown by ``buffer_m`` meters.

    ``segments`` only need a ``geometry`` attribute holding a Polyline.
    """
    if not segments:
        return SegmentIndex([], [])
    boxes = [buffer_bbox(bbox_of_points(s.geometry.points), buffer_m) for s in segments]
    return SegmentIndex(boxes, list(segments))
