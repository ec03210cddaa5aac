import math
import random
from dataclasses import dataclass

import pytest

from surface_forge.geo import (
    BBox,
    EARTH_RADIUS_M,
    GeoPoint,
    METERS_PER_DEGREE,
    MERCATOR_MAX_LAT,
    Polyline,
    bbox_of_points,
    buffer_bbox,
    build_segment_index,
    clip_length_to_bbox,
    dedupe_points,
    haversine,
    interpolate_along,
    lonlat_to_tile,
    point_to_polyline_distance,
    polyline_midpoint,
    tile_bbox,
    tiles_for_bbox,
)


@dataclass
class FakeSegment:
    osm_id: str
    geometry: Polyline


def line(*coords):
    return Polyline(tuple(GeoPoint(lon, lat) for lon, lat in coords))


# ---------------------------------------------------------------- haversine


def test_haversine_identity_is_zero():
    p = GeoPoint(0.0, 0.0)
    assert haversine(p, p) == 0.0


def test_haversine_one_degree_equator():
    # closed form: one degree of arc = pi * R / 180
    expected = math.pi * EARTH_RADIUS_M / 180.0
    got = haversine(GeoPoint(0, 0), GeoPoint(1, 0))
    assert got == pytest.approx(expected, abs=1e-6)
    assert got == pytest.approx(111_194.93, abs=0.01)


def test_haversine_antipodal():
    expected = math.pi * EARTH_RADIUS_M
    got = haversine(GeoPoint(0, 0), GeoPoint(180, 0))
    assert got == pytest.approx(expected, abs=1e-6)
    assert got == pytest.approx(20_015_086.8, abs=0.1)


def test_haversine_symmetric_nonnegative():
    rng = random.Random(1)
    for _ in range(200):
        a = GeoPoint(rng.uniform(-180, 180), rng.uniform(-90, 90))
        b = GeoPoint(rng.uniform(-180, 180), rng.uniform(-90, 90))
        d1, d2 = haversine(a, b), haversine(b, a)
        assert d1 == d2
        assert d1 >= 0.0


def test_haversine_triangle_inequality():
    rng = random.Random(42)
    for _ in range(10_000):
        pts = [GeoPoint(rng.uniform(-180, 180), rng.uniform(-85, 85)) for _ in range(3)]
        ab = haversine(pts[0], pts[1])
        bc = haversine(pts[1], pts[2])
        ac = haversine(pts[0], pts[2])
        assert ac <= (ab + bc) * (1 + 1e-6)


def test_geopoint_validation():
    with pytest.raises(ValueError):
        GeoPoint(181.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 91.0)
    with pytest.raises(ValueError):
        GeoPoint(float("nan"), 0.0)


# ----------------------------------------------------------------- polyline


def test_polyline_length_matches_vertex_sum():
    pl = line((0, 0), (0.01, 0), (0.01, 0.01), (0.03, 0.02))
    expected = sum(haversine(a, b) for a, b in zip(pl.points, pl.points[1:]))
    assert pl.length_m == pytest.approx(expected, rel=1e-6)


def test_polyline_rejects_duplicates_and_short_input():
    with pytest.raises(ValueError):
        line((0, 0), (0, 0))
    with pytest.raises(ValueError):
        Polyline((GeoPoint(0, 0),))
    assert dedupe_points([GeoPoint(0, 0), GeoPoint(0, 0), GeoPoint(1, 0)]) == [
        GeoPoint(0, 0),
        GeoPoint(1, 0),
    ]


def test_point_to_polyline_on_vertex():
    pl = line((0, 0), (0.001, 0))
    d, closest = point_to_polyline_distance(GeoPoint(0, 0), pl)
    assert d == 0.0
    assert closest == GeoPoint(0, 0)


def test_point_to_polyline_perpendicular():
    # 0.0001 deg of latitude above the segment midpoint
    pl = line((-0.001, 0), (0.001, 0))
    d, closest = point_to_polyline_distance(GeoPoint(0, 0.0001), pl)
    assert d == pytest.approx(0.0001 * METERS_PER_DEGREE, rel=1e-9)
    assert d == pytest.approx(11.119, abs=0.001)
    assert closest.lat == pytest.approx(0.0, abs=1e-12)
    assert closest.lon == pytest.approx(0.0, abs=1e-12)


def test_point_to_polyline_clamps_to_endpoint():
    pl = line((0, 0), (0.001, 0))
    p = GeoPoint(0.002, 0.0)
    d, closest = point_to_polyline_distance(p, pl)
    assert d == pytest.approx(haversine(p, GeoPoint(0.001, 0)), rel=1e-12)
    assert closest == GeoPoint(0.001, 0)


def test_point_to_polyline_beats_dense_sampling():
    rng = random.Random(7)
    for _ in range(20):
        lon0 = rng.uniform(-10, 10)
        lat0 = rng.uniform(-50, 50)
        coords = [(lon0, lat0)]
        for _ in range(4):
            lon0 += rng.uniform(-0.002, 0.002)
            lat0 += rng.uniform(-0.002, 0.002)
            coords.append((lon0, lat0))
        pl = line(*dict.fromkeys(coords))  # drop accidental dups, keep order
        p = GeoPoint(coords[0][0] + rng.uniform(-0.003, 0.003), coords[0][1] + rng.uniform(-0.003, 0.003))
        d, _ = point_to_polyline_distance(p, pl)
        # sample along each segment at ~1 m steps; true min can't be beaten by more than 1 cm
        for a, b in pl.segments():
            steps = max(2, int(haversine(a, b)))
            for i in range(steps + 1):
                t = i / steps
                sample = GeoPoint(a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat))
                assert d <= haversine(p, sample) + 0.01


def test_interpolate_and_midpoint():
    pl = line((0, 0), (0.002, 0))
    mid = polyline_midpoint(pl)
    assert mid.lon == pytest.approx(0.001, abs=1e-9)
    assert interpolate_along(pl, 0.0) == pl.points[0]
    assert interpolate_along(pl, 1.0) == pl.points[-1]


# -------------------------------------------------------------------- tiles


def test_tile_of_origin():
    t = lonlat_to_tile(GeoPoint(0, 0), 8)
    assert (t.z, t.x, t.y) == (8, 128, 128)


def test_tile_northwest_corner():
    t = lonlat_to_tile(GeoPoint(-180 + 1e-9, 85.05), 8)
    assert (t.z, t.x, t.y) == (8, 0, 0)


def test_zoom8_tile_is_roughly_150km_wide():
    # Web-Mercator equatorial circumference over 2^8 tiles
    width = 40_075_016.686 / 256
    assert width == pytest.approx(156_543, abs=1.0)
    assert 140_000 < width < 170_000
    # and the same statement measured on our sphere via the tile bbox
    box = tile_bbox(lonlat_to_tile(GeoPoint(0, 0), 8))
    sphere_width = haversine(GeoPoint(box.min_lon, 0), GeoPoint(box.max_lon, 0))
    assert 140_000 < sphere_width < 170_000


def test_tile_rejects_out_of_mercator_latitude():
    with pytest.raises(ValueError):
        lonlat_to_tile(GeoPoint(0, 86.0), 8)
    with pytest.raises(ValueError):
        lonlat_to_tile(GeoPoint(0, -89.0), 4)


def test_tile_bbox_of_origin_tile():
    box = tile_bbox(lonlat_to_tile(GeoPoint(0.5, -0.5), 8))
    assert box.min_lon == pytest.approx(0.0)
    assert box.max_lon == pytest.approx(1.40625)
    assert box.max_lat == pytest.approx(0.0, abs=1e-12)
    assert box.min_lat < 0


def test_tile_bbox_z1_western_north():
    from surface_forge.geo import TileId

    box = tile_bbox(TileId(1, 0, 0))
    assert box.min_lon == -180.0
    assert box.max_lon == 0.0
    assert box.min_lat == pytest.approx(0.0, abs=1e-12)
    assert box.max_lat == pytest.approx(MERCATOR_MAX_LAT, abs=1e-9)


def test_tile_bbox_roundtrip_random():
    from surface_forge.geo import TileId

    rng = random.Random(99)
    for _ in range(1000):
        z = rng.randint(1, 14)
        n = 1 << z
        t = TileId(z, rng.randrange(n), rng.randrange(n))
        center = tile_bbox(t).center()
        assert lonlat_to_tile(center, z) == t


def test_tile_partition_is_exact():
    # adjacent tiles share exactly one edge; interior points map to one tile
    from surface_forge.geo import TileId

    a = tile_bbox(TileId(8, 100, 100))
    b = tile_bbox(TileId(8, 101, 100))
    c = tile_bbox(TileId(8, 100, 101))
    assert a.max_lon == b.min_lon
    assert a.min_lat == c.max_lat
    rng = random.Random(3)
    for _ in range(500):
        p = GeoPoint(rng.uniform(-179.99, 179.99), rng.uniform(-84.9, 84.9))
        t = lonlat_to_tile(p, 8)
        assert tile_bbox(t).contains(p)


def test_tile_world_edges_clamp_into_grid():
    from surface_forge.geo import TileId

    n = 1 << 8
    east = lonlat_to_tile(GeoPoint(180.0, 0.0001), 8)
    assert east.x == n - 1
    south = lonlat_to_tile(GeoPoint(0.0, -MERCATOR_MAX_LAT), 8)
    assert south.y == n - 1
    north = lonlat_to_tile(GeoPoint(0.0, MERCATOR_MAX_LAT), 8)
    assert north.y == 0
    assert lonlat_to_tile(GeoPoint(-180.0, 0.0001), 8).x == 0


def test_tiles_for_bbox_covers_queries():
    box = BBox(9.0, 49.0, 11.0, 51.0)
    tiles = tiles_for_bbox(box, 8)
    assert lonlat_to_tile(GeoPoint(10.0, 50.0), 8) in tiles
    for t in tiles:
        tb = tile_bbox(t)
        assert tb.max_lon >= box.min_lon and tb.min_lon <= box.max_lon
        assert tb.max_lat >= box.min_lat and tb.min_lat <= box.max_lat


# -------------------------------------------------------------- buffer_bbox


def test_buffer_zero_is_identity():
    b = BBox(1.0, 2.0, 3.0, 4.0)
    assert buffer_bbox(b, 0.0) == b


def test_buffer_30m_at_equator():
    b = BBox(0.0, 0.0, 0.0, 0.0)
    out = buffer_bbox(b, 30.0)
    half = 30.0 / METERS_PER_DEGREE
    assert out.max_lon == pytest.approx(half, rel=1e-12)
    assert out.max_lat == pytest.approx(half, rel=1e-12)
    assert half == pytest.approx(2.698e-4, abs=1e-7)


def test_buffer_lon_doubles_at_60_degrees():
    eq = buffer_bbox(BBox(0, 0, 0, 0), 30.0)
    north = buffer_bbox(BBox(0, 60, 0, 60), 30.0)
    lon_eq = eq.max_lon - eq.min_lon
    lon_60 = north.max_lon - north.min_lon
    assert lon_60 == pytest.approx(2 * lon_eq, rel=0.01)
    lat_eq = eq.max_lat - eq.min_lat
    lat_60 = north.max_lat - north.min_lat
    assert lat_60 == pytest.approx(lat_eq, rel=1e-12)


def test_buffer_rejects_near_pole():
    with pytest.raises(ValueError):
        buffer_bbox(BBox(0, 89.95, 0, 89.95), 30.0)
    with pytest.raises(ValueError):
        buffer_bbox(BBox(0, 0, 1, 1), -1.0)


# ------------------------------------------------------------ segment index


def random_segments(rng, n, lon0=8.0, lat0=49.0, spread=0.5):
    segs = []
    for i in range(n):
        lon = lon0 + rng.uniform(-spread, spread)
        lat = lat0 + rng.uniform(-spread, spread)
        pts = [(lon, lat)]
        for _ in range(rng.randint(1, 3)):
            lon += rng.uniform(-0.01, 0.01) or 0.001
            lat += rng.uniform(-0.01, 0.01)
            pts.append((lon, lat))
        segs.append(FakeSegment(f"w{i}", line(*dict.fromkeys(pts))))
    return segs


def test_index_empty_and_miss():
    idx = build_segment_index([])
    assert idx.query(GeoPoint(0, 0)) == []
    segs = random_segments(random.Random(5), 10)
    idx = build_segment_index(segs)
    assert idx.query(GeoPoint(-100.0, -50.0)) == []


def test_index_point_on_segment_is_found():
    seg = FakeSegment("hit", line((10.0, 50.0), (10.01, 50.0)))
    idx = build_segment_index([seg], buffer_m=30.0)
    found = idx.query(GeoPoint(10.005, 50.0))
    assert [s.osm_id for s in found] == ["hit"]


def test_index_matches_linear_scan():
    rng = random.Random(11)
    segs = random_segments(rng, 300)
    buffered = [buffer_bbox(bbox_of_points(s.geometry.points), 30.0) for s in segs]
    idx = build_segment_index(segs, buffer_m=30.0)
    for _ in range(500):
        p = GeoPoint(8.0 + rng.uniform(-0.6, 0.6), 49.0 + rng.uniform(-0.6, 0.6))
        got = {s.osm_id for s in idx.query(p)}
        want = {s.osm_id for s, b in zip(segs, buffered) if b.contains(p)}
        assert got == want


def test_index_single_and_large():
    rng = random.Random(13)
    segs = random_segments(rng, 1)
    idx = build_segment_index(segs)
    assert len(idx) == 1
    segs = random_segments(rng, 1500)
    idx = build_segment_index(segs)
    assert len(idx) == 1500
    p = segs[700].geometry.points[0]
    assert any(s.osm_id == "w700" for s in idx.query(p))


# ----------------------------------------------------------------- clipping


def test_clip_length_fully_inside_and_outside():
    pl = line((10.0, 50.0), (10.01, 50.0))
    inside = BBox(9.0, 49.0, 11.0, 51.0)
    outside = BBox(20.0, 20.0, 21.0, 21.0)
    assert clip_length_to_bbox(pl, inside) == pytest.approx(pl.length_m, rel=1e-9)
    assert clip_length_to_bbox(pl, outside) == 0.0


def test_clip_length_half_crossing():
    # segment runs 0.02 deg along the equator, box covers the first half
    pl = line((0.0, 0.0), (0.02, 0.0))
    box = BBox(0.0, -1.0, 0.01, 1.0)
    assert clip_length_to_bbox(pl, box) == pytest.approx(pl.length_m / 2, rel=1e-6)


def test_clip_length_additive_over_tile_partition():
    # no length is lost or double-counted at tile boundaries; the only
    # discrepancy is the (tiny) straight-in-lonlat vs geodesic difference
    rng = random.Random(41)
    for _ in range(60):
        lon, lat = rng.uniform(-30, 30), rng.uniform(-55, 55)
        coords = [(lon, lat)]
        for _ in range(rng.randint(1, 5)):
            lon += rng.uniform(-1.5, 1.5)
            lat += rng.uniform(-1.5, 1.5)
            coords.append((lon, lat))
        coords = list(dict.fromkeys(coords))
        if len(coords) < 2:
            continue
        pl = line(*coords)
        total = sum(
            clip_length_to_bbox(pl, tile_bbox(t))
            for t in tiles_for_bbox(bbox_of_points(pl.points), 8)
        )
        assert total == pytest.approx(pl.length_m, rel=1e-4)
