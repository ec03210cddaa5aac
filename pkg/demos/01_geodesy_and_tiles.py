"""
Geodesy and tile math
=====================

The numeric substrate: great-circle distances, point-to-road distances,
the zoom-8 tile grid, and metric bbox buffering.
"""

from surface_forge import (
    GeoPoint,
    Polyline,
    buffer_bbox,
    build_segment_index,
    haversine,
    lonlat_to_tile,
    point_to_polyline_distance,
    tile_bbox,
)
from surface_forge.geo import BBox, METERS_PER_DEGREE

# One degree of latitude is about 111.2 km on the mean sphere.
a, b = GeoPoint(0, 0), GeoPoint(1, 0)
print(f"1 degree at the equator: {haversine(a, b):,.2f} m")
print(f"(closed form pi*R/180:   {METERS_PER_DEGREE:,.2f} m)")

# Perpendicular distance from a camera position to a road centerline.
road = Polyline((GeoPoint(-0.001, 0.0), GeoPoint(0.001, 0.0)))
camera = GeoPoint(0.0, 0.0001)
distance, closest = point_to_polyline_distance(camera, road)
print(f"\ncamera sits {distance:.3f} m from the road, foot point at ({closest.lon}, {closest.lat})")

# The world at zoom 8 is a 256 x 256 grid; each tile is ~156 km wide at the
# equator, which is why per-tile statistics are a sane reporting unit.
tile = lonlat_to_tile(GeoPoint(8.68, 49.41), 8)
print(f"\nHeidelberg-ish point lands in tile {tile.key()}")
box = tile_bbox(tile)
width_m = haversine(GeoPoint(box.min_lon, box.min_lat), GeoPoint(box.max_lon, box.min_lat))
print(f"tile footprint: lon {box.min_lon:.4f}..{box.max_lon:.4f}, width {width_m/1000:,.1f} km")

# Candidate generation for map matching: segment bboxes grown by 30 m.
seg_box = BBox(10.0, 50.0, 10.001, 50.0)
grown = buffer_bbox(seg_box, 30.0)
print(f"\n30 m buffer adds {(grown.max_lat - seg_box.max_lat) * METERS_PER_DEGREE:.1f} m of latitude")


class Stub:
    def __init__(self, osm_id, geometry):
        self.osm_id = osm_id
        self.geometry = geometry


# The static index answers "which segments could this point match?" exactly
# like a linear scan over buffered bboxes, just faster.
segments = [
    Stub("main_st", Polyline((GeoPoint(10.0, 50.0), GeoPoint(10.002, 50.0)))),
    Stub("side_st", Polyline((GeoPoint(10.001, 50.0), GeoPoint(10.001, 50.002)))),
    Stub("far_st", Polyline((GeoPoint(10.4, 50.4), GeoPoint(10.402, 50.4)))),
]
index = build_segment_index(segments, buffer_m=30.0)
near_crossing = GeoPoint(10.001, 50.00001)
print("\ncandidates near the crossing:", [s.osm_id for s in index.query(near_crossing)])
