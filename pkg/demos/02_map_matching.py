"""
Map matching with tiered radii
==============================

Image points snap to road segments within 10 m where possible, then 20 m,
then 30 m. A point near an intersection can legitimately match several
segments; the normalized confidence index says how much worse each extra
assignment is than the nearest one.
"""

from surface_forge import GeoPoint, Polyline, RoadSegment, match_all, percent_diff
from surface_forge.geo import METERS_PER_DEGREE


def m(meters):  # meters -> degrees of latitude
    return meters / METERS_PER_DEGREE


streets = [
    RoadSegment("north_south", "residential", Polyline((GeoPoint(m(4), -0.003), GeoPoint(m(4), 0.003)))),
    RoadSegment("east_west", "primary", Polyline((GeoPoint(-0.003, m(8)), GeoPoint(0.003, m(8))))),
    RoadSegment("back_alley", "service", Polyline((GeoPoint(-0.003, m(-25)), GeoPoint(0.003, m(-25))))),
    RoadSegment("nowhere", "track", Polyline((GeoPoint(0.5, 0.5), GeoPoint(0.501, 0.5)))),
]


class Img:
    def __init__(self, id, point):
        self.id = id
        self.point = point


images = [
    Img("at_crossing", GeoPoint(0.0, 0.0)),  # 4 m and 8 m from two streets
    Img("by_alley", GeoPoint(0.0, m(-2))),   # 4 m, 10 m, 23 m from the three streets
    Img("lost", GeoPoint(0.25, 0.25)),       # nothing within 30 m
]

for result in match_all(images, streets):
    print(f"{result.image_id}: tier={result.tier}")
    for a in result.assignments:
        print(
            f"   {a.osm_id:12s} d={a.distance_m:6.2f} m  "
            f"abs_diff={a.abs_diff_m:5.2f}  percent_diff={a.percent_diff:.4f}"
        )

# The index behind the percent_diff column: 0 for the nearest segment,
# approaching 1 as a candidate gets relatively farther away.
print("\nconfidence contrast for (d_current, d_nearest):")
for pair in ((10, 10), (30, 10), (8, 4), (100, 1)):
    print(f"   {pair}: {percent_diff(*pair):.4f}")
