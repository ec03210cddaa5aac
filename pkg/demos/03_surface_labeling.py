"""
From per-image predictions to per-segment labels
================================================

Three steps: normalize raw OSM surface tags to paved/unpaved, drop images
that do not actually show a road, and aggregate the surviving predictions
per segment with distance-based weights.
"""

from surface_forge import aggregate_segment, combination_filter, normalize_surface
from surface_forge.surface import (
    NO_ROAD_CLASS,
    PredictionRecord,
    ROAD_CLASS,
    SegmentObservation,
)

# --- tag normalization ----------------------------------------------------
for tag in ("asphalt", "Sett", " gravel ", "mud", "paving stones", None):
    print(f"{str(tag):16s} -> {normalize_surface(tag).value}")

# --- the combination filter -------------------------------------------------
# An image is dropped when the zero-shot classifier says "no road" and either
# the road-pixel share is under 10% (any score) or the score exceeds 0.9.
examples = [
    ("side of a house", PredictionRecord("a", 0, "paved", 0.9, NO_ROAD_CLASS, 0.55, 0.05)),
    ("confident no-road", PredictionRecord("b", 0, "paved", 0.9, NO_ROAD_CLASS, 0.95, 0.40)),
    ("narrow lane", PredictionRecord("c", 0, "paved", 0.9, ROAD_CLASS, 0.99, 0.05)),
]
print()
for name, record in examples:
    print(f"{name:18s} -> {'keep' if combination_filter(record) else 'remove'}")

# --- distance-weighted aggregation ------------------------------------------
# Weight = 1 - d/30 with a floor of 1/30, so a 30 m match still counts a bit.
print()
cases = {
    "one paved point at 5 m": [SegmentObservation(5, 0)],
    "paved@5 vs unpaved@29": [SegmentObservation(5, 0), SegmentObservation(29, 1)],
    "dead heat at 10 m": [SegmentObservation(10, 0), SegmentObservation(10, 1)],
}
for name, obs in cases.items():
    label = aggregate_segment("way", obs)
    print(f"{name:24s} -> {label.label.value:8s} score={label.weighted_score:.4f}")
