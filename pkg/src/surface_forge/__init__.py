"""surface-forge: road-surface enrichment from street-view image metadata.

Pipeline stages: harvest sequence/image metadata, thin sequences spatially,
enrich with urban/country/HDI joins, match image points to OSM road segments,
filter non-road predictions, aggregate paved/unpaved labels per segment, and
compute tile-grid coverage/pavedness statistics plus evaluation metrics.

The usual entry points:

    from surface_forge import geo, ingest, matching, surface, stats
    from surface_forge.cli import main          # the surface-forge CLI
    from surface_forge.synth import build_city  # deterministic demo fixture
"""

from .geo import (
    BBox,
    EARTH_RADIUS_M,
    GeoPoint,
    Polyline,
    SegmentIndex,
    TileId,
    buffer_bbox,
    build_segment_index,
    haversine,
    lonlat_to_tile,
    point_to_polyline_distance,
    tile_bbox,
)
from .ingest import (
    CountryRecord,
    ImageRecord,
    SequenceRecord,
    UrbanArea,
    classify_urban,
    join_country_hdi,
    read_image_records,
    thin_sequence,
    write_image_records,
)
from .matching import Assignment, MatchResult, RoadSegment, match_all, match_point, percent_diff
from .stats import (
    ConfusionCounts,
    RegressionPoint,
    RegressionResult,
    TileStats,
    breakdown_by_highway_class,
    compute_tile_stats,
    confusion_metrics,
    country_report,
    evaluate_against_osm,
    hdi_regression,
    tile_coverage,
    tile_pavedness,
)
from .surface import (
    PredictionRecord,
    SegmentLabel,
    SurfaceLabel,
    aggregate_segment,
    combination_filter,
    label_all_segments,
    normalize_surface,
)

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "BBox",
    "ConfusionCounts",
    "CountryRecord",
    "EARTH_RADIUS_M",
    "GeoPoint",
    "ImageRecord",
    "MatchResult",
    "Polyline",
    "PredictionRecord",
    "RegressionPoint",
    "RegressionResult",
    "RoadSegment",
    "SegmentIndex",
    "SegmentLabel",
    "SequenceRecord",
    "SurfaceLabel",
    "TileId",
    "TileStats",
    "UrbanArea",
    "aggregate_segment",
    "breakdown_by_highway_class",
    "buffer_bbox",
    "build_segment_index",
    "classify_urban",
    "combination_filter",
    "compute_tile_stats",
    "confusion_metrics",
    "country_report",
    "evaluate_against_osm",
    "haversine",
    "hdi_regression",
    "join_country_hdi",
    "label_all_segments",
    "lonlat_to_tile",
    "match_all",
    "match_point",
    "normalize_surface",
    "percent_diff",
    "point_to_polyline_distance",
    "read_image_records",
    "thin_sequence",
    "tile_bbox",
    "tile_coverage",
    "tile_pavedness",
    "write_image_records",
    "__version__",
]
