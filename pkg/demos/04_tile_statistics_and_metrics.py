"""
Tile statistics, evaluation metrics, and the HDI regression
===========================================================

Per-tile coverage follows the longest-sequence rule (capped so ratios stay
within [0, 1]); pavedness is length-weighted. Model-vs-OSM agreement uses a
standard confusion matrix with paved as the positive class, plus MCC because
class balance is heavily skewed toward paved roads.
"""

from surface_forge import (
    ConfusionCounts,
    RegressionPoint,
    SurfaceLabel,
    confusion_metrics,
    hdi_regression,
    tile_coverage,
    tile_pavedness,
)
from surface_forge.geo import TileId
from surface_forge.stats import TileSegmentSlice, merge_tile_stats

tile = TileId(8, 134, 87)
slices = [
    TileSegmentSlice("a", 1200.0, is_urban=True, label=SurfaceLabel.PAVED,
                     matched_sequence_clipped_lengths=(800.0, 150.0)),
    TileSegmentSlice("b", 900.0, is_urban=False, label=SurfaceLabel.UNPAVED,
                     matched_sequence_clipped_lengths=(2500.0,)),  # capped at 900
    TileSegmentSlice("c", 400.0, is_urban=False, label=None),      # unlabeled, uncovered
]
stats = merge_tile_stats(tile_coverage(tile, slices), tile_pavedness(tile, slices))
for band in ("total", "urban", "rural"):
    b = stats.bands()[band]
    cov = f"{b.coverage_ratio:.3f}" if b.coverage_ratio is not None else "n/a"
    pav = f"{b.paved_ratio:.3f}" if b.paved_ratio is not None else "n/a"
    print(f"{band:6s} osm={b.osm_length_m:7.1f} m covered={b.covered_length_m:7.1f} m "
          f"coverage={cov} paved={pav}")

# Confusion metrics from raw counts; paved is the positive class.
print()
counts = ConfusionCounts(tp=139_329, fp=8_452, tn=15_114, fn=18_591)
metrics = confusion_metrics(counts)
print("continent-scale example:", {k: round(v, 3) for k, v in metrics.items()})

# HDI vs pavedness: simple least squares over country points; the circle-size
# channel (road length) rides along as a weight but does not enter the fit.
print()
countries = [
    RegressionPoint(hdi=0.48, pavedness=0.21, weight=11.0),
    RegressionPoint(hdi=0.55, pavedness=0.36, weight=40.0),
    RegressionPoint(hdi=0.62, pavedness=0.52, weight=25.0),
    RegressionPoint(hdi=0.74, pavedness=0.66, weight=90.0),
    RegressionPoint(hdi=0.89, pavedness=0.93, weight=210.0),
    RegressionPoint(hdi=0.94, pavedness=0.95, weight=300.0),
]
fit = hdi_regression(countries)
print(f"pearson r = {fit.pearson_r:.3f}, R^2 = {fit.r_squared:.3f} "
      f"(identity: r^2 == R^2), slope = {fit.slope:.3f}")
