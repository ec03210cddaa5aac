"""Deterministic synthetic-city fixture: inputs for an end-to-end pipeline run.

Ships for tests and demos only; nothing here is part of the processing
pipeline. The city is a 10x10 street grid with vehicle capture runs, plus a
calibration strip of 20 isolated segments whose images sit at exact metric
offsets with fixed labels, so the expected per-segment results can be worked
out by hand (see CAL_CASES).

Everything derives from one seed; generating twice yields identical bytes.
"""

from __future__ import annotations

import json
import math
import random
from pathlib import Path

from .geo import GeoPoint, METERS_PER_DEGREE

CITY_CENTER = GeoPoint(10.0, 50.0)
NODE_SPACING_M = 200.0
GRID_NODES = 10  # 10x10 nodes -> 90 + 90 = 180 grid segments
CAL_LAT0 = 49.0
CAL_LAT_STEP = -0.05
CAL_SEGMENT_LENGTH_M = 200.0

ROAD_CLASS = "a photo of a road"
NO_ROAD_CLASS = "a photo with no road in it"

# calibration cases: (offset_m, "paved"/"unpaved", filter_mode)
# filter_mode: None = survives, "lowpix" = <10% road pixels + no-road class,
# "highprob" = no-road class with score > 0.9. Offsets avoid the 10/20/30 m
# tier boundaries so float noise cannot flip a tier.
CAL_CASES: dict[str, list[tuple[float, str, str | None]]] = {
    "cal_000": [(5.0, "paved", None)],
    "cal_001": [(5.0, "unpaved", None)],
    "cal_002": [(5.0, "paved", None), (29.0, "unpaved", None)],
    "cal_003": [(10.0, "paved", None), (10.0, "unpaved", None)],
    "cal_004": [(15.0, "paved", None), (5.0, "unpaved", None)],
    "cal_005": [(25.0, "paved", None), (29.0, "unpaved", None)],
    "cal_006": [(29.5, "paved", None), (29.5, "unpaved", None)],
    "cal_007": [(9.5, "paved", None), (15.0, "unpaved", None)],
    "cal_008": [(9.5, "unpaved", None), (15.0, "paved", None)],
    "cal_009": [(5.0, "paved", None), (15.0, "paved", None), (5.0, "unpaved", None)],
    "cal_010": [(5.0, "paved", "highprob"), (15.0, "unpaved", None)],
    "cal_011": [(5.0, "paved", "lowpix"), (25.0, "unpaved", None)],
    "cal_012": [(5.0, "paved", None), (35.0, "unpaved", None)],
    "cal_013": [(5.0, "unpaved", None), (15.0, "unpaved", None), (25.0, "unpaved", None)],
    "cal_014": [(25.0, "paved", None), (5.0, "unpaved", None)],
    "cal_015": [
        (5.0, "paved", None),
        (25.0, "paved", None),
        (9.5, "unpaved", None),
        (15.0, "unpaved", None),
    ],
    "cal_016": [(29.5, "paved", None)],
    "cal_017": [(29.5, "unpaved", None)],
    "cal_018": [(9.5, "paved", None), (9.5, "unpaved", None)],
    "cal_019": [
        (5.0, "paved", None),
        (9.5, "paved", None),
        (25.0, "unpaved", None),
        (5.0, "unpaved", "lowpix"),
    ],
}

PAVED_TAGS = ("asphalt", "paving_stones", "concrete", "sett")
UNPAVED_TAGS = ("gravel", "dirt", "ground", "compacted")
ODD_TAGS = ("semi_paved", "varies")


def _lon_step(lat: float, meters: float) -> float:
    return meters / (METERS_PER_DEGREE * math.cos(math.radians(lat)))


def _lat_step(meters: float) -> float:
    return meters / METERS_PER_DEGREE


def _grid(rng: random.Random):
    """Grid segments as (osm_id, coords, highway, surface_truth, surface_tag)."""
    lat0 = CITY_CENTER.lat
    lon0 = CITY_CENTER.lon
    dlat = _lat_step(NODE_SPACING_M)
    dlon = _lon_step(lat0, NODE_SPACING_M)

    def node(i, j):
        return (lon0 + i * dlon, lat0 + j * dlat)

    segments = []
    edges = []
    for j in range(GRID_NODES):
        for i in range(GRID_NODES - 1):
            edges.append((("h", i, j), node(i, j), node(i + 1, j)))
    for i in range(GRID_NODES):
        for j in range(GRID_NODES - 1):
            edges.append((("v", i, j), node(i, j), node(i, j + 1)))
    for key, a, b in edges:
        kind, i, j = key
        osm_id = f"{kind}_{i:02d}_{j:02d}"
        edge_index = i if kind == "h" else j
        if (kind == "h" and j in (0, GRID_NODES - 1)) or (kind == "v" and i in (0, GRID_NODES - 1)):
            highway = "primary"
        elif kind == "h" and j == GRID_NODES // 2:
            highway = "secondary"
        elif edge_index % 7 == 3:
            highway = "track"
        else:
            highway = "residential"
        paved_prob = {"primary": 0.99, "secondary": 0.95, "residential": 0.85, "track": 0.10}[highway]
        truth = "paved" if rng.random() < paved_prob else "unpaved"
        roll = rng.random()
        if roll < 0.55:
            tag = rng.choice(PAVED_TAGS if truth == "paved" else UNPAVED_TAGS)
        elif roll < 0.60:
            tag = rng.choice(ODD_TAGS)
        else:
            tag = None
        segments.append((osm_id, [a, b], highway, truth, tag))
    return segments, node


def _routes(rng: random.Random, node, n_routes=24, n_images=40):
    """Vehicle runs along the grid; returns per-route image point lists."""
    routes = []
    for r in range(n_routes):
        i = rng.randrange(GRID_NODES)
        j = rng.randrange(GRID_NODES)
        path = [(i, j)]
        heading = None
        while True:
            moves = []
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ni, nj = path[-1][0] + di, path[-1][1] + dj
                if 0 <= ni < GRID_NODES and 0 <= nj < GRID_NODES and (di, dj) != heading:
                    moves.append(((ni, nj), (di, dj)))
            if not moves:
                break
            (ni_nj, step) = rng.choice(moves)
            heading = (-step[0], -step[1])  # forbid immediate backtracking
            path.append(ni_nj)
            if len(path) > 12:
                break
        coords = [node(i, j) for i, j in path]
        # walk the path at ~45 m intervals with a small lateral wobble
        points = []
        walked = 0.0
        target = 0.0
        for (x1, y1), (x2, y2) in zip(coords, coords[1:]):
            leg = NODE_SPACING_M
            while target <= walked + leg:
                t = (target - walked) / leg
                lon = x1 + t * (x2 - x1)
                lat = y1 + t * (y2 - y1)
                lon += _lon_step(lat, rng.uniform(-5.0, 5.0))
                lat += _lat_step(rng.uniform(-5.0, 5.0))
                points.append((lon, lat))
                target += 45.0
                if len(points) >= n_images:
                    break
            walked += leg
            if len(points) >= n_images:
                break
        routes.append(points)
    return routes


def _prediction_row(image_id, label, rng, *, filter_mode=None):
    score = round(rng.uniform(0.82, 0.99), 4)
    if filter_mode == "lowpix":
        return {
            "image_id": image_id,
            "pred_label": label,
            "pred_class": "paved" if label == 0 else "unpaved",
            "pred_score": score,
            "zs_pred_class": NO_ROAD_CLASS,
            "zs_pred_score": round(rng.uniform(0.3, 0.7), 4),
            "road_pixel_percentage": round(rng.uniform(0.0, 0.09), 4),
        }
    if filter_mode == "highprob":
        return {
            "image_id": image_id,
            "pred_label": label,
            "pred_class": "paved" if label == 0 else "unpaved",
            "pred_score": score,
            "zs_pred_class": NO_ROAD_CLASS,
            "zs_pred_score": round(rng.uniform(0.91, 0.99), 4),
            "road_pixel_percentage": round(rng.uniform(0.2, 0.6), 4),
        }
    return {
        "image_id": image_id,
        "pred_label": label,
        "pred_class": "paved" if label == 0 else "unpaved",
        "pred_score": score,
        "zs_pred_class": ROAD_CLASS,
        "zs_pred_score": round(rng.uniform(0.92, 0.999), 4),
        "road_pixel_percentage": round(rng.uniform(0.25, 0.8), 4),
    }


def build_city(out_dir: str | Path, seed: int = 7) -> dict[str, Path]:
    """Write the full fixture set; returns the paths keyed by role."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    segments, node = _grid(rng)

    # ---- calibration strip ------------------------------------------------
    cal_segments = []
    cal_images = []
    cal_predictions = []
    ts = 1_650_000_000_000
    for k, (cal_id, cases) in enumerate(sorted(CAL_CASES.items())):
        lat = CAL_LAT0 + k * CAL_LAT_STEP
        lon_a = 10.0
        lon_b = lon_a + _lon_step(lat, CAL_SEGMENT_LENGTH_M)
        cal_segments.append((cal_id, [(lon_a, lat), (lon_b, lat)], "residential", None, None))
        mid_lon = (lon_a + lon_b) / 2.0
        for idx, (offset_m, truth, filter_mode) in enumerate(cases):
            image_id = f"{cal_id}_p{idx}"
            ts += 1000
            cal_images.append(
                {
                    "id": image_id,
                    "sequence": image_id,  # single-image sequence survives thinning
                    "url": f"https://fixture.test/{image_id}",
                    "long": mid_lon,
                    "lat": lat + _lat_step(offset_m),
                    "height": 1200,
                    "width": 1600,
                    "altitude": None,
                    "make": None,
                    "model": None,
                    "creator": None,
                    "is_pano": False,
                    "timestamp": ts,
                    "country_iso": None,
                    "continent": None,
                    "urban_id": None,
                    "hdi": None,
                }
            )
            label = 0 if truth == "paved" else 1
            cal_predictions.append(_prediction_row(image_id, label, rng, filter_mode=filter_mode))

    # ---- vehicle runs over the grid ----------------------------------------
    truth_by_id = {s[0]: s[3] for s in segments}
    routes = _routes(rng, node)
    grid_images = []
    grid_predictions = []
    seq_coords: dict[str, list[tuple[float, float]]] = {}
    image_counter = 0
    for r, points in enumerate(routes):
        sid = f"run_{r:03d}"
        seq_coords[sid] = points
        for lon, lat in points:
            image_id = f"grid_{image_counter:05d}"
            image_counter += 1
            ts += 997
            grid_images.append(
                {
                    "id": image_id,
                    "sequence": sid,
                    "url": f"https://fixture.test/{image_id}",
                    "long": round(lon, 10),
                    "lat": round(lat, 10),
                    "height": 1200,
                    "width": 1600,
                    "altitude": round(rng.uniform(100, 140), 1),
                    "make": rng.choice(["GoPro", "Garmin", None]),
                    "model": None,
                    "creator": f"user{r % 7}",
                    "is_pano": rng.random() < 0.05,
                    "timestamp": ts,
                    "country_iso": None,
                    "continent": None,
                    "urban_id": None,
                    "hdi": None,
                }
            )
            # the nearest grid line decides the "true" surface seen in the image
            nearest = _nearest_grid_segment(lon, lat, segments)
            truth = truth_by_id[nearest]
            label = 0 if truth == "paved" else 1
            if rng.random() < 0.03:
                label = 1 - label  # model error
            filter_mode = None
            if image_counter % 22 == 7:
                filter_mode = "lowpix" if image_counter % 44 == 7 else "highprob"
            grid_predictions.append(_prediction_row(image_id, label, rng, filter_mode=filter_mode))

    # ---- files --------------------------------------------------------------
    paths: dict[str, Path] = {}

    all_images = cal_images + grid_images
    images_path = out_dir / "images.ndjson"
    images_path.write_text(
        "".join(json.dumps(row, separators=(",", ":")) + "\n" for row in all_images)
    )
    paths["images"] = images_path

    sequences_path = out_dir / "sequences.ndjson"
    seq_rows = [{"id": img["id"], "coordinates": [[img["long"], img["lat"]]]} for img in cal_images]
    seq_rows += [{"id": sid, "coordinates": [[lon, lat] for lon, lat in pts]} for sid, pts in seq_coords.items()]
    seq_rows.sort(key=lambda r: r["id"])
    sequences_path.write_text(
        "".join(json.dumps(r, separators=(",", ":")) + "\n" for r in seq_rows)
    )
    paths["sequences"] = sequences_path

    segments_path = out_dir / "segments.geojson"
    features = []
    for osm_id, coords, highway, _truth, tag in cal_segments + segments:
        props = {"osm_id": osm_id, "highway": highway, "surface": tag}
        features.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "LineString", "coordinates": [[lon, lat] for lon, lat in coords]},
            }
        )
    segments_path.write_text(json.dumps({"type": "FeatureCollection", "features": features}, indent=1))
    paths["segments"] = segments_path

    predictions_path = out_dir / "predictions.csv"
    pred_rows = sorted(cal_predictions + grid_predictions, key=lambda r: r["image_id"])
    header = "image_id,pred_label,pred_class,pred_score,zs_pred_class,zs_pred_score,road_pixel_percentage"
    lines = [header]
    for r in pred_rows:
        lines.append(
            f'{r["image_id"]},{r["pred_label"]},{r["pred_class"]},{r["pred_score"]},'
            f'"{r["zs_pred_class"]}",{r["zs_pred_score"]},{r["road_pixel_percentage"]}'
        )
    predictions_path.write_text("\n".join(lines) + "\n")
    paths["predictions"] = predictions_path

    # urban core: central ~1.2 km square of the grid
    dlat = _lat_step(NODE_SPACING_M)
    dlon = _lon_step(CITY_CENTER.lat, NODE_SPACING_M)
    west, east = CITY_CENTER.lon + 1.5 * dlon, CITY_CENTER.lon + 7.5 * dlon
    south, north = CITY_CENTER.lat + 1.5 * dlat, CITY_CENTER.lat + 7.5 * dlat
    urban_path = out_dir / "urban_areas.geojson"
    urban_path.write_text(
        json.dumps(
            {
                "type": "FeatureCollection",
                "features": [
                    {
                        "type": "Feature",
                        "properties": {"id": "core", "name": "City Core", "source": "GHS-UCDB"},
                        "geometry": {
                            "type": "Polygon",
                            "coordinates": [
                                [[west, south], [east, south], [east, north], [west, north], [west, south]]
                            ],
                        },
                    }
                ],
            },
            indent=1,
        )
    )
    paths["urban_areas"] = urban_path

    countries_path = out_dir / "countries.geojson"
    countries_path.write_text(
        json.dumps(
            {
                "type": "FeatureCollection",
                "features": [
                    {
                        "type": "Feature",
                        "properties": {"iso3": "AAA", "name": "Alandia", "continent": "Europe"},
                        "geometry": {
                            "type": "Polygon",
                            "coordinates": [
                                [[9.5, 47.5], [10.5, 47.5], [10.5, 50.5], [9.5, 50.5], [9.5, 47.5]]
                            ],
                        },
                    },
                    {
                        "type": "Feature",
                        "properties": {"iso3": "BBB", "name": "Borland", "continent": "Africa"},
                        "geometry": {
                            "type": "Polygon",
                            "coordinates": [
                                [[20.0, 0.0], [21.0, 0.0], [21.0, 1.0], [20.0, 1.0], [20.0, 0.0]]
                            ],
                        },
                    },
                ],
            },
            indent=1,
        )
    )
    paths["countries"] = countries_path

    hdi_path = out_dir / "hdi.csv"
    hdi_path.write_text("iso3,hdi\nAAA,0.89\nBBB,0.45\n")
    paths["hdi"] = hdi_path

    config_path = out_dir / "config.json"
    config = {
        "paths": {
            "images": str(images_path),
            "sequences": str(sequences_path),
            "segments": str(segments_path),
            "predictions": str(predictions_path),
            "urban_areas": str(urban_path),
            "countries": str(countries_path),
            "hdi": str(hdi_path),
            "out_dir": str(out_dir / "out"),
        },
        "zoom": 8,
        "match_radii_m": [10.0, 20.0, 30.0],
        "bbox_buffer_m": 30.0,
        "thin_gaps_m": {"urban": 100.0, "rural": 1000.0},
        "filter_thresholds": {"road_pixel": 0.10, "no_road_prob": 0.90},
        "aggregation": {"weight": "linear-30m", "tie": "unpaved", "score_weighted": False},
        "workers": 1,
        "api": None,
    }
    config_path.write_text(json.dumps(config, indent=1))
    paths["config"] = config_path
    return paths


def _nearest_grid_segment(lon: float, lat: float, segments) -> str:
    """Cheap planar nearest-segment id (generation-time truth, not the matcher)."""
    best = None
    best_d2 = math.inf
    for osm_id, coords, _hw, _truth, _tag in segments:
        (x1, y1), (x2, y2) = coords
        dx, dy = x2 - x1, y2 - y1
        denom = dx * dx + dy * dy
        t = 0.0 if denom == 0 else max(0.0, min(1.0, ((lon - x1) * dx + (lat - y1) * dy) / denom))
        cx, cy = x1 + t * dx, y1 + t * dy
        d2 = (lon - cx) ** 2 + ((lat - cy) * 1.0) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best = osm_id
    return best
