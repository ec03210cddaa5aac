"""Input schemas and readers/writers, sequence thinning, and spatial joins.

Image metadata rows travel as CSV (RFC 4180, UTF-8, header) or
newline-delimited JSON with a fixed column set; malformed rows are collected
with a reason instead of being dropped silently. Urban areas and countries
arrive as GeoJSON feature collections, HDI as a two-column CSV.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .geo import GeoPoint, Polyline, dedupe_points, haversine

CONTINENTS = ("Africa", "Asia", "Europe", "North America", "Oceania", "South America")

IMAGE_BASE_COLUMNS = (
    "id",
    "sequence",
    "url",
    "long",
    "lat",
    "height",
    "width",
    "altitude",
    "make",
    "model",
    "creator",
    "is_pano",
    "timestamp",
)
IMAGE_ENRICH_COLUMNS = ("country_iso", "continent", "urban_id", "hdi")
IMAGE_COLUMNS = IMAGE_BASE_COLUMNS + IMAGE_ENRICH_COLUMNS

DEFAULT_URBAN_GAP_M = 100.0
DEFAULT_RURAL_GAP_M = 1000.0


@dataclass
class ImageRecord:
    """One street-view image's metadata row."""

    id: str
    sequence: str
    url: str
    point: GeoPoint
    height: int
    width: int
    is_pano: bool
    timestamp: int
    altitude: float | None = None
    make: str | None = None
    model: str | None = None
    creator: str | None = None
    country_iso: str | None = None
    continent: str | None = None
    urban_id: str | None = None
    hdi: float | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("image id must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp: {self.timestamp}")
        if self.hdi is not None and not 0.0 <= self.hdi <= 1.0:
            raise ValueError(f"hdi out of [0,1]: {self.hdi}")


@dataclass(frozen=True)
class SequenceRecord:
    """A capture session: ordered image ids plus the node-chain geometry."""

    id: str
    images: tuple[str, ...]
    geometry: Polyline | None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sequence id must be non-empty")


@dataclass(frozen=True)
class UrbanArea:
    id: str
    name: str
    source: str  # "Africapolis" or "GHS-UCDB"
    rings: tuple[tuple[GeoPoint, ...], ...]

    def __post_init__(self) -> None:
        for ring in self.rings:
            if len(ring) < 4:
                raise ValueError(f"urban area {self.id}: ring needs >= 4 points")
            if ring[0] != ring[-1]:
                raise ValueError(f"urban area {self.id}: ring not closed")


@dataclass(frozen=True)
class CountryRecord:
    iso3: str
    name: str
    continent: str
    rings: tuple[tuple[GeoPoint, ...], ...]
    hdi: float | None = None

    def __post_init__(self) -> None:
        if len(self.iso3) != 3 or not self.iso3.isupper():
            raise ValueError(f"iso3 must be 3 uppercase letters: {self.iso3!r}")
        if self.continent not in CONTINENTS:
            raise ValueError(f"unknown continent: {self.continent!r}")
        if self.hdi is not None and not 0.0 <= self.hdi <= 1.0:
            raise ValueError(f"hdi out of [0,1]: {self.hdi}")


# ------------------------------------------------------------------ row codecs


def _opt_str(value: str) -> str | None:
    return value if value != "" else None


def _opt_float(value: str) -> float | None:
    return float(value) if value != "" else None


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if value in ("1", "true", "True"):
        return True
    if value in ("0", "false", "False"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def record_from_row(row: Mapping[str, object]) -> ImageRecord:
    """Build an ImageRecord from one parsed CSV/JSON row (strings or natives)."""

    def get(name, default=""):
        v = row.get(name, default)
        return "" if v is None else v

    return ImageRecord(
        id=str(get("id")),
        sequence=str(get("sequence")),
        url=str(get("url")),
        point=GeoPoint(float(get("long")), float(get("lat"))),
        height=int(get("height")),
        width=int(get("width")),
        altitude=_opt_float(str(get("altitude"))),
        make=_opt_str(str(get("make"))),
        model=_opt_str(str(get("model"))),
        creator=_opt_str(str(get("creator"))),
        is_pano=_parse_bool(row.get("is_pano")),
        timestamp=int(get("timestamp")),
        country_iso=_opt_str(str(get("country_iso"))),
        continent=_opt_str(str(get("continent"))),
        urban_id=_opt_str(str(get("urban_id"))),
        hdi=_opt_float(str(get("hdi"))),
    )


def record_to_row(r: ImageRecord) -> dict[str, object]:
    """Flat JSON-ready dict in the documented column order."""
    return {
        "id": r.id,
        "sequence": r.sequence,
        "url": r.url,
        "long": r.point.lon,
        "lat": r.point.lat,
        "height": r.height,
        "width": r.width,
        "altitude": r.altitude,
        "make": r.make,
        "model": r.model,
        "creator": r.creator,
        "is_pano": r.is_pano,
        "timestamp": r.timestamp,
        "country_iso": r.country_iso,
        "continent": r.continent,
        "urban_id": r.urban_id,
        "hdi": r.hdi,
    }


@dataclass
class RejectedRow:
    line: int
    reason: str


@dataclass
class ReadReport:
    records: list[ImageRecord] = field(default_factory=list)
    rejects: list[RejectedRow] = field(default_factory=list)

    @property
    def n_read(self) -> int:
        return len(self.records) + len(self.rejects)


def read_image_records(path: str | Path, fmt: str | None = None) -> ReadReport:
    """Read and validate image rows; unknown columns are a hard error,
    bad rows are collected per line with a reason.

    ``fmt`` is "csv" or "ndjson"; inferred from the suffix when omitted.
    """
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix == ".csv" else "ndjson"
    if fmt not in ("csv", "ndjson"):
        raise ValueError(f"unsupported format: {fmt}")
    report = ReadReport()
    seen_ids: set[str] = set()

    def take(line_no: int, raw: Mapping[str, object]) -> None:
        try:
            rec = record_from_row(raw)
        except (ValueError, TypeError, KeyError) as exc:
            report.rejects.append(RejectedRow(line_no, str(exc)))
            return
        if rec.id in seen_ids:
            report.rejects.append(RejectedRow(line_no, f"duplicate id: {rec.id}"))
            return
        seen_ids.add(rec.id)
        report.records.append(rec)

    with path.open(encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            unknown = [c for c in header if c not in IMAGE_COLUMNS]
            if unknown:
                raise ValueError(f"unknown column(s) in {path.name}: {', '.join(unknown)}")
            missing = [c for c in IMAGE_BASE_COLUMNS if c not in header]
            if missing:
                raise ValueError(f"missing column(s) in {path.name}: {', '.join(missing)}")
            for line_no, row in enumerate(reader, start=2):
                take(line_no, row)
        else:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                except json.JSONDecodeError as exc:
                    report.rejects.append(RejectedRow(line_no, f"invalid json: {exc.msg}"))
                    continue
                unknown = [c for c in raw if c not in IMAGE_COLUMNS]
                if unknown:
                    raise ValueError(f"unknown key(s) in {path.name}: {', '.join(unknown)}")
                take(line_no, raw)
    return report


def write_image_records(records: Iterable[ImageRecord], path: str | Path, fmt: str | None = None) -> int:
    """Write records with the full documented column set; returns the row count."""
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix == ".csv" else "ndjson"
    n = 0
    with path.open("w", encoding="utf-8", newline="") as fh:
        if fmt == "csv":
            writer = csv.writer(fh)
            writer.writerow(IMAGE_COLUMNS)
            for r in records:
                row = record_to_row(r)
                writer.writerow(
                    [
                        _csv_cell(row[c]) if c != "is_pano" else ("1" if r.is_pano else "0")
                        for c in IMAGE_COLUMNS
                    ]
                )
                n += 1
        elif fmt == "ndjson":
            for r in records:
                fh.write(json.dumps(record_to_row(r), separators=(",", ":")) + "\n")
                n += 1
        else:
            raise ValueError(f"unsupported format: {fmt}")
    return n


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


# -------------------------------------------------------------------- geojson


def _rings_from_geometry(geometry: Mapping) -> tuple[tuple[GeoPoint, ...], ...]:
    gtype = geometry.get("type")
    coords = geometry.get("coordinates", [])
    if gtype == "Polygon":
        polys = [coords]
    elif gtype == "MultiPolygon":
        polys = coords
    else:
        raise ValueError(f"unsupported geometry type: {gtype}")
    rings = []
    for poly in polys:
        for ring in poly:
            rings.append(tuple(GeoPoint(float(lon), float(lat)) for lon, lat in ring))
    return tuple(rings)


def load_urban_areas_geojson(path: str | Path) -> list[UrbanArea]:
    with Path(path).open(encoding="utf-8") as fh:
        fc = json.load(fh)
    areas = []
    for feat in fc.get("features", []):
        props = feat.get("properties", {})
        areas.append(
            UrbanArea(
                id=str(props["id"]),
                name=str(props.get("name", "")),
                source=str(props.get("source", "GHS-UCDB")),
                rings=_rings_from_geometry(feat["geometry"]),
            )
        )
    areas.sort(key=lambda a: a.id)
    return areas


def load_countries_geojson(path: str | Path) -> list[CountryRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        fc = json.load(fh)
    out = []
    for feat in fc.get("features", []):
        props = feat.get("properties", {})
        hdi = props.get("hdi")
        out.append(
            CountryRecord(
                iso3=str(props["iso3"]),
                name=str(props.get("name", "")),
                continent=str(props["continent"]),
                rings=_rings_from_geometry(feat["geometry"]),
                hdi=float(hdi) if hdi is not None else None,
            )
        )
    out.sort(key=lambda c: c.iso3)
    return out


def load_segments_geojson(path: str | Path) -> list:
    """Road segments from a LineString FeatureCollection.

    Required properties: osm_id, highway; optional: surface,
    changeset_timestamp.
    """
    from .matching import RoadSegment

    with Path(path).open(encoding="utf-8") as fh:
        fc = json.load(fh)
    out = []
    for feat in fc.get("features", []):
        geom = feat["geometry"]
        if geom.get("type") != "LineString":
            raise ValueError(f"segments must be LineStrings, got {geom.get('type')}")
        props = feat.get("properties", {})
        pts = dedupe_points([GeoPoint(float(lon), float(lat)) for lon, lat in geom["coordinates"]])
        out.append(
            RoadSegment(
                osm_id=str(props["osm_id"]),
                highway=str(props.get("highway", "unclassified")),
                geometry=Polyline(tuple(pts)),
                surface_tag=props.get("surface"),
                changeset_timestamp=props.get("changeset_timestamp"),
            )
        )
    out.sort(key=lambda s: s.osm_id)
    return out


def load_sequences_ndjson(path: str | Path) -> dict[str, Polyline | None]:
    """Sequence geometries from ``{"id", "coordinates"}`` rows; degenerate ones map to None."""
    out: dict[str, Polyline | None] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            pts = dedupe_points([GeoPoint(float(lon), float(lat)) for lon, lat in row["coordinates"]])
            out[str(row["id"])] = Polyline(tuple(pts)) if len(pts) >= 2 else None
    return out


def load_hdi_csv(path: str | Path) -> dict[str, float]:
    """Read ``iso3,hdi`` rows into a mapping."""
    out: dict[str, float] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["iso3", "hdi"]:
            raise ValueError(f"hdi file must have header iso3,hdi, got {reader.fieldnames}")
        for row in reader:
            out[row["iso3"]] = float(row["hdi"])
    return out


# --------------------------------------------------------------- point in poly


def point_in_rings(p: GeoPoint, rings: Sequence[Sequence[GeoPoint]]) -> bool:
    """Even-odd containment over all rings; points on an edge count inside."""
    inside = False
    for ring in rings:
        for a, b in zip(ring, ring[1:]):
            if _on_edge(p, a, b):
                return True
            if (a.lat > p.lat) != (b.lat > p.lat):
                x_cross = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
                if p.lon < x_cross:
                    inside = not inside
    return inside


def _on_edge(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool:
    cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon)
    if cross != 0.0:
        return False
    return (
        min(a.lon, b.lon) <= p.lon <= max(a.lon, b.lon)
        and min(a.lat, b.lat) <= p.lat <= max(a.lat, b.lat)
    )


def classify_urban(p: GeoPoint, urban_areas: Sequence[UrbanArea]) -> str | None:
    """Id of the first (by id order) urban polygon containing ``p``, else None."""
    for area in sorted(urban_areas, key=lambda a: a.id):
        if point_in_rings(p, area.rings):
            return area.id
    return None


# ------------------------------------------------------------------- thinning


def greedy_thin(images: Sequence[ImageRecord], gap_m: float) -> list[ImageRecord]:
    """Single greedy pass: keep the first image, then every image at least
    ``gap_m`` from the last kept one."""
    kept: list[ImageRecord] = []
    for img in images:
        if not kept or haversine(kept[-1].point, img.point) >= gap_m:
            kept.append(img)
    return kept


def sequence_is_urban(images: Sequence[ImageRecord], urban_areas: Sequence[UrbanArea]) -> bool:
    """Strict majority of image points inside any urban polygon; ties are rural."""
    if not images or not urban_areas:
        return False
    inside = sum(1 for img in images if classify_urban(img.point, urban_areas) is not None)
    return 2 * inside > len(images)


def thin_sequence(
    images: Sequence[ImageRecord],
    urban_areas: Sequence[UrbanArea] = (),
    *,
    urban_gap_m: float = DEFAULT_URBAN_GAP_M,
    rural_gap_m: float = DEFAULT_RURAL_GAP_M,
) -> list[ImageRecord]:
    """Thin one capture-ordered sequence to its spatial gap.

    The gap is 100 m when the majority of the sequence's points are urban,
    else 1000 m. The classify-then-thin pass repeats until the kept set is
    stable, which makes the operation a fixed point (re-thinning its own
    output changes nothing) even when thinning itself flips the majority.
    """
    current = sort_capture_order(images)
    while True:
        gap = urban_gap_m if sequence_is_urban(current, urban_areas) else rural_gap_m
        kept = greedy_thin(current, gap)
        if len(kept) == len(current):
            return kept
        current = kept


def sort_capture_order(images: Iterable[ImageRecord]) -> list[ImageRecord]:
    return sorted(images, key=lambda r: (r.timestamp, r.id))


def group_by_sequence(records: Iterable[ImageRecord]) -> dict[str, list[ImageRecord]]:
    """Records grouped by sequence id, each group in capture order."""
    groups: dict[str, list[ImageRecord]] = {}
    for r in records:
        groups.setdefault(r.sequence, []).append(r)
    return {sid: sort_capture_order(group) for sid, group in sorted(groups.items())}


def sequence_record(sid: str, images: Sequence[ImageRecord]) -> SequenceRecord:
    """Build the sequence's node-chain polyline (None when degenerate)."""
    ordered = sort_capture_order(images)
    pts = dedupe_points([img.point for img in ordered])
    geometry = Polyline(tuple(pts)) if len(pts) >= 2 else None
    return SequenceRecord(id=sid, images=tuple(img.id for img in ordered), geometry=geometry)


# ---------------------------------------------------------------------- joins


@dataclass
class JoinReport:
    matched: int = 0
    unmatched: int = 0


def join_country_hdi(
    records: Iterable[ImageRecord],
    countries: Sequence[CountryRecord],
    hdi: Mapping[str, float] | None = None,
) -> tuple[list[ImageRecord], JoinReport]:
    """Attach iso3/continent/hdi of the containing country to each record.

    Records outside every country polygon stay unenriched (flagged by their
    None country_iso) and are counted, not dropped.
    """
    ordered = sorted(countries, key=lambda c: c.iso3)
    report = JoinReport()
    out: list[ImageRecord] = []
    for rec in records:
        hit = None
        for country in ordered:
            if point_in_rings(rec.point, country.rings):
                hit = country
                break
        if hit is None:
            report.unmatched += 1
            out.append(rec)
            continue
        report.matched += 1
        hdi_value = (hdi or {}).get(hit.iso3, hit.hdi)
        out.append(
            replace(rec, country_iso=hit.iso3, continent=hit.continent, hdi=hdi_value)
        )
    return out, report


def classify_urban_records(
    records: Iterable[ImageRecord], urban_areas: Sequence[UrbanArea]
) -> list[ImageRecord]:
    """Fill urban_id per record by point-in-polygon."""
    areas = sorted(urban_areas, key=lambda a: a.id)
    return [replace(rec, urban_id=classify_urban(rec.point, areas)) for rec in records]
