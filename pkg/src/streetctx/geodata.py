"""Street geometry: GeoJSON and PolyLine shapefile ingestion, haversine length.

Coordinates are WGS84 degrees. Re-projecting a city's data into WGS84 is the
caller's job; nothing here inspects a CRS.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from streetctx.errors import ParseError

EARTH_RADIUS_M = 6_371_000.0
SHAPEFILE_CODE = 9994
POLYLINE = 3
NULL_SHAPE = 0


@dataclass(frozen=True)
class LatLon:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class StreetSegment:
    id: str
    vertices: tuple[LatLon, ...]
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "attributes", dict(self.attributes))
        if len(self.vertices) < 2:
            raise ValueError(f"segment {self.id!r} needs at least 2 vertices")
        for k, (a, b) in enumerate(zip(self.vertices, self.vertices[1:])):
            if a == b:
                raise ValueError(
                    f"segment {self.id!r}: vertices {k} and {k + 1} are identical"
                )
            # distinct floats can still be a zero-length edge once haversine underflows
            if haversine_m(a, b) == 0.0:
                raise ValueError(
                    f"segment {self.id!r}: vertices {k} and {k + 1} are identical at double precision"
                )

    def with_attributes(self, **extra: str) -> "StreetSegment":
        attrs = dict(self.attributes)
        attrs.update(extra)
        return StreetSegment(self.id, self.vertices, attrs)


@dataclass(frozen=True)
class SegmentCollection:
    segments: tuple[StreetSegment, ...] = ()
    crs_note: str = "WGS84"

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        seen = set()
        for seg in self.segments:
            if seg.id in seen:
                raise ValueError(f"duplicate segment id {seg.id!r}")
            seen.add(seg.id)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    def by_id(self) -> dict[str, StreetSegment]:
        return {s.id: s for s in self.segments}


def _attr_value(value) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value)


def parse_geojson_streets(text: str | bytes) -> SegmentCollection:
    """Read a FeatureCollection of LineStrings into a SegmentCollection.

    The ``id`` property (or the feature-level ``id``) names the segment; when
    absent the zero-padded feature index is used. Every other property is kept
    as a string attribute (non-string JSON values are stored JSON-encoded).
    """
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    try:
        decoded = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8 at byte offset {exc.start}") from exc
    try:
        doc = json.loads(decoded)
    except json.JSONDecodeError as exc:
        offset = len(decoded[: exc.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON at byte offset {offset}: {exc.msg}") from exc

    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise ParseError("document is not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise ParseError("FeatureCollection has no 'features' array")

    width = max(6, len(str(max(len(features) - 1, 0))))
    segments = []
    for i, feat in enumerate(features):
        geom = (feat or {}).get("geometry") or {}
        if geom.get("type") != "LineString":
            raise ParseError(f"feature {i}: geometry is not LineString")
        props = dict(feat.get("properties") or {})
        if "id" in props:
            seg_id = _attr_value(props.pop("id"))
        elif "id" in feat:
            seg_id = _attr_value(feat["id"])
        else:
            seg_id = str(i).zfill(width)
        vertices = []
        for v, coord in enumerate(geom.get("coordinates") or []):
            try:
                lon, lat = float(coord[0]), float(coord[1])
                vertices.append(LatLon(lat, lon))
            except (TypeError, IndexError, ValueError) as exc:
                raise ParseError(f"feature {i}, vertex {v}: {exc}") from exc
        try:
            segments.append(
                StreetSegment(seg_id, vertices, {k: _attr_value(x) for k, x in props.items()})
            )
        except ValueError as exc:
            raise ParseError(f"feature {i}: {exc}") from exc
    try:
        return SegmentCollection(segments)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def to_geojson(collection: Iterable[StreetSegment], indent=None) -> str:
    features = []
    for seg in collection:
        props = {"id": seg.id}
        props.update(seg.attributes)
        features.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[v.lon, v.lat] for v in seg.vertices],
                },
            }
        )
    return json.dumps({"type": "FeatureCollection", "features": features}, indent=indent)


# -- shapefile -------------------------------------------------------------


def parse_shapefile_polylines(data: bytes, labels: str | None = None) -> SegmentCollection:
    """Parse the PolyLine records of an ESRI ``.shp`` main file.

    Each part of a record becomes its own segment with id
    ``"{record_index}_{part}"`` (both 0-based). ``labels`` is optional CSV
    text with columns ``record_index,key,value`` whose pairs are merged into
    the attributes of every part of that record. Null-shape records are
    skipped.
    """
    if len(data) < 100 or struct.unpack(">i", data[:4])[0] != SHAPEFILE_CODE:
        raise ParseError("not a shapefile")
    shape_type = struct.unpack("<i", data[32:36])[0]
    if shape_type != POLYLINE:
        raise ParseError(f"unsupported shape type {shape_type} (only PolyLine = 3)")
    file_len = struct.unpack(">i", data[24:28])[0] * 2
    end = min(file_len, len(data)) if file_len >= 100 else len(data)

    extra = _read_label_csv(labels) if labels is not None else {}

    segments = []
    pos = 100
    index = 0
    while pos < end:
        if pos + 8 > len(data):
            raise ParseError(f"truncated record header for record {index + 1}")
        number, content_words = struct.unpack(">ii", data[pos : pos + 8])
        content = data[pos + 8 : pos + 8 + content_words * 2]
        if len(content) != content_words * 2 or len(content) < 4:
            raise ParseError(f"record {number} is truncated")
        rtype = struct.unpack("<i", content[:4])[0]
        if rtype == POLYLINE:
            for part, pts in enumerate(_polyline_parts(content, number)):
                seg_id = f"{index}_{part}"
                try:
                    segments.append(
                        StreetSegment(
                            seg_id,
                            [LatLon(y, x) for x, y in pts],
                            extra.get(index, {}),
                        )
                    )
                except ValueError as exc:
                    raise ParseError(f"record {number}: {exc}") from exc
        elif rtype != NULL_SHAPE:
            raise ParseError(f"record {number}: unsupported shape type {rtype}")
        pos += 8 + content_words * 2
        index += 1
    return SegmentCollection(segments)


def _polyline_parts(content: bytes, number: int):
    if len(content) < 44:
        raise ParseError(f"record {number} is truncated")
    num_parts, num_points = struct.unpack("<ii", content[36:44])
    need = 44 + 4 * num_parts + 16 * num_points
    if num_parts < 0 or num_points < 0 or len(content) < need:
        raise ParseError(f"record {number} is truncated")
    starts = list(struct.unpack(f"<{num_parts}i", content[44 : 44 + 4 * num_parts]))
    off = 44 + 4 * num_parts
    flat = struct.unpack(f"<{2 * num_points}d", content[off : off + 16 * num_points])
    points = list(zip(flat[0::2], flat[1::2]))
    bounds = starts + [num_points]
    for a, b in zip(bounds, bounds[1:]):
        if not 0 <= a <= b <= num_points:
            raise ParseError(f"record {number}: bad part index {a}")
        yield points[a:b]


def _read_label_csv(text: str) -> dict[int, dict[str, str]]:
    out: dict[int, dict[str, str]] = {}
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or list(reader.fieldnames[:3]) != ["record_index", "key", "value"]:
        raise ParseError("label CSV header must be record_index,key,value")
    for row in reader:
        out.setdefault(int(row["record_index"]), {})[row["key"]] = row["value"]
    return out


def write_shapefile_polylines(records: Sequence[Sequence[Sequence[tuple[float, float]]]]) -> bytes:
    """Encode records (each a list of parts of ``(lon, lat)`` points) as .shp bytes."""
    body = bytearray()
    all_pts = [p for rec in records for part in rec for p in part]
    for number, rec in enumerate(records, start=1):
        pts = [p for part in rec for p in part]
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        content = struct.pack("<i4d", POLYLINE, min(xs), min(ys), max(xs), max(ys))
        content += struct.pack("<ii", len(rec), len(pts))
        start = 0
        for part in rec:
            content += struct.pack("<i", start)
            start += len(part)
        for x, y in pts:
            content += struct.pack("<2d", x, y)
        body += struct.pack(">ii", number, len(content) // 2) + content
    if all_pts:
        bbox = (
            min(p[0] for p in all_pts),
            min(p[1] for p in all_pts),
            max(p[0] for p in all_pts),
            max(p[1] for p in all_pts),
        )
    else:
        bbox = (0.0, 0.0, 0.0, 0.0)
    header = struct.pack(">7i", SHAPEFILE_CODE, 0, 0, 0, 0, 0, (100 + len(body)) // 2)
    header += struct.pack("<2i", 1000, POLYLINE)
    header += struct.pack("<8d", *bbox, 0.0, 0.0, 0.0, 0.0)
    return bytes(header + body)


# -- geodesy ---------------------------------------------------------------


def haversine_m(a: LatLon, b: LatLon) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def initial_bearing(a: LatLon, b: LatLon) -> float:
    """Great-circle initial bearing from ``a`` to ``b``, degrees in [0, 360)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    deg = math.degrees(math.atan2(y, x)) % 360.0
    return 0.0 if deg == 360.0 else deg


def edge_lengths_m(segment: StreetSegment) -> list[float]:
    v = segment.vertices
    return [haversine_m(a, b) for a, b in zip(v, v[1:])]


def polyline_length_m(segment: StreetSegment) -> float:
    return math.fsum(edge_lengths_m(segment))
