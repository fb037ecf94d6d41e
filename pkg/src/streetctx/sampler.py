"""Sampling street-view capture points along labeled segments.

Direction of traffic is taken to be the digitization direction of each
polyline; one-way attributes are not consulted.
"""

from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, replace
from typing import Sequence

from streetctx.errors import StreetCtxError
from streetctx.geodata import (
    LatLon,
    SegmentCollection,
    StreetSegment,
    edge_lengths_m,
    initial_bearing,
)
from streetctx.imagery import ImageRequest, cache_relpath
from streetctx.labeler import LABEL_KEY, StreetContext
from streetctx.rng import Xoshiro256

TILT_DEG = 45.0
MANIFEST_COLUMNS = [
    "sample_id", "segment_id", "lat", "lon", "road_bearing", "side", "heading", "label", "image_path",
]
NO_COVERAGE = "status=no_coverage"


def fmt(x: float) -> str:
    """Serialize a float with 9 significant digits."""
    return f"{x:.9g}"


def quantize(x: float) -> float:
    return float(fmt(x))


@dataclass(frozen=True)
class SamplePoint:
    segment_id: str
    location: LatLon
    road_bearing: float
    fraction: float


@dataclass(frozen=True)
class CameraHeadingPair:
    left: float
    right: float


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    segment_id: str
    location: LatLon
    road_bearing: float
    headings: CameraHeadingPair
    label: StreetContext
    image_paths: tuple[str, str]

    @property
    def has_coverage(self) -> bool:
        return NO_COVERAGE not in self.image_paths

    def sides(self):
        """``(side, heading, image_path)`` for the left then right view."""
        return [
            ("L", self.headings.left, self.image_paths[0]),
            ("R", self.headings.right, self.image_paths[1]),
        ]

    def request(self, side: str, width: int = 640, height: int = 640) -> ImageRequest:
        heading = self.headings.left if side == "L" else self.headings.right
        return ImageRequest(self.location, heading, width=width, height=height)


def sample_segments(collection: SegmentCollection, n: int, seed: int) -> list[StreetSegment]:
    total = len(collection)
    if not 0 <= n <= total:
        raise StreetCtxError(f"cannot sample {n} segments from a collection of {total}")
    return Xoshiro256(seed).shuffle_prefix(collection.segments, n)


def point_at_fraction(segment: StreetSegment, t: float) -> SamplePoint:
    """Point at arc-length fraction ``t`` of the segment.

    The bearing is that of the edge containing the point; a point exactly on
    an interior vertex takes the later edge, ``t == 1`` the final edge.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"fraction {t} outside [0, 1]")
    lengths = edge_lengths_m(segment)
    cum = [0.0]
    for d in lengths:
        cum.append(cum[-1] + d)
    target = t * cum[-1]
    k = min(bisect.bisect_right(cum, target) - 1, len(lengths) - 1)
    a, b = segment.vertices[k], segment.vertices[k + 1]
    f = (target - cum[k]) / lengths[k]
    if f <= 0.0:
        loc = a
    elif f >= 1.0:
        loc = b
    else:
        loc = LatLon(a.lat + f * (b.lat - a.lat), a.lon + f * (b.lon - a.lon))
    return SamplePoint(segment.id, loc, initial_bearing(a, b), t)


def _wrap(deg: float) -> float:
    out = deg % 360.0
    return 0.0 if out == 360.0 else out


def camera_headings(road_bearing: float) -> CameraHeadingPair:
    return CameraHeadingPair(_wrap(road_bearing - TILT_DEG), _wrap(road_bearing + TILT_DEG))


def build_manifest(labeled: SegmentCollection, n: int, seed: int,
                   width: int = 640, height: int = 640) -> list[SampleRecord]:
    """Draw ``n`` labeled segments and one capture point on each.

    One generator drives both the segment draw and the per-segment fraction,
    so the manifest is fixed by ``seed``. Coordinates and angles are rounded
    to their 9-significant-digit CSV form before the image paths are keyed,
    which keeps a manifest that went through CSV pointing at the same cache
    entries.
    """
    for seg in labeled:
        if not seg.attributes.get(LABEL_KEY):
            raise StreetCtxError(f"segment {seg.id!r} has no context label")
    total = len(labeled)
    if not 0 <= n <= total:
        raise StreetCtxError(f"cannot sample {n} segments from a collection of {total}")
    rng = Xoshiro256(seed)
    chosen = rng.shuffle_prefix(labeled.segments, n)
    width_id = max(5, len(str(n)))
    records = []
    for i, seg in enumerate(chosen):
        pt = point_at_fraction(seg, rng.random())
        loc = LatLon(quantize(pt.location.lat), quantize(pt.location.lon))
        bearing = quantize(pt.road_bearing)
        raw = camera_headings(bearing)
        heads = CameraHeadingPair(quantize(raw.left), quantize(raw.right))
        rec = SampleRecord(
            sample_id=f"p{i:0{width_id}d}",
            segment_id=seg.id,
            location=loc,
            road_bearing=bearing,
            headings=heads,
            label=StreetContext.parse(seg.attributes[LABEL_KEY]),
            image_paths=("", ""),
        )
        paths = tuple(cache_relpath(rec.request(s, width, height)) for s in ("L", "R"))
        records.append(replace(rec, image_paths=paths))
    return records


def mark_no_coverage(record: SampleRecord) -> SampleRecord:
    return replace(record, image_paths=(NO_COVERAGE, NO_COVERAGE))


def manifest_to_csv(records: Sequence[SampleRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    for r in records:
        for side, heading, path in r.sides():
            w.writerow([
                r.sample_id, r.segment_id, fmt(r.location.lat), fmt(r.location.lon),
                fmt(r.road_bearing), side, fmt(heading), r.label.name, path,
            ])
    return buf.getvalue()


def manifest_from_csv(text: str) -> list[SampleRecord]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != MANIFEST_COLUMNS:
        raise StreetCtxError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}")
    rows: dict[str, dict[str, dict]] = {}
    for row in reader:
        rows.setdefault(row["sample_id"], {})[row["side"]] = row
    records = []
    for sid, sides in rows.items():
        if set(sides) != {"L", "R"}:
            raise StreetCtxError(f"sample {sid!r} needs exactly one L and one R row")
        left, right = sides["L"], sides["R"]
        records.append(
            SampleRecord(
                sample_id=sid,
                segment_id=left["segment_id"],
                location=LatLon(float(left["lat"]), float(left["lon"])),
                road_bearing=float(left["road_bearing"]),
                headings=CameraHeadingPair(float(left["heading"]), float(right["heading"])),
                label=StreetContext.parse(left["label"]),
                image_paths=(left["image_path"], right["image_path"]),
            )
        )
    return records
