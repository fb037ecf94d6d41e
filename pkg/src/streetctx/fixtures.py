"""Synthetic city generator for demos and tests.

Produces short random polylines around a centre point, each with parcel and
transport attributes chosen so the labeling rules assign a prescribed street
context.
"""

from __future__ import annotations

import math

from streetctx.geodata import LatLon, SegmentCollection, StreetSegment
from streetctx.labeler import StreetContext
from streetctx.rng import Xoshiro256

# commercial_frac, transport, special
ATTRIBUTES_FOR = {
    StreetContext.Alley: (0.3, "Neighborhood", "Alley"),
    StreetContext.CommercialThroughway: (0.8, "Throughway", "None"),
    StreetContext.DowntownCommercial: (0.9, "Downtown", "None"),
    StreetContext.DowntownResidential: (0.2, "Downtown", "None"),
    StreetContext.Highway: (0.1, "Highway", "None"),
    StreetContext.HighwayRamp: (0.1, "HighwayRamp", "None"),
    StreetContext.Industrial: (0.4, "Neighborhood", "Industrial"),
    StreetContext.NeighborhoodCommercial: (0.7, "Neighborhood", "None"),
    StreetContext.NeighborhoodResidential: (0.1, "Neighborhood", "None"),
    StreetContext.Park: (0.0, "Neighborhood", "Park"),
    StreetContext.ResidentialThroughway: (0.3, "Throughway", "None"),
}

SIX_CLASSES = (
    StreetContext.Alley,
    StreetContext.CommercialThroughway,
    StreetContext.DowntownCommercial,
    StreetContext.DowntownResidential,
    StreetContext.Highway,
    StreetContext.Park,
)

M_PER_DEG = 111_194.93


def make_city(n_segments: int, labels=SIX_CLASSES, seed: int = 0,
              centre: LatLon = LatLon(42.35, -71.06), extent_m: float = 3000.0):
    """Return ``(segments, attribute_csv_text)``; labels are assigned round-robin."""
    rng = Xoshiro256(seed)
    labels = [StreetContext(l) for l in labels]
    cos_lat = math.cos(math.radians(centre.lat))
    segments = []
    rows = ["segment_id,commercial_frac,transport,special"]
    for i in range(n_segments):
        x = (rng.random() - 0.5) * extent_m
        y = (rng.random() - 0.5) * extent_m
        heading = rng.random() * 2 * math.pi
        pts = [(x, y)]
        for _ in range(1 + rng.randbelow(3)):
            heading += (rng.random() - 0.5) * 0.8
            step = 40.0 + rng.random() * 120.0
            x += step * math.sin(heading)
            y += step * math.cos(heading)
            pts.append((x, y))
        verts = [
            LatLon(round(centre.lat + py / M_PER_DEG, 7),
                   round(centre.lon + px / (M_PER_DEG * cos_lat), 7))
            for px, py in pts
        ]
        seg_id = f"s{i}"
        segments.append(StreetSegment(seg_id, verts, {"name": f"Street {i}"}))
        frac, transport, special = ATTRIBUTES_FOR[labels[i % len(labels)]]
        rows.append(f"{seg_id},{frac},{transport},{special}")
    return SegmentCollection(segments), "\n".join(rows) + "\n"
