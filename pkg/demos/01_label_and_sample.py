"""
Labeling streets and sampling camera positions
==============================================

Build a small synthetic street network, give every segment a street-context
label from its land-use attributes, then pick sample points along segments
with a camera pair looking 45 degrees either side of the road.
"""

# %%
# A fixture city: 30 short polylines around Boston with attribute rows.
from streetctx.fixtures import make_city

segments, attribute_csv = make_city(30, seed=0)
print(len(segments), "segments")
print(attribute_csv.splitlines()[:3])

# %%
# Geometry helpers work on plain lat/lon pairs.
from streetctx.geodata import LatLon, haversine_m, initial_bearing, polyline_length_m

a, b = LatLon(42.3601, -71.0589), LatLon(42.3736, -71.1097)
print(f"{haversine_m(a, b):.1f} m at bearing {initial_bearing(a, b):.1f} deg")
print(f"first segment is {polyline_length_m(segments[0]):.1f} m long")

# %%
# The rule table: special conditions win, then highways, then side use x transport.
from streetctx.labeler import (SegmentAttributes, SideUse, Special, Transport, classify_street,
                               context_catalog, label_segments, read_attribute_csv)

print(classify_street(SegmentAttributes(SideUse.Commercial, Transport.Throughway, Special.None_)).name)
print(classify_street(SegmentAttributes(SideUse.Residential, Transport.Throughway, Special.Park)).name)

sf = context_catalog("SanFrancisco")
boston = context_catalog("Boston")
print(len(sf.catalog), "San Francisco classes;", len(boston.catalog), "Boston classes")

labeled = label_segments(segments, sf, read_attribute_csv(attribute_csv))
print({s.id: s.attributes["street_context"] for s in list(labeled)[:4]})

# %%
# Sampling is seeded; the manifest is a plain CSV.
from streetctx.sampler import build_manifest, manifest_to_csv

records = build_manifest(labeled, 8, seed=42, width=640, height=640)
r = records[0]
print(r.sample_id, r.segment_id, r.location, f"road {r.road_bearing:.1f}", r.headings)
print(manifest_to_csv(records).splitlines()[0])
print(r.request("L", 640, 640))
