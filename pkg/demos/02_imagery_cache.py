"""
Street-view frames through a content-addressed cache
====================================================

Requests are canonicalised and hashed; the synthetic provider renders a
class-coded frame offline so the whole pipeline runs without a network.
"""

# %%
import tempfile
from pathlib import Path

from streetctx.fixtures import make_city
from streetctx.imagery import (ImageCache, SyntheticProvider, cache_key, canonical_request,
                               decode_ppm, fetch_manifest)
from streetctx.labeler import context_catalog, label_segments, read_attribute_csv
from streetctx.sampler import build_manifest

segments, attrs = make_city(12, seed=4)
labeled = label_segments(segments, context_catalog("SanFrancisco"), read_attribute_csv(attrs))
records = build_manifest(labeled, 6, seed=1, width=64, height=64)

req = records[0].request("L", 64, 64)
print(canonical_request(req))
print(cache_key(req))

# %%
# First fetch renders every view; the second is served from the cache.
out = Path(tempfile.mkdtemp(prefix="streetctx-demo-"))
cache = ImageCache(out / "cache")
provider = SyntheticProvider(seed=5)
records, calls = fetch_manifest(records, provider, cache, width=64, height=64)
print("provider calls:", calls)
_, calls = fetch_manifest(records, provider, cache, width=64, height=64)
print("provider calls on the second pass:", calls)

# %%
# Each frame is stored as binary PPM next to a JSON metadata record.
key = cache_key(req)
path = cache.path(key)
img = decode_ppm(path.read_bytes())
print(path.relative_to(out), img.width, img.height, records[0].label.name)
print(cache.meta(key))
print("checksum ok:", cache.verify(key))
(out / "frame.ppm").write_bytes(path.read_bytes())
print("wrote", out / "frame.ppm")
