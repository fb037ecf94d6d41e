"""Street-view image acquisition: request keys, PPM codec, disk cache,
providers (live HTTP and synthetic), rate limiting and bounded-parallel
fetching.

The API key is read from ``STREETCTX_API_KEY`` and only ever appended to the
outgoing URL; it never reaches the cache metadata, manifests or errors.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from streetctx.errors import (
    AuthError,
    NoCoverageError,
    ParseError,
    ProviderError,
    RetryableError,
    StreetCtxError,
)
from streetctx.geodata import LatLon

API_KEY_ENV = "STREETCTX_API_KEY"
MAX_SIDE = 640
FOV = 90


@dataclass(frozen=True)
class ImageRequest:
    location: LatLon
    heading: float
    fov: int = FOV
    width: int = MAX_SIDE
    height: int = MAX_SIDE

    def __post_init__(self):
        if self.fov != FOV:
            raise ValueError("field of view is fixed at 90 degrees")
        if not (1 <= self.width <= MAX_SIDE and 1 <= self.height <= MAX_SIDE):
            raise ValueError(f"image size {self.width}x{self.height} exceeds {MAX_SIDE}x{MAX_SIDE}")
        if not 0.0 <= self.heading < 360.0:
            raise ValueError(f"heading {self.heading} outside [0, 360)")


class RgbImage:
    """Immutable 8-bit RGB raster, stored as an (height, width, 3) array."""

    __slots__ = ("pixels",)

    def __init__(self, pixels):
        arr = np.array(pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (height, width, 3) pixels, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    def __setattr__(self, name, value):
        raise AttributeError("RgbImage is immutable")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.tobytes()))

    def __repr__(self):
        return f"RgbImage({self.width}x{self.height})"


def canonical_request(req: ImageRequest) -> str:
    return (
        f"size={req.width}x{req.height}"
        f"&location={req.location.lat:.6f},{req.location.lon:.6f}"
        f"&heading={req.heading:.1f}&fov={FOV}"
    )


def cache_key(req: ImageRequest | str) -> str:
    text = req if isinstance(req, str) else canonical_request(req)
    return hashlib.sha256(text.encode("ascii")).hexdigest()


def cache_relpath(req: ImageRequest) -> str:
    key = cache_key(req)
    return f"{key[:2]}/{key}.bin"


# -- PPM -------------------------------------------------------------------


def encode_ppm(image: RgbImage) -> bytes:
    return f"P6\n{image.width} {image.height}\n255\n".encode("ascii") + image.tobytes()


def decode_ppm(data: bytes) -> RgbImage:
    if data[:2] != b"P6":
        raise ParseError(f"unsupported PPM magic {data[:2]!r}")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError("malformed PPM header")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError("malformed PPM header")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ParseError(f"unsupported PPM maxval {maxval}")
    need = 3 * w * h
    body = data[pos : pos + need]
    if len(body) < need:
        raise ParseError(f"PPM pixel data too short: {len(body)} of {need} bytes")
    return RgbImage(np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3))


def pillow_decoder(data: bytes) -> RgbImage:
    """Decode JPEG/PNG provider payloads. Needs Pillow."""
    import io

    from PIL import Image

    try:
        with Image.open(io.BytesIO(data)) as im:
            return RgbImage(np.asarray(im.convert("RGB")))
    except Exception as exc:
        raise ParseError(f"could not decode {len(data)}-byte image payload: {exc}") from exc


def resize_nearest(image: RgbImage, width: int, height: int) -> RgbImage:
    """Nearest-neighbour resample; source index is ``floor(i * src / dst)``."""
    if (image.width, image.height) == (width, height):
        return image
    rows = (np.arange(height) * image.height) // height
    cols = (np.arange(width) * image.width) // width
    return RgbImage(image.pixels[rows][:, cols])


# -- synthetic imagery -----------------------------------------------------

# (rgb, shape); quadrant is label code mod 4: 0 top-left, 1 top-right,
# 2 bottom-left, 3 bottom-right.
MOTIFS = {
    0: ((150, 60, 40), "block"),      # Alley: brick
    1: ((230, 200, 40), "block"),     # CommercialThroughway
    2: ((40, 80, 200), "block"),      # DowntownCommercial
    3: ((200, 110, 220), "block"),    # DowntownResidential
    4: ((60, 60, 60), "band"),        # Highway: gray band
    5: ((185, 185, 185), "band"),     # HighwayRamp
    6: ((120, 90, 20), "block"),      # Industrial
    7: ((240, 130, 30), "block"),     # NeighborhoodCommercial
    8: ((120, 210, 130), "block"),    # NeighborhoodResidential
    9: ((30, 150, 40), "block"),      # Park: green
    10: ((40, 200, 200), "block"),    # ResidentialThroughway
}
BACKGROUND_RANGE = (90, 166)
MOTIF_JITTER = 20


def motif_quadrant(label) -> int:
    return int(label) % 4


def quadrant_bounds(quadrant: int, width: int, height: int):
    """``(y0, y1, x0, x1)`` of a quadrant of a ``width`` x ``height`` raster."""
    hx, hy = width // 2, height // 2
    x0, x1 = (0, hx) if quadrant in (0, 2) else (hx, width)
    y0, y1 = (0, hy) if quadrant in (0, 1) else (hy, height)
    return y0, y1, x0, x1


def synth_render(label, seed: int, width: int = MAX_SIDE, height: int = MAX_SIDE) -> RgbImage:
    """Procedural stand-in for a street-view frame of class ``label``.

    Seeded per-pixel background noise, with a class-coloured motif (a block,
    or a full-width band for the highway classes) placed at a seeded spot
    inside the class's quadrant.
    """
    code = int(label)
    rgb, shape = MOTIFS[code]
    rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
    lo, hi = BACKGROUND_RANGE
    img = rng.integers(lo, hi, size=(height, width, 3), dtype=np.int16)

    y0, y1, x0, x1 = quadrant_bounds(motif_quadrant(code), width, height)
    qh, qw = y1 - y0, x1 - x0
    if shape == "band":
        mh = max(1, int(round(qh * rng.uniform(0.3, 0.5))))
        mw = qw
    else:
        mh = max(1, int(round(qh * rng.uniform(0.5, 0.8))))
        mw = max(1, int(round(qw * rng.uniform(0.5, 0.8))))
    oy = y0 + int(rng.integers(0, qh - mh + 1))
    ox = x0 + int(rng.integers(0, qw - mw + 1))
    jitter = rng.integers(-MOTIF_JITTER, MOTIF_JITTER + 1, size=(mh, mw, 3), dtype=np.int16)
    img[oy : oy + mh, ox : ox + mw] = np.asarray(rgb, dtype=np.int16) + jitter
    return RgbImage(np.clip(img, 0, 255).astype(np.uint8))


# -- cache -----------------------------------------------------------------


class ImageCache:
    """Content-addressed payload cache.

    Layout: ``{root}/{key[:2]}/{key}.bin`` holds the raw provider payload and
    ``{key}.json`` its metadata. Writes go to a temporary file in the target
    directory and are renamed into place, so readers never see partial files.
    """

    def __init__(self, root, clock: Callable[[], float] = time.time):
        self.root = Path(root)
        self.clock = clock

    def path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.bin"

    def meta_path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> bytes | None:
        try:
            return self.path(key).read_bytes()
        except FileNotFoundError:
            return None

    def __contains__(self, key):
        return self.path(key).exists()

    def put(self, req: ImageRequest, payload: bytes, provider: str) -> str:
        key = cache_key(req)
        meta = {
            "key": key,
            "provider": provider,
            "fetched_at": self.clock(),
            "request": canonical_request(req),
        }
        # Metadata first: a visible .bin always has its .json.
        _atomic_write(self.meta_path(key), json.dumps(meta, sort_keys=True).encode())
        _atomic_write(self.path(key), payload)
        return key

    def meta(self, key: str) -> dict:
        return json.loads(self.meta_path(key).read_text())

    def verify(self, key: str) -> bool:
        return cache_key(self.meta(key)["request"]) == key


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- providers -------------------------------------------------------------


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free."""

    def __init__(self, rate: float = 10.0, capacity: float | None = None,
                 clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self.tokens = self.capacity
        self.clock = clock
        self.sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self):
        while True:
            with self._lock:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                # tolerance: a refill can land a rounding error short of 1
                if self.tokens >= 1.0 - 1e-9:
                    self.tokens = max(0.0, self.tokens - 1.0)
                    return
                wait = (1.0 - self.tokens) / self.rate
            self.sleep(wait)


class SyntheticProvider:
    """Offline provider rendering :func:`synth_render` frames as PPM.

    The render seed mixes the provider seed with the request key, so the two
    views of a sample (different headings) get different frames.
    """

    name = "synthetic"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls = 0
        self._lock = threading.Lock()

    def fetch(self, req: ImageRequest, label=None, api_key=None) -> bytes:
        if label is None:
            raise StreetCtxError("synthetic provider needs the sample label")
        with self._lock:
            self.calls += 1
        mix = int(cache_key(req)[:16], 16) ^ (self.seed & 0xFFFFFFFFFFFFFFFF)
        return encode_ppm(synth_render(label, mix, req.width, req.height))


class StreetViewProvider:
    """HTTP static street-view endpoint (Google Street View Static API shape)."""

    name = "live"
    DEFAULT_URL = "https://maps.googleapis.com/maps/api/streetview"

    def __init__(self, base_url: str = DEFAULT_URL, limiter: TokenBucket | None = None,
                 timeout: float = 30.0):
        self.base_url = base_url
        self.limiter = limiter or TokenBucket(10.0)
        self.timeout = timeout

    def fetch(self, req: ImageRequest, label=None, api_key=None) -> bytes:
        if not api_key:
            raise AuthError(f"no API key; set {API_KEY_ENV}", request=canonical_request(req))
        echo = canonical_request(req)
        url = f"{self.base_url}?{echo}&key={api_key}"
        self.limiter.acquire()
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                status = resp.status
                body = resp.read()
        except urllib.error.HTTPError as exc:
            status, body = exc.code, b""
        except urllib.error.URLError as exc:
            raise RetryableError(f"network error: {exc.reason}", request=echo) from None
        if status == 200:
            return body
        if status in (401, 403):
            raise AuthError(f"HTTP {status} for {echo}", status, echo)
        if status == 404:
            raise NoCoverageError(f"HTTP 404 (no coverage) for {echo}", status, echo)
        if status == 429 or status >= 500:
            raise RetryableError(f"HTTP {status} for {echo}", status, echo)
        raise ProviderError(f"HTTP {status} for {echo}", status, echo)


def make_provider(name: str, seed: int = 0, base_url: str | None = None, rate: float = 10.0):
    if name == "synthetic":
        return SyntheticProvider(seed)
    if name == "live":
        return StreetViewProvider(base_url or StreetViewProvider.DEFAULT_URL, TokenBucket(rate))
    raise StreetCtxError(f"unknown provider {name!r}; known: synthetic, live")


# -- fetching --------------------------------------------------------------


def fetch_image(req: ImageRequest, provider, cache: ImageCache, api_key=None, label=None,
                decoder=decode_ppm) -> RgbImage:
    key = cache_key(req)
    payload = cache.get(key)
    if payload is None:
        payload = provider.fetch(req, label=label, api_key=api_key)
        image = _decode(decoder, payload)
        cache.put(req, payload, provider.name)
        return image
    return _decode(decoder, payload)


def _decode(decoder, payload):
    try:
        return decoder(payload)
    except ParseError as exc:
        raise ParseError(f"cannot decode {len(payload)}-byte payload: {exc}") from exc


def fetch_pair(sample, provider, cache: ImageCache, api_key=None, width=MAX_SIDE,
               height=MAX_SIDE, decoder=decode_ppm) -> tuple[RgbImage, RgbImage]:
    """Left and right views of one sample, from cache when present."""
    return tuple(
        fetch_image(sample.request(side, width, height), provider, cache, api_key,
                    sample.label, decoder)
        for side in ("L", "R")
    )


def fetch_manifest(records, provider, cache: ImageCache, api_key=None, width=MAX_SIDE,
                   height=MAX_SIDE, parallelism: int = 4, retries: int = 2,
                   backoff: float = 1.0, sleep=time.sleep, decoder=decode_ppm):
    """Fill the cache for every view of every covered record.

    At most ``parallelism`` requests are in flight. Samples whose provider
    reports no coverage are returned marked ``status=no_coverage``; other
    provider errors propagate after ``retries`` attempts on retryable ones.
    Returns ``(records, n_provider_calls)``.
    """
    from streetctx.sampler import mark_no_coverage

    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    calls = 0
    calls_lock = threading.Lock()

    def one(rec, side):
        nonlocal calls
        req = rec.request(side, width, height)
        if cache_key(req) in cache:
            return True
        for attempt in range(retries + 1):
            try:
                with calls_lock:
                    calls += 1
                payload = provider.fetch(req, label=rec.label, api_key=api_key)
                break
            except NoCoverageError:
                return False
            except RetryableError:
                if attempt == retries:
                    raise
                sleep(backoff * 2**attempt)
        _decode(decoder, payload)
        cache.put(req, payload, provider.name)
        return True

    jobs = [(r, s) for r in records if r.has_coverage for s in ("L", "R")]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        results = list(pool.map(lambda job: one(*job), jobs))
    covered = {}
    for (rec, _), ok in zip(jobs, results):
        covered[rec.sample_id] = covered.get(rec.sample_id, True) and ok
    out = [r if covered.get(r.sample_id, False) else mark_no_coverage(r) for r in records]
    return out, calls


def load_pair(record, cache: ImageCache, decoder=decode_ppm) -> tuple[RgbImage, RgbImage]:
    """Decode a record's two cached views; missing entries raise."""
    out = []
    for _, _, rel in record.sides():
        path = cache.root / rel
        try:
            out.append(_decode(decoder, path.read_bytes()))
        except FileNotFoundError:
            raise StreetCtxError(f"sample {record.sample_id}: image {rel} not in cache") from None
    return tuple(out)
