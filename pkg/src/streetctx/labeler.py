"""San Francisco street-context rules.

Three stages decide a label: side use (from the commercial share of the
parcels along the street), transport context, and special conditions. When
they disagree the precedence is special condition, then highway transport,
then the side-use x transport grid.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from streetctx.errors import StreetCtxError

DEFAULT_COMMERCIAL_THRESHOLD = 0.5
LABEL_KEY = "street_context"


class StreetContext(enum.IntEnum):
    Alley = 0
    CommercialThroughway = 1
    DowntownCommercial = 2
    DowntownResidential = 3
    Highway = 4
    HighwayRamp = 5
    Industrial = 6
    NeighborhoodCommercial = 7
    NeighborhoodResidential = 8
    Park = 9
    ResidentialThroughway = 10

    @classmethod
    def parse(cls, name: str) -> "StreetContext":
        try:
            return cls[name.strip()]
        except KeyError:
            raise StreetCtxError(f"unknown street context {name!r}") from None


class SideUse(str, enum.Enum):
    Commercial = "Commercial"
    Residential = "Residential"
    Mixed = "Mixed"
    None_ = "None"


class Transport(str, enum.Enum):
    Throughway = "Throughway"
    Highway = "Highway"
    HighwayRamp = "HighwayRamp"
    Downtown = "Downtown"
    Neighborhood = "Neighborhood"


class Special(str, enum.Enum):
    None_ = "None"
    Alley = "Alley"
    Park = "Park"
    Industrial = "Industrial"


@dataclass(frozen=True)
class SegmentAttributes:
    side_use: SideUse = SideUse.None_
    transport: Transport = Transport.Neighborhood
    special: Special = Special.None_
    commercial_frac: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "side_use", SideUse(self.side_use))
        object.__setattr__(self, "transport", Transport(self.transport))
        object.__setattr__(self, "special", Special(self.special))
        if self.commercial_frac is not None and not 0.0 <= self.commercial_frac <= 1.0:
            raise ValueError(f"commercial_frac {self.commercial_frac} outside [0, 1]")

    @classmethod
    def from_fraction(cls, commercial_frac, transport, special="None",
                      threshold=DEFAULT_COMMERCIAL_THRESHOLD):
        return cls(derive_side_use(commercial_frac, threshold), transport, special,
                   commercial_frac)


def derive_side_use(commercial_frac: float, threshold: float = DEFAULT_COMMERCIAL_THRESHOLD) -> SideUse:
    if not 0.0 <= commercial_frac <= 1.0:
        raise ValueError(f"commercial_frac {commercial_frac} outside [0, 1]")
    return SideUse.Commercial if commercial_frac >= threshold else SideUse.Residential


_SPECIAL = {
    Special.Alley: StreetContext.Alley,
    Special.Park: StreetContext.Park,
    Special.Industrial: StreetContext.Industrial,
}

_GRID = {
    (SideUse.Commercial, Transport.Throughway): StreetContext.CommercialThroughway,
    (SideUse.Residential, Transport.Throughway): StreetContext.ResidentialThroughway,
    (SideUse.Commercial, Transport.Downtown): StreetContext.DowntownCommercial,
    (SideUse.Residential, Transport.Downtown): StreetContext.DowntownResidential,
    (SideUse.Commercial, Transport.Neighborhood): StreetContext.NeighborhoodCommercial,
    (SideUse.Residential, Transport.Neighborhood): StreetContext.NeighborhoodResidential,
}

# Mixed and None side uses are low-confidence fallbacks.
_SIDE_FALLBACK = {SideUse.Mixed: SideUse.Commercial, SideUse.None_: SideUse.Residential}


def classify_street(attrs: SegmentAttributes) -> StreetContext:
    if attrs.special is not Special.None_:
        return _SPECIAL[attrs.special]
    if attrs.transport is Transport.Highway:
        return StreetContext.Highway
    if attrs.transport is Transport.HighwayRamp:
        return StreetContext.HighwayRamp
    side = _SIDE_FALLBACK.get(attrs.side_use, attrs.side_use)
    return _GRID[(side, attrs.transport)]


def is_low_confidence(attrs: SegmentAttributes) -> bool:
    """True when the label relied on the Mixed/None side-use fallback."""
    return (
        attrs.special is Special.None_
        and attrs.transport not in (Transport.Highway, Transport.HighwayRamp)
        and attrs.side_use in _SIDE_FALLBACK
    )


@dataclass(frozen=True)
class CityProfile:
    name: str
    catalog: tuple[StreetContext, ...]

    def __post_init__(self):
        cat = tuple(StreetContext(c) for c in self.catalog)
        if not cat:
            raise ValueError("city catalog must not be empty")
        if len(set(cat)) != len(cat):
            raise ValueError("city catalog has duplicate labels")
        object.__setattr__(self, "catalog", cat)

    def __contains__(self, label):
        return label in self.catalog

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.catalog]


KNOWN_PROFILES = ("SanFrancisco", "Boston", "Custom")


def context_catalog(profile: str, labels: Sequence[str | StreetContext] | None = None) -> CityProfile:
    """Catalog of labels in use for a city.

    ``SanFrancisco`` has all 11 contexts; ``Boston`` drops DowntownResidential;
    ``Custom`` takes the caller's ``labels``.
    """
    if profile == "SanFrancisco":
        return CityProfile(profile, tuple(StreetContext))
    if profile == "Boston":
        return CityProfile(
            profile, tuple(c for c in StreetContext if c is not StreetContext.DowntownResidential)
        )
    if profile == "Custom":
        if not labels:
            raise StreetCtxError("Custom profile needs a non-empty label list")
        return CityProfile(
            profile,
            tuple(c if isinstance(c, StreetContext) else StreetContext.parse(c) for c in labels),
        )
    raise StreetCtxError(f"unknown city profile {profile!r}; known profiles: {', '.join(KNOWN_PROFILES)}")


_REMAP = {StreetContext.DowntownResidential: StreetContext.DowntownCommercial}


def remap_to_profile(label: StreetContext, profile: CityProfile) -> StreetContext:
    if label in profile.catalog:
        return label
    target = _REMAP.get(label)
    if target is not None and target in profile.catalog:
        return target
    raise StreetCtxError(f"label {label.name} has no counterpart in profile {profile.name}")


# -- bulk labeling ---------------------------------------------------------


def read_attribute_csv(text: str) -> dict[str, dict[str, str]]:
    """Rows of ``segment_id,commercial_frac,transport,special`` keyed by id."""
    reader = csv.DictReader(io.StringIO(text))
    need = ["segment_id", "commercial_frac", "transport", "special"]
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames[:4]] != need:
        raise StreetCtxError("attribute CSV header must be segment_id,commercial_frac,transport,special")
    return {row["segment_id"]: row for row in reader}


def attributes_from_mapping(m, threshold=DEFAULT_COMMERCIAL_THRESHOLD) -> SegmentAttributes:
    frac = m.get("commercial_frac")
    transport = (m.get("transport") or "Neighborhood").strip()
    special = (m.get("special") or "None").strip()
    try:
        if frac not in (None, ""):
            return SegmentAttributes.from_fraction(float(frac), transport, special, threshold)
        return SegmentAttributes((m.get("side_use") or "None").strip(), transport, special)
    except ValueError as exc:
        raise StreetCtxError(str(exc)) from exc


def label_segments(collection, profile: CityProfile, attribute_rows=None,
                   threshold=DEFAULT_COMMERCIAL_THRESHOLD):
    """Attach ``street_context`` to every segment.

    Attributes come from ``attribute_rows`` (see :func:`read_attribute_csv`)
    when the segment has a row there, otherwise from the segment's own
    attributes. A segment that already carries ``street_context`` and has no
    row is only remapped to the profile.
    """
    from streetctx.geodata import SegmentCollection

    attribute_rows = attribute_rows or {}
    out = []
    for seg in collection:
        row = attribute_rows.get(seg.id)
        extra = {}
        if row is None and LABEL_KEY in seg.attributes:
            label = StreetContext.parse(seg.attributes[LABEL_KEY])
        else:
            attrs = attributes_from_mapping(row if row is not None else seg.attributes, threshold)
            label = classify_street(attrs)
            if is_low_confidence(attrs):
                extra["label_confidence"] = "low"
        label = remap_to_profile(label, profile)
        out.append(seg.with_attributes(**{LABEL_KEY: label.name}, **extra))
    return SegmentCollection(out)
