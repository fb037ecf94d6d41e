import numpy as np
import pytest

from streetctx.geodata import LatLon, SegmentCollection, StreetSegment


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def seg(id_, *pts, **attrs):
    return StreetSegment(id_, [LatLon(lat, lon) for lat, lon in pts], attrs)


@pytest.fixture
def small_city():
    return SegmentCollection(
        [seg(f"s{i}", (42.35 + i * 1e-3, -71.06), (42.35 + i * 1e-3, -71.059), street_context="Park")
         for i in range(10)]
    )


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
