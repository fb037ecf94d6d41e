"""Run every CLI stage on the synthetic fixture inside one working directory."""

import contextlib
import json
import os
from pathlib import Path

from streetctx import geodata
from streetctx.cli import main
from streetctx.fixtures import make_city

# small enough for the unit suite; every seed is explicit
SMALL = {
    "city": "SanFrancisco",
    "sampler": {"n": 120, "seed": 7},
    "image": {"width": 32, "height": 32},
    "provider": {"name": "synthetic", "seed": 3},
    "fetch": {"parallelism": 2},
    "split": {"seed": 5},
    "train": {"epochs": 12, "batch_size": 16, "seed": 1, "input_size": 32},
    "cam": {"limit": 4},
    "tsne": {"iterations": 250, "seed": 2},
}

STAGE_ARGS = [
    ["ingest", "--geojson", "city.geojson", "--out", "segments.geojson"],
    ["label", "--segments", "segments.geojson", "--attributes", "attrs.csv"],
    ["sample"],
    ["fetch"],
    ["train"],
    ["eval"],
    ["cam"],
    ["embed"],
]


@contextlib.contextmanager
def chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def write_inputs(workdir, n_segments=150, seed=0, config=SMALL):
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    segs, attrs = make_city(n_segments, seed=seed)
    (workdir / "city.geojson").write_text(geodata.to_geojson(segs))
    (workdir / "attrs.csv").write_text(attrs)
    (workdir / "config.json").write_text(json.dumps(config))


def run_stage(workdir, args):
    with chdir(workdir):
        return main(["--config", "config.json", *args])


def run_pipeline(workdir, **kw):
    write_inputs(workdir, **kw)
    codes = [run_stage(workdir, a) for a in STAGE_ARGS]
    return codes
