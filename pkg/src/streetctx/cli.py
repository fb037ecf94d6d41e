"""``streetctx`` command line: one subcommand per pipeline stage.

Configuration is a JSON object of flat dotted keys (nested objects are
flattened on load). Any key can be overridden on the command line as
``--section.key value``; values are parsed as JSON when possible. The API key
for the live provider comes only from ``STREETCTX_API_KEY``.

Exit status: 0 success, 1 domain error, 2 usage error. Each successful run
appends one JSON line to the run log with the command, a config hash and the
SHA-256 of every declared input and output.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from streetctx import geodata, labeler, nn, pipeline, sampler, tsne
from streetctx.errors import StreetCtxError
from streetctx.evaluation import split_dataset, write_report
from streetctx.imagery import API_KEY_ENV, ImageCache, fetch_manifest, make_provider

DEFAULTS = {
    "paths.geojson": None,
    "paths.shapefile": None,
    "paths.shape_labels": None,
    "paths.segments": "segments.geojson",
    "paths.attributes": None,
    "paths.labeled": "labeled.geojson",
    "paths.manifest": "manifest.csv",
    "paths.fetched": "manifest.fetched.csv",
    "paths.cache": "cache",
    "paths.model": "model.sctx",
    "paths.history": "history.csv",
    "paths.reports": "reports",
    "paths.cam": "cam",
    "paths.features": None,
    "paths.embedding": "embedding.csv",
    "paths.scatter": "embedding.ppm",
    "paths.runlog": "runlog.jsonl",
    "city": "SanFrancisco",
    "city_labels": None,
    "labeler.threshold": labeler.DEFAULT_COMMERCIAL_THRESHOLD,
    "sampler.n": 100,
    "sampler.seed": 0,
    "image.width": 640,
    "image.height": 640,
    "provider.name": "synthetic",
    "provider.seed": 0,
    "provider.base_url": None,
    "provider.rate": 10.0,
    "fetch.parallelism": 4,
    "split.ratio": 0.8,
    "split.seed": 0,
    "train.epochs": 20,
    "train.batch_size": 32,
    "train.lr": 0.05,
    "train.momentum": 0.9,
    "train.seed": 0,
    "train.input_size": 64,
    "cam.class": None,
    "cam.alpha": 0.5,
    "cam.limit": 20,
    "tsne.perplexity": None,
    "tsne.iterations": 1000,
    "tsne.lr": 200.0,
    "tsne.seed": 0,
    "tsne.standardize": False,
    "tsne.limit": None,
}

# subcommand -> (flag aliases, input keys, output keys)
STAGES = {
    "ingest": ({"geojson": "paths.geojson", "shapefile": "paths.shapefile",
                "labels-csv": "paths.shape_labels", "out": "paths.segments"},
               ["paths.geojson", "paths.shapefile", "paths.shape_labels"], ["paths.segments"]),
    "label": ({"segments": "paths.segments", "attributes": "paths.attributes",
               "city": "city", "out": "paths.labeled"},
              ["paths.segments", "paths.attributes"], ["paths.labeled"]),
    "sample": ({"labeled": "paths.labeled", "n": "sampler.n", "seed": "sampler.seed",
                "out": "paths.manifest"},
               ["paths.labeled"], ["paths.manifest"]),
    "fetch": ({"manifest": "paths.manifest", "cache": "paths.cache", "provider": "provider.name",
               "parallelism": "fetch.parallelism", "out": "paths.fetched"},
              ["paths.manifest"], ["paths.fetched", "paths.cache"]),
    "train": ({"manifest": "paths.fetched", "cache": "paths.cache", "model": "paths.model",
               "history": "paths.history"},
              ["paths.fetched", "paths.cache"], ["paths.model", "paths.history"]),
    "eval": ({"manifest": "paths.fetched", "cache": "paths.cache", "model": "paths.model",
              "out": "paths.reports"},
             ["paths.fetched", "paths.cache", "paths.model"], ["paths.reports"]),
    "cam": ({"manifest": "paths.fetched", "cache": "paths.cache", "model": "paths.model",
             "out": "paths.cam", "class": "cam.class"},
            ["paths.fetched", "paths.cache", "paths.model"], ["paths.cam"]),
    "embed": ({"manifest": "paths.fetched", "cache": "paths.cache", "model": "paths.model",
               "features": "paths.features", "out": "paths.embedding"},
              ["paths.fetched", "paths.cache", "paths.model", "paths.features"],
              ["paths.embedding", "paths.scatter"]),
}


class UsageError(Exception):
    pass


def flatten(obj, prefix=""):
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser():
    p = argparse.ArgumentParser(prog="streetctx", description="Street-context pipeline")
    p.add_argument("--config", help="JSON config of dotted keys")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (aliases, _, _) in STAGES.items():
        sp = sub.add_parser(name)
        for flag in aliases:
            sp.add_argument(f"--{flag}", dest=flag.replace("-", "_"))
    return p


def resolve_config(args, extra):
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            cfg.update(flatten(json.loads(Path(args.config).read_text())))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or "." not in tok:
            raise UsageError(f"unrecognized argument {tok}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
        else:
            raw = next(it, None)
            if raw is None:
                raise UsageError(f"{tok} needs a value")
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key}")
        cfg[key] = _value(raw)
    aliases = STAGES[args.command][0]
    for flag, key in aliases.items():
        v = getattr(args, flag.replace("-", "_"))
        if v is not None:
            cfg[key] = _value(v) if not key.startswith("paths.") else v
    return cfg


def config_hash(cfg) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def hash_path(path, cache_views=None) -> dict[str, str]:
    """SHA-256 per file; directories expand to their files (sorted)."""
    p = Path(path)
    if cache_views is not None:
        files = sorted(p / rel for rel in cache_views)
    elif p.is_dir():
        files = sorted(f for f in p.rglob("*") if f.is_file())
    elif p.exists():
        files = [p]
    else:
        files = []
    return {str(f): hashlib.sha256(f.read_bytes()).hexdigest() for f in files}


def _profile(cfg):
    return labeler.context_catalog(cfg["city"], cfg["city_labels"])


def _records(cfg, key="paths.fetched"):
    return sampler.manifest_from_csv(Path(cfg[key]).read_text())


def _split(cfg, records):
    return split_dataset(pipeline.covered_ids(records), cfg["split.ratio"], cfg["split.seed"])


def _train_config(cfg):
    size = cfg["train.input_size"]
    size = (size, size) if isinstance(size, int) else tuple(size)
    return nn.TrainConfig(cfg["train.epochs"], cfg["train.batch_size"], cfg["train.lr"],
                          cfg["train.momentum"], cfg["train.seed"], size)


def _load_model(cfg):
    return nn.load_model(Path(cfg["paths.model"]).read_bytes())


def run_ingest(cfg):
    if cfg["paths.geojson"]:
        coll = geodata.parse_geojson_streets(Path(cfg["paths.geojson"]).read_bytes())
    elif cfg["paths.shapefile"]:
        labels = cfg["paths.shape_labels"]
        coll = geodata.parse_shapefile_polylines(
            Path(cfg["paths.shapefile"]).read_bytes(),
            Path(labels).read_text() if labels else None,
        )
    else:
        raise UsageError("ingest needs --geojson or --shapefile")
    Path(cfg["paths.segments"]).write_text(geodata.to_geojson(coll))
    print(f"ingested {len(coll)} segments")


def run_label(cfg):
    coll = geodata.parse_geojson_streets(Path(cfg["paths.segments"]).read_bytes())
    rows = None
    if cfg["paths.attributes"]:
        rows = labeler.read_attribute_csv(Path(cfg["paths.attributes"]).read_text())
    out = labeler.label_segments(coll, _profile(cfg), rows, cfg["labeler.threshold"])
    Path(cfg["paths.labeled"]).write_text(geodata.to_geojson(out))
    print(f"labeled {len(out)} segments")


def run_sample(cfg):
    coll = geodata.parse_geojson_streets(Path(cfg["paths.labeled"]).read_bytes())
    records = sampler.build_manifest(coll, cfg["sampler.n"], cfg["sampler.seed"],
                                     cfg["image.width"], cfg["image.height"])
    Path(cfg["paths.manifest"]).write_text(sampler.manifest_to_csv(records))
    print(f"sampled {len(records)} points")


def run_fetch(cfg):
    records = _records(cfg, "paths.manifest")
    provider = make_provider(cfg["provider.name"], cfg["provider.seed"], cfg["provider.base_url"],
                             cfg["provider.rate"])
    cache = ImageCache(cfg["paths.cache"])
    out, calls = fetch_manifest(records, provider, cache, os.environ.get(API_KEY_ENV),
                                cfg["image.width"], cfg["image.height"], cfg["fetch.parallelism"])
    Path(cfg["paths.fetched"]).write_text(sampler.manifest_to_csv(out))
    dropped = sum(not r.has_coverage for r in out)
    print(f"fetched {len(out) - dropped} samples ({calls} provider calls, {dropped} without coverage)")
    return {"provider_calls": calls}


def run_train(cfg):
    records = _records(cfg)
    catalog = pipeline.catalog_for(records, _profile(cfg))
    split = _split(cfg, records)
    model, history = pipeline.train_model(
        records, ImageCache(cfg["paths.cache"]), split, _train_config(cfg), catalog,
        log=lambda h: print(f"epoch {h.epoch}: loss {h.loss:.4f} acc {h.train_acc:.3f}"),
    )
    Path(cfg["paths.model"]).write_bytes(nn.save_model(model))
    Path(cfg["paths.history"]).write_text(nn.history_to_csv(history))


def _echo(cfg):
    keys = ["sampler.seed", "split.ratio", "split.seed", "train.epochs", "train.batch_size",
            "train.lr", "train.momentum", "train.seed", "train.input_size"]
    return {k: json.dumps(cfg[k]) for k in keys}


def run_eval(cfg):
    records = _records(cfg)
    split = _split(cfg, records)
    cm, _, _ = pipeline.evaluate_model(_load_model(cfg), records, ImageCache(cfg["paths.cache"]),
                                       split.val_ids)
    write_report(cm, cfg["paths.reports"], _echo(cfg))
    from streetctx.evaluation import accuracy

    print(f"validation accuracy {accuracy(cm):.4f} on {cm.total} images")


def run_cam(cfg):
    records = _records(cfg)
    ids = list(_split(cfg, records).val_ids)
    if cfg["cam.limit"] is not None:
        ids = ids[: cfg["cam.limit"]]
    written = pipeline.render_cams(_load_model(cfg), records, ImageCache(cfg["paths.cache"]), ids,
                                   cfg["paths.cam"], cfg["cam.class"], cfg["cam.alpha"])
    print(f"wrote {len(written) // 2} overlays")


def run_embed(cfg):
    if cfg["paths.features"]:
        ids, labels, X = tsne.read_feature_csv(Path(cfg["paths.features"]).read_text())
    else:
        records = _records(cfg)
        train_ids = list(_split(cfg, records).train_ids)
        if cfg["tsne.limit"] is not None:
            train_ids = train_ids[: cfg["tsne.limit"]]
        ids, labels, X = pipeline.extract_features(_load_model(cfg), records,
                                                   ImageCache(cfg["paths.cache"]), train_ids)
    tcfg = tsne.TsneConfig(perplexity=cfg["tsne.perplexity"], iterations=cfg["tsne.iterations"],
                           learning_rate=cfg["tsne.lr"], seed=cfg["tsne.seed"],
                           standardize=cfg["tsne.standardize"])
    emb = pipeline.embed_features(ids, labels, X, tcfg, cfg["paths.embedding"], cfg["paths.scatter"])
    print(f"embedded {len(ids)} points, KL {emb.kl:.4f}")


RUNNERS = {"ingest": run_ingest, "label": run_label, "sample": run_sample, "fetch": run_fetch,
           "train": run_train, "eval": run_eval, "cam": run_cam, "embed": run_embed}


def _io_hashes(cfg, keys, views):
    out = {}
    for key in keys:
        if not cfg.get(key):
            continue
        out.update(hash_path(cfg[key], views if key == "paths.cache" else None))
    return out


def _cache_views(cfg, manifest_key):
    path = cfg.get(manifest_key)
    if not path or not Path(path).exists():
        return []
    return [rel for r in sampler.manifest_from_csv(Path(path).read_text()) if r.has_coverage
            for _, _, rel in r.sides()]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args, extra)
        _, inputs, outputs = STAGES[args.command]
        for key in inputs:
            if cfg.get(key) and not Path(cfg[key]).exists():
                raise StreetCtxError(f"input {key} = {cfg[key]} does not exist")
        manifest_key = "paths.manifest" if args.command == "fetch" else "paths.fetched"
        in_hashes = _io_hashes(cfg, inputs, _cache_views(cfg, manifest_key))
        RUNNERS[args.command](cfg)
        out_hashes = _io_hashes(cfg, outputs, _cache_views(cfg, "paths.fetched"))
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"streetctx: error: {exc}", file=sys.stderr)
        return 2
    except (StreetCtxError, ValueError, OSError) as exc:
        print(f"streetctx {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    entry = {"command": args.command, "config_hash": config_hash(cfg),
             "inputs": in_hashes, "outputs": out_hashes}
    with open(cfg["paths.runlog"], "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
