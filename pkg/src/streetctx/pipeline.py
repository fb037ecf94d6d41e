"""Stage functions shared by the command line and the demo scripts."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from streetctx import cam as camlib
from streetctx import nn, tsne
from streetctx.errors import StreetCtxError
from streetctx.evaluation import SplitAssignment, confusion_matrix
from streetctx.imagery import ImageCache, encode_ppm, load_pair, resize_nearest
from streetctx.labeler import StreetContext


def catalog_for(records, profile=None) -> list[str]:
    """Labels present in ``records``, in code order, restricted to ``profile``."""
    present = sorted({r.label for r in records if r.has_coverage})
    if profile is not None:
        outside = [c.name for c in present if c not in profile.catalog]
        if outside:
            raise StreetCtxError(f"labels {outside} not in profile {profile.name}")
    return [StreetContext(c).name for c in present]


def load_views(records, cache: ImageCache, ids=None):
    """Decoded views of covered records as ``(view_ids, images, label_names)``.

    ``ids`` restricts to those sample ids. View ids are ``{sample_id}_{L|R}``.
    """
    keep = None if ids is None else set(ids)
    view_ids, images, labels = [], [], []
    for rec in records:
        if not rec.has_coverage or (keep is not None and rec.sample_id not in keep):
            continue
        for (side, _, _), im in zip(rec.sides(), load_pair(rec, cache)):
            view_ids.append(f"{rec.sample_id}_{side}")
            images.append(im)
            labels.append(rec.label.name)
    return view_ids, images, labels


def covered_ids(records):
    return [r.sample_id for r in records if r.has_coverage]


def train_model(records, cache, split: SplitAssignment, cfg: nn.TrainConfig, catalog, log=None):
    _, images, labels = load_views(records, cache, split.train_ids)
    index = {c: k for k, c in enumerate(catalog)}
    return nn.train(images, [index[l] for l in labels], nn.streetnet(len(catalog)), cfg,
                    catalog, log=log)


def _model_inputs(model, images):
    h, w = model.input_shape[1:]
    return [resize_nearest(im, w, h) for im in images]


def evaluate_model(model, records, cache, ids):
    view_ids, images, truth = load_views(records, cache, ids)
    preds = nn.predict_batch(model, _model_inputs(model, images))
    pred_names = [model.catalog[p.class_index] for p in preds]
    return confusion_matrix(truth, pred_names, model.catalog), view_ids, pred_names


def render_cams(model, records, cache, ids, out_dir, class_name=None, alpha=0.5):
    """Overlay PPM + JSON sidecar per view; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    view_ids, images, _ = load_views(records, cache, ids)
    preds = nn.predict_batch(model, _model_inputs(model, images))
    forced = None
    if class_name is not None:
        if class_name not in model.catalog:
            raise StreetCtxError(f"class {class_name!r} not in model catalog {list(model.catalog)}")
        forced = model.catalog.index(class_name)
    written = []
    for vid, im, pred in zip(view_ids, images, preds):
        amap = camlib.cam_for_prediction(model, pred, forced)
        up = camlib.bilinear_upsample(amap, im.width, im.height)
        c = pred.class_index if forced is None else forced
        ppm = out / f"{vid}.ppm"
        ppm.write_bytes(encode_ppm(camlib.render_overlay(im, up, alpha)))
        side = out / f"{vid}.json"
        side.write_text(camlib.cam_sidecar(vid, model.catalog[c], up) + "\n")
        written += [ppm, side]
    return written


def extract_features(model, records, cache, ids):
    view_ids, images, labels = load_views(records, cache, ids)
    preds = nn.predict_batch(model, _model_inputs(model, images))
    X = np.stack([p.penultimate for p in preds]) if preds else np.zeros((0, 0))
    return view_ids, labels, X


def embed_features(view_ids, labels, X, cfg: tsne.TsneConfig, out_csv, out_ppm=None):
    emb = tsne.tsne_embed(X, cfg)
    Path(out_csv).write_text(tsne.embedding_to_csv(emb, view_ids, labels))
    if out_ppm is not None:
        Path(out_ppm).write_bytes(encode_ppm(tsne.scatter_image(emb.Y, labels)))
    return emb
