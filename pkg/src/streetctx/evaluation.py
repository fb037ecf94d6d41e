"""Train/validation split, confusion matrices and accuracy reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from streetctx.errors import StreetCtxError
from streetctx.rng import Xoshiro256

NA = "n/a"

# Validation accuracies of full-size ImageNet backbones on the proprietary
# Boston / San Francisco corpora. Shipped for reference only; nothing here
# reproduces them.
REFERENCE_TABLE1 = {
    "ResNet18": (0.8564, 0.8172),
    "ResNet34": (0.8545, 0.8202),
    "ResNet50": (0.8564, 0.8271),
    "AlexNet": (0.8316, 0.8169),
    "Inception-v3": (0.8779, 0.8417),
}


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]


def split_dataset(ids: Sequence[str], ratio: float = 0.8, seed: int = 0) -> SplitAssignment:
    """Seeded shuffle of sample-point ids; the first ``round(ratio * n)`` train.

    Splitting is by sample point, so both views of a pair always share a side.
    Rounding is half-up. Each partition keeps the input order.
    """
    ids = list(ids)
    if not ids:
        raise StreetCtxError("cannot split an empty manifest")
    if len(set(ids)) != len(ids):
        raise StreetCtxError("duplicate sample ids in manifest")
    if not 0.0 < ratio < 1.0:
        raise StreetCtxError(f"split ratio {ratio} outside (0, 1)")
    n_train = math.floor(Fraction(str(ratio)) * len(ids) + Fraction(1, 2))
    shuffled = Xoshiro256(seed).shuffle_prefix(ids, len(ids))
    train = set(shuffled[:n_train])
    return SplitAssignment(
        tuple(i for i in ids if i in train), tuple(i for i in ids if i not in train)
    )


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # rows: true label, columns: predicted label

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(truth: Sequence[str], pred: Sequence[str], catalog: Sequence[str]) -> ConfusionMatrix:
    if len(truth) != len(pred):
        raise StreetCtxError(f"{len(truth)} true labels but {len(pred)} predictions")
    index = {c: k for k, c in enumerate(catalog)}
    counts = np.zeros((len(catalog), len(catalog)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in index or p not in index:
            bad = t if t not in index else p
            raise StreetCtxError(f"label {bad!r} is not in the catalog")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(tuple(catalog), counts)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise StreetCtxError("accuracy of an empty confusion matrix is undefined")
    return float(np.trace(cm.counts)) / cm.total


def per_class_accuracy(cm: ConfusionMatrix) -> list[float | None]:
    """Diagonal over row sum; None for classes with no true samples."""
    rows = cm.counts.sum(axis=1)
    return [float(cm.counts[k, k]) / r if r else None for k, r in enumerate(rows)]


def _fmt(v):
    return NA if v is None else f"{v:.9g}"


def report_csv(cm: ConfusionMatrix, config: dict | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerow(["accuracy", _fmt(accuracy(cm))])
    w.writerow(["n_evaluated", cm.total])
    for name, acc in zip(cm.classes, per_class_accuracy(cm)):
        w.writerow([f"accuracy.{name}", _fmt(acc)])
    for key in sorted(config or {}):
        w.writerow([f"config.{key}", config[key]])
    return buf.getvalue()


def confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *cm.classes])
    for name, row in zip(cm.classes, cm.counts):
        w.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()


def reference_table_csv() -> str:
    lines = [
        "# published reference accuracies (full-size backbones, original city corpora); not reproduced here",
        "architecture,boston_val_acc,san_francisco_val_acc",
    ]
    lines += [f"{k},{b},{sf}" for k, (b, sf) in REFERENCE_TABLE1.items()]
    return "\n".join(lines) + "\n"


def write_report(cm: ConfusionMatrix, out_dir, config: dict | None = None) -> dict[str, Path]:
    """Write ``report.csv``, ``confusion.csv`` and the reference table into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report": (out / "report.csv", report_csv(cm, config)),
        "confusion": (out / "confusion.csv", confusion_csv(cm)),
        "reference": (out / "reference_table1.csv", reference_table_csv()),
    }
    for path, text in files.values():
        path.write_text(text)
    return {k: p for k, (p, _) in files.items()}
