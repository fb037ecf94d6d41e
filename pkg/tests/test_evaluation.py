import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streetctx import evaluation as ev
from streetctx.errors import StreetCtxError
from streetctx.fixtures import make_city
from streetctx.labeler import context_catalog, label_segments, read_attribute_csv
from streetctx.sampler import build_manifest

ABC = ("A", "B", "C")


def test_split_ten_points():
    s = ev.split_dataset([f"p{i}" for i in range(10)], seed=3)
    assert (len(s.train_ids), len(s.val_ids)) == (8, 2)
    assert s == ev.split_dataset([f"p{i}" for i in range(10)], seed=3)


@pytest.mark.parametrize("n,train", [(1, 1), (3, 2), (5, 4), (7, 6), (8, 6), (13, 10)])
def test_split_rounds_half_up(n, train):
    # 0.8 * 3 = 2.4 -> 2; 0.8 * 8 = 6.4 -> 6; 0.8 * 13 = 10.4 -> 10
    assert len(ev.split_dataset([str(i) for i in range(n)]).train_ids) == train


def test_split_half_boundary():
    # 0.5 * 5 = 2.5 rounds up
    assert len(ev.split_dataset(list("abcde"), ratio=0.5).train_ids) == 3


def test_split_errors():
    with pytest.raises(StreetCtxError, match="empty"):
        ev.split_dataset([])
    with pytest.raises(StreetCtxError, match="duplicate"):
        ev.split_dataset(["a", "a"])


def test_split_keeps_views_of_a_pair_together():
    segs, attrs = make_city(500, seed=2)
    labeled = label_segments(segs, context_catalog("SanFrancisco"), read_attribute_csv(attrs))
    records = build_manifest(labeled, 500, seed=4, width=64, height=64)
    split = ev.split_dataset([r.sample_id for r in records], seed=9)
    side = {sid: "train" for sid in split.train_ids} | {sid: "val" for sid in split.val_ids}
    for r in records:
        parts = {side[r.sample_id]}
        for path in r.image_paths:
            owner = next(x for x in records if path in x.image_paths)
            parts.add(side[owner.sample_id])
        assert len(parts) == 1
    assert len(split.val_ids) == 100


@settings(max_examples=80, deadline=None)
@given(st.lists(st.text(min_size=1, max_size=4), min_size=1, max_size=60, unique=True),
       st.floats(0.05, 0.95), st.integers(0, 2**32))
def test_split_is_exact_partition(ids, ratio, seed):
    s = ev.split_dataset(ids, ratio, seed)
    assert set(s.train_ids).isdisjoint(s.val_ids)
    assert sorted(s.train_ids + s.val_ids) == sorted(ids)
    assert [i for i in ids if i in set(s.train_ids)] == list(s.train_ids)


def test_confusion_examples():
    cm = ev.confusion_matrix(list("ABCABC"), list("ABCABC"), ABC)
    assert np.array_equal(cm.counts, np.diag([2, 2, 2])) and np.trace(cm.counts) == 6
    assert ev.accuracy(cm) == 1.0 and ev.per_class_accuracy(cm) == [1.0, 1.0, 1.0]

    cm = ev.confusion_matrix(list("AABCB"), list("ABBCB"), ABC)
    assert cm.counts.tolist() == [[1, 1, 0], [0, 2, 0], [0, 0, 1]]
    assert ev.accuracy(cm) == 0.8

    empty = ev.confusion_matrix([], [], ABC)
    assert not empty.counts.any() and empty.total == 0
    with pytest.raises(StreetCtxError, match="empty"):
        ev.accuracy(empty)


def test_confusion_errors():
    with pytest.raises(StreetCtxError, match="2 true labels but 1"):
        ev.confusion_matrix(["A", "B"], ["A"], ABC)
    with pytest.raises(StreetCtxError, match="'D' is not in the catalog"):
        ev.confusion_matrix(["A"], ["D"], ABC)


def test_missing_class_reports_na():
    cm = ev.confusion_matrix(list("AAB"), list("ABB"), ABC)
    assert ev.per_class_accuracy(cm) == [0.5, 1.0, None]
    rows = dict(csv.reader(io.StringIO(ev.report_csv(cm))))
    assert rows["accuracy.C"] == "n/a" and rows["accuracy.A"] == "0.5"


_labels = st.lists(st.tuples(st.sampled_from(ABC), st.sampled_from(ABC)), max_size=200)


@settings(max_examples=200, deadline=None)
@given(_labels)
def test_confusion_matches_recount(pairs):
    truth = [t for t, _ in pairs]
    pred = [p for _, p in pairs]
    cm = ev.confusion_matrix(truth, pred, ABC)
    assert cm.total == len(pairs)
    for i, a in enumerate(ABC):
        for j, b in enumerate(ABC):
            assert cm.counts[i, j] == sum(1 for t, p in pairs if t == a and p == b)
    if pairs:
        assert ev.accuracy(cm) == sum(t == p for t, p in pairs) / len(pairs)


def test_confusion_csv_layout():
    cm = ev.confusion_matrix(list("AABCB"), list("ABBCB"), ABC)
    rows = list(csv.reader(io.StringIO(ev.confusion_csv(cm))))
    assert rows[0] == ["true\\pred", "A", "B", "C"]
    assert [r[0] for r in rows[1:]] == list(ABC)
    assert [sum(map(int, r[1:])) for r in rows[1:]] == [2, 2, 1]


def test_report_echoes_config():
    cm = ev.confusion_matrix(list("AB"), list("AB"), ABC[:2])
    text = ev.report_csv(cm, {"split.seed": 5, "city": "SanFrancisco"})
    assert text.splitlines() == [
        "metric,value", "accuracy,1", "n_evaluated,2", "accuracy.A,1", "accuracy.B,1",
        "config.city,SanFrancisco", "config.split.seed,5",
    ]


def test_reference_table_fixture():
    text = ev.reference_table_csv()
    assert text.startswith("# ") and "not reproduced" in text.splitlines()[0]
    assert "Inception-v3,0.8779,0.8417" in text
    assert ev.REFERENCE_TABLE1["AlexNet"] == (0.8316, 0.8169)


def test_write_report_byte_identical(tmp_path):
    cm = ev.confusion_matrix(list("AABCB"), list("ABBCB"), ABC)
    a = ev.write_report(cm, tmp_path / "a", {"seed": 1})
    b = ev.write_report(cm, tmp_path / "b", {"seed": 1})
    assert set(a) == {"report", "confusion", "reference"}
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes()
