"""
Splits, confusion matrices and the report bundle
================================================
"""

# %%
import tempfile
from pathlib import Path

from streetctx import evaluation as ev

split = ev.split_dataset([f"p{i:05d}" for i in range(10)], ratio=0.8, seed=0)
print("train", split.train_ids)
print("val  ", split.val_ids)

# %%
# Rows are true labels, columns predictions.
cm = ev.confusion_matrix(list("AABCB"), list("ABBCB"), ["A", "B", "C"])
print(cm.counts)
print("accuracy", ev.accuracy(cm), "per class", ev.per_class_accuracy(cm))

# %%
out = Path(tempfile.mkdtemp(prefix="streetctx-report-"))
paths = ev.write_report(cm, out, {"split.seed": 0})
for name, path in paths.items():
    print(f"--- {name}")
    print(path.read_text(), end="")
