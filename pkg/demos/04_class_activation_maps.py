"""
Where the network looks
=======================

A class activation map weights the last convolutional feature maps by the
linear-layer row of a class. On the synthetic frames each class paints its
motif in a fixed quadrant, so the hot spot should land there.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from streetctx import cam, nn
from streetctx.fixtures import SIX_CLASSES
from streetctx.imagery import encode_ppm, motif_quadrant, quadrant_bounds, synth_render

# %%
# The weighted sum on a toy pair of feature maps.
f = np.array([[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]])
w = np.array([[2.0, 1.0]])
print(cam.class_activation_map(f, w, 0).values)
print(cam.bilinear_upsample(cam.ActivationMap([[0.0, 1.0], [1.0, 0.0]]), 3, 3).values)

# %%
# Train briefly, then map each class on an unseen frame.
labels = [k % 6 for k in range(240)]
images = [synth_render(SIX_CLASSES[y], 1000 + k, 32, 32) for k, y in enumerate(labels)]
catalog = [c.name for c in SIX_CLASSES]
cfg = nn.TrainConfig(epochs=10, batch_size=16, seed=0, input_size=(32, 32))
model, _ = nn.train(images, labels, nn.streetnet(6), cfg, catalog)

out = Path(tempfile.mkdtemp(prefix="streetctx-cam-"))
for k, c in enumerate(SIX_CLASSES):
    img = synth_render(c, 9000 + k, 32, 32)
    pred = nn.predict(model, img)
    up = cam.bilinear_upsample(cam.cam_for_prediction(model, pred), 32, 32)
    x, y = up.argmax_xy()
    y0, y1, x0, x1 = quadrant_bounds(motif_quadrant(c), 32, 32)
    inside = y0 <= y < y1 and x0 <= x < x1
    print(f"{c.name:22s} predicted {catalog[pred.class_index]:22s} argmax ({x:2d},{y:2d}) in motif quadrant: {inside}")
    (out / f"{c.name}.ppm").write_bytes(encode_ppm(cam.render_overlay(img, up, 0.5)))
print("overlays in", out)
