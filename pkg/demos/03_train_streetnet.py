"""
A small CNN from scratch
========================

Convolution, ReLU, max pooling, global average pooling and a linear layer,
all in float64 numpy. We first check the backward pass against finite
differences, then train on synthetic frames.
"""

# %%
import numpy as np

from streetctx import nn

rng = np.random.default_rng(0)
x = rng.normal(size=(1, 2, 5, 5))
ker = rng.normal(size=(3, 2, 3, 3))
bias = np.zeros(3)
probe = rng.normal(size=(1, 3, 5, 5))

_, dk, _ = nn.conv2d_backward(probe, x, ker, stride=1, pad=1)
eps = 1e-5
ker[0, 1, 2, 0] += eps
up = (nn.conv2d_forward(x, ker, bias, 1, 1) * probe).sum()
ker[0, 1, 2, 0] -= 2 * eps
down = (nn.conv2d_forward(x, ker, bias, 1, 1) * probe).sum()
ker[0, 1, 2, 0] += eps
print("analytic", dk[0, 1, 2, 0], "numeric", (up - down) / (2 * eps))

# %%
# StreetNet and its shapes on a 32x32 input.
arch = nn.streetnet(6)
print([type(s).__name__ for s in arch])
print(nn.output_shape(arch[:-2], (3, 32, 32)), "->", nn.output_shape(arch, (3, 32, 32)))

# %%
# Six synthetic classes, 40 frames each.
from streetctx.fixtures import SIX_CLASSES
from streetctx.imagery import synth_render

labels = [k % 6 for k in range(240)]
images = [synth_render(SIX_CLASSES[y], 1000 + k, 32, 32) for k, y in enumerate(labels)]
catalog = [c.name for c in SIX_CLASSES]

cfg = nn.TrainConfig(epochs=8, batch_size=16, learning_rate=0.05, momentum=0.9, seed=0, input_size=(32, 32))
model, history = nn.train(images, labels, arch, cfg, catalog,
                          log=lambda h: print(f"epoch {h.epoch}: loss {h.loss:.3f} acc {h.train_acc:.2f}"))

# %%
# Fresh frames the network has not seen.
test = [synth_render(c, 5000 + k, 32, 32) for k, c in enumerate(SIX_CLASSES)]
for c, p in zip(SIX_CLASSES, nn.predict_batch(model, test)):
    print(f"{c.name:22s} -> {catalog[p.class_index]:22s} p={p.probabilities.max():.2f}")

blob = nn.save_model(model)
print(len(blob), "bytes;", blob[:4], "version", blob[4])
