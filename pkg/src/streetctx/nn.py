"""A small CNN stack on float64 numpy arrays.

Layout is NCHW. Networks are built from a list of layer specs; the reference
architecture :data:`STREETNET` stacks conv -> ReLU -> max-pool blocks and ends
in global average pooling and a single linear layer, which is what makes
class activation maps available (see :mod:`streetctx.cam`).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from streetctx.errors import ShapeError, StreetCtxError

# -- layer specs -----------------------------------------------------------


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        if min(self.out_channels, self.kernel, self.stride) < 1 or self.pad < 0:
            raise ValueError(f"invalid conv spec {self}")


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    window: int = 2
    stride: int = 2

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise ValueError(f"invalid pool spec {self}")


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Linear:
    out_features: int

    def __post_init__(self):
        if self.out_features < 1:
            raise ValueError(f"invalid linear spec {self}")


_SPECS = {cls.__name__: cls for cls in (Conv, ReLU, MaxPool, GlobalAvgPool, Linear)}


def spec_to_dict(spec) -> dict:
    return {"type": type(spec).__name__, **asdict(spec)}


def spec_from_dict(d: dict):
    d = dict(d)
    return _SPECS[d.pop("type")](**d)


def streetnet(n_classes: int) -> list:
    return [
        Conv(16, 3, 1, 1), ReLU(), MaxPool(2, 2),
        Conv(32, 3, 1, 1), ReLU(), MaxPool(2, 2),
        Conv(64, 3, 1, 1), ReLU(),
        GlobalAvgPool(),
        Linear(n_classes),
    ]


def output_shape(arch: Sequence, input_shape: tuple[int, int, int]) -> tuple[int, ...]:
    """Per-sample output shape of ``arch`` applied to a ``(C, H, W)`` input."""
    shape = tuple(input_shape)
    for spec in arch:
        if isinstance(spec, Conv):
            c, h, w = _need_map(shape, spec)
            ho = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            wo = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(f"{spec} leaves no output on a {shape} input")
            shape = (spec.out_channels, ho, wo)
        elif isinstance(spec, MaxPool):
            c, h, w = _need_map(shape, spec)
            ho = (h - spec.window) // spec.stride + 1
            wo = (w - spec.window) // spec.stride + 1
            if ho < 1 or wo < 1:
                raise ShapeError(f"{spec} leaves no output on a {shape} input")
            shape = (c, ho, wo)
        elif isinstance(spec, GlobalAvgPool):
            shape = (_need_map(shape, spec)[0],)
        elif isinstance(spec, Linear):
            if len(shape) != 1:
                raise ShapeError(f"Linear needs a flat input, got {shape}")
            shape = (spec.out_features,)
    return shape


def _need_map(shape, spec):
    if len(shape) != 3:
        raise ShapeError(f"{type(spec).__name__} needs a (C, H, W) input, got {shape}")
    return shape


# -- functional ops --------------------------------------------------------


def _conv_dims(x, kernel, stride, pad, channel_axis=1):
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv needs a 4-D input and OCkk kernel, got {x.shape} and {kernel.shape}")
    c = x.shape[channel_axis]
    h, w = x.shape[2:]
    o, kc, kh, kw = kernel.shape
    if kc != c or kh != kw:
        raise ShapeError(f"input {x.shape} does not match kernel {kernel.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape} too small for kernel {kernel.shape}")
    return c, o, kh, ho, wo


# Layers run on (C, N, H, W) arrays: every patch-matrix row block is then a
# plain strided slice copy, and the matmul output reshapes to CNHW for free.


def _patches(x, k, stride, pad, ho, wo):
    """(k*k*C, N*Ho*Wo) patch matrix of a CNHW input, offset-major."""
    c, n = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((k, k, c, n, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(k * k * c, n * ho * wo)


def _flat_kernel(kernel):
    o, c, k, _ = kernel.shape
    return kernel.transpose(0, 2, 3, 1).reshape(o, k * k * c)


def _conv_cnhw(x, kernel, bias, stride, pad):
    c, o, k, ho, wo = _conv_dims(x, kernel, stride, pad, channel_axis=0)
    n = x.shape[1]
    cols = _patches(x, k, stride, pad, ho, wo)
    out = _flat_kernel(kernel) @ cols + bias[:, None]
    return out.reshape(o, n, ho, wo), cols


def _conv_cnhw_backward(dout, x_shape, kernel, stride, pad, cols, need_dx=True):
    c, n, h, w = x_shape
    o, _, k, _ = kernel.shape
    ho, wo = dout.shape[2:]
    dmat = dout.reshape(o, -1)
    dkernel = (dmat @ cols.T).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    dbias = dmat.sum(axis=1)
    if not need_dx:
        return None, dkernel, dbias
    dcols = (_flat_kernel(kernel).T @ dmat).reshape(k, k, c, n, ho, wo)
    dxp = np.zeros((c, n, h + 2 * pad, w + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[i, j]
    dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return dx, dkernel, dbias


def conv2d_forward(x, kernel, bias, stride=1, pad=0):
    """Cross-correlation with zero padding: NCHW in, NOHW out."""
    c, o, k, ho, wo = _conv_dims(x, kernel, stride, pad)
    if bias.shape != (o,):
        raise ShapeError(f"bias {bias.shape} does not match kernel {kernel.shape}")
    out, _ = _conv_cnhw(x.transpose(1, 0, 2, 3), kernel, bias, stride, pad)
    return out.transpose(1, 0, 2, 3)


def conv2d_backward(dout, x, kernel, stride=1, pad=0):
    """Gradients ``(dx, dkernel, dbias)`` of :func:`conv2d_forward` (NCHW)."""
    c, o, k, ho, wo = _conv_dims(x, kernel, stride, pad)
    n = x.shape[0]
    if dout.shape != (n, o, ho, wo):
        raise ShapeError(f"upstream gradient {dout.shape} does not match output {(n, o, ho, wo)}")
    xc = x.transpose(1, 0, 2, 3)
    cols = _patches(xc, k, stride, pad, ho, wo)
    dx, dk, db = _conv_cnhw_backward(np.ascontiguousarray(dout.transpose(1, 0, 2, 3)),
                                     xc.shape, kernel, stride, pad, cols)
    return dx.transpose(1, 0, 2, 3), dk, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dout, x):
    return dout * (x > 0)


def maxpool_forward(x, window=2, stride=2):
    """Returns ``(out, argmax)``; argmax indexes the flattened window (first max wins)."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool needs a 4-D input, got {x.shape}")
    h, w = x.shape[2:]
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape} smaller than pool window {window}")
    win = sliding_window_view(x, (window, window), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo].reshape(*x.shape[:2], ho, wo, window * window)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_backward(dout, x_shape, arg, window=2, stride=2):
    dx = np.zeros(x_shape)
    ho, wo = dout.shape[2:]
    for idx in range(window * window):
        i, j = divmod(idx, window)
        dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dout * (arg == idx)
    return dx


def global_avg_pool_forward(x):
    if x.ndim != 4:
        raise ShapeError(f"global average pooling needs NCHW input, got {x.shape}")
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dout, x_shape):
    h, w = x_shape[2:]
    return np.broadcast_to(dout[:, :, None, None] / (h * w), x_shape).copy()


def linear_forward(x, weight, bias):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} does not match weight {weight.shape}")
    return x @ weight.T + bias


def linear_backward(dout, x, weight):
    """Gradients ``(dx, dweight, dbias)``; weight is (out, in)."""
    return dout @ weight, dout.T @ x, dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} and labels {labels.shape} disagree")
    n, c = logits.shape
    if n and (labels.min() < 0 or labels.max() >= c):
        raise StreetCtxError(f"label out of range for {c} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    probs = np.exp(z - logsum[:, None])
    probs[rows, labels] -= 1.0
    return loss, probs / n


# -- layers ----------------------------------------------------------------


class Layer:
    """A spec bound to parameters, caching its input for the backward pass."""

    params: list
    grads: list

    def __init__(self, spec):
        self.spec = spec
        self.params = []
        self.grads = []
        self._cache = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StreetCtxError(f"{type(self.spec).__name__}.backward called without a cached forward pass")
        cache, self._cache = self._cache, None
        return cache


class ConvLayer(Layer):
    def forward(self, x):
        w, b = self.params
        out, cols = _conv_cnhw(x, w, b, self.spec.stride, self.spec.pad)
        self._cache = (x.shape, cols)
        return out

    def backward(self, dout, need_dx=True):
        shape, cols = self._take_cache()
        dx, dw, db = _conv_cnhw_backward(dout, shape, self.params[0], self.spec.stride,
                                         self.spec.pad, cols, need_dx)
        self.grads = [dw, db]
        return dx


class ReLULayer(Layer):
    def forward(self, x):
        self._cache = x
        return relu_forward(x)

    def backward(self, dout):
        return relu_backward(dout, self._take_cache())


class MaxPoolLayer(Layer):
    def forward(self, x):
        out, arg = maxpool_forward(x, self.spec.window, self.spec.stride)
        self._cache = (x.shape, arg)
        return out

    def backward(self, dout):
        shape, arg = self._take_cache()
        return maxpool_backward(dout, shape, arg, self.spec.window, self.spec.stride)


class GAPLayer(Layer):
    # CNHW in, NC out
    def forward(self, x):
        self._cache = x.shape
        return np.ascontiguousarray(x.mean(axis=(2, 3)).T)

    def backward(self, dout):
        shape = self._take_cache()
        return np.broadcast_to(dout.T[:, :, None, None] / (shape[2] * shape[3]), shape).copy()


class LinearLayer(Layer):
    def forward(self, x):
        self._cache = x
        return linear_forward(x, *self.params)

    def backward(self, dout):
        x = self._take_cache()
        dx, dw, db = linear_backward(dout, x, self.params[0])
        self.grads = [dw, db]
        return dx


_LAYERS = {Conv: ConvLayer, ReLU: ReLULayer, MaxPool: MaxPoolLayer,
           GlobalAvgPool: GAPLayer, Linear: LinearLayer}


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Network:
    """Layers plus the class catalog they predict over.

    ``params`` lists the parameter arrays in layer order (weight then bias).
    """

    def __init__(self, arch: Sequence, catalog: Sequence[str], input_shape=(3, 64, 64), rng=None):
        self.arch = tuple(arch)
        self.catalog = tuple(catalog)
        self.input_shape = tuple(input_shape)
        out = output_shape(self.arch, self.input_shape)
        if out != (len(self.catalog),):
            raise ShapeError(f"architecture outputs {out}, catalog has {len(self.catalog)} classes")
        if not any(isinstance(s, GlobalAvgPool) for s in self.arch):
            raise ShapeError("architecture needs a GlobalAvgPool layer")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        shape = self.input_shape
        for spec in self.arch:
            layer = _LAYERS[type(spec)](spec)
            if isinstance(spec, Conv):
                k = spec.kernel
                layer.params = [
                    glorot_uniform(rng, (spec.out_channels, shape[0], k, k),
                                   shape[0] * k * k, spec.out_channels * k * k),
                    np.zeros(spec.out_channels),
                ]
            elif isinstance(spec, Linear):
                layer.params = [
                    glorot_uniform(rng, (spec.out_features, shape[0]), shape[0], spec.out_features),
                    np.zeros(spec.out_features),
                ]
            self.layers.append(layer)
            shape = output_shape([spec], shape)
        self._gap = max(i for i, s in enumerate(self.arch) if isinstance(s, GlobalAvgPool))

    @property
    def params(self) -> list:
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self) -> list:
        return [g for layer in self.layers for g in layer.grads]

    @property
    def linear_weight(self):
        """Weight (classes x channels) of the final linear layer."""
        return self.layers[-1].params[0]

    def forward(self, x, return_features=False):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input {x.shape[1:]} does not match model input {self.input_shape}")
        feats = {}
        x = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        for i, layer in enumerate(self.layers):
            if i == self._gap:
                feats["last_conv"] = x.transpose(1, 0, 2, 3)
            x = layer.forward(x)
            if i == self._gap:
                feats["penultimate"] = x
        return (x, feats) if return_features else x

    def backward(self, dlogits, need_input_grad=True):
        """Backpropagate; returns the input gradient (None if not requested)."""
        d = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if i == 0 and not need_input_grad and isinstance(layer, ConvLayer):
                return layer.backward(d, need_dx=False)
            d = layer.backward(d)
        return None if not need_input_grad else d.transpose(1, 0, 2, 3)


# -- training --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    input_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(self.input_size))
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training config {self}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum {self.momentum} outside [0, 1)")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float


def sgd_step(params, grads, lr, momentum, velocity):
    """``v <- momentum * v - lr * g``; ``p <- p + v``, in place. Returns ``params``."""
    if len(params) != len(grads) or len(params) != len(velocity):
        raise ShapeError("params, grads and velocity lists differ in length")
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"parameter {p.shape}, gradient {g.shape}, velocity {v.shape} disagree")
        v *= momentum
        v -= lr * g
        p += v
    return params


def preprocess(images, input_size=(64, 64)):
    """RGB images -> float NCHW batch scaled to ``value / 255 - 0.5``.

    Images are nearest-neighbour resized to ``input_size`` (height, width)
    first.
    """
    from streetctx.imagery import resize_nearest

    h, w = input_size
    batch = np.stack([resize_nearest(im, w, h).pixels for im in images])
    return batch.transpose(0, 3, 1, 2) / 255.0 - 0.5


def train(images, labels, arch, cfg: TrainConfig, catalog: Sequence[str], log=None):
    """Minibatch SGD with momentum on softmax cross-entropy.

    ``labels`` are indices into ``catalog``. Returns ``(network, history)``.
    """
    if len(images) == 0:
        raise StreetCtxError("training set is empty")
    if len(images) != len(labels):
        raise StreetCtxError(f"{len(images)} images but {len(labels)} labels")
    sizes = {(im.width, im.height) for im in images}
    if len(sizes) != 1:
        raise StreetCtxError(f"training images have inconsistent sizes {sorted(sizes)}")
    y = np.asarray(labels, dtype=np.int64)
    if y.min() < 0 or y.max() >= len(catalog):
        raise StreetCtxError(f"label index outside catalog of {len(catalog)}")
    if cfg.batch_size > len(images):
        raise StreetCtxError(f"batch size {cfg.batch_size} exceeds dataset size {len(images)}")

    x = preprocess(images, cfg.input_size)
    rng = np.random.default_rng(cfg.seed)
    net = Network(arch, catalog, (3, *cfg.input_size), rng)
    velocity = [np.zeros_like(p) for p in net.params]
    history = []
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits = net.forward(x[idx])
            loss, dlogits = softmax_cross_entropy(logits, y[idx])
            net.backward(dlogits, need_input_grad=False)
            sgd_step(net.params, net.grads, cfg.learning_rate, cfg.momentum, velocity)
            total += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
        stats = EpochStats(epoch, total / n, correct / n)
        if not math.isfinite(stats.loss):
            raise StreetCtxError(f"training diverged at epoch {epoch}")
        history.append(stats)
        if log is not None:
            log(stats)
    return net, history


def history_to_csv(history) -> str:
    lines = ["epoch,loss,train_acc"]
    lines += [f"{h.epoch},{h.loss:.9g},{h.train_acc:.9g}" for h in history]
    return "\n".join(lines) + "\n"


# -- inference -------------------------------------------------------------


@dataclass
class Prediction:
    class_index: int
    probabilities: np.ndarray
    last_conv: np.ndarray = field(repr=False)
    penultimate: np.ndarray = field(repr=False)


def predict_batch(model: Network, images, batch_size: int = 64) -> list[Prediction]:
    out = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        for im in chunk:
            if (im.height, im.width) != model.input_shape[1:]:
                raise ShapeError(
                    f"image {im.width}x{im.height} does not match model input "
                    f"{model.input_shape[2]}x{model.input_shape[1]}"
                )
        x = np.stack([im.pixels for im in chunk]).transpose(0, 3, 1, 2) / 255.0 - 0.5
        logits, feats = model.forward(x, return_features=True)
        probs = softmax(logits)
        for i in range(len(chunk)):
            out.append(Prediction(int(probs[i].argmax()), probs[i],
                                  feats["last_conv"][i], feats["penultimate"][i]))
    # drop cached activations held by the layers
    for layer in model.layers:
        layer._cache = None
    return out


def predict(model: Network, image) -> Prediction:
    return predict_batch(model, [image])[0]


# -- model file ------------------------------------------------------------

MODEL_MAGIC = b"SCTX"
MODEL_VERSION = 1


def save_model(model: Network) -> bytes:
    """``SCTX`` + version byte + u32 header length + JSON header + f64 LE blobs."""
    header = json.dumps(
        {
            "arch": [spec_to_dict(s) for s in model.arch],
            "catalog": list(model.catalog),
            "input_shape": list(model.input_shape),
            "params": [list(p.shape) for p in model.params],
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    blobs = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params)
    return MODEL_MAGIC + bytes([MODEL_VERSION]) + struct.pack("<I", len(header)) + header + blobs


def load_model(data: bytes) -> Network:
    if data[:4] != MODEL_MAGIC:
        raise StreetCtxError("not a model file (bad magic)")
    if data[4] != MODEL_VERSION:
        raise StreetCtxError(f"unsupported model format version {data[4]}")
    (hlen,) = struct.unpack("<I", data[5:9])
    header = json.loads(data[9 : 9 + hlen])
    net = Network([spec_from_dict(d) for d in header["arch"]], header["catalog"],
                  header["input_shape"])
    pos = 9 + hlen
    for p, shape in zip(net.params, header["params"]):
        if list(p.shape) != shape:
            raise StreetCtxError(f"parameter shape {shape} inconsistent with architecture")
        nbytes = 8 * p.size
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise StreetCtxError("model file truncated")
        p[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.shape)
        pos += nbytes
    if pos != len(data):
        raise StreetCtxError("trailing bytes after model parameters")
    return net
