"""Class activation maps for GAP-terminated networks.

The map for class ``c`` is the final conv feature maps weighted by row ``c`` of
the linear layer, min-max normalised to [0, 1]. A flat map (max == min)
normalises to all zeros.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from streetctx.errors import ShapeError, StreetCtxError
from streetctx.imagery import RgbImage


@dataclass(frozen=True)
class ActivationMap:
    values: np.ndarray  # (height, width), in [0, 1]

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ShapeError(f"activation map must be a non-empty 2-D array, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("activation map has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def argmax_xy(self) -> tuple[int, int]:
        y, x = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return int(x), int(y)


def raw_cam(last_conv, linear_weight, class_index: int):
    f = np.asarray(last_conv, dtype=np.float64)
    w = np.asarray(linear_weight, dtype=np.float64)
    if f.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"expected KxHxW maps and CxK weights, got {f.shape} and {w.shape}")
    if w.shape[1] != f.shape[0]:
        raise ShapeError(f"weights {w.shape} do not match {f.shape[0]} feature maps")
    if not 0 <= class_index < w.shape[0]:
        raise StreetCtxError(f"class index {class_index} out of range for {w.shape[0]} classes")
    return np.tensordot(w[class_index], f, axes=1)


def class_activation_map(last_conv, linear_weight, class_index: int) -> ActivationMap:
    raw = raw_cam(last_conv, linear_weight, class_index)
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return ActivationMap(np.zeros_like(raw))
    return ActivationMap(np.clip((raw - lo) / (hi - lo), 0.0, 1.0))


def bilinear_upsample(amap: ActivationMap, out_w: int, out_h: int) -> ActivationMap:
    """Corner-aligned bilinear resize (output corners sit on input corners)."""
    if out_w < 1 or out_h < 1:
        raise ShapeError(f"output size {out_w}x{out_h} must be positive")
    if out_w < amap.width or out_h < amap.height:
        raise ShapeError(f"cannot upsample {amap.width}x{amap.height} to smaller {out_w}x{out_h}")
    v = amap.values

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            src = np.zeros(n_out)
        else:
            src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = coords(out_h, amap.height)
    x0, x1, fx = coords(out_w, amap.width)
    top = v[y0][:, x0] * (1 - fx) + v[y0][:, x1] * fx
    bot = v[y1][:, x0] * (1 - fx) + v[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return ActivationMap(np.clip(out, v.min(), v.max()))


# blue -> cyan -> green -> yellow -> red, evenly spaced
RAMP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
RAMP_COLORS = np.array(
    [[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]], dtype=np.float64
)


def colormap(values):
    """Map values in [0, 1] to float RGB on the five-stop ramp."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(v, RAMP_STOPS, RAMP_COLORS[:, ch]) for ch in range(3)], axis=-1)


def render_overlay(image: RgbImage, amap: ActivationMap, alpha: float = 0.5) -> RgbImage:
    """``(1 - alpha) * image + alpha * colormap(map)``, rounded half-to-even."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if (amap.width, amap.height) != (image.width, image.height):
        raise ShapeError(
            f"map {amap.width}x{amap.height} does not match image {image.width}x{image.height}"
        )
    blend = (1.0 - alpha) * image.pixels + alpha * colormap(amap.values)
    return RgbImage(np.clip(np.rint(blend), 0, 255).astype(np.uint8))


def cam_for_prediction(model, prediction, class_index=None) -> ActivationMap:
    """CAM of the predicted class, or of ``class_index`` when given."""
    c = prediction.class_index if class_index is None else class_index
    return class_activation_map(prediction.last_conv, model.linear_weight, c)


def cam_sidecar(sample_id: str, class_name: str, upsampled: ActivationMap) -> str:
    x, y = upsampled.argmax_xy()
    return json.dumps({"sample_id": sample_id, "class": class_name, "cam_argmax": [x, y]},
                      sort_keys=True)
