"""Small convolutional encoder-decoder predicting a displacement field from an
atrophy map and one-hot tissue labels.

Architecture (per level widths in `channels`, default (16, 32, 64)):
3x3 same-padding convolutions, leaky-ReLU slope 0.2, stride-2 average-pool
downsampling, nearest-neighbor upsampling, skip connections by channel
concatenation, and a final zero-initialized 1x1 linear convolution to the two
displacement channels. Everything is float64 numpy; forward and backward are
hand-rolled so gradients are exact and runs are bit-reproducible.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, IoFailure, ShapeMismatch, TruncatedPayload, UnsupportedVersion
from .fields import ALL_LABELS, DisplacementField, LabelField, ScalarField

LEAKY_SLOPE = 0.2
IN_CHANNELS = 6  # atrophy map + one-hot of the 5 label classes
OUT_CHANNELS = 2
DEFAULT_CHANNELS = (16, 32, 64)

CHECKPOINT_MAGIC = b"NAWT"
CHECKPOINT_VERSION = 1


def layer_shapes(in_channels: int, channels: tuple[int, ...]
                 ) -> list[tuple[int, int, int, int]]:
    """Kernel shapes (out, in, kh, kw) in declaration order."""
    shapes = []
    prev = in_channels
    for c in channels:  # encoder path, pooling between levels
        shapes.append((c, prev, 3, 3))
        prev = c
    for i in range(len(channels) - 2, -1, -1):  # decoder with skip concat
        shapes.append((channels[i], prev + channels[i], 3, 3))
        prev = channels[i]
    shapes.append((OUT_CHANNELS, prev, 1, 1))
    return shapes


@dataclass
class NetWeights:
    channels: tuple[int, ...]
    in_channels: int
    kernels: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        expected = layer_shapes(self.in_channels, self.channels)
        if len(self.kernels) != len(expected) or len(self.biases) != len(expected):
            raise ShapeMismatch("wrong number of parameter blocks")
        for k, b, shape in zip(self.kernels, self.biases, expected):
            if k.shape != shape or b.shape != (shape[0],):
                raise ShapeMismatch(
                    f"parameter block shape {k.shape}/{b.shape} does not match "
                    f"architecture {shape}")

    @property
    def levels(self) -> int:
        return len(self.channels)


def init_weights(seed: int, channels: tuple[int, ...] = DEFAULT_CHANNELS,
                 in_channels: int = IN_CHANNELS) -> NetWeights:
    """He-style init for hidden layers; the final layer starts at zero so the
    untrained network predicts u = 0."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    shapes = layer_shapes(in_channels, channels)
    kernels, biases = [], []
    for i, shape in enumerate(shapes):
        fan_in = shape[1] * shape[2] * shape[3]
        if i == len(shapes) - 1:
            kernels.append(np.zeros(shape))
        else:
            kernels.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape))
        biases.append(np.zeros(shape[0]))
    return NetWeights(channels=channels, in_channels=in_channels,
                      kernels=kernels, biases=biases)


# ---------------------------------------------------------------------------
# Layer primitives on (B, C, H, W) batches
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) -> (B, H*W, C*k*k) patch matrix, zero 'same' padding."""
    b, c, h, w = x.shape
    p = k // 2
    if p:
        xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
        xp[:, :, p:-p, p:-p] = x
    else:
        xp = x
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(b, c, h, w, k, k), strides=(s[0], s[1], s[2], s[3], s[2], s[3]))
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, h * w, c * k * k)


def _conv_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, w = x.shape
    out_c, in_c, k, _ = kernel.shape
    cols = _im2col(x, k)
    flat = cols.reshape(b * h * w, in_c * k * k)
    y = flat @ kernel.reshape(out_c, in_c * k * k).T + bias
    return y.reshape(b, h, w, out_c).transpose(0, 3, 1, 2), cols


def _conv_backward(dy: np.ndarray, cols: np.ndarray, kernel: np.ndarray,
                   x_shape: tuple[int, ...], need_dx: bool = True
                   ) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    b, c, h, w = x_shape
    out_c, in_c, k, _ = kernel.shape
    dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(b * h * w, out_c)
    flat = cols.reshape(b * h * w, in_c * k * k)
    dk = (dy_mat.T @ flat).reshape(kernel.shape)
    db = dy_mat.sum(axis=0)
    if not need_dx:
        return None, dk, db
    # input gradient = same-padding convolution of dy with the channel-swapped,
    # spatially flipped kernel (valid for odd k)
    kt = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _ = _conv_forward(dy, kt, np.zeros(in_c))
    return dx, dk, db


def _leaky_forward(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, LEAKY_SLOPE * x)


def _leaky_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, LEAKY_SLOPE * dy)


def _pool_forward(x: np.ndarray) -> np.ndarray:
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def _pool_backward(dy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25


def _upsample_forward(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample_backward(dy: np.ndarray) -> np.ndarray:
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------

def input_planes(a: ScalarField, labels: LabelField) -> np.ndarray:
    """(IN_CHANNELS, H, W): atrophy plane plus one-hot labels."""
    if a.shape != labels.shape:
        raise ShapeMismatch("atrophy and labels dimensions differ")
    planes = np.empty((IN_CHANNELS,) + a.shape)
    planes[0] = a.values
    for cls in ALL_LABELS:
        planes[1 + cls] = labels.labels == cls
    return planes


def _check_divisible(shape: tuple[int, int], levels: int) -> None:
    div = 2 ** (levels - 1)
    if shape[0] % div or shape[1] % div:
        raise ShapeMismatch(
            f"grid {shape} must be divisible by {div} for a {levels}-level net")


def forward_batch(w: NetWeights, x: np.ndarray
                  ) -> tuple[np.ndarray, list]:
    """x: (B, in_channels, H, W) -> (B, 2, H, W) plus the backward cache."""
    _check_divisible(x.shape[2:], w.levels)
    cache = []
    skips = []
    layer = 0
    h = x
    for lvl in range(w.levels):
        if lvl > 0:
            h = _pool_forward(h)
        pre, cols = _conv_forward(h, w.kernels[layer], w.biases[layer])
        cache.append((h.shape, cols, pre))
        h = _leaky_forward(pre)
        if lvl < w.levels - 1:
            skips.append(h)
        layer += 1
    for lvl in range(w.levels - 2, -1, -1):
        h = np.concatenate([_upsample_forward(h), skips[lvl]], axis=1)
        pre, cols = _conv_forward(h, w.kernels[layer], w.biases[layer])
        cache.append((h.shape, cols, pre))
        h = _leaky_forward(pre)
        layer += 1
    y, cols = _conv_forward(h, w.kernels[layer], w.biases[layer])
    cache.append((h.shape, cols, None))
    return y, cache


def backward_batch(w: NetWeights, cache: list, dy: np.ndarray
                   ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of the parameter blocks given dL/d(output)."""
    n_layers = len(w.kernels)
    dks = [None] * n_layers
    dbs = [None] * n_layers

    layer = n_layers - 1
    x_shape, cols, _ = cache[layer]
    dh, dks[layer], dbs[layer] = _conv_backward(dy, cols, w.kernels[layer], x_shape)

    dskips = {}
    for lvl in range(0, w.levels - 1):  # decoder layers, shallowest first in cache order
        layer -= 1
        x_shape, cols, pre = cache[layer]
        dpre = _leaky_backward(pre, dh)
        dcat, dks[layer], dbs[layer] = _conv_backward(dpre, cols, w.kernels[layer], x_shape)
        up_c = dcat.shape[1] - w.channels[lvl]
        dskips[lvl] = dcat[:, up_c:]
        dh = _upsample_backward(dcat[:, :up_c])

    for lvl in range(w.levels - 1, -1, -1):  # encoder layers, deepest first
        layer -= 1
        x_shape, cols, pre = cache[layer]
        if lvl < w.levels - 1:
            dh = dh + dskips[lvl]
        dpre = _leaky_backward(pre, dh)
        dh, dks[layer], dbs[layer] = _conv_backward(
            dpre, cols, w.kernels[layer], x_shape, need_dx=lvl > 0)
        if lvl > 0:
            dh = _pool_backward(dh)
    return dks, dbs


def net_forward(w: NetWeights, a: ScalarField, labels: LabelField) -> DisplacementField:
    x = input_planes(a, labels)[None]
    y, _ = forward_batch(w, x)
    return DisplacementField(y[0, 0], y[0, 1])


def net_backward(w: NetWeights, a: ScalarField, labels: LabelField,
                 upstream: DisplacementField
                 ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """dL/dw given dL/du from the loss gradient."""
    if upstream.shape != a.shape:
        raise ShapeMismatch("upstream gradient dimensions differ from input")
    x = input_planes(a, labels)[None]
    _, cache = forward_batch(w, x)
    dy = np.stack([upstream.ux, upstream.uy])[None]
    return backward_batch(w, cache, dy)


# ---------------------------------------------------------------------------
# Checkpoint format: magic "NAWT", u32 version, u32 level count, u32 channel
# widths, u32 input channel count, then kernel+bias blocks in declaration
# order as 64-bit little-endian reals. Round-trips bit-exactly.
# ---------------------------------------------------------------------------

def save_checkpoint(path, w: NetWeights) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, w.levels))
            fh.write(struct.pack(f"<{w.levels}I", *w.channels))
            fh.write(struct.pack("<I", w.in_channels))
            for k, b in zip(w.kernels, w.biases):
                fh.write(np.ascontiguousarray(k, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path) -> NetWeights:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagic("not a checkpoint file")
    if len(data) < 12:
        raise TruncatedPayload("checkpoint header truncated")
    version, levels = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint version {version}")
    off = 12
    if len(data) < off + 4 * (levels + 1):
        raise TruncatedPayload("checkpoint descriptor truncated")
    channels = struct.unpack_from(f"<{levels}I", data, off)
    off += 4 * levels
    (in_channels,) = struct.unpack_from("<I", data, off)
    off += 4
    kernels, biases = [], []
    for shape in layer_shapes(in_channels, channels):
        n = int(np.prod(shape))
        for target, count, tgt_shape in ((kernels, n, shape),
                                         (biases, shape[0], (shape[0],))):
            nbytes = count * 8
            if len(data) < off + nbytes:
                raise TruncatedPayload("checkpoint payload truncated")
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
            target.append(arr.astype(np.float64).reshape(tgt_shape))
            off += nbytes
    if off != len(data):
        raise TruncatedPayload("trailing bytes after checkpoint payload")
    return NetWeights(channels=tuple(channels), in_channels=in_channels,
                      kernels=kernels, biases=biases)
