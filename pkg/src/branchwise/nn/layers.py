"""Layer specifications and their forward/backward rules.

All arrays are float64. Convolutions use 3x3 "same" padding by default and are
evaluated through an im2col matmul; max pooling is valid (window-aligned, the
remainder rows/cols are dropped). Dropout is inverted: surviving activations
are scaled by 1/(1-rate) at train time so evaluation is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from ..errors import ConfigError, ShapeError

KINDS = ("dense", "conv2d", "maxpool2d", "relu", "flatten", "dropout", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0        # dense
    filters: int = 0      # conv2d
    kernel: int = 3       # conv2d
    stride: int = 1       # conv2d / maxpool2d
    pool: int = 2         # maxpool2d
    rate: float = 0.5     # dropout

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "LayerSpec":
        return LayerSpec(**d)


def dense(units: int) -> LayerSpec:
    if units < 1:
        raise ConfigError(f"dense needs units >= 1, got {units}")
    return LayerSpec("dense", units=units)


def conv2d(filters: int, kernel: int = 3, stride: int = 1) -> LayerSpec:
    if filters < 1 or kernel < 1 or stride < 1:
        raise ConfigError(f"bad conv2d spec: filters={filters} kernel={kernel} stride={stride}")
    return LayerSpec("conv2d", filters=filters, kernel=kernel, stride=stride)


def maxpool2d(pool: int = 2, stride: int | None = None) -> LayerSpec:
    if pool < 1:
        raise ConfigError(f"bad maxpool2d spec: pool={pool}")
    return LayerSpec("maxpool2d", pool=pool, stride=pool if stride is None else stride)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def dropout(rate: float = 0.5) -> LayerSpec:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    return LayerSpec("dropout", rate=rate)


def softmax() -> LayerSpec:
    return LayerSpec("softmax")


def output_shape(spec: LayerSpec, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape of one sample after the layer, given one sample's input shape."""
    kind = spec.kind
    if kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got shape {in_shape}")
        return (spec.units,)
    if kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (channels, height, width), got shape {in_shape}")
        _, h, w = in_shape
        return (spec.filters, _ceil_div(h, spec.stride), _ceil_div(w, spec.stride))
    if kind == "maxpool2d":
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d expects (channels, height, width), got shape {in_shape}")
        c, h, w = in_shape
        if h < spec.pool or w < spec.pool:
            raise ShapeError(f"maxpool2d window {spec.pool} does not fit input {in_shape}")
        return (c, (h - spec.pool) // spec.stride + 1, (w - spec.pool) // spec.stride + 1)
    if kind == "flatten":
        return (int(np.prod(in_shape)),)
    if kind == "softmax":
        if len(in_shape) != 1:
            raise ShapeError(f"softmax expects a flat input, got shape {in_shape}")
        return in_shape
    # relu, dropout
    return in_shape


def parameter_shapes(spec: LayerSpec, in_shape: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
    """Parameter name suffix -> shape; empty for parameter-free layers."""
    if spec.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got shape {in_shape}")
        return {"w": (in_shape[0], spec.units), "b": (spec.units,)}
    if spec.kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (channels, height, width), got shape {in_shape}")
        return {"w": (spec.filters, in_shape[0], spec.kernel, spec.kernel), "b": (spec.filters,)}
    return {}


def fan_in(spec: LayerSpec, in_shape: tuple[int, ...]) -> int:
    if spec.kind == "dense":
        return in_shape[0]
    if spec.kind == "conv2d":
        return in_shape[0] * spec.kernel * spec.kernel
    raise ValueError(f"{spec.kind} has no parameters")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _same_pad(size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = _ceil_div(size, stride)
    pad = max((out - 1) * stride + kernel - size, 0)
    return out, pad // 2, pad - pad // 2


def _conv_cols(xp: np.ndarray, kernel: int, stride: int, oh: int, ow: int) -> np.ndarray:
    # [N, C, k, k, oh, ow] patch tensor built from k*k strided slices
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kernel, kernel, oh, ow), dtype=np.float64)
    for ki in range(kernel):
        for kj in range(kernel):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
    return cols


def forward(spec: LayerSpec, x: np.ndarray, weights: tuple[np.ndarray, np.ndarray] | None,
            mode: str, rng: np.random.Generator | None):
    """Run one layer on a batch. Returns (output, aux) where aux feeds backward."""
    kind = spec.kind
    if kind == "dense":
        w, b = weights
        if x.shape[1] != w.shape[0]:
            raise ShapeError(f"dense expects input width {w.shape[0]}, got {x.shape[1]}")
        return x @ w + b, None
    if kind == "conv2d":
        return _conv_forward(spec, x, weights)
    if kind == "maxpool2d":
        return _maxpool_forward(spec, x)
    if kind == "relu":
        return np.maximum(x, 0.0), None
    if kind == "flatten":
        return x.reshape(x.shape[0], -1), x.shape
    if kind == "dropout":
        if mode != "train" or spec.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = rng.random(x.shape) >= spec.rate
        scaled_mask = keep / (1.0 - spec.rate)
        return x * scaled_mask, scaled_mask
    if kind == "softmax":
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p, p
    raise ValueError(kind)


def backward(spec: LayerSpec, grad: np.ndarray, x: np.ndarray, aux,
             weights: tuple[np.ndarray, np.ndarray] | None):
    """Gradient of one layer. Returns (grad_wrt_input, {suffix: param_grad})."""
    kind = spec.kind
    if kind == "dense":
        w, _ = weights
        return grad @ w.T, {"w": x.T @ grad, "b": grad.sum(axis=0)}
    if kind == "conv2d":
        return _conv_backward(spec, grad, x, aux, weights)
    if kind == "maxpool2d":
        return _maxpool_backward(spec, grad, x, aux), {}
    if kind == "relu":
        return grad * (x > 0.0), {}
    if kind == "flatten":
        return grad.reshape(aux), {}
    if kind == "dropout":
        if aux is None:
            return grad, {}
        return grad * aux, {}
    if kind == "softmax":
        p = aux
        return p * (grad - (grad * p).sum(axis=1, keepdims=True)), {}
    raise ValueError(kind)


def _conv_forward(spec: LayerSpec, x: np.ndarray, weights):
    w, b = weights
    if x.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d expects input (N, {w.shape[1]}, H, W), got {x.shape}")
    n, _, h, wd = x.shape
    k, s = spec.kernel, spec.stride
    oh, pt, pb = _same_pad(h, k, s)
    ow, pl, pr = _same_pad(wd, k, s)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    cols = _conv_cols(xp, k, s, oh, ow)
    # [N*oh*ow, C*k*k] @ [C*k*k, F]
    mat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, -1)
    wmat = w.reshape(spec.filters, -1).T
    out = (mat @ wmat + b).reshape(n, oh, ow, spec.filters).transpose(0, 3, 1, 2)
    return out, (mat, xp.shape, (pt, pl), (oh, ow))


def _conv_backward(spec: LayerSpec, grad: np.ndarray, x: np.ndarray, aux, weights):
    w, _ = weights
    mat, padded_shape, (pt, pl), (oh, ow) = aux
    n = x.shape[0]
    k, s = spec.kernel, spec.stride
    gmat = grad.transpose(0, 2, 3, 1).reshape(n * oh * ow, spec.filters)
    gw = (mat.T @ gmat).T.reshape(w.shape)
    gb = gmat.sum(axis=0)
    wmat = w.reshape(spec.filters, -1).T
    gcols = (gmat @ wmat.T).reshape(n, oh, ow, x.shape[1], k, k).transpose(0, 3, 4, 5, 1, 2)
    gxp = np.zeros(padded_shape, dtype=np.float64)
    for ki in range(k):
        for kj in range(k):
            gxp[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += gcols[:, :, ki, kj]
    h, wd = x.shape[2], x.shape[3]
    return gxp[:, :, pt:pt + h, pl:pl + wd], {"w": gw, "b": gb}


def _maxpool_forward(spec: LayerSpec, x: np.ndarray):
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects input (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    p, s = spec.pool, spec.stride
    if h < p or w < p:
        raise ShapeError(f"maxpool2d window {p} does not fit input {x.shape}")
    oh = (h - p) // s + 1
    ow = (w - p) // s + 1
    wins = np.empty((n, c, oh, ow, p * p), dtype=np.float64)
    for ki in range(p):
        for kj in range(p):
            wins[..., ki * p + kj] = x[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s]
    idx = wins.argmax(axis=-1)
    out = np.take_along_axis(wins, idx[..., None], axis=-1)[..., 0]
    return out, (idx, (oh, ow))


def _maxpool_backward(spec: LayerSpec, grad: np.ndarray, x: np.ndarray, aux):
    idx, (oh, ow) = aux
    p, s = spec.pool, spec.stride
    gwins = np.zeros(grad.shape + (p * p,), dtype=np.float64)
    np.put_along_axis(gwins, idx[..., None], grad[..., None], axis=-1)
    gx = np.zeros_like(x)
    for ki in range(p):
        for kj in range(p):
            gx[:, :, ki:ki + s * oh:s, kj:kj + s * ow:s] += gwins[..., ki * p + kj]
    return gx
