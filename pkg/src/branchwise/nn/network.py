"""Feed-forward network assembly, forward/backward passes, evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, StaleCacheError
from . import layers as L
from .losses import batch_cross_entropy, per_sample_cross_entropy
from .params import ParameterStore


@dataclass
class Network:
    """A layer stack with its parameters and the per-layer shape chain.

    ``shapes[i]`` is the shape of one sample after layer i-1 (``shapes[0]`` is
    the input shape), so ``shapes`` has len(layers) + 1 entries.
    """

    layers: list[L.LayerSpec]
    params: ParameterStore
    input_shape: tuple[int, ...]
    shapes: list[tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self):
        if not self.shapes:
            self.shapes = shape_chain(self.layers, self.input_shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]


@dataclass
class ForwardCache:
    """Per-layer inputs and auxiliaries kept for a matching backward call."""

    activations: list[np.ndarray]
    aux: list
    mode: str
    params_version: int


def shape_chain(specs: list[L.LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    shapes = [tuple(input_shape)]
    for i, spec in enumerate(specs):
        try:
            shapes.append(L.output_shape(spec, shapes[-1]))
        except ShapeError as e:
            raise ShapeError(f"layer {i} ({spec.kind}): {e}") from None
    return shapes


def init_parameters(specs: list[L.LayerSpec], input_shape: tuple[int, ...], seed: int,
                    prefix: str = "layer") -> ParameterStore:
    """Allocate parameters for a layer stack.

    Weights draw from uniform(-a, a) with a = sqrt(6 / fan_in), which has
    variance 2 / fan_in; biases start at zero. One generator seeded with
    ``seed`` is consumed in layer order, so equal seeds give bitwise-equal
    stores.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    shapes = shape_chain(specs, input_shape)
    for i, spec in enumerate(specs):
        for suffix, shape in L.parameter_shapes(spec, shapes[i]).items():
            if suffix == "w":
                limit = np.sqrt(6.0 / L.fan_in(spec, shapes[i]))
                value = rng.uniform(-limit, limit, size=shape)
            else:
                value = np.zeros(shape)
            store.add(f"{prefix}{i}.{suffix}", value)
    return store


def build_network(specs: list[L.LayerSpec], input_shape: tuple[int, ...], seed: int) -> Network:
    input_shape = tuple(int(d) for d in input_shape)
    return Network(list(specs), init_parameters(specs, input_shape, seed), input_shape)


def _layer_weights(net: Network, i: int):
    name = f"layer{i}"
    if f"{name}.w" in net.params.values:
        return net.params.values[f"{name}.w"], net.params.values[f"{name}.b"]
    return None


def forward(net: Network, x: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> tuple[np.ndarray, ForwardCache]:
    """Run the full stack on a batch.

    Args:
        x: batch of inputs, shape (N, *input_shape).
        mode: "train" enables dropout (requires rng); "eval" is deterministic.
        rng: consumed by dropout layers only, in layer order.

    Returns:
        (output, cache). The cache holds every intermediate activation
        (``cache.activations[b]`` is the output of layer b, index 0 the input)
        and is only valid until the next parameter update.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == len(net.input_shape):
        raise ShapeError(
            f"forward expects a batch of shape (N, {', '.join(map(str, net.input_shape))}); "
            f"got unbatched {x.shape}")
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(f"layer 0 ({net.layers[0].kind if net.layers else 'input'}): "
                         f"expected input shape {net.input_shape}, got {tuple(x.shape[1:])}")
    activations = [x]
    auxes = []
    for i, spec in enumerate(net.layers):
        if tuple(activations[-1].shape[1:]) != net.shapes[i]:
            raise ShapeError(f"layer {i} ({spec.kind}): expected input shape "
                             f"{net.shapes[i]}, got {tuple(activations[-1].shape[1:])}")
        out, aux = L.forward(spec, activations[-1], _layer_weights(net, i), mode, rng)
        activations.append(out)
        auxes.append(aux)
    return activations[-1], ForwardCache(activations, auxes, mode, net.params.version)


def backward(net: Network, cache: ForwardCache, grad: np.ndarray,
             wrt_logits: bool = False) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagate a gradient through a cached forward pass.

    Args:
        grad: gradient of the objective w.r.t. the network output, or w.r.t.
            the final pre-softmax logits when ``wrt_logits`` is set (the
            trailing softmax layer is then skipped; used with the fused
            softmax/cross-entropy gradient).

    Returns:
        (param_grads, input_grad). Frozen parameters get no entry, so a fully
        frozen network yields an empty dict.
    """
    if cache.params_version != net.params.version:
        raise StaleCacheError("forward cache predates the last parameter update")
    start = len(net.layers) - 1
    if wrt_logits:
        if not net.layers or net.layers[-1].kind != "softmax":
            raise ValueError("wrt_logits requires a trailing softmax layer")
        start -= 1
    grads: dict[str, np.ndarray] = {}
    g = np.asarray(grad, dtype=np.float64)
    for i in range(start, -1, -1):
        spec = net.layers[i]
        g, pgrads = L.backward(spec, g, cache.activations[i], cache.aux[i], _layer_weights(net, i))
        for suffix, pg in pgrads.items():
            name = f"layer{i}.{suffix}"
            if not net.params.is_frozen(name):
                grads[name] = pg
    return grads, g


def predict_proba(net: Network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class probabilities, computed in fixed-size chunks."""
    x = np.asarray(x, dtype=np.float64)
    outs = [forward(net, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def evaluate(net: Network, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> tuple[float, float]:
    """(accuracy, mean cross-entropy loss) over a labelled set, eval mode."""
    p = predict_proba(net, x, batch_size)
    loss, _ = batch_cross_entropy(p, y)
    accuracy = float((p.argmax(axis=1) == np.asarray(y)).mean())
    return accuracy, float(loss)


def per_sample_losses(net: Network, x: np.ndarray, y: np.ndarray,
                      batch_size: int = 256) -> np.ndarray:
    """Eval-mode cross-entropy loss of each sample, in dataset order."""
    p = predict_proba(net, x, batch_size)
    return per_sample_cross_entropy(p, y)


def freeze(net: Network) -> Network:
    net.params.freeze()
    return net
