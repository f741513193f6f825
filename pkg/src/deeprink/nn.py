"""Layered 3D-CNN assembly: forward, weighted BCE, backprop, SGD, grad check.

An ArchitectureSpec is an ordered stack of layer descriptors over a fixed
(C, D, H, W) input, ending in a dense layer followed by sigmoid so the
network emits one confidence in (0, 1) per class.

Architecture text form, one layer per line, parsed by `arch_from_text`:

    input 1,15,32,32
    conv3d filters=8 kernel=3,3,3 stride=1,1,1
    relu
    maxpool3d window=2,2,2 stride=2,2,2
    flatten
    dense units=64
    relu
    dense units=4
    sigmoid

Blank lines and lines starting with '#' are ignored. `stride` defaults to
1,1,1 for conv3d and to the window for maxpool3d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArchitectureError, ShapeError
from .kernels import (
    conv3d_batch,
    conv3d_grad_batch,
    conv_output_shape,
    maxpool3d_batch,
    maxpool3d_grad_batch,
    _im2col,
)

EPS = 1e-12  # clamp inside the BCE logs


@dataclass(frozen=True)
class ConvLayer:
    filters: int
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)


@dataclass(frozen=True)
class ReluLayer:
    pass


@dataclass(frozen=True)
class PoolLayer:
    window: tuple[int, int, int]
    stride: tuple[int, int, int]


@dataclass(frozen=True)
class FlattenLayer:
    pass


@dataclass(frozen=True)
class DenseLayer:
    units: int


@dataclass(frozen=True)
class SigmoidLayer:
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: tuple[int, int, int, int]
    layers: tuple = ()

    def output_count(self) -> int:
        for layer in reversed(self.layers):
            if isinstance(layer, DenseLayer):
                return layer.units
        raise ArchitectureError("architecture has no dense layer")


@dataclass
class Hyperparameters:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 8
    mu: float = 0.7
    alpha: float = 0.5
    window_size: int = 15
    window_overlap: int = 5
    resize_factor: int = 4
    split_ratio: float = 0.7

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 < self.mu <= 1:
            raise ValueError("mu must be in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must be in (0, 1)")


@dataclass
class Model:
    arch: ArchitectureSpec
    params: list  # one (weights, bias) pair per parametric layer, in order
    seed: int


def layer_shapes(arch: ArchitectureSpec) -> list:
    """Shape after each layer, validating the whole chain.

    Spatial shapes are (C, D, H, W) tuples; after flatten they are plain ints.
    """
    if len(arch.input_shape) != 4 or any(d < 1 for d in arch.input_shape):
        raise ArchitectureError(f"bad input shape {arch.input_shape}")
    shapes = []
    shape = tuple(arch.input_shape)
    for layer in arch.layers:
        if isinstance(layer, ConvLayer):
            if isinstance(shape, int):
                raise ArchitectureError("conv3d after flatten")
            try:
                out = conv_output_shape(shape[1:], layer.kernel, layer.stride)
            except ShapeError as e:
                raise ArchitectureError(str(e)) from e
            shape = (layer.filters, *out)
        elif isinstance(layer, PoolLayer):
            if isinstance(shape, int):
                raise ArchitectureError("maxpool3d after flatten")
            try:
                out = conv_output_shape(shape[1:], layer.window, layer.stride)
            except ShapeError as e:
                raise ArchitectureError(str(e)) from e
            shape = (shape[0], *out)
        elif isinstance(layer, FlattenLayer):
            if isinstance(shape, int):
                raise ArchitectureError("flatten applied twice")
            shape = int(np.prod(shape))
        elif isinstance(layer, DenseLayer):
            if not isinstance(shape, int):
                raise ArchitectureError("dense requires a flattened input")
            if layer.units < 1:
                raise ArchitectureError("dense units must be >= 1")
            shape = layer.units
        elif isinstance(layer, (ReluLayer, SigmoidLayer)):
            pass
        else:
            raise ArchitectureError(f"unknown layer {layer!r}")
        shapes.append(shape)
    if not arch.layers or not isinstance(arch.layers[-1], SigmoidLayer):
        raise ArchitectureError("network must end with sigmoid")
    dense_positions = [i for i, l in enumerate(arch.layers) if isinstance(l, DenseLayer)]
    if not dense_positions or dense_positions[-1] != len(arch.layers) - 2:
        raise ArchitectureError("sigmoid must directly follow the final dense layer")
    return shapes


def param_count(arch: ArchitectureSpec) -> int:
    """Total scalar parameter count (weights + biases)."""
    shapes = layer_shapes(arch)
    total = 0
    shape = tuple(arch.input_shape)
    for layer, out_shape in zip(arch.layers, shapes):
        if isinstance(layer, ConvLayer):
            c_in = shape[0]
            total += layer.filters * c_in * int(np.prod(layer.kernel)) + layer.filters
        elif isinstance(layer, DenseLayer):
            total += shape * layer.units + layer.units
        shape = out_shape
    return total


def build_model(arch: ArchitectureSpec, seed: int) -> Model:
    """Seeded init: weights uniform in +/- sqrt(6 / fan_in), biases zero."""
    shapes = layer_shapes(arch)
    rng = np.random.default_rng(seed)
    params = []
    shape = tuple(arch.input_shape)
    for layer, out_shape in zip(arch.layers, shapes):
        if isinstance(layer, ConvLayer):
            c_in = shape[0]
            fan_in = c_in * int(np.prod(layer.kernel))
            lim = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-lim, lim, size=(layer.filters, c_in, *layer.kernel))
            params.append((w, np.zeros(layer.filters)))
        elif isinstance(layer, DenseLayer):
            lim = math.sqrt(6.0 / shape)
            w = rng.uniform(-lim, lim, size=(shape, layer.units))
            params.append((w, np.zeros(layer.units)))
        shape = out_shape
    return Model(arch=arch, params=params, seed=seed)


def forward(model: Model, batch: np.ndarray):
    """Run a batch (N,C,D,H,W) through the stack.

    Returns (confidences (N,k), cache); the cache holds whatever backward
    needs per layer.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 5 or batch.shape[1:] != tuple(model.arch.input_shape):
        raise ShapeError(
            f"batch shape {batch.shape} does not match input {model.arch.input_shape}"
        )
    x = batch
    cache = []
    p = 0
    for layer in model.arch.layers:
        if isinstance(layer, ConvLayer):
            w, b = model.params[p]
            out_dims = conv_output_shape(x.shape[2:], layer.kernel, layer.stride)
            cols = _im2col(x, layer.kernel, layer.stride, out_dims)
            out = cols @ w.reshape(layer.filters, -1).T + b
            out = np.moveaxis(out.reshape(x.shape[0], *out_dims, layer.filters), -1, 1)
            cache.append(("conv", x, cols, p))
            x = np.ascontiguousarray(out)
            p += 1
        elif isinstance(layer, ReluLayer):
            mask = x > 0
            cache.append(("relu", mask))
            x = x * mask
        elif isinstance(layer, PoolLayer):
            out, argmax = maxpool3d_batch(x, layer.window, layer.stride)
            cache.append(("pool", argmax, x.shape[1:]))
            x = out
        elif isinstance(layer, FlattenLayer):
            cache.append(("flatten", x.shape))
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, DenseLayer):
            w, b = model.params[p]
            cache.append(("dense", x, p))
            x = x @ w + b
            p += 1
        elif isinstance(layer, SigmoidLayer):
            x = _sigmoid(x)
            cache.append(("sigmoid", x))
    return x, cache


def _sigmoid(z):
    # split on sign so neither branch exponentiates a large positive value
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_bce(confidences, labels, class_weights):
    """Class-weighted binary cross-entropy, averaged over every (sample, class).

    Weights scale only the positive-label term, so heavier classes push the
    model towards firing on their positives. Returns (loss, grad_confidences).
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    if confidences.shape != labels.shape:
        raise ShapeError(
            f"confidences {confidences.shape} vs labels {labels.shape}"
        )
    if w.shape != (confidences.shape[1],):
        raise ShapeError(f"need {confidences.shape[1]} class weights, got {w.shape}")
    if np.any(w < 1.0):
        raise ValueError("class weights must already be clamped to >= 1")
    p = np.clip(confidences, EPS, 1.0 - EPS)
    n_terms = confidences.size
    loss = -np.sum(w * labels * np.log(p) + (1.0 - labels) * np.log1p(-p)) / n_terms
    grad = (-(w * labels) / p + (1.0 - labels) / (1.0 - p)) / n_terms
    return float(loss), grad


def backward(model: Model, cache, grad_confidences):
    """Analytic gradients for every parameter pair, walking the cache in reverse."""
    expected = len([e for e in cache if e[0] in ("conv", "dense")])
    if expected != len(model.params):
        raise RuntimeError("cache does not match this model's parametric layers")
    grads = [None] * len(model.params)
    g = np.asarray(grad_confidences, dtype=np.float64)
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "sigmoid":
            s = entry[1]
            g = g * s * (1.0 - s)
        elif kind == "dense":
            _, x, p = entry
            w, _ = model.params[p]
            grads[p] = (x.T @ g, g.sum(axis=0))
            g = g @ w.T
        elif kind == "flatten":
            g = g.reshape(entry[1])
        elif kind == "pool":
            _, argmax, in_shape = entry
            g = maxpool3d_grad_batch(g, argmax, in_shape)
        elif kind == "relu":
            g = g * entry[1]
        elif kind == "conv":
            _, x, cols, p = entry
            w, _ = model.params[p]
            layer_stride = _conv_stride_for(model, p)
            gx, gw, gb = conv3d_grad_batch(g, x, w, layer_stride, cols=cols)
            grads[p] = (gw, gb)
            g = gx
    return grads


def _conv_stride_for(model: Model, param_index: int):
    p = 0
    for layer in model.arch.layers:
        if isinstance(layer, ConvLayer):
            if p == param_index:
                return layer.stride
            p += 1
        elif isinstance(layer, DenseLayer):
            p += 1
    raise RuntimeError(f"no conv layer at parameter index {param_index}")


def init_velocity(model: Model):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.params]


def sgd_step(model: Model, grads, hyper: Hyperparameters, velocity):
    """Classical momentum update, in place: v <- m*v - lr*g; theta <- theta + v."""
    for (w, b), (gw, gb), (vw, vb) in zip(model.params, grads, velocity):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ShapeError("gradient shapes do not match parameters")
        vw *= hyper.momentum
        vw -= hyper.learning_rate * gw
        vb *= hyper.momentum
        vb -= hyper.learning_rate * gb
        w += vw
        b += vb
    return model, velocity


def grad_check(model: Model, batch, labels, class_weights, h=1e-5, sample=100):
    """Compare analytic gradients to central differences, per parametric layer.

    Probes up to `sample` parameters from each weight/bias tensor and returns
    {layer_name: max relative error}, with relative error
    |a - n| / max(|a|, |n|, 1e-8).

    The network is piecewise smooth: if a probe lands so close to a relu sign
    change or a pooling argmax change that the decision flips between theta+h
    and theta-h, the central difference straddles a kink and does not estimate
    the derivative at theta. Such probes are discarded and another parameter is
    drawn, keeping the finite-difference oracle valid.
    """
    def evaluate():
        conf, cache = forward(model, batch)
        loss, _ = weighted_bce(conf, labels, class_weights)
        state = [e[1] for e in cache if e[0] in ("relu", "pool")]
        return loss, state

    conf, cache = forward(model, batch)
    _, grad_conf = weighted_bce(conf, labels, class_weights)
    grads = backward(model, cache, grad_conf)

    report = {}
    names = _param_layer_names(model.arch)
    rng = np.random.default_rng(0)
    for name, (w, b), (gw, gb) in zip(names, model.params, grads):
        worst = 0.0
        w_flat, b_flat = w.reshape(-1), b.reshape(-1)
        gw_flat, gb_flat = gw.reshape(-1), gb.reshape(-1)
        total = w_flat.size + b_flat.size
        target = min(sample, total)
        probed = 0
        for idx in rng.permutation(total):
            if probed >= target:
                break
            if idx < w_flat.size:
                flat, analytic, i = w_flat, gw_flat, idx
            else:
                flat, analytic, i = b_flat, gb_flat, idx - w_flat.size
            orig = flat[i]
            flat[i] = orig + h
            lp, state_p = evaluate()
            flat[i] = orig - h
            lm, state_m = evaluate()
            flat[i] = orig
            if any(not np.array_equal(a, m) for a, m in zip(state_p, state_m)):
                continue  # astride a relu/pool decision boundary
            probed += 1
            numeric = (lp - lm) / (2 * h)
            a = analytic[i]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        report[name] = worst
    return report


def _param_layer_names(arch: ArchitectureSpec):
    names = []
    conv_i = dense_i = 0
    for layer in arch.layers:
        if isinstance(layer, ConvLayer):
            names.append(f"conv3d_{conv_i}")
            conv_i += 1
        elif isinstance(layer, DenseLayer):
            names.append(f"dense_{dense_i}")
            dense_i += 1
    return names


def default_architecture(k: int) -> ArchitectureSpec:
    """Small VGG-style stack over (1, 15, 32, 32) windows; 77,748 params at k=4."""
    return ArchitectureSpec(
        input_shape=(1, 15, 32, 32),
        layers=(
            ConvLayer(filters=8, kernel=(3, 3, 3)),
            ReluLayer(),
            PoolLayer(window=(2, 2, 2), stride=(2, 2, 2)),
            ConvLayer(filters=16, kernel=(3, 3, 3)),
            ReluLayer(),
            PoolLayer(window=(2, 2, 2), stride=(2, 2, 2)),
            FlattenLayer(),
            DenseLayer(units=64),
            ReluLayer(),
            DenseLayer(units=k),
            SigmoidLayer(),
        ),
    )


def _parse_triple(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ArchitectureError(f"expected three comma-separated integers, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as e:
        raise ArchitectureError(f"bad integer triple {text!r}") from e


def _parse_kv(tokens, allowed):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ArchitectureError(f"expected key=value, got {tok!r}")
        key, _, value = tok.partition("=")
        if key not in allowed:
            raise ArchitectureError(f"unknown option {key!r}")
        out[key] = value
    return out


def arch_from_text(text: str) -> ArchitectureSpec:
    """Parse the line-oriented architecture grammar (see module docstring)."""
    input_shape = None
    layers = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind, args = tokens[0], tokens[1:]
        try:
            if kind == "input":
                if len(args) != 1:
                    raise ArchitectureError("input takes one C,D,H,W tuple")
                parts = args[0].split(",")
                if len(parts) != 4:
                    raise ArchitectureError(f"input needs 4 extents, got {args[0]!r}")
                input_shape = tuple(int(p) for p in parts)
            elif kind == "conv3d":
                kv = _parse_kv(args, {"filters", "kernel", "stride"})
                if "filters" not in kv or "kernel" not in kv:
                    raise ArchitectureError("conv3d needs filters= and kernel=")
                layers.append(
                    ConvLayer(
                        filters=int(kv["filters"]),
                        kernel=_parse_triple(kv["kernel"]),
                        stride=_parse_triple(kv.get("stride", "1,1,1")),
                    )
                )
            elif kind == "relu":
                layers.append(ReluLayer())
            elif kind == "maxpool3d":
                kv = _parse_kv(args, {"window", "stride"})
                if "window" not in kv:
                    raise ArchitectureError("maxpool3d needs window=")
                window = _parse_triple(kv["window"])
                stride = _parse_triple(kv["stride"]) if "stride" in kv else window
                layers.append(PoolLayer(window=window, stride=stride))
            elif kind == "flatten":
                layers.append(FlattenLayer())
            elif kind == "dense":
                kv = _parse_kv(args, {"units"})
                if "units" not in kv:
                    raise ArchitectureError("dense needs units=")
                layers.append(DenseLayer(units=int(kv["units"])))
            elif kind == "sigmoid":
                layers.append(SigmoidLayer())
            else:
                raise ArchitectureError(f"unknown layer kind {kind!r}")
        except (ValueError, ArchitectureError) as e:
            raise ArchitectureError(f"line {lineno}: {e}") from None
    if input_shape is None:
        raise ArchitectureError("missing 'input C,D,H,W' line")
    arch = ArchitectureSpec(input_shape=input_shape, layers=tuple(layers))
    layer_shapes(arch)  # validate the chain now, not at first use
    return arch


def arch_to_text(arch: ArchitectureSpec) -> str:
    lines = ["input " + ",".join(str(d) for d in arch.input_shape)]
    for layer in arch.layers:
        if isinstance(layer, ConvLayer):
            lines.append(
                "conv3d filters={} kernel={} stride={}".format(
                    layer.filters,
                    ",".join(map(str, layer.kernel)),
                    ",".join(map(str, layer.stride)),
                )
            )
        elif isinstance(layer, ReluLayer):
            lines.append("relu")
        elif isinstance(layer, PoolLayer):
            lines.append(
                "maxpool3d window={} stride={}".format(
                    ",".join(map(str, layer.window)),
                    ",".join(map(str, layer.stride)),
                )
            )
        elif isinstance(layer, FlattenLayer):
            lines.append("flatten")
        elif isinstance(layer, DenseLayer):
            lines.append(f"dense units={layer.units}")
        elif isinstance(layer, SigmoidLayer):
            lines.append("sigmoid")
    return "\n".join(lines) + "\n"
