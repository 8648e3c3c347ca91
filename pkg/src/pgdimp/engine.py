"""Minimal differentiable classifier runtime.

Public functions speak pixel units in [0, 255]. The model rescales by 1/255
before its first layer, and that factor is part of every gradient returned
here. All arithmetic is float64.

Inputs may be a single image shaped like ``model.input_shape`` or a batch
with one extra leading axis; outputs follow the same convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import InputError, ParseError, TrainingError

PIXEL_SCALE = 1.0 / 255.0


# ----------------------------------------------------------------------------
# layers
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dense:
    """Affine map over the flattened input: ``y = W @ x + b``."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    kind = "dense"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise InputError(f"dense: weight {w.shape} and bias {b.shape} are inconsistent")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def params(self):
        return (self.weight, self.bias)

    def output_shape(self, shape):
        if math.prod(shape) != self.weight.shape[1]:
            raise InputError(f"dense expects {self.weight.shape[1]} inputs, got shape {tuple(shape)}")
        return (self.weight.shape[0],)

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        return kernels.dense_forward(flat, self.weight, self.bias), (x.shape, flat)

    def backward(self, g, cache, need_params=False):
        shape, flat = cache
        gx = kernels.dense_backward_input(g, self.weight).reshape(shape)
        if not need_params:
            return gx, ()
        return gx, (g.T @ flat, g.sum(axis=0))


@dataclass(frozen=True, eq=False)
class Conv2D:
    """Valid (unpadded) stride-1 cross-correlation."""

    weight: np.ndarray  # (out_channels, in_channels, kh, kw)
    bias: np.ndarray  # (out_channels,)
    kind = "conv2d"

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 4 or b.shape != (w.shape[0],):
            raise InputError(f"conv2d: weight {w.shape} and bias {b.shape} are inconsistent")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def params(self):
        return (self.weight, self.bias)

    def output_shape(self, shape):
        o, c, kh, kw = self.weight.shape
        if len(shape) != 3 or shape[0] != c:
            raise InputError(f"conv2d expects {c} input channels, got shape {tuple(shape)}")
        if shape[1] < kh or shape[2] < kw:
            raise InputError(f"conv2d kernel {kh}x{kw} larger than input {tuple(shape)}")
        return (o, shape[1] - kh + 1, shape[2] - kw + 1)

    def forward(self, x):
        return kernels.conv2d_forward(x, self.weight, self.bias), x

    def backward(self, g, cache, need_params=False):
        gx = kernels.conv2d_backward_input(g, self.weight)
        if not need_params:
            return gx, ()
        kh, kw = self.weight.shape[2:]
        return gx, (kernels.conv2d_backward_weight(cache, g, kh, kw), g.sum(axis=(0, 2, 3)))


@dataclass(frozen=True, eq=False)
class ReLU:
    kind = "relu"
    params = ()

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, g, mask, need_params=False):
        return np.where(mask, g, 0.0), ()


@dataclass(frozen=True, eq=False)
class Flatten:
    kind = "flatten"
    params = ()

    def output_shape(self, shape):
        return (math.prod(shape),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, g, shape, need_params=False):
        return g.reshape(shape), ()


Layer = Dense | Conv2D | ReLU | Flatten


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Model:
    layers: tuple
    input_shape: tuple
    num_classes: int
    shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InputError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if self.num_classes < 1:
            raise InputError("num_classes must be positive")
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        if shapes[-1] != (self.num_classes,):
            raise InputError(f"model ends in shape {shapes[-1]}, expected ({self.num_classes},)")
        object.__setattr__(self, "shapes", tuple(shapes))

    def parameters(self):
        return [p for layer in self.layers for p in layer.params]


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    images: np.ndarray  # (N, C, H, W) pixel units
    labels: np.ndarray  # (N,) int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4 or labels.shape != (images.shape[0],):
            raise InputError(f"images {images.shape} and labels {labels.shape} do not match")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None], True
    if x.ndim == 4 and x.shape[1:] == model.input_shape:
        return x, False
    raise InputError(f"image shape {x.shape} does not match model input {model.input_shape}")


def _labels(labels, n: int, num_classes: int) -> np.ndarray:
    lab = np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,))
    if lab.size and (lab.min() < 0 or lab.max() >= num_classes):
        raise InputError(f"label out of range [0, {num_classes})")
    return lab


def _forward(model: Model, xb: np.ndarray, keep: bool):
    h = xb * PIXEL_SCALE
    caches = []
    for layer in model.layers:
        h, cache = layer.forward(h)
        if keep:
            caches.append(cache)
    return h, caches


def _ce_grad(logits: np.ndarray, labels: np.ndarray):
    """Per-row CE loss and d loss / d logits."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(labels))
    loss = (m[:, 0] + np.log(s[:, 0])) - logits[rows, labels]
    g = e / s
    g[rows, labels] -= 1.0
    return loss, g


def forward(model: Model, image) -> np.ndarray:
    """Logits for one image (shape ``(num_classes,)``) or a batch."""
    xb, single = _as_batch(model, image)
    logits, _ = _forward(model, xb, keep=False)
    return logits[0] if single else logits


def predict(model: Model, image):
    """Argmax class; ties go to the lowest index."""
    logits = forward(model, image)
    return int(np.argmax(logits)) if logits.ndim == 1 else np.argmax(logits, axis=1)


def ce_loss(logits, label):
    """Cross-entropy ``-log softmax(logits)[label]`` computed stably."""
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None] if single else z
    lab = _labels(label, zb.shape[0], zb.shape[1])
    loss, _ = _ce_grad(zb, lab)
    return float(loss[0]) if single else loss


def input_gradient(model: Model, image, label) -> np.ndarray:
    """Exact gradient of CE(forward(image), label) w.r.t. the pixels."""
    xb, single = _as_batch(model, image)
    lab = _labels(label, xb.shape[0], model.num_classes)
    logits, caches = _forward(model, xb, keep=True)
    _, g = _ce_grad(logits, lab)
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        g, _ = layer.backward(g, cache)
    g = g * PIXEL_SCALE
    return g[0] if single else g


def loss_and_param_grads(model: Model, images: np.ndarray, labels: np.ndarray):
    """Mean CE over a batch and its gradient for every parameter, in layer order."""
    logits, caches = _forward(model, images, keep=True)
    loss, g = _ce_grad(logits, labels)
    g = g / len(labels)
    grads = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        g, pg = layer.backward(g, cache, need_params=True)
        grads[:0] = pg
    return float(loss.mean()), grads


# ----------------------------------------------------------------------------
# architecture strings and training
# ----------------------------------------------------------------------------


def parse_architecture(arch: str | Sequence[str]) -> list[tuple]:
    """Parse ``"conv:8:3,relu,flatten,dense:4"`` into layer tokens.

    ``conv:O:K`` is an O-filter KxK convolution, ``dense:M`` an M-unit
    affine layer.
    """
    tokens = arch.split(",") if isinstance(arch, str) else list(arch)
    out = []
    for tok in tokens:
        parts = tok.strip().lower().split(":")
        try:
            if parts[0] == "conv" and len(parts) == 3:
                out.append(("conv2d", int(parts[1]), int(parts[2])))
            elif parts[0] == "dense" and len(parts) == 2:
                out.append(("dense", int(parts[1])))
            elif parts[0] in ("relu", "flatten") and len(parts) == 1:
                out.append((parts[0],))
            else:
                raise ValueError
        except ValueError:
            raise InputError(f"bad architecture token {tok!r}") from None
    if not out:
        raise InputError("empty architecture")
    return out


def init_model(arch, input_shape, num_classes: int, seed: int) -> Model:
    """He-normal weights and zero biases, drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers = []
    for tok in parse_architecture(arch):
        if tok[0] == "conv2d":
            _, o, k = tok
            c = shape[0]
            w = rng.normal(0.0, math.sqrt(2.0 / (c * k * k)), size=(o, c, k, k))
            layer = Conv2D(w, np.zeros(o))
        elif tok[0] == "dense":
            fan_in = math.prod(shape)
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(tok[1], fan_in))
            layer = Dense(w, np.zeros(tok[1]))
        elif tok[0] == "relu":
            layer = ReLU()
        else:
            layer = Flatten()
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Model(tuple(layers), tuple(input_shape), num_classes)


def center_biases(model: Model, images: np.ndarray) -> Model:
    """Shift each affine layer's bias so its pre-activations have zero mean on ``images``.

    Pixels in [0, 1] carry a large common offset that otherwise dominates
    the early gradient steps.
    """
    h = np.asarray(images, dtype=np.float64) * PIXEL_SCALE
    layers = []
    for layer in model.layers:
        if isinstance(layer, (Dense, Conv2D)):
            out, _ = layer.forward(h)
            axes = (0, 2, 3) if out.ndim == 4 else 0
            layer = type(layer)(layer.weight, layer.bias - out.mean(axis=axes))
        h, _ = layer.forward(h)
        layers.append(layer)
    return Model(tuple(layers), model.input_shape, model.num_classes)


def _with_params(model: Model, params: list[np.ndarray]) -> Model:
    it = iter(params)
    layers = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            layers.append(Dense(next(it), next(it)))
        elif isinstance(layer, Conv2D):
            layers.append(Conv2D(next(it), next(it)))
        else:
            layers.append(layer)
    return Model(tuple(layers), model.input_shape, model.num_classes)


def accuracy(model: Model, batch: LabeledBatch) -> float:
    return float(np.mean(predict(model, batch.images) == batch.labels))


def train_toy(
    arch,
    dataset: LabeledBatch,
    epochs: int = 30,
    lr: float = 0.1,
    seed: int = 0,
    batch_size: int = 32,
    min_accuracy: float = 0.95,
    num_classes: int | None = None,
) -> Model:
    """Mini-batch gradient descent with a fixed learning rate.

    Raises TrainingError if training accuracy ends below ``min_accuracy``.
    """
    if len(dataset) == 0:
        raise InputError("empty dataset")
    if epochs < 1 or batch_size < 1 or not lr > 0:
        raise InputError("epochs, batch_size and lr must be positive")
    if num_classes is None:
        num_classes = int(dataset.labels.max()) + 1
    _labels(dataset.labels, len(dataset), num_classes)
    model = center_biases(init_model(arch, dataset.images.shape[1:], num_classes, seed), dataset.images)
    params = [p.copy() for p in model.parameters()]
    rng = np.random.default_rng([seed, 1])
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, grads = loss_and_param_grads(model, dataset.images[idx], dataset.labels[idx])
            for p, g in zip(params, grads):
                p -= lr * g
            model = _with_params(model, params)
    acc = accuracy(model, dataset)
    if acc < min_accuracy:
        raise TrainingError(f"training accuracy below {min_accuracy}", acc)
    return model


# ----------------------------------------------------------------------------
# model files
# ----------------------------------------------------------------------------

MAGIC = "PGDIMP-MODEL"
FORMAT_VERSION = 1


def _layer_header(layer) -> dict:
    d = {"kind": layer.kind}
    if layer.params:
        d["weight"] = list(layer.weight.shape)
        d["bias"] = list(layer.bias.shape)
    return d


def save_model(model: Model, path) -> None:
    """Write ``MAGIC VERSION\\n<json header>\\n<float64 LE blob>``."""
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    header = {
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "layers": [_layer_header(layer) for layer in model.layers],
        "dtype": "<f8",
        "blob_bytes": len(blob),
    }
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {FORMAT_VERSION}\n".encode())
        fh.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        fh.write(blob)


def _field(header: dict, name: str, kind):
    if name not in header:
        raise ParseError(f"model header missing field {name!r}")
    value = header[name]
    if not isinstance(value, kind):
        raise ParseError(f"model header field {name!r} has wrong type")
    return value


def _dims(value, name: str) -> tuple:
    if not isinstance(value, list) or not all(isinstance(v, int) and v > 0 for v in value):
        raise ParseError(f"model header field {name!r} must be a list of positive ints")
    return tuple(value)


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    first = data.find(b"\n")
    second = data.find(b"\n", first + 1)
    if first < 0 or second < 0:
        raise ParseError("model file truncated in header")
    magic = data[:first].decode("ascii", "replace").split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise ParseError("bad magic line")
    if magic[1] != str(FORMAT_VERSION):
        raise ParseError(f"unsupported format version {magic[1]!r}")
    try:
        header = json.loads(data[first + 1 : second])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"model header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise ParseError("model header must be a JSON object")
    if _field(header, "dtype", str) != "<f8":
        raise ParseError("model header field 'dtype' must be '<f8'")
    blob = data[second + 1 :]
    blob_bytes = _field(header, "blob_bytes", int)
    if len(blob) != blob_bytes:
        raise ParseError(f"model header field 'blob_bytes' is {blob_bytes} but blob has {len(blob)} bytes")
    if blob_bytes % 8:
        raise ParseError("model header field 'blob_bytes' is not a multiple of 8")
    input_shape = _dims(_field(header, "input_shape", list), "input_shape")
    num_classes = _field(header, "num_classes", int)
    values = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    pos = 0

    def take(shape, name):
        nonlocal pos
        size = math.prod(shape)
        if pos + size > values.size:
            raise ParseError(f"model blob too short for field {name!r}")
        out = values[pos : pos + size].reshape(shape).copy()
        pos += size
        return out

    layers = []
    for i, spec in enumerate(_field(header, "layers", list)):
        if not isinstance(spec, dict) or "kind" not in spec:
            raise ParseError(f"model header field 'layers[{i}]' malformed")
        kind = spec["kind"]
        if kind in ("dense", "conv2d"):
            wshape = _dims(spec.get("weight"), f"layers[{i}].weight")
            bshape = _dims(spec.get("bias"), f"layers[{i}].bias")
            w = take(wshape, f"layers[{i}].weight")
            b = take(bshape, f"layers[{i}].bias")
            try:
                layers.append(Dense(w, b) if kind == "dense" else Conv2D(w, b))
            except InputError as exc:
                raise ParseError(f"model header field 'layers[{i}]': {exc}") from None
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise ParseError(f"model header field 'layers[{i}].kind' unknown: {kind!r}")
    if pos != values.size:
        raise ParseError("model field 'blob_bytes' exceeds the declared layer parameters")
    try:
        return Model(tuple(layers), input_shape, num_classes)
    except InputError as exc:
        raise ParseError(f"model header field 'layers': {exc}") from None
