"""A small feed-forward network engine in numpy.

Supports exactly what the estimators need: valid stride-1 2-D convolutions,
flatten, dense layers, ReLU/linear activations, the mean-absolute-error
loss, reverse-mode gradients and Adam.  Tensors are channels-last
(batch, height, width, channels); convolution kernels are stored as
(kernel_h, kernel_w, in_channels, filters).
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError, TrainingError
from .grids import ScalingStats

FORMAT_VERSION = 1
MAGIC = b"COVNN\x00\x00\x00"
ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: tuple[int, int]
    activation: str = "relu"


@dataclass(frozen=True)
class Dense:
    units: int
    activation: str = "relu"


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class ModelSpec:
    """Sequential architecture: input shape (without batch axis) and layers."""

    name: str
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        self.output_shapes()  # validates shape propagation
        last = self.layers[-1]
        if not (isinstance(last, Dense) and last.units == 2 and last.activation == "linear"):
            raise InputError("the final layer must be dense(2, linear)")

    def output_shapes(self) -> list[tuple]:
        shape = tuple(self.input_shape)
        out = []
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise InputError(f"conv2d needs a (H, W, C) input, got {shape}")
                h, w, _ = shape
                kh, kw = layer.kernel
                if kh > h or kw > w:
                    raise InputError(f"kernel {layer.kernel} larger than input {shape}")
                shape = (h - kh + 1, w - kw + 1, layer.filters)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise InputError(f"dense needs a flat input, got {shape}")
                shape = (layer.units,)
            else:
                raise InputError(f"unknown layer {layer!r}")
            if getattr(layer, "activation", "linear") not in ACTIVATIONS:
                raise InputError(f"unknown activation {layer.activation!r}")
            out.append(shape)
        return out

    def param_shapes(self) -> list[dict[str, tuple]]:
        shapes = []
        prev = tuple(self.input_shape)
        for layer, shape in zip(self.layers, self.output_shapes()):
            if isinstance(layer, Conv2D):
                kh, kw = layer.kernel
                shapes.append({"W": (kh, kw, prev[2], layer.filters), "b": (layer.filters,)})
            elif isinstance(layer, Dense):
                shapes.append({"W": (prev[0], layer.units), "b": (layer.units,)})
            else:
                shapes.append({})
            prev = shape
        return shapes

    def param_counts(self) -> list[int]:
        return [sum(int(np.prod(s)) for s in p.values()) for p in self.param_shapes()]

    @property
    def total_parameters(self) -> int:
        return sum(self.param_counts())

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                layers.append({"type": "conv2d", "filters": layer.filters,
                               "kernel": list(layer.kernel), "activation": layer.activation})
            elif isinstance(layer, Dense):
                layers.append({"type": "dense", "units": layer.units, "activation": layer.activation})
            else:
                layers.append({"type": "flatten"})
        return {"name": self.name, "input_shape": list(self.input_shape), "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = []
        for l in d["layers"]:
            if l["type"] == "conv2d":
                layers.append(Conv2D(int(l["filters"]), tuple(l["kernel"]), l["activation"]))
            elif l["type"] == "dense":
                layers.append(Dense(int(l["units"]), l["activation"]))
            elif l["type"] == "flatten":
                layers.append(Flatten())
            else:
                raise FormatError(f"unknown layer type {l['type']!r}")
        return cls(d["name"], tuple(d["input_shape"]), tuple(layers))

    def spec_hash(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()


def build_nf(size: int = 16) -> ModelSpec:
    """Convolutional estimator on a single 16 x 16 field (635,742 weights)."""
    return ModelSpec(
        "NF",
        (size, size, 1),
        (
            Conv2D(128, (10, 10)),
            Conv2D(128, (5, 5)),
            Conv2D(128, (3, 3)),
            Flatten(),
            Dense(500),
            Dense(2, "linear"),
        ),
    )


def _variogram_spec(name: str, width: int) -> ModelSpec:
    return ModelSpec(name, (width,), (Dense(3000), Dense(1000), Dense(2, "linear")))


def build_nv(n_lags: int = 119) -> ModelSpec:
    """Dense estimator on one variogram of ``n_lags`` values."""
    return _variogram_spec("NV", n_lags)


def build_nv30(n_lags: int = 119, replicates: int = 30) -> ModelSpec:
    """Dense estimator on ``replicates`` variograms flattened row-major (replicate, lag)."""
    return _variogram_spec("NV30", n_lags * replicates)


def init_weights(spec: ModelSpec, seed=0, dtype=np.float32) -> list[dict[str, np.ndarray]]:
    """Glorot-uniform kernels and zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for shapes in spec.param_shapes():
        if not shapes:
            params.append({})
            continue
        wshape = shapes["W"]
        if len(wshape) == 4:
            rf = wshape[0] * wshape[1]
            fan_in, fan_out = rf * wshape[2], rf * wshape[3]
        else:
            fan_in, fan_out = wshape
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-limit, limit, size=wshape).astype(dtype)
        params.append({"W": W, "b": np.zeros(shapes["b"], dtype=dtype)})
    return params


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))  # B,Ho,Wo,C,kh,kw
    B, Ho, Wo, C = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)


def _check_input(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[1:] != tuple(spec.input_shape):
        raise InputError(f"{spec.name} expects inputs of shape (batch, {tuple(spec.input_shape)}), got {x.shape}")
    return x


def _forward(spec, params, x, keep=False):
    dtype = params[-1]["W"].dtype
    a = _check_input(spec, x).astype(dtype, copy=False)
    tape = []
    for layer, p in zip(spec.layers, params):
        if isinstance(layer, Conv2D):
            kh, kw = layer.kernel
            B, H, W, C = a.shape
            Ho, Wo = H - kh + 1, W - kw + 1
            cols = _im2col(a, kh, kw)
            z = (cols @ p["W"].reshape(-1, layer.filters) + p["b"]).reshape(B, Ho, Wo, layer.filters)
            if keep:
                tape.append((cols, a.shape))
        elif isinstance(layer, Flatten):
            if keep:
                tape.append(a.shape)
            z = a.reshape(a.shape[0], -1)
        else:
            if keep:
                tape.append(a)
            z = a @ p["W"] + p["b"]
        if getattr(layer, "activation", "linear") == "relu":
            mask = z > 0
            a = np.where(mask, z, 0).astype(dtype, copy=False)
            if keep:
                tape[-1] = (tape[-1], mask)
        else:
            a = z
            if keep:
                tape[-1] = (tape[-1], None)
    return a, tape


def forward(spec: ModelSpec, params, x) -> np.ndarray:
    """Network output (batch, 2), evaluating every sample on its own.

    BLAS picks kernels by operand shape, so a row of a batched product can
    differ in the last bit from the same row computed alone.  Running each
    sample separately makes an output depend only on its own input.
    """
    x = _check_input(spec, x)
    out = np.empty((x.shape[0], 2), dtype=params[-1]["W"].dtype)
    for i in range(x.shape[0]):
        out[i] = _forward(spec, params, x[i : i + 1])[0][0]
    return out


def forward_batch(spec: ModelSpec, params, x) -> np.ndarray:
    """Network output (batch, 2) from one batched pass (faster, not batch-invariant)."""
    return _forward(spec, params, x)[0]


def mae_loss(pred, target) -> float:
    """Batch mean of ``|err_loglambda| + |err_theta|``."""
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise InputError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return float(np.sum(np.abs(pred - target), dtype=np.float64) / pred.shape[0])


def backward(spec: ModelSpec, params, x, targets):
    """Loss and exact gradients of :func:`mae_loss` with respect to every weight.

    Subgradients are 0 at ReLU kinks and at zero residuals.

    Returns
    -------
    loss : float
    grads : list of dict
        Same structure as ``params``.
    """
    out, tape = _forward(spec, params, x, keep=True)
    targets = np.asarray(targets, dtype=out.dtype)
    loss = mae_loss(out, targets)
    B = out.shape[0]
    g = (np.sign(out - targets) / B).astype(out.dtype)
    grads: list[dict] = [None] * len(spec.layers)
    for k in range(len(spec.layers) - 1, -1, -1):
        layer, p = spec.layers[k], params[k]
        saved, mask = tape[k]
        if mask is not None:
            g = g * mask
        if isinstance(layer, Conv2D):
            cols, in_shape = saved
            Bn, H, W, C = in_shape
            kh, kw = layer.kernel
            Ho, Wo = H - kh + 1, W - kw + 1
            g2 = g.reshape(-1, layer.filters)
            grads[k] = {"W": (cols.T @ g2).reshape(p["W"].shape), "b": g2.sum(axis=0)}
            if k > 0:
                dcols = (g2 @ p["W"].reshape(-1, layer.filters).T).reshape(Bn, Ho, Wo, kh, kw, C)
                dx = np.zeros(in_shape, dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        dx[:, i : i + Ho, j : j + Wo, :] += dcols[:, :, :, i, j, :]
                g = dx
        elif isinstance(layer, Flatten):
            grads[k] = {}
            g = g.reshape(saved)
        else:
            a = saved
            grads[k] = {"W": a.T @ g, "b": g.sum(axis=0)}
            if k > 0:
                g = g @ p["W"].T
    return loss, grads


@dataclass
class AdamState:
    m: list = field(repr=False)
    v: list = field(repr=False)
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        m = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        v = [{k: np.zeros_like(a) for k, a in p.items()} for p in params]
        return cls(m, v, **kw)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place.  Returns ``(params, state)``."""
    for g in grads:
        for a in g.values():
            if not np.all(np.isfinite(a)):
                raise TrainingError(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        for key in p:
            gk = g[key]
            m[key] *= b1
            m[key] += (1.0 - b1) * gk
            v[key] *= b2
            v[key] += (1.0 - b2) * gk * gk
            mhat = m[key] / c1
            vhat = v[key] / c2
            p[key] -= (state.learning_rate * mhat / (np.sqrt(vhat) + state.epsilon)).astype(p[key].dtype)
    return params, state


@dataclass
class WeightStore:
    """Trained weights together with their architecture and target scaling."""

    spec: ModelSpec
    params: list = field(repr=False)
    scaling: ScalingStats | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def total_parameters(self) -> int:
        return sum(int(a.size) for p in self.params for a in p.values())

    @property
    def dtype(self):
        return self.params[-1]["W"].dtype

    def forward(self, x) -> np.ndarray:
        return forward(self.spec, self.params, x)


def save_weights(store: WeightStore, path) -> None:
    """Write a versioned little-endian weight file (layout in docs/formats.md)."""
    spec_hash = store.spec.spec_hash()
    header = {
        "spec": store.spec.to_dict(),
        "dtype": np.dtype(store.dtype).name,
        "metadata": store.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    sc = store.scaling.as_tuple() if store.scaling is not None else (math.nan,) * 4
    dt = np.dtype(store.dtype).newbyteorder("<")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(spec_hash)
        fh.write(struct.pack("<B4d", store.scaling is not None, *sc))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p, shapes in zip(store.params, store.spec.param_shapes()):
            for key in ("W", "b"):
                if key in shapes:
                    a = p[key]
                    if a.shape != shapes[key]:
                        raise FormatError(f"weight {key} has shape {a.shape}, spec says {shapes[key]}")
                    fh.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def load_weights(path, expected: ModelSpec | None = None) -> WeightStore:
    """Read a weight file; ``expected`` rejects files built for another architecture."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read weight file {path}: {exc}") from exc
    buf = io.BytesIO(raw)
    try:
        if buf.read(8) != MAGIC:
            raise FormatError(f"{path}: not a covest weight file (bad magic)")
        (version,) = struct.unpack("<I", buf.read(4))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported weight format version {version}")
        spec_hash = buf.read(32)
        has_sc, *sc = struct.unpack("<B4d", buf.read(33))
        (blen,) = struct.unpack("<I", buf.read(4))
        header = json.loads(buf.read(blen).decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: truncated or corrupt weight header") from exc
    spec = ModelSpec.from_dict(header["spec"])
    if spec.spec_hash() != spec_hash:
        raise FormatError(f"{path}: spec hash does not match the embedded architecture")
    if expected is not None and expected.spec_hash() != spec_hash:
        raise FormatError(f"{path}: weights are for {spec.name}, expected {expected.name}")
    dt = np.dtype(header["dtype"]).newbyteorder("<")
    params = []
    for shapes in spec.param_shapes():
        p = {}
        for key in ("W", "b"):
            if key in shapes:
                count = int(np.prod(shapes[key]))
                data = buf.read(count * dt.itemsize)
                if len(data) != count * dt.itemsize:
                    raise FormatError(f"{path}: truncated weight payload")
                p[key] = np.frombuffer(data, dtype=dt).astype(header["dtype"]).reshape(shapes[key])
        params.append(p)
    if buf.read(1):
        raise FormatError(f"{path}: trailing bytes after weight payload")
    scaling = ScalingStats(*sc) if has_sc else None
    return WeightStore(spec, params, scaling, header.get("metadata", {}))
