"""Benchmark model zoo: logistic, MLP, 1-D CNN, GRU, and elementwise scalar nets.

Models are plain values: a spec plus a named dict of detached parameter
tensors (and optional binary masks for pruning experiments).  ``forward`` is
purely functional; training attaches fresh leaf views of the parameters to a
tape before calling it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, UsageError
from .rng import RngStream
from .serialize import read_container, write_container

ACTIVATIONS = {"relu": ad.relu, "elu": ad.elu, "tanh": ad.tanh, "swish": ad.swish}

KINDS = ("logistic", "mlp", "cnn", "gru", "scalar_net")
POOLINGS = ("none", "max", "mean", "l2")


@dataclass(frozen=True)
class ConvSpec:
    channels: tuple[int, ...] = (8, 16, 32)
    kernel_size: int = 5
    stride: int = 2
    padding: int = 2


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "mlp"
    input_len: int = 40
    num_classes: int = 10
    hidden_sizes: tuple[int, ...] = (100, 100)
    conv: ConvSpec | None = None
    pooling: str = "none"
    pool_window: int = 2
    pool_stride: int = 2
    activation: str = "relu"
    phi: "ModelSpec | None" = None
    init_seed: int = 0

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}")
        if self.activation not in ACTIVATIONS and self.activation != "learned":
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.activation == "learned" and (self.phi is None or self.phi.kind != "scalar_net"):
            raise ConfigError("learned activation requires a scalar_net phi spec")
        if self.kind == "logistic" and self.hidden_sizes:
            raise ConfigError("logistic model has no hidden layers")
        if self.kind == "cnn" and self.conv is None:
            raise ConfigError("cnn model requires conv settings")
        if self.kind == "gru" and len(self.hidden_sizes) != 1:
            raise ConfigError("gru model takes exactly one hidden size")
        if self.kind == "scalar_net":
            if len(self.hidden_sizes) != 1:
                raise ConfigError("scalar_net takes exactly one hidden size")
            if self.input_len != 1 or self.num_classes != 1:
                raise ConfigError("scalar_net maps scalars to scalars (widths must be 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if d.get("conv") is not None:
            conv = dict(d["conv"])
            conv["channels"] = tuple(conv["channels"])
            d["conv"] = ConvSpec(**conv)
        if d.get("phi") is not None:
            d["phi"] = cls.from_dict(d["phi"])
        d["hidden_sizes"] = tuple(d.get("hidden_sizes", ()))
        return cls(**d)


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, Tensor]
    masks: dict[str, np.ndarray] | None = None
    phi: "Model | None" = None

    def clone(self) -> "Model":
        return Model(
            spec=self.spec,
            params={k: Tensor(v.data.copy()) for k, v in self.params.items()},
            masks=None if self.masks is None else {k: v.copy() for k, v in self.masks.items()},
            phi=None if self.phi is None else self.phi.clone(),
        )


def _conv_length(length: int, spec: ModelSpec) -> int:
    conv = spec.conv
    for _ in conv.channels:
        length = (length + 2 * conv.padding - conv.kernel_size) // conv.stride + 1
        if spec.pooling != "none":
            length = (length - spec.pool_window) // spec.pool_stride + 1
        if length < 1:
            raise ConfigError("conv/pooling stack consumes the whole sequence")
    return length


def _param_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], int]]:
    """Ordered (name, shape, fan_in) triples; fan_in 0 means init to zero."""
    layout: list[tuple[str, tuple[int, ...], int]] = []
    if spec.kind == "logistic":
        layout += [("w", (spec.input_len, spec.num_classes), spec.input_len), ("b", (spec.num_classes,), 0)]
    elif spec.kind == "mlp":
        widths = [spec.input_len, *spec.hidden_sizes]
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            layout += [(f"w{i}", (fan_in, fan_out), fan_in), (f"b{i}", (fan_out,), 0)]
        layout += [
            ("w_out", (widths[-1], spec.num_classes), widths[-1]),
            ("b_out", (spec.num_classes,), 0),
        ]
    elif spec.kind == "cnn":
        conv = spec.conv
        in_ch = 1
        for i, out_ch in enumerate(conv.channels):
            fan_in = in_ch * conv.kernel_size
            layout += [
                (f"conv{i}_w", (out_ch, in_ch, conv.kernel_size), fan_in),
                (f"conv{i}_b", (out_ch,), 0),
            ]
            in_ch = out_ch
        flat = conv.channels[-1] * _conv_length(spec.input_len, spec)
        layout += [("w_out", (flat, spec.num_classes), flat), ("b_out", (spec.num_classes,), 0)]
    elif spec.kind == "gru":
        hidden = spec.hidden_sizes[0]
        layout += [
            ("w_ih", (3 * hidden,), 1),
            ("b_ih", (3 * hidden,), 0),
            ("w_hh", (3 * hidden, hidden), hidden),
            ("b_hh", (3 * hidden,), 0),
            ("w_out", (hidden, spec.num_classes), hidden),
            ("b_out", (spec.num_classes,), 0),
        ]
    elif spec.kind == "scalar_net":
        hidden = spec.hidden_sizes[0]
        layout += [
            ("w_in", (1, hidden), 1),
            ("b_in", (hidden,), 0),
            ("w_out", (hidden, 1), hidden),
            ("b_out", (1,), 0),
            ("skip", (1,), -1),  # identity-anchored linear bypass, initialized to 1
        ]
    return layout


def param_count(spec: ModelSpec) -> int:
    """Exact trainable parameter count, biases included."""
    spec.validate()
    return sum(int(np.prod(shape)) for _, shape, _ in _param_layout(spec))


def init_model(spec: ModelSpec) -> Model:
    """Deterministic fan-in-scaled uniform init; biases start at zero."""
    spec.validate()
    params: dict[str, Tensor] = {}
    for i, (name, shape, fan_in) in enumerate(_param_layout(spec)):
        if fan_in == 0:
            data = np.zeros(shape)
        elif fan_in == -1:
            data = np.ones(shape)
        else:
            bound = float(np.sqrt(1.0 / fan_in))
            data = RngStream(spec.init_seed, i).uniform(-bound, bound, shape)
        params[name] = Tensor(data)
    phi = init_model(spec.phi) if spec.activation == "learned" else None
    return Model(spec=spec, params=params, phi=phi)


def apply_scalar_net(phi: Model, x: Tensor) -> Tensor:
    """Apply a scalar->scalar net elementwise: skip*x + W2 tanh(W1 x + b1) + b2."""
    if phi.spec.kind != "scalar_net":
        raise UsageError(f"activation net must be scalar_net, got {phi.spec.kind!r}")
    p = phi.params
    flat = ad.reshape(x, (-1, 1))
    hidden = ad.tanh(ad.add(ad.matmul(flat, p["w_in"]), p["b_in"]))
    out = ad.add(ad.add(ad.matmul(hidden, p["w_out"]), p["b_out"]), ad.mul(flat, p["skip"]))
    return ad.reshape(out, x.shape)


def _activation_fn(model: Model):
    if model.spec.activation == "learned":
        if model.phi is None:
            raise UsageError("model has learned activation but no phi net")
        return lambda t: apply_scalar_net(model.phi, t)
    return ACTIVATIONS[model.spec.activation]


def pool(x: Tensor, kind: str, window: int, stride: int) -> Tensor:
    """Windowed max / mean / sqrt-of-sum-of-squares over the last axis."""
    if kind == "none":
        return x
    if kind not in POOLINGS:
        raise ConfigError(f"unknown pooling {kind!r}")
    squeeze = None
    if x.ndim == 1:
        x, squeeze = ad.reshape(x, (1, 1, -1)), 0
    elif x.ndim != 3:
        raise DimensionError(f"pool expects (batch, channels, length) or 1-D, got {x.shape}")
    windows = ad.unfold1d(x, window, stride, 0)
    if kind == "max":
        out = ad.max_reduce(windows, axis=3)
    elif kind == "mean":
        out = ad.mean(windows, axis=3)
    else:
        out = ad.sqrt(ad.sum_(ad.mul(windows, windows), axis=3))
    if squeeze is not None:
        out = ad.reshape(out, (-1,))
    return out


def forward(model: Model, x) -> Tensor:
    """Compute logits (batch, num_classes) for a batch of sequences."""
    spec = model.spec
    x = x if isinstance(x, Tensor) else Tensor(x)
    if spec.kind == "scalar_net":
        return apply_scalar_net(model, x)
    if x.ndim != 2 or x.shape[1] != spec.input_len:
        raise DimensionError(f"input {x.shape} does not match (batch, {spec.input_len})")
    p = model.params
    act = _activation_fn(model)

    if spec.kind == "logistic":
        return ad.add(ad.matmul(x, p["w"]), p["b"])

    if spec.kind == "mlp":
        h = x
        for i in range(len(spec.hidden_sizes)):
            h = act(ad.add(ad.matmul(h, p[f"w{i}"]), p[f"b{i}"]))
        return ad.add(ad.matmul(h, p["w_out"]), p["b_out"])

    if spec.kind == "cnn":
        conv = spec.conv
        h = ad.reshape(x, (x.shape[0], 1, spec.input_len))
        for i in range(len(conv.channels)):
            h = ad.conv1d(h, p[f"conv{i}_w"], conv.stride, conv.padding)
            h = ad.add(h, ad.reshape(p[f"conv{i}_b"], (1, -1, 1)))
            h = act(h)
            if spec.pooling != "none":
                h = pool(h, spec.pooling, spec.pool_window, spec.pool_stride)
        flat = ad.reshape(h, (x.shape[0], -1))
        return ad.add(ad.matmul(flat, p["w_out"]), p["b_out"])

    if spec.kind == "gru":
        h = ad.gru_scan(x, p["w_ih"], p["b_ih"], p["w_hh"], p["b_hh"])
        return ad.add(ad.matmul(h, p["w_out"]), p["b_out"])

    raise ConfigError(f"unknown model kind {spec.kind!r}")


# ----------------------------------------------------------------------------
# masking


def set_mask(model: Model, masks: dict[str, np.ndarray]) -> Model:
    """Install binary masks (and zero out the masked weights)."""
    for name, mask in masks.items():
        if name not in model.params:
            raise DimensionError(f"mask names unknown parameter {name!r}")
        if mask.shape != model.params[name].shape:
            raise DimensionError(
                f"mask shape {mask.shape} does not match parameter {name!r} shape "
                f"{model.params[name].shape}"
            )
        if not np.all((mask == 0) | (mask == 1)):
            raise UsageError(f"mask for {name!r} is not binary")
    out = replace(model, masks={k: v.astype(np.float64) for k, v in masks.items()})
    return apply_mask(out)


def apply_mask(model: Model) -> Model:
    """Multiply parameters by their masks so pruned entries are exactly zero."""
    if model.masks is None:
        return model
    params = dict(model.params)
    for name, mask in model.masks.items():
        params[name] = Tensor(params[name].data * mask)
    return replace(model, params=params)


# ----------------------------------------------------------------------------
# checkpoints


def save_model(model: Model, path) -> None:
    arrays = {f"param:{k}": v.data for k, v in model.params.items()}
    if model.masks is not None:
        arrays.update({f"mask:{k}": v for k, v in model.masks.items()})
    if model.phi is not None:
        arrays.update({f"phi:{k}": v.data for k, v in model.phi.params.items()})
    write_container(path, {"kind": "model", "spec": model.spec.to_dict()}, arrays)


def load_model(path) -> Model:
    meta, arrays = read_container(path)
    if meta.get("kind") != "model":
        raise UsageError(f"container holds {meta.get('kind')!r}, not a model")
    spec = ModelSpec.from_dict(meta["spec"])
    params = {k[6:]: Tensor(v) for k, v in arrays.items() if k.startswith("param:")}
    masks = {k[5:]: v for k, v in arrays.items() if k.startswith("mask:")} or None
    phi = None
    phi_params = {k[4:]: Tensor(v) for k, v in arrays.items() if k.startswith("phi:")}
    if phi_params:
        phi = Model(spec=spec.phi, params=phi_params)
    return Model(spec=spec, params=params, masks=masks, phi=phi)


# ----------------------------------------------------------------------------
# benchmark defaults


def benchmark_specs(input_len: int = 40, num_classes: int = 10, init_seed: int = 0) -> dict[str, ModelSpec]:
    """The four reference architectures at sizes that train in seconds."""
    return {
        "logistic": ModelSpec("logistic", input_len, num_classes, (), init_seed=init_seed),
        "mlp": ModelSpec("mlp", input_len, num_classes, (100, 100), init_seed=init_seed),
        "cnn": ModelSpec(
            "cnn", input_len, num_classes, (), conv=ConvSpec(), init_seed=init_seed
        ),
        "gru": ModelSpec("gru", input_len, num_classes, (16,), init_seed=init_seed),
    }
