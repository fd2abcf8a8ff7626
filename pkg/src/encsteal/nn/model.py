"""Desk-scale encoders: an MLP and a small conv net, each with an optional projector."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ConfigurationError, DimensionError
from . import functional as F
from .autograd import Tensor, conv2d, max_pool2d, no_grad

KINDS = ("MLP", "SmallConv")


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor.

    ``widths`` are hidden layer widths for ``MLP`` and per-block channel counts
    for ``SmallConv`` (each block is 3x3 conv -> ReLU -> 2x2 max-pool, followed
    by global average pooling and a linear map to ``embed_dim``).
    The projector, when enabled, is ``embed -> embed -> proj_dim`` with a ReLU.
    """

    kind: str = "SmallConv"
    input_shape: tuple = (3, 8, 8)
    widths: tuple = (16, 32)
    embed_dim: int = 32
    with_projector: bool = True
    proj_dim: int = 16
    activation: str = "ReLU"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown architecture kind {self.kind!r}")
        if self.activation != "ReLU":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if not self.input_shape or any(d <= 0 for d in self.input_shape):
            raise ConfigurationError(f"input_shape must be positive, got {self.input_shape}")
        if any(w <= 0 for w in self.widths):
            raise ConfigurationError(f"widths must be positive, got {self.widths}")
        if self.embed_dim <= 0:
            raise ConfigurationError("embed_dim must be > 0")
        if self.with_projector and self.proj_dim <= 0:
            raise ConfigurationError("proj_dim must be > 0 when with_projector is set")
        if self.kind == "SmallConv":
            if len(self.input_shape) != 3:
                raise ConfigurationError("SmallConv needs input_shape (C, H, W)")
            if not 1 <= len(self.widths) <= 3:
                raise ConfigurationError("SmallConv supports 1 to 3 conv blocks")
            _, h, w = self.input_shape
            scale = 2 ** len(self.widths)
            if h % scale or w % scale:
                raise ConfigurationError(
                    f"{h}x{w} input cannot be pooled {len(self.widths)} times"
                )

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _uniform(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def mlp_init(rng, dims, prefix):
    """Parameters for a chain of linear layers ``dims[0] -> ... -> dims[-1]``."""
    params = {}
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"{prefix}.{i}.weight"] = _uniform(rng, d_in, (d_out, d_in))
        params[f"{prefix}.{i}.bias"] = _uniform(rng, d_in, (d_out,))
    return params


def mlp_forward(params, prefix, x, n_layers):
    for i in range(n_layers):
        x = F.linear(x, params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"])
        if i < n_layers - 1:
            x = x.relu()
    return x


class ParamModule:
    """Holds an ordered name -> Tensor mapping; shared by encoders and heads."""

    params: dict

    def parameters(self):
        return self.params

    def set_trainable(self, flag):
        for p in self.params.values():
            p.requires_grad = flag
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        return {name: p.data for name, p in self.params.items()}

    def load_arrays(self, arrays):
        for name, p in self.params.items():
            if arrays[name].shape != p.data.shape:
                raise DimensionError(f"{name}: expected {p.data.shape}, got {arrays[name].shape}")
            p.data = np.array(arrays[name], dtype=p.data.dtype)

    def clone(self, trainable=None):
        """Deep copy. ``trainable`` overrides requires_grad on every parameter."""
        out = copy.copy(self)
        out.params = {}
        for name, p in self.params.items():
            flag = p.requires_grad if trainable is None else trainable
            out.params[name] = Tensor(p.data.copy(), requires_grad=flag)
        return out

    def astype(self, dtype):
        """Copy with every parameter cast to ``dtype`` (float64 for gradient checks)."""
        out = self.clone()
        for p in out.params.values():
            p.data = p.data.astype(dtype)
        return out

    def param_hash(self):
        """SHA-256 over parameter names, shapes and raw bytes."""
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(str(p.data.shape).encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        return h.hexdigest()


class Head(ParamModule):
    """A small MLP head (projector, predictor, classifier layer, adapter)."""

    def __init__(self, dims, params, prefix="head"):
        self.dims = tuple(int(d) for d in dims)
        self.prefix = prefix
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    @classmethod
    def create(cls, dims, rng, prefix="head"):
        return cls(dims, mlp_init(rng, dims, prefix), prefix)

    def __call__(self, x):
        return mlp_forward(self.params, self.prefix, x, len(self.dims) - 1)


class EncoderModel(ParamModule):
    """Backbone ``f`` (image -> embedding) plus an optional projector ``g``."""

    def __init__(self, arch, params):
        self.arch = arch
        self.params = {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    @property
    def embed_dim(self):
        return self.arch.embed_dim

    @property
    def out_dim(self):
        return self.arch.proj_dim if self.arch.with_projector else self.arch.embed_dim

    def backbone_params(self):
        return {k: v for k, v in self.params.items() if k.startswith("backbone.")}

    def without_projector(self):
        """A copy holding only the backbone (projection head discarded)."""
        arch = ArchSpec(**{**self.arch.to_dict(), "with_projector": False})
        return EncoderModel(arch, {k: v.data.copy() for k, v in self.backbone_params().items()})

    def __call__(self, batch, use_projector=False):
        return forward_embed(self, batch, use_projector)

    def embed(self, images, use_projector=False, batch_size=512):
        """Graph-free forward pass returning a float32 numpy array."""
        images = np.asarray(images, dtype=np.float32)
        chunks = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                chunks.append(forward_embed(self, images[start : start + batch_size], use_projector).data)
        if not chunks:
            return np.zeros((0, self.out_dim if use_projector else self.embed_dim), np.float32)
        return np.concatenate(chunks)


def init_model(arch, seed):
    """Scaled-uniform fan-in initialization, deterministic for (arch, seed)."""
    if not isinstance(arch, ArchSpec):
        raise ConfigurationError(f"expected ArchSpec, got {type(arch).__name__}")
    arch.validate()
    rng = np.random.default_rng(seed)
    params = {}
    if arch.kind == "MLP":
        dims = (int(np.prod(arch.input_shape)),) + arch.widths + (arch.embed_dim,)
        params.update(mlp_init(rng, dims, "backbone"))
    else:
        in_ch = arch.input_shape[0]
        for i, out_ch in enumerate(arch.widths):
            fan_in = in_ch * 9
            params[f"backbone.conv{i}.weight"] = _uniform(rng, fan_in, (out_ch, in_ch, 3, 3))
            params[f"backbone.conv{i}.bias"] = _uniform(rng, fan_in, (out_ch,))
            in_ch = out_ch
        params["backbone.fc.weight"] = _uniform(rng, in_ch, (arch.embed_dim, in_ch))
        params["backbone.fc.bias"] = _uniform(rng, in_ch, (arch.embed_dim,))
    if arch.with_projector:
        params.update(mlp_init(rng, (arch.embed_dim, arch.embed_dim, arch.proj_dim), "projector"))
    return EncoderModel(arch, params)


def forward_embed(model, batch, use_projector=False):
    """Embed a batch [B, *input_shape]; returns [B, embed_dim] or [B, proj_dim]."""
    arch = model.arch
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
    if x.ndim != len(arch.input_shape) + 1 or tuple(x.shape[1:]) != arch.input_shape:
        raise DimensionError(f"expected batch [B, {arch.input_shape}], got {x.shape}")
    if use_projector and not arch.with_projector:
        raise ConfigurationError("model has no projector")
    p = model.params
    if arch.kind == "MLP":
        x = x.reshape(x.shape[0], -1)
        h = mlp_forward(p, "backbone", x, len(arch.widths) + 1)
    else:
        for i in range(len(arch.widths)):
            x = conv2d(x, p[f"backbone.conv{i}.weight"], p[f"backbone.conv{i}.bias"])
            x = max_pool2d(x.relu())
        x = x.mean(axis=(2, 3))
        h = F.linear(x, p["backbone.fc.weight"], p["backbone.fc.bias"])
    if use_projector:
        return mlp_forward(p, "projector", h, 2)
    return h
