"""3D backbone, regression head, and SGD optimizer.

The backbone is a stack of valid 3D convolutions (stride 1) with
rectifier activations and non-overlapping max pooling, optionally
followed by one self-attention block over the flattened spatial grid,
then a dense projection to the feature vector. The regression head is a
two-layer dense network with an optional simplex (softmax) projection
for abundance targets.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericalError, ParameterError, ShapeError
from .seeding import derive_rng

_INIT_STREAM = 7


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    kernel: tuple[int, int, int]
    pool: tuple[int, int, int] = (1, 1, 1)


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture of the shared feature extractor and regression head."""

    stages: tuple[ConvStage, ...]
    feature_dim: int = 64
    head_hidden: int = 64
    attention: bool = False
    attention_dim: int = 16
    simplex_head: bool = False

    def trace_shapes(self, k: int, patch_size: int) -> list[tuple[int, int, int, int]]:
        """Per-stage output shapes (C, D, H, W); raises if any extent collapses."""
        c, d, h, w = 1, k, patch_size, patch_size
        shapes = []
        for i, st in enumerate(self.stages):
            kd, kh, kw = st.kernel
            d, h, w = d - kd + 1, h - kh + 1, w - kw + 1
            if min(d, h, w) < 1:
                raise ShapeError(f"stage {i}: kernel {st.kernel} collapses extent to {(d, h, w)}")
            pd, ph, pw = st.pool
            d, h, w = d // pd, h // ph, w // pw
            if min(d, h, w) < 1:
                raise ShapeError(f"stage {i}: pool {st.pool} collapses extent to {(d, h, w)}")
            c = st.out_channels
            shapes.append((c, d, h, w))
        return shapes

    def flat_dim(self, k: int, patch_size: int) -> int:
        c, d, h, w = self.trace_shapes(k, patch_size)[-1]
        return c * d * h * w

    def canonical(self, k: int, patch_size: int, output_dim: int) -> str:
        stages = ";".join(
            f"{s.out_channels}:{s.kernel[0]}x{s.kernel[1]}x{s.kernel[2]}"
            f":{s.pool[0]}x{s.pool[1]}x{s.pool[2]}"
            for s in self.stages
        )
        return (
            f"stages={stages}|d={self.feature_dim}|hidden={self.head_hidden}"
            f"|attn={int(self.attention)}|attndim={self.attention_dim}"
            f"|simplex={int(self.simplex_head)}|k={k}|S={patch_size}|s={output_dim}"
        )


PRESETS: dict[str, BackboneConfig] = {
    "small": BackboneConfig(
        stages=(
            ConvStage(4, (7, 1, 1), (4, 2, 2)),
            ConvStage(8, (5, 3, 3), (2, 1, 1)),
        ),
        feature_dim=32,
        head_hidden=32,
    ),
    "base": BackboneConfig(
        stages=(
            ConvStage(4, (7, 1, 1), (4, 2, 2)),
            ConvStage(8, (5, 3, 3), (2, 1, 1)),
            ConvStage(16, (3, 2, 2), (1, 1, 1)),
        ),
        feature_dim=64,
        head_hidden=64,
    ),
    "base+attention": BackboneConfig(
        stages=(
            ConvStage(4, (7, 1, 1), (4, 2, 2)),
            ConvStage(8, (5, 3, 3), (2, 1, 1)),
            ConvStage(16, (3, 1, 1), (1, 1, 1)),
        ),
        feature_dim=64,
        head_hidden=64,
        attention=True,
        attention_dim=16,
    ),
}


def resolve_preset(preset: str | BackboneConfig) -> BackboneConfig:
    if isinstance(preset, BackboneConfig):
        return preset
    if preset not in PRESETS:
        raise ParameterError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")
    return PRESETS[preset]


@dataclass
class ModelParams:
    """Named parameter tensors for the feature extractor and head."""

    params: dict[str, Tensor]
    config: BackboneConfig
    k: int
    patch_size: int
    output_dim: int

    @property
    def digest(self) -> str:
        text = self.config.canonical(self.k, self.patch_size, self.output_dim)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def named(self):
        return self.params.items()

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def fill_missing_grads(self):
        """Parameters unreachable from the loss carry an explicit zero gradient."""
        for t in self.params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: np.array(t.data, dtype=np.float64) for name, t in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self.params.items():
            if name not in arrays:
                raise ShapeError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model {t.data.shape}"
                )
            t.data = arr.astype(t.data.dtype)

    def state_digest(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.params.items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int, dtype) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_params(
    config: BackboneConfig,
    k: int,
    patch_size: int,
    output_dim: int,
    seed: int = 0,
    dtype=np.float64,
) -> ModelParams:
    """Glorot-uniform weights, zero biases; fixed creation order for determinism."""
    shapes = config.trace_shapes(k, patch_size)
    rng = derive_rng(seed, _INIT_STREAM)
    params: dict[str, Tensor] = {}
    in_ch = 1
    for i, st in enumerate(config.stages):
        kvol = int(np.prod(st.kernel))
        kshape = (st.out_channels, in_ch) + tuple(st.kernel)
        params[f"conv{i}.kernel"] = _glorot(
            rng, kshape, fan_in=in_ch * kvol, fan_out=st.out_channels * kvol, dtype=dtype
        )
        params[f"conv{i}.bias"] = Tensor(np.zeros(st.out_channels, dtype=dtype), requires_grad=True)
        in_ch = st.out_channels
    c, d, h, w = shapes[-1]
    if config.attention:
        embed = c * d
        da = config.attention_dim
        for name in ("wq", "wk", "wv"):
            params[f"attn.{name}"] = _glorot(rng, (embed, da), embed, da, dtype)
        params["attn.wo"] = _glorot(rng, (da, embed), da, embed, dtype)
    flat = c * d * h * w
    params["feat.weight"] = _glorot(rng, (flat, config.feature_dim), flat, config.feature_dim, dtype)
    params["feat.bias"] = Tensor(np.zeros(config.feature_dim, dtype=dtype), requires_grad=True)
    params["head.w0"] = _glorot(
        rng, (config.feature_dim, config.head_hidden), config.feature_dim, config.head_hidden, dtype
    )
    params["head.b0"] = Tensor(np.zeros(config.head_hidden, dtype=dtype), requires_grad=True)
    params["head.w1"] = _glorot(
        rng, (config.head_hidden, output_dim), config.head_hidden, output_dim, dtype
    )
    params["head.b1"] = Tensor(np.zeros(output_dim, dtype=dtype), requires_grad=True)
    return ModelParams(params=params, config=config, k=k, patch_size=patch_size, output_dim=output_dim)


def _as_batch(model: ModelParams, batch) -> Tensor:
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    data = x.data
    if data.ndim == 4:  # (B, k, S, S) -> add channel axis
        data = data[:, None]
        x = Tensor(data) if not x.requires_grad else ad.reshape(x, (data.shape))
    if data.ndim != 5:
        raise ShapeError(f"batch must be (B, 1, k, S, S), got {data.shape}")
    b, c, k, s1, s2 = data.shape
    if (c, k, s1, s2) != (1, model.k, model.patch_size, model.patch_size):
        raise ShapeError(
            f"batch shape {data.shape[1:]} does not match model "
            f"(1, {model.k}, {model.patch_size}, {model.patch_size})"
        )
    dtype = next(iter(model.params.values())).data.dtype
    if x.data.dtype != dtype and not x.requires_grad:
        x = Tensor(x.data.astype(dtype))
    return x


def forward_backbone(model: ModelParams, batch, collect: dict | None = None) -> Tensor:
    """Features (B, d) for a batch of patches (B, 1, k, S, S)."""
    x = _as_batch(model, batch)
    for i, st in enumerate(model.config.stages):
        x = ad.conv3d(x, model.params[f"conv{i}.kernel"], model.params[f"conv{i}.bias"])
        x = ad.relu(x)
        if st.pool != (1, 1, 1):
            x = ad.maxpool3d(x, st.pool)
    b = x.data.shape[0]
    if model.config.attention:
        _, c, d, h, w = x.data.shape
        tokens = ad.transpose(ad.reshape(x, (b, c * d, h * w)), (0, 2, 1))  # (B, T, E)
        q = ad.matmul(tokens, model.params["attn.wq"])
        kk = ad.matmul(tokens, model.params["attn.wk"])
        v = ad.matmul(tokens, model.params["attn.wv"])
        scale = 1.0 / np.sqrt(model.config.attention_dim)
        scores = ad.matmul(q, ad.transpose(kk, (0, 2, 1))) * scale
        attn = ad.softmax(scores, axis=-1)
        if collect is not None:
            collect["attention"] = np.array(attn.data)
        ctx = ad.matmul(attn, v)
        tokens = tokens + ad.matmul(ctx, model.params["attn.wo"])
        x = tokens
    flat = ad.reshape(x, (b, -1))
    return ad.matmul(flat, model.params["feat.weight"]) + model.params["feat.bias"]


def forward_head(model: ModelParams, features: Tensor) -> Tensor:
    """Predictions (B, s) from features (B, d)."""
    f = features if isinstance(features, Tensor) else Tensor(features)
    if f.data.ndim != 2 or f.data.shape[1] != model.config.feature_dim:
        raise ShapeError(
            f"features must be (B, {model.config.feature_dim}), got {f.data.shape}"
        )
    hidden = ad.relu(ad.matmul(f, model.params["head.w0"]) + model.params["head.b0"])
    out = ad.matmul(hidden, model.params["head.w1"]) + model.params["head.b1"]
    if model.config.simplex_head:
        out = ad.softmax(out, axis=-1)
    return out


def forward_model(model: ModelParams, batch, collect: dict | None = None) -> tuple[Tensor, Tensor]:
    feats = forward_backbone(model, batch, collect=collect)
    return feats, forward_head(model, feats)


class SGD:
    """p <- p - lr * v with v = momentum * v + grad; grads are cleared by the step."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.9):
        if lr < 0:
            raise ParameterError("learning rate must be non-negative")
        if not (0.0 <= momentum < 1.0):
            raise ParameterError("momentum must lie in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, model: ModelParams):
        for name, t in model.named():
            if t.grad is None:
                raise ParameterError(f"parameter {name!r} has no gradient; run backward first")
            if not np.isfinite(t.grad).all():
                raise NumericalError(f"non-finite gradient in parameter {name!r}")
            v = self._velocity.get(name)
            if v is None:
                v = np.zeros_like(t.data)
            v = self.momentum * v + t.grad.astype(t.data.dtype)
            self._velocity[name] = v
            t.data = t.data - self.lr * v
        model.zero_grad()
