"""Multi-view attention networks.

Every plane goes through a base model (BM): a stack of 3x3 convolution stages
with ReLU, with the spatial attention block after one stage. Slices are the
batch axis; the network turns ``(s, 1, H, W)`` into ``(s, C, h, w)``. The
fusion strategies differ only in where the planes meet:

* single: one plane, GAP -> FC1 -> max over slices -> FC2.
* MPFuseNet: BM outputs of all planes are concatenated along the slice axis
  and share GAP -> FC1 -> max -> FC2.
* MP2: each plane has its own FC1 and max; the ``(1, f)`` vectors are
  concatenated to ``(1, 3f)`` before FC2.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from locvalid.attention import AttentionParams, attention_forward
from locvalid.exceptions import DimensionError, FusionError
from locvalid.tensor import Tensor, concat, conv3x3, global_avg_pool, linear, max_over_slices, relu
from locvalid.volume import PLANES, FusionStrategy


@dataclass(frozen=True)
class BackboneConfig:
    """Shape of the per-plane base model.

    ``strides[k]`` is the downsampling factor of stage ``k``. The attention
    block follows stage ``attention_layer`` (negative values count from the
    end).
    """

    channels: tuple[int, ...] = (8, 16, 32)
    strides: tuple[int, ...] = (2, 2, 2)
    attention: bool = True
    attention_layer: int = -1
    feature_dim: int = 1000
    in_channels: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if not self.channels:
            raise ValueError("backbone needs at least one stage")
        if len(self.strides) != len(self.channels):
            raise ValueError("channels and strides must have the same length")
        if any(c < 1 for c in self.channels) or any(s < 1 for s in self.strides):
            raise ValueError("channels and strides must be positive")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not -len(self.channels) <= self.attention_layer < len(self.channels):
            raise ValueError(f"attention_layer {self.attention_layer} out of range for {len(self.channels)} stages")

    @classmethod
    def full_scale(cls, **overrides) -> "BackboneConfig":
        """ResNet18-sized widths; a 256x256 slice maps to ``(512, 8, 8)``."""
        kw = dict(channels=(64, 128, 256, 512), strides=(4, 2, 2, 2), feature_dim=1000)
        kw.update(overrides)
        return cls(**kw)

    @property
    def n_stages(self) -> int:
        return len(self.channels)

    @property
    def attention_stage(self) -> int:
        return self.attention_layer % self.n_stages

    def output_shape(self, height: int, width: int) -> tuple[int, int, int]:
        """``(C, h, w)`` of the base-model output for ``height x width`` slices."""
        h, w = height, width
        for s in self.strides:
            h, w = (h - 1) // s + 1, (w - 1) // s + 1
        return self.channels[-1], h, w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"], d["strides"] = list(self.channels), list(self.strides)
        return d


def _param(arr, name) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


def init_base_model(params: dict, prefix: str, cfg: BackboneConfig, rng: np.random.Generator) -> None:
    c_in = cfg.in_channels
    for k, c_out in enumerate(cfg.channels):
        std = np.sqrt(2.0 / (c_in * 9))
        params[f"{prefix}.conv{k}.weight"] = _param(rng.normal(0.0, std, (c_out, c_in, 3, 3)), f"{prefix}.conv{k}.weight")
        params[f"{prefix}.conv{k}.bias"] = _param(np.zeros(c_out), f"{prefix}.conv{k}.bias")
        c_in = c_out
    if cfg.attention:
        c = cfg.channels[cfg.attention_stage]
        att = AttentionParams.random(c, rng)
        params[f"{prefix}.attn.weight"] = _param(att.weight.data, f"{prefix}.attn.weight")
        params[f"{prefix}.attn.bias"] = _param(att.bias.data, f"{prefix}.attn.bias")


def init_linear(params: dict, prefix: str, n_in: int, n_out: int, rng: np.random.Generator) -> None:
    bound = 1.0 / np.sqrt(n_in)
    params[f"{prefix}.weight"] = _param(rng.uniform(-bound, bound, (n_out, n_in)), f"{prefix}.weight")
    params[f"{prefix}.bias"] = _param(np.zeros(n_out), f"{prefix}.bias")


def base_model_forward(params: dict, prefix: str, cfg: BackboneConfig, x: Tensor, trace: Optional[dict], plane: str) -> Tensor:
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise DimensionError(f"{plane}: base model expects (s, {cfg.in_channels}, H, W), got {x.shape}", axis="channel")
    h = x
    for k, stride in enumerate(cfg.strides):
        h = relu(conv3x3(h, params[f"{prefix}.conv{k}.weight"], params[f"{prefix}.conv{k}.bias"], stride))
        if cfg.attention and k == cfg.attention_stage:
            mask, h = attention_forward(h, AttentionParams(params[f"{prefix}.attn.weight"], params[f"{prefix}.attn.bias"]))
            if trace is not None:
                trace[f"{plane}/mask"] = mask
        if trace is not None:
            trace[f"{plane}/layer{k}"] = h
    return h


def _fc(params, prefix, x):
    return linear(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"])


@dataclass
class Network:
    """Parameters plus forward pass for one trainable fusion strategy.

    ``forward`` maps ``{plane: (s, 1, H, W) array}`` to a ``(1, 1)`` logit.
    Passing a ``trace`` dict records intermediate tensors: ``"<plane>/layer<k>"``
    for stage outputs (post-attention where the block sits),
    ``"<plane>/mask"``, ``"post_max"`` and, for MP2, ``"<plane>/post_max"``.
    """

    strategy: FusionStrategy
    config: BackboneConfig
    planes: tuple[str, ...]
    params: dict = field(default_factory=dict)

    @classmethod
    def build(cls, strategy, config: BackboneConfig, planes=None, random_state=0) -> "Network":
        strategy = FusionStrategy(strategy)
        if strategy is FusionStrategy.MPLR:
            raise ValueError("MPLR is three single-plane networks plus a logistic fusion, not one network")
        if planes is None:
            planes = ("axial",) if strategy is FusionStrategy.SINGLE else PLANES
        planes = tuple(planes)
        if strategy is FusionStrategy.SINGLE and len(planes) != 1:
            raise ValueError("single-plane network takes exactly one plane")
        if strategy.multi_plane and len(planes) < 2:
            raise ValueError(f"{strategy.value} needs at least two planes")
        rng = np.random.default_rng(random_state)
        net = cls(strategy, config, planes)
        for p in planes:
            init_base_model(net.params, f"bm.{p}", config, rng)
        c = config.channels[-1]
        f = config.feature_dim
        if strategy is FusionStrategy.MP2:
            for p in planes:
                init_linear(net.params, f"fc1.{p}", c, f, rng)
            init_linear(net.params, "fc2", f * len(planes), 1, rng)
        else:
            init_linear(net.params, "fc1", c, f, rng)
            init_linear(net.params, "fc2", f, 1, rng)
        return net

    def forward(self, case: dict, trace: Optional[dict] = None) -> Tensor:
        feats = {}
        for p in self.planes:
            x = case[p]
            x = x if isinstance(x, Tensor) else Tensor(x)
            feats[p] = base_model_forward(self.params, f"bm.{p}", self.config, x, trace, p)
        if self.strategy is FusionStrategy.MP2:
            pooled = []
            for p in self.planes:
                v = max_over_slices(_fc(self.params, f"fc1.{p}", global_avg_pool(feats[p])))
                if trace is not None:
                    trace[f"{p}/post_max"] = v
                pooled.append(v)
            fused = concat(pooled, axis=1)
        else:
            if len(self.planes) == 1:
                volume = feats[self.planes[0]]
            else:
                ref = feats[self.planes[0]].shape[1:]
                for p in self.planes[1:]:
                    if feats[p].shape[1:] != ref:
                        raise FusionError(
                            f"cannot fuse {self.planes[0]} output {ref} with {p} output {feats[p].shape[1:]}",
                            axis="plane",
                        )
                volume = concat([feats[p] for p in self.planes], axis=0)
            fused = max_over_slices(_fc(self.params, "fc1", global_avg_pool(volume)))
        if trace is not None:
            trace["post_max"] = fused
        return _fc(self.params, "fc2", fused)

    def get_state(self) -> dict[str, np.ndarray]:
        return {k: v.numpy() for k, v in self.params.items()}

    def set_state(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters {sorted(missing)}")
        for k, old in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != old.shape:
                raise DimensionError(f"parameter {k}: expected shape {old.shape}, got {arr.shape}", axis=k)
            self.params[k] = Tensor(arr, requires_grad=True, name=k)

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())
