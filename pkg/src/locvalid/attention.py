"""Soft spatial attention over convolutional feature volumes.

The block maps a volume ``D`` of shape ``(b, c, h, w)`` through a square 1x1
convolution, turns every feature map into a spatial distribution with a
softmax, rescales each map so its peak is 1, and gates ``D`` with the result.
Each channel therefore gets its own attention mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from locvalid.exceptions import DimensionError
from locvalid.tensor import Tensor, as_tensor, conv1x1, hadamard, max_normalize_per_map, softmax_per_map


@dataclass
class AttentionParams:
    """Weights of the 1x1 convolution inside the attention block."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self):
        self.weight = as_tensor(self.weight)
        self.bias = as_tensor(self.bias)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.weight.shape[1]:
            raise DimensionError(f"attention weight must be square (c, c), got {self.weight.shape}", axis="channel")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(f"attention bias must be ({self.weight.shape[0]},), got {self.bias.shape}", axis="channel")

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, channels: int, requires_grad: bool = False) -> "AttentionParams":
        """Parameters for which the block is the identity map."""
        return cls(
            Tensor(np.zeros((channels, channels)), requires_grad=requires_grad),
            Tensor(np.zeros(channels), requires_grad=requires_grad),
        )

    @classmethod
    def random(cls, channels: int, rng: np.random.Generator, scale: float = 0.01) -> "AttentionParams":
        return cls(
            Tensor(rng.normal(0.0, scale, (channels, channels)), requires_grad=True),
            Tensor(np.zeros(channels), requires_grad=True),
        )


def attention_forward(D, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Apply the attention block.

    Args:
        D: Feature volume ``(b, c, h, w)``.
        params: Square 1x1 convolution with ``c`` channels.

    Returns:
        ``(mask, out)``: the per-map attention mask with values in ``(0, 1]``
        and peak exactly 1, and the gated volume ``mask * D``.
    """
    D = as_tensor(D)
    if D.ndim != 4:
        raise DimensionError(f"attention input must be (b, c, h, w), got {D.shape}", axis="ndim")
    if D.shape[1] != params.channels:
        raise DimensionError(
            f"attention expects {params.channels} channels, input has {D.shape[1]}", axis="channel"
        )
    logits = conv1x1(D, params.weight, params.bias)
    mask = max_normalize_per_map(softmax_per_map(logits))
    return mask, hadamard(mask, D)
