"""Coarse, intensity and fine prediction heads linked by a guidance signal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, sigmoid, softmax
from .nn import LinearParams, linear

N_COARSE = 3
N_FINE = 5


@dataclass
class HeadParams:
    coarse: LinearParams  # d -> 3
    intensity: LinearParams  # d -> 1
    guidance: LinearParams  # 4 -> d
    fine: LinearParams  # d -> 5

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "HeadParams":
        return cls(
            coarse=LinearParams.init(d, N_COARSE, rng),
            intensity=LinearParams.init(d, 1, rng),
            guidance=LinearParams.init(N_COARSE + 1, d, rng),
            fine=LinearParams.init(d, N_FINE, rng),
        )

    @property
    def d(self) -> int:
        return self.coarse.n_in


@dataclass
class HeadOutputs:
    coarse_logits: Tensor  # [..., 3]
    intensity: Tensor  # [..., 1], in (0, 1)
    guidance: Tensor  # [..., d], in (0, 1)
    recalibrated: Tensor  # [..., d]
    fine_logits: Tensor  # [..., 5]


def heads_forward(p: HeadParams, h: Tensor, use_guidance: bool = True) -> HeadOutputs:
    """Run the three heads on the pooled feature ``h``.

    With guidance on, the fine head reads ``h * guidance`` where guidance is a
    sigmoid of an affine map on [softmax(coarse logits); intensity], so the
    fine loss also trains the coarse and intensity heads. With guidance off
    the fine head reads ``h`` and the reported guidance is all ones.
    """
    if h.shape[-1] != p.d:
        raise ShapeError(f"heads expect feature width {p.d}, got {h.shape}")
    coarse_logits = linear(p.coarse, h)
    intensity = sigmoid(linear(p.intensity, h))
    if use_guidance:
        signal = concat([softmax(coarse_logits, axis=-1), intensity], axis=-1)
        guidance = sigmoid(linear(p.guidance, signal))
        recalibrated = h * guidance
    else:
        guidance = Tensor(np.ones(h.shape))
        recalibrated = h
    fine_logits = linear(p.fine, recalibrated)
    return HeadOutputs(coarse_logits, intensity, guidance, recalibrated, fine_logits)
