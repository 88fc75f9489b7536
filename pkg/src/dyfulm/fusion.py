"""Layer-wise dynamic fusion, gated cross-encoder fusion and average pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat, matmul, sigmoid, softmax, stack
from .encoders import LayerStack
from .nn import BiLstmParams, LinearParams, uniform_init, bilstm_steps, linear


@dataclass
class LayerFusionParams:
    bilstm: BiLstmParams
    attn_vector: Tensor  # [2 * hidden]

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "LayerFusionParams":
        return cls(BiLstmParams.init(d, hidden, rng), uniform_init(rng, 2 * hidden, (2 * hidden,)))


@dataclass
class GateParams:
    proj: LinearParams  # 2d -> d

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "GateParams":
        return cls(LinearParams.init(2 * d, d, rng))


@dataclass
class FusedSequence:
    values: Tensor  # [..., T, d]
    layer_weights: Tensor  # [..., T, L]


def hierarchical_fuse(p: LayerFusionParams, stack_: LayerStack) -> FusedSequence:
    """Attention-weighted sum over layers, computed independently for each token.

    Each token's column of hidden states (H^(1)[t] .. H^(L)[t]) is run through
    the BiLSTM along the layer axis; the scores w.U^(l)[t] are softmaxed over l
    and used to mix the original layer states.
    """
    layers = stack_.layers
    if not layers:
        raise ShapeError("layer fusion needs a non-empty stack")
    d = layers[0].shape[-1]
    if d != p.bilstm.n_in:
        raise ShapeError(f"stack width {d} does not match BiLSTM input {p.bilstm.n_in}")
    if p.attn_vector.shape != (2 * p.bilstm.hidden,):
        raise ShapeError(f"attention vector must have length {2 * p.bilstm.hidden}")
    contextual = bilstm_steps(p.bilstm, layers)
    scores = stack([matmul(u, p.attn_vector) for u in contextual], axis=-1)  # [..., T, L]
    weights = softmax(scores, axis=-1)
    hidden = stack(layers, axis=-2)  # [..., T, L, d]
    mixed = (weights.reshape(weights.shape + (1,)) * hidden).sum(axis=-2)
    return FusedSequence(mixed, weights)


def gated_fuse(p: GateParams, h_a: Tensor, c_b: Tensor) -> tuple[Tensor, Tensor]:
    """Blend the two encoders with an elementwise sigmoid gate.

    Returns ``(fused, gate)`` where fused = gate*h_a + (1 - gate)*c_b.
    """
    if h_a.shape != c_b.shape:
        raise ShapeError(f"gated fusion inputs differ in shape: {h_a.shape} vs {c_b.shape}")
    gate = sigmoid(linear(p.proj, concat([h_a, c_b], axis=-1)))
    return gate * h_a + (1.0 - gate) * c_b, gate


def mean_fuse(h_a: Tensor, c_b: Tensor) -> Tensor:
    """Parameter-free stand-in for the gate when gated fusion is ablated."""
    if h_a.shape != c_b.shape:
        raise ShapeError(f"fusion inputs differ in shape: {h_a.shape} vs {c_b.shape}")
    return (h_a + c_b) * 0.5


def gap_pool(x: Tensor, mask=None) -> Tensor:
    """Mean over the token axis of x [..., T, d]; padded tokens are skipped
    when a [..., T] mask is given."""
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError("average pooling needs at least one token")
    if mask is None:
        return x.mean(axis=-2)
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise ShapeError("average pooling over a fully padded sequence")
    return (x * m[..., None]).sum(axis=-2) / counts
