"""Differentiable building blocks: linear, layer norm, embeddings,
single-head self-attention, feed-forward and a bidirectional LSTM."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .autodiff import ShapeError, Tensor, concat, matmul, relu, sigmoid, softmax, stack, take, tanh

MASK_FILL = -1e9


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def named_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk nested parameter dataclasses/lists and yield ``(dotted_name, tensor)``."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            yield from named_tensors(value, f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}" if prefix else str(i))


@dataclass
class LinearParams:
    weight: Tensor  # [out, in]
    bias: Tensor  # [out]

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "LinearParams":
        return cls(uniform_init(rng, n_in, (n_out, n_in)), uniform_init(rng, n_in, (n_out,)))

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]


def linear(p: LinearParams, x: Tensor) -> Tensor:
    if x.shape[-1] != p.n_in:
        raise ShapeError(f"linear expects last axis {p.n_in}, got input shape {x.shape}")
    return matmul(x, p.weight.T) + p.bias


@dataclass
class LayerNormParams:
    gain: Tensor
    shift: Tensor

    @classmethod
    def init(cls, d: int) -> "LayerNormParams":
        return cls(Tensor(np.ones(d), requires_grad=True), Tensor(np.zeros(d), requires_grad=True))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + eps) ** -0.5) * gain + shift


@dataclass
class EmbeddingParams:
    token_table: Tensor  # [V, d]
    position_table: Tensor  # [T_max, d]

    @classmethod
    def init(cls, vocab_size: int, t_max: int, d: int, rng: np.random.Generator) -> "EmbeddingParams":
        return cls(uniform_init(rng, d, (vocab_size, d)), uniform_init(rng, d, (t_max, d)))


def embed(p: EmbeddingParams, token_ids) -> Tensor:
    """Token plus position embedding for ids of shape [..., T]."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 0:
        raise ShapeError("token ids must have a sequence axis")
    vocab, _ = p.token_table.shape
    t_max = p.position_table.shape[0]
    T = ids.shape[-1]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range [0, {vocab})")
    if T > t_max:
        raise IndexError(f"sequence length {T} exceeds position table size {t_max}")
    return take(p.token_table, ids) + take(p.position_table, np.arange(T))


@dataclass
class FeedForwardParams:
    up: LinearParams
    down: LinearParams

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "FeedForwardParams":
        return cls(LinearParams.init(d, hidden, rng), LinearParams.init(hidden, d, rng))


def feed_forward(p: FeedForwardParams, x: Tensor) -> Tensor:
    return linear(p.down, relu(linear(p.up, x)))


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None (evaluation) or rate is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * keep


@dataclass
class AttentionParams:
    q: LinearParams
    k: LinearParams
    v: LinearParams
    o: LinearParams

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(*(LinearParams.init(d, d, rng) for _ in range(4)))


def self_attention(x: Tensor, q: LinearParams, k: LinearParams, v: LinearParams, o: LinearParams,
                   key_mask=None, return_weights: bool = False):
    """Single-head scaled dot-product self-attention over x of shape [..., T, d].

    ``key_mask`` (shape [..., T], 1 = real token) keeps padding keys out of
    every softmax row.
    """
    d = x.shape[-1]
    for name, p in (("q", q), ("k", k), ("v", v), ("o", o)):
        if p.n_in != d or p.n_out != d:
            raise ShapeError(f"attention projection {name} must map {d}->{d}, has {p.weight.shape}")
    queries, keys, values = linear(q, x), linear(k, x), linear(v, x)
    scores = matmul(queries, keys.T) * (1.0 / math.sqrt(d))
    if key_mask is not None:
        bias = np.where(np.asarray(key_mask) > 0, 0.0, MASK_FILL)
        scores = scores + np.expand_dims(bias, -2)
    weights = softmax(scores, axis=-1)
    out = linear(o, matmul(weights, values))
    return (out, weights) if return_weights else out


@dataclass
class LstmCellParams:
    w_input: Tensor  # [h, in + h]
    w_forget: Tensor
    w_cell: Tensor
    w_output: Tensor
    b_input: Tensor  # [h]
    b_forget: Tensor
    b_cell: Tensor
    b_output: Tensor

    @classmethod
    def init(cls, n_in: int, hidden: int, rng: np.random.Generator,
             forget_bias: float = 1.0) -> "LstmCellParams":
        fan_in = n_in + hidden
        weights = [uniform_init(rng, fan_in, (hidden, fan_in)) for _ in range(4)]
        biases = [uniform_init(rng, fan_in, (hidden,)) for _ in range(4)]
        biases[1] = Tensor(np.full(hidden, forget_bias), requires_grad=True)
        return cls(*weights, *biases)

    @property
    def hidden(self) -> int:
        return self.w_input.shape[0]

    @property
    def n_in(self) -> int:
        return self.w_input.shape[1] - self.hidden


@dataclass
class BiLstmParams:
    forward: LstmCellParams
    backward: LstmCellParams

    @classmethod
    def init(cls, n_in: int, hidden: int, rng: np.random.Generator) -> "BiLstmParams":
        return cls(LstmCellParams.init(n_in, hidden, rng), LstmCellParams.init(n_in, hidden, rng))

    @property
    def hidden(self) -> int:
        return self.forward.hidden

    @property
    def n_in(self) -> int:
        return self.forward.n_in


def _run_direction(p: LstmCellParams, xs: Sequence[Tensor]) -> list[Tensor]:
    batch_shape = xs[0].shape[:-1]
    h = Tensor(np.zeros(batch_shape + (p.hidden,)))
    c = Tensor(np.zeros(batch_shape + (p.hidden,)))
    outs = []
    for x in xs:
        z = concat([x, h], axis=-1)
        i = sigmoid(matmul(z, p.w_input.T) + p.b_input)
        f = sigmoid(matmul(z, p.w_forget.T) + p.b_forget)
        g = tanh(matmul(z, p.w_cell.T) + p.b_cell)
        o = sigmoid(matmul(z, p.w_output.T) + p.b_output)
        c = f * c + i * g
        h = o * tanh(c)
        outs.append(h)
    return outs


def bilstm_steps(p: BiLstmParams, xs: Sequence[Tensor]) -> list[Tensor]:
    """Run both directions over a list of L step inputs, each [..., in].

    Returns L tensors [..., 2h]: forward state then backward state per step.
    """
    if not xs:
        raise ShapeError("bilstm needs at least one step")
    if xs[0].shape[-1] != p.n_in:
        raise ShapeError(f"bilstm expects input width {p.n_in}, got {xs[0].shape}")
    fwd = _run_direction(p.forward, xs)
    bwd = _run_direction(p.backward, xs[::-1])[::-1]
    return [concat([a, b], axis=-1) for a, b in zip(fwd, bwd)]


def bilstm(p: BiLstmParams, seq: Tensor) -> Tensor:
    """BiLSTM over a [L, in] sequence, returning [L, 2h]."""
    if seq.ndim != 2:
        raise ShapeError(f"bilstm expects a [L, in] sequence, got {seq.shape}")
    steps = [seq[i] for i in range(seq.shape[0])]
    return stack(bilstm_steps(p, steps), axis=0)
