"""Small post-norm transformer encoders that expose every layer's hidden states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .nn import (
    AttentionParams,
    EmbeddingParams,
    FeedForwardParams,
    LayerNormParams,
    dropout,
    embed,
    feed_forward,
    layer_norm,
    self_attention,
)


@dataclass
class BlockParams:
    attn: AttentionParams
    norm1: LayerNormParams
    ffn: FeedForwardParams
    norm2: LayerNormParams


@dataclass
class EncoderParams:
    embedding: EmbeddingParams
    blocks: list[BlockParams]

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    @property
    def d(self) -> int:
        return self.embedding.token_table.shape[1]

    @property
    def t_max(self) -> int:
        return self.embedding.position_table.shape[0]


@dataclass
class LayerStack:
    """Hidden states H^(1..L) of one encoder, each [..., T, d]."""

    layers: list[Tensor]
    length: int

    def __len__(self) -> int:
        return len(self.layers)


def init_encoder(vocab_size: int, d: int, n_layers: int, ffn_hidden: int, t_max: int,
                 rng: np.random.Generator) -> EncoderParams:
    if n_layers < 1:
        raise ValueError("encoder needs at least one layer")
    blocks = [
        BlockParams(
            attn=AttentionParams.init(d, rng),
            norm1=LayerNormParams.init(d),
            ffn=FeedForwardParams.init(d, ffn_hidden, rng),
            norm2=LayerNormParams.init(d),
        )
        for _ in range(n_layers)
    ]
    return EncoderParams(EmbeddingParams.init(vocab_size, t_max, d, rng), blocks)


def encode(p: EncoderParams, token_ids, mask=None, dropout_rate: float = 0.0,
           rng: np.random.Generator | None = None) -> LayerStack:
    """Encode ids of shape [T] or [B, T]; ``mask`` marks real tokens with 1.

    Dropout is applied after the embeddings and after each FFN only when an
    ``rng`` is supplied.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 0 or ids.shape[-1] == 0:
        raise ValueError("cannot encode an empty sequence")
    T = ids.shape[-1]
    if T > p.t_max:
        raise ValueError(f"sequence length {T} exceeds T_max={p.t_max}")
    x = dropout(embed(p.embedding, ids), dropout_rate, rng)
    layers = []
    for block in p.blocks:
        a = block.attn
        x = layer_norm(x + self_attention(x, a.q, a.k, a.v, a.o, key_mask=mask),
                       block.norm1.gain, block.norm1.shift)
        x = layer_norm(x + dropout(feed_forward(block.ffn, x), dropout_rate, rng),
                       block.norm2.gain, block.norm2.shift)
        layers.append(x)
    return LayerStack(layers, T)
