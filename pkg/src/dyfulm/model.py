"""The assembled dual-encoder model: two encoders, per-encoder layer fusion,
cross-encoder gating, average pooling and the three linked heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .config import AblationToggles, ModelConfig
from .encoders import EncoderParams, LayerStack, encode, init_encoder
from .fusion import GateParams, LayerFusionParams, gap_pool, gated_fuse, hierarchical_fuse, mean_fuse
from .heads import HeadOutputs, HeadParams, heads_forward
from .nn import named_tensors

PAD_ID = 0


@dataclass
class LossWeights:
    """Learnable log-scale task weights, one per task."""

    s_coarse: Tensor
    s_fine: Tensor
    s_intensity: Tensor

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(*(Tensor(0.0, requires_grad=True) for _ in range(3)))


@dataclass
class DyFuLMParams:
    encoder_a: EncoderParams
    encoder_b: EncoderParams
    fusion_a: LayerFusionParams
    fusion_b: LayerFusionParams
    gate: GateParams
    heads: HeadParams
    loss_weights: LossWeights


@dataclass
class ModelOutputs:
    heads: HeadOutputs
    pooled: Tensor  # [..., d]
    gate: Tensor  # [..., T, d]; constant 0.5 when gated fusion is off
    layer_weights_a: Tensor  # [..., T, L_a]; one-hot on the last layer when layer fusion is off
    layer_weights_b: Tensor


def init_params(cfg: ModelConfig) -> DyFuLMParams:
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(6)]
    d = cfg.d_model
    return DyFuLMParams(
        encoder_a=init_encoder(cfg.vocab_size, d, cfg.layers_a, cfg.ffn_hidden, cfg.t_max, streams[0]),
        encoder_b=init_encoder(cfg.vocab_size, d, cfg.layers_b, cfg.ffn_hidden, cfg.t_max, streams[1]),
        fusion_a=LayerFusionParams.init(d, cfg.fusion_width, streams[2]),
        fusion_b=LayerFusionParams.init(d, cfg.fusion_width, streams[3]),
        gate=GateParams.init(d, streams[4]),
        heads=HeadParams.init(d, streams[5]),
        loss_weights=LossWeights.zeros(),
    )


def pad_batch(sequences) -> tuple[np.ndarray, np.ndarray]:
    """Stack right-padded id lists into ``(ids [B, T], mask [B, T])``.

    T is trimmed to the longest real sequence in the batch.
    """
    seqs = [np.asarray(s, dtype=np.int64) for s in sequences]
    if not seqs:
        raise ValueError("empty batch")
    lengths = []
    for s in seqs:
        real = np.flatnonzero(s != PAD_ID)
        if real.size == 0:
            raise ValueError("sequence has no real tokens")
        lengths.append(int(real[-1]) + 1)
    T = max(lengths)
    ids = np.full((len(seqs), T), PAD_ID, dtype=np.int64)
    for row, (s, n) in enumerate(zip(seqs, lengths)):
        ids[row, :n] = s[:n]
    mask = (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)
    return ids, mask


class DyFuLM:
    def __init__(self, config: ModelConfig, params: DyFuLMParams | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(named_tensors(self.params))

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def _fuse_layers(self, fusion: LayerFusionParams, stack_: LayerStack, use_layer_fusion: bool):
        if use_layer_fusion:
            fused = hierarchical_fuse(fusion, stack_)
            return fused.values, fused.layer_weights
        last = stack_.layers[-1]
        onehot = np.zeros(last.shape[:-1] + (len(stack_),))
        onehot[..., -1] = 1.0
        return last, Tensor(onehot)

    def forward(self, token_ids, mask=None, toggles: AblationToggles = AblationToggles(),
                dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> ModelOutputs:
        """Forward pass for ids [T] or [B, T]; ``mask`` marks real tokens.

        ``rng`` enables dropout (training mode); leave it None for evaluation.
        """
        p = self.params
        stack_a = encode(p.encoder_a, token_ids, mask, dropout_rate, rng)
        stack_b = encode(p.encoder_b, token_ids, mask, dropout_rate, rng)
        h_a, w_a = self._fuse_layers(p.fusion_a, stack_a, toggles.use_layer_fusion)
        c_b, w_b = self._fuse_layers(p.fusion_b, stack_b, toggles.use_layer_fusion)
        if toggles.use_gated_fusion:
            fused, gate = gated_fuse(p.gate, h_a, c_b)
        else:
            fused, gate = mean_fuse(h_a, c_b), Tensor(np.full(h_a.shape, 0.5))
        pooled = gap_pool(fused, mask)
        outs = heads_forward(p.heads, pooled, use_guidance=toggles.use_hierarchical_guidance)
        return ModelOutputs(outs, pooled, gate, w_a, w_b)

    __call__ = forward
