"""Finite-difference checks for every differentiable block and the full model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, gradcheck
from .config import AblationToggles, ModelConfig
from .encoders import LayerStack, encode, init_encoder
from .fusion import GateParams, LayerFusionParams, gap_pool, gated_fuse, hierarchical_fuse
from .heads import HeadParams, heads_forward
from .model import DyFuLM, pad_batch
from .nn import (
    AttentionParams,
    BiLstmParams,
    EmbeddingParams,
    LinearParams,
    bilstm,
    embed,
    layer_norm,
    linear,
    named_tensors,
    self_attention,
)
from .training import combine_losses, task_losses

BLOCK_THRESHOLD = 1e-6
END_TO_END_THRESHOLD = 1e-4

# end-to-end gradcheck config: L=2, d=8, T=4
TINY_CONFIG = ModelConfig(vocab_size=8, d_model=8, layers_a=2, layers_b=2, ffn_hidden=8, t_max=4, seed=3)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    threshold: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _params(obj) -> list[Tensor]:
    return [t for _, t in named_tensors(obj)]


def check_matmul(rng):
    return gradcheck(lambda a, b: ad.matmul(a, b), [_t(rng, 3, 4), _t(rng, 4, 2)])


def check_elementwise(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    pos = Tensor(rng.uniform(0.5, 2.0, (2, 3)), requires_grad=True)

    def f(a, b, pos):
        y = ad.sigmoid(a) * ad.tanh(b) + ad.exp(a) - b
        return y + ad.log(pos) + ad.relu(a + 0.05) + a / pos + pos ** -0.5

    return gradcheck(f, [a, b, pos])


def check_softmax(rng):
    return gradcheck(lambda x: ad.softmax(ad.sigmoid(x)), [_t(rng, 5)])


def check_reduce(rng):
    return gradcheck(lambda x: x.mean(axis=0) * x.sum(axis=1).sum() + ad.log_softmax(x, axis=0).sum(axis=0),
                     [_t(rng, 3, 4)])


def check_linear(rng):
    p = LinearParams.init(3, 4, rng)
    x = _t(rng, 2, 3)
    return gradcheck(lambda x, w, b: linear(LinearParams(w, b), x), [x, p.weight, p.bias])


def check_layer_norm(rng):
    x = _t(rng, 3, 5)
    gain, shift = _t(rng, 5), _t(rng, 5)
    return gradcheck(layer_norm, [x, gain, shift])


def check_self_attention(rng):
    p = AttentionParams.init(4, rng)
    x = _t(rng, 3, 4)
    flat = _params(p)

    def f(x, *ws):
        q, k, v, o = (LinearParams(ws[i], ws[i + 1]) for i in range(0, 8, 2))
        return self_attention(x, q, k, v, o)

    return gradcheck(f, [x, *flat])


def check_bilstm(rng):
    p = BiLstmParams.init(4, 3, rng)
    seq = _t(rng, 3, 4)
    return gradcheck(lambda seq, *_: bilstm(p, seq), [seq, *_params(p)])


def check_embedding(rng):
    p = EmbeddingParams.init(6, 5, 3, rng)
    ids = [4, 1, 4, 2]
    return gradcheck(lambda *_: embed(p, ids), _params(p))


def check_encoder(rng):
    p = init_encoder(vocab_size=7, d=8, n_layers=2, ffn_hidden=8, t_max=3, rng=rng)
    ids = [5, 2, 6]
    return gradcheck(lambda *_: sum((h.sum() for h in encode(p, ids).layers), Tensor(0.0)), _params(p))


def check_layer_fusion(rng):
    p = LayerFusionParams.init(4, 2, rng)
    layers = [_t(rng, 3, 4) for _ in range(3)]
    return gradcheck(lambda *ts: hierarchical_fuse(p, LayerStack(list(ts[:3]), 3)).values,
                     [*layers, *_params(p)])


def check_gate(rng):
    p = GateParams.init(4, rng)
    h_a, c_b = _t(rng, 3, 4), _t(rng, 3, 4)
    return gradcheck(lambda a, b, *_: gap_pool(gated_fuse(p, a, b)[0]), [h_a, c_b, *_params(p)])


def check_heads(rng):
    p = HeadParams.init(8, rng)
    h = _t(rng, 8)

    def f(h, *_):
        out = heads_forward(p, h)
        return ad.concat([out.coarse_logits, out.intensity, out.fine_logits])

    return gradcheck(f, [h, *_params(p)])


def check_end_to_end(rng, toggles: AblationToggles = AblationToggles()):
    model = DyFuLM(TINY_CONFIG)
    w = model.params.loss_weights
    for s in (w.s_coarse, w.s_fine, w.s_intensity):
        s.data = np.asarray(rng.normal(0.0, 0.3))
    ids, mask = pad_batch([[2, 5, 7, 1], [3, 6, 0, 0]])

    def f(*_):
        out = model(ids, mask, toggles=toggles)
        parts = task_losses(out.heads, [2, 0], [4, 1], [0.93, 0.21])
        return combine_losses(model.params.loss_weights, *parts, toggles)

    return gradcheck(f, model.parameters())


BLOCK_CHECKS = {
    "matmul": check_matmul,
    "elementwise": check_elementwise,
    "softmax": check_softmax,
    "reduce": check_reduce,
    "linear": check_linear,
    "layer_norm": check_layer_norm,
    "self_attention": check_self_attention,
    "bilstm": check_bilstm,
    "embedding": check_embedding,
    "encoder": check_encoder,
    "layer_fusion": check_layer_fusion,
    "gated_fusion": check_gate,
    "heads": check_heads,
}


def run_suite(threshold: float | None = None, seed: int = 0) -> list[CheckResult]:
    """Run every block check plus the end-to-end loss check.

    ``threshold`` overrides both default tolerances when given.
    """
    results = []
    for i, (name, check) in enumerate(list(BLOCK_CHECKS.items()) + [("end_to_end", check_end_to_end)]):
        rng = np.random.default_rng([seed, i])
        limit = END_TO_END_THRESHOLD if name == "end_to_end" else BLOCK_THRESHOLD
        if threshold is not None:
            limit = threshold
        t0 = time.perf_counter()
        err = check(rng)
        results.append(CheckResult(name, err, limit, time.perf_counter() - t0))
    return results
