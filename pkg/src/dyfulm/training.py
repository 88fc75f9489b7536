"""Task losses, dynamic loss weighting, Adam, the training loop and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Tensor, exp, log_softmax, set_debug
from .config import AblationToggles, ModelConfig, TrainConfig
from .heads import N_COARSE, N_FINE, HeadOutputs
from .model import DyFuLM, LossWeights, pad_batch

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BLOB_MAGIC = b"DYFULM\x00\x01"


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# ------------------------------------------------------------------ losses


def cross_entropy(logits: Tensor, labels, n_classes: int) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    onehot = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
    return -(log_softmax(logits, axis=-1) * onehot).sum(axis=-1).mean()


def task_losses(outputs: HeadOutputs, coarse_labels, fine_labels, intensity_targets):
    """Mean coarse CE, fine CE and intensity squared error over the batch."""
    loss_c = cross_entropy(outputs.coarse_logits, coarse_labels, N_COARSE)
    loss_f = cross_entropy(outputs.fine_logits, fine_labels, N_FINE)
    target = np.asarray(intensity_targets, dtype=np.float64).reshape(outputs.intensity.shape)
    err = outputs.intensity - target
    loss_i = (err * err).mean()
    return loss_c, loss_f, loss_i


def uncertainty_weighted(losses: Sequence[Tensor], log_weights: Sequence[Tensor]) -> Tensor:
    """sum_t exp(-s_t) * L_t + s_t"""
    total = None
    for loss, s in zip(losses, log_weights):
        term = exp(-s) * loss + s
        total = term if total is None else total + term
    return total


def combine_losses(w: LossWeights, loss_c: Tensor, loss_f: Tensor, loss_i: Tensor,
                   toggles: AblationToggles) -> Tensor:
    if toggles.use_dynamic_loss:
        return uncertainty_weighted((loss_c, loss_f, loss_i), (w.s_coarse, w.s_fine, w.s_intensity))
    return loss_c + loss_f + loss_i


# --------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        if self.lr == 0.0:
            return
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# ------------------------------------------------------------------ training


def batch_loss(model: DyFuLM, records, toggles: AblationToggles, dropout_rate: float = 0.0,
               rng: np.random.Generator | None = None):
    """Forward a batch of records; returns ``(total, (L_c, L_f, L_i))``."""
    ids, mask = pad_batch([r.token_ids for r in records])
    out = model(ids, mask, toggles=toggles, dropout_rate=dropout_rate, rng=rng)
    parts = task_losses(out.heads, [r.coarse_label for r in records],
                        [r.fine_label for r in records], [r.intensity for r in records])
    return combine_losses(model.params.loss_weights, *parts, toggles), parts


def train(model: DyFuLM, data, cfg: TrainConfig, toggles: AblationToggles = AblationToggles(),
          on_epoch=None) -> tuple[DyFuLM, list[float]]:
    """Train ``model`` in place with Adam; returns it and the per-epoch mean loss.

    Shuffle order and dropout masks come from ``cfg.seed`` only, so two runs
    with equal inputs produce identical parameters.
    """
    data = list(data)
    if not data:
        raise ValueError("cannot train on an empty dataset")
    if cfg.batch_size > len(data):
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {len(data)}")
    set_debug(cfg.debug_nan)
    shuffle_seed, dropout_seed = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    dropout_rng = np.random.default_rng(dropout_seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    curve = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(data))
        total, seen = 0.0, 0
        for start in range(0, len(data), cfg.batch_size):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            opt.zero_grad()
            loss, parts = batch_loss(model, batch, toggles, cfg.dropout, dropout_rng)
            value = loss.item()
            if not math.isfinite(value):
                detail = ", ".join(f"{n}={p.item():.6g}" for n, p in zip(("coarse", "fine", "intensity"), parts))
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch + 1}, batch starting {start}: {detail}")
            loss.backward()
            if cfg.clip_norm is not None:
                clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            total += value * len(batch)
            seen += len(batch)
        curve.append(total / seen)
        logger.info("epoch %d/%d mean loss %.6f", epoch + 1, cfg.epochs, curve[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, curve[-1])
    opt.zero_grad()
    return model, curve


def two_task_noise_experiment(seed: int, noise_ratio: float = 10.0, n: int = 256,
                              steps: int = 1500, lr: float = 0.05) -> tuple[float, float]:
    """Fit two linear regressions sharing inputs, the second with ``noise_ratio``
    times noisier targets, under uncertainty weighting.

    Returns the learned log-weights ``(s_clean, s_noisy)``.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4))
    base_noise = 0.1
    y_clean = x @ rng.standard_normal(4) + base_noise * rng.standard_normal(n)
    y_noisy = x @ rng.standard_normal(4) + noise_ratio * base_noise * rng.standard_normal(n)
    w1 = Tensor(np.zeros(4), requires_grad=True)
    w2 = Tensor(np.zeros(4), requires_grad=True)
    s1 = Tensor(0.0, requires_grad=True)
    s2 = Tensor(0.0, requires_grad=True)
    opt = Adam([w1, w2, s1, s2], lr=lr)
    xt = Tensor(x)
    for _ in range(steps):
        opt.zero_grad()
        e1 = xt @ w1 - y_clean
        e2 = xt @ w2 - y_noisy
        total = uncertainty_weighted(((e1 * e1).mean(), (e2 * e2).mean()), (s1, s2))
        total.backward()
        opt.step()
    return s1.item(), s2.item()


# --------------------------------------------------------------- checkpoints


def _blob_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(model: DyFuLM, path) -> tuple[Path, Path]:
    """Write ``path`` (JSON manifest) and a companion ``.bin`` float64 blob.

    The blob starts with an 8-byte magic; tensor offsets are byte offsets into
    the blob and lengths are element counts.
    """
    path = Path(path)
    blob_path = _blob_path(path)
    entries = []
    chunks = [BLOB_MAGIC]
    offset = len(BLOB_MAGIC)
    for name, t in model.named_parameters():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "dtype": "f64",
                        "offset": offset, "length": int(t.size)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": asdict(model.config),
        "blob": blob_path.name,
        "tensors": entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, blob_path


def load_checkpoint(path) -> DyFuLM:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest {path}: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version "
                              f"{manifest.get('format_version') if isinstance(manifest, dict) else None!r}")
    try:
        config = ModelConfig(**manifest["config"])
        entries = {e["name"]: e for e in manifest["tensors"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint manifest: {exc}") from None
    blob = (path.parent / manifest.get("blob", _blob_path(path).name)).read_bytes()
    if blob[:len(BLOB_MAGIC)] != BLOB_MAGIC:
        raise CheckpointError("checkpoint blob has bad magic bytes")

    model = DyFuLM(config)
    named = model.named_parameters()
    missing = {n for n, _ in named} - set(entries)
    extra = set(entries) - {n for n, _ in named}
    if missing or extra:
        raise CheckpointError(f"checkpoint tensors do not match config (missing={sorted(missing)[:3]}, "
                              f"unexpected={sorted(extra)[:3]})")
    for name, t in named:
        e = entries[name]
        shape = tuple(e["shape"])
        if e.get("dtype") != "f64":
            raise CheckpointError(f"{name}: unsupported dtype {e.get('dtype')!r}")
        if shape != t.shape:
            raise CheckpointError(f"{name}: manifest shape {shape} does not match config shape {t.shape}")
        if int(np.prod(shape, dtype=np.int64)) != e["length"]:
            raise CheckpointError(f"{name}: shape {shape} disagrees with length {e['length']}")
        start, stop = e["offset"], e["offset"] + 8 * e["length"]
        if start < len(BLOB_MAGIC) or stop > len(blob):
            raise CheckpointError(f"{name}: blob truncated or offset out of range")
        t.data = np.frombuffer(blob[start:stop], dtype="<f8").astype(np.float64).reshape(shape)
    return model
