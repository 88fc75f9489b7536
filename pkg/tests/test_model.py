import numpy as np
import pytest

from dyfulm.config import VARIANTS, AblationToggles, ModelConfig
from dyfulm.model import DyFuLM, pad_batch

SMALL = ModelConfig(vocab_size=10, d_model=8, layers_a=2, layers_b=3, ffn_hidden=8, t_max=6, seed=5)


@pytest.fixture(scope="module")
def model():
    return DyFuLM(SMALL)


def test_pad_batch_trims_to_longest():
    ids, mask = pad_batch([[3, 4, 0, 0, 0], [5, 0, 0, 0, 0]])
    assert ids.tolist() == [[3, 4], [5, 0]]
    assert mask.tolist() == [[1.0, 1.0], [1.0, 0.0]]


def test_pad_batch_rejects_all_padding():
    with pytest.raises(ValueError):
        pad_batch([[0, 0, 0]])
    with pytest.raises(ValueError):
        pad_batch([])


def test_batched_equals_per_sample(model):
    seqs = [[2, 7, 3, 9, 4], [5, 1, 0, 0, 0], [8, 8, 6, 0, 0]]
    ids, mask = pad_batch(seqs)
    batch = model(ids, mask)
    for row, seq in enumerate(seqs):
        real = [t for t in seq if t]
        single = model(np.array(real))
        np.testing.assert_allclose(batch.heads.fine_logits.data[row], single.heads.fine_logits.data,
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(batch.heads.intensity.data[row], single.heads.intensity.data, rtol=0, atol=1e-12)


def test_layer_weights_are_per_token_distributions(model):
    out = model(np.array([2, 3, 4, 5]))
    assert out.layer_weights_a.shape == (4, 2) and out.layer_weights_b.shape == (4, 3)
    for w in (out.layer_weights_a.data, out.layer_weights_b.data):
        np.testing.assert_allclose(w.sum(-1), 1.0, rtol=0, atol=1e-9)
        assert np.all((w > 0) & (w < 1))


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_toggles_keep_shapes(model, variant):
    ids, mask = pad_batch([[2, 3, 4], [5, 6, 0]])
    full = model(ids, mask)
    ablated = model(ids, mask, toggles=VARIANTS[variant])
    for name in ("coarse_logits", "intensity", "guidance", "recalibrated", "fine_logits"):
        assert getattr(full.heads, name).shape == getattr(ablated.heads, name).shape
    assert full.gate.shape == ablated.gate.shape
    assert full.pooled.shape == ablated.pooled.shape


def test_gate_off_reports_half(model):
    out = model(np.array([2, 3]), toggles=AblationToggles(use_gated_fusion=False))
    assert np.all(out.gate.data == 0.5)


def test_layer_fusion_off_uses_last_layer(model):
    out = model(np.array([2, 3, 4]), toggles=AblationToggles(use_layer_fusion=False))
    np.testing.assert_array_equal(out.layer_weights_a.data, np.tile([0.0, 1.0], (3, 1)))


def test_same_seed_same_params():
    a, b = DyFuLM(SMALL), DyFuLM(SMALL)
    for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and ta.data.tobytes() == tb.data.tobytes()


def test_parameter_names_unique(model):
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert any(n.startswith("loss_weights") for n in names)
