import numpy as np
import pytest

from intermep import layers
from intermep import tensor as tn


def rng(seed=0):
    return np.random.default_rng(seed)


def batch(shape, seed=1, dtype="float64"):
    return tn.Tensor(rng(seed).normal(size=shape), dtype=dtype)


def test_linear_shapes_and_zero_init():
    lin = layers.Linear(3, 5, rng(), zero_init=True)
    out = lin(batch((2, 4, 3), dtype="float32"))
    assert out.shape == (2, 4, 5)
    assert np.array_equal(out.data, np.zeros((2, 4, 5)))


def test_linear_frozen():
    lin = layers.Linear(3, 5, rng(), trainable=False)
    assert lin.trainable_parameters() == {}


def test_module_parameter_names():
    layer = layers.EncoderLayer(8, 2, rng(), conditional=True, d_cond=4, lora_rank=2,
                                lora_targets=("k", "v"))
    names = list(layer.parameters())
    assert "attention.w_k.lora_A" in names
    assert "attention.w_q.lora_A" not in names
    assert "attention.adapter.weight" in names
    assert "attention.beta" in names
    assert "mlp.fc2.bias" in names


def test_frozen_backbone_trainables():
    layer = layers.EncoderLayer(8, 2, rng(), conditional=True, d_cond=4, lora_rank=2,
                                lora_targets=("k", "v", "o"))
    trainable = set(layer.trainable_parameters())
    assert trainable == {
        "attention.w_k.lora_A", "attention.w_k.lora_B",
        "attention.w_v.lora_A", "attention.w_v.lora_B",
        "attention.w_o.lora_A", "attention.w_o.lora_B",
        "attention.adapter.weight", "attention.adapter.bias",
        "attention.gate.weight", "attention.gate.bias",
        "attention.beta",
    }


def test_state_dict_round_trip():
    a = layers.FeedForward(4, 8, rng(0))
    b = layers.FeedForward(4, 8, rng(1))
    b.load_state_dict(a.state_dict())
    x = batch((1, 2, 4), dtype="float32")
    assert np.array_equal(a(x).data, b(x).data)


def test_load_state_dict_mismatch():
    ff = layers.FeedForward(4, 8, rng())
    state = ff.state_dict()
    state.pop("fc1.bias")
    with pytest.raises(ValueError, match="missing"):
        ff.load_state_dict(state)
    state = ff.state_dict()
    state["fc1.bias"] = np.zeros(3)
    with pytest.raises(ValueError, match="shape mismatch"):
        ff.load_state_dict(state)


def test_lora_forward_zero_b_is_base():
    """
    B = 0 leaves the base map bit-for-bit unchanged.

    """
    x = batch((2, 3, 4))
    W = batch((5, 4), seed=2)
    A = batch((2, 4), seed=3)
    B = tn.Tensor(np.zeros((5, 2)))
    assert np.array_equal(layers.lora_forward(x, W, A, B, 2.0, 2).data, (x @ W.T).data)


def test_lora_forward_rank_zero():
    x, W = batch((1, 4)), batch((3, 4), seed=2)
    assert np.array_equal(layers.lora_forward(x, W, None, None, 1.0, 0).data, (x @ W.T).data)


def test_lora_forward_update_value():
    x = tn.Tensor(np.eye(2))
    W = tn.Tensor(np.zeros((2, 2)))
    A = tn.Tensor([[1.0, 0.0]])
    B = tn.Tensor([[1.0], [2.0]])
    out = layers.lora_forward(x, W, A, B, alpha=2.0, r=1)
    # (alpha / r) B A = 2 * [[1, 0], [2, 0]]
    assert np.allclose(out.data, [[2.0, 4.0], [0.0, 0.0]])


def test_lora_forward_shape_errors():
    x, W = batch((1, 4)), batch((3, 4), seed=2)
    with pytest.raises(ValueError, match="do not fit"):
        layers.lora_forward(x, W, batch((2, 3)), batch((3, 2)), 1.0, 2)
    with pytest.raises(ValueError, match="needs both"):
        layers.lora_forward(x, W, batch((2, 4)), None, 1.0, 2)
    with pytest.raises(ValueError, match="rank 0"):
        layers.lora_forward(x, W, batch((2, 4)), batch((3, 2)), 1.0, 0)


def test_lora_linear_starts_at_base():
    lin = layers.LoRALinear(4, 4, rng(), rank=2)
    x = batch((1, 3, 4), dtype="float32")
    base = x @ lin.weight.T + lin.bias
    assert np.array_equal(lin(x).data, base.data)
    assert lin.alpha == 2.0


def test_attention_bias_padding_and_causal():
    bias = layers.attention_bias(np.array([[True, True, False]]), causal=True)
    assert bias.shape == (1, 1, 3, 3)
    allowed = bias[0, 0] == 0
    assert np.array_equal(allowed, [[True, False, False],
                                    [True, True, False],
                                    [True, True, False]])


def test_attention_bias_condition_keys_ignore_causality():
    bias = layers.attention_bias(np.array([[True, True]]), np.array([[True, False]]), causal=True)
    allowed = bias[0, 0] == 0
    assert allowed[0].tolist() == [True, False, True, False]
    assert np.all(bias[bias != 0] == layers.MASK_VALUE)


def test_self_attention_ignores_padded_keys():
    attn = layers.SelfAttention(8, 2, rng(), dtype="float64")
    x = batch((1, 3, 8))
    valid = np.array([[True, True, False]])
    changed = tn.Tensor(x.data.copy())
    changed.data[0, 2] += 5.0
    bias = layers.attention_bias(valid, dtype="float64")
    assert np.allclose(attn(x, bias).data[0, :2], attn(changed, bias).data[0, :2])


def test_self_attention_head_check():
    with pytest.raises(ValueError, match="does not divide"):
        layers.SelfAttention(10, 3, rng())


def make_conditional(seed=0):
    return layers.EncoderLayer(8, 2, rng(seed), dtype="float64", conditional=True, d_cond=6,
                               lora_rank=2, lora_targets=("k", "v", "o"), causal=True)


def test_empty_condition_equals_vanilla():
    """
    With LoRA B = 0 and beta = 0 an empty condition changes nothing.

    """
    layer = make_conditional()
    x = batch((2, 4, 8))
    valid = np.array([[True] * 4, [True, True, True, False]])
    vanilla = layer(x, valid)
    empty = tn.Tensor(np.zeros((2, 0, 6)))
    conditioned = layer(x, valid, condition=empty)
    assert np.array_equal(vanilla.data, conditioned.data)


def test_gate_is_inert_while_beta_is_zero():
    layer = make_conditional()
    x, cond = batch((2, 4, 8)), batch((2, 3, 6), seed=5)
    valid = np.ones((2, 4), dtype=bool)
    before = layer(x, valid, condition=cond).data
    layer.attention.gate.weight.data += 3.0
    layer.attention.gate.bias.data -= 1.0
    after = layer(x, valid, condition=cond).data
    assert np.array_equal(before, after)


def test_gate_contributes_once_beta_moves():
    layer = make_conditional()
    x, cond = batch((2, 4, 8)), batch((2, 3, 6), seed=5)
    valid = np.ones((2, 4), dtype=bool)
    before = layer(x, valid, condition=cond).data
    layer.attention.beta.data[:] = 0.5
    assert not np.allclose(before, layer(x, valid, condition=cond).data)


def test_condition_changes_output():
    layer = make_conditional()
    x = batch((1, 4, 8))
    valid = np.ones((1, 4), dtype=bool)
    a = layer(x, valid, condition=batch((1, 2, 6), seed=6)).data
    b = layer(x, valid, condition=batch((1, 2, 6), seed=7)).data
    assert a.shape == (1, 4, 8)
    assert not np.allclose(a, b)


def test_condition_shape_checked():
    layer = make_conditional()
    with pytest.raises(ValueError, match="does not fit"):
        layer(batch((1, 4, 8)), np.ones((1, 4), dtype=bool), condition=batch((1, 2, 5)))


def test_plain_layer_rejects_condition():
    layer = layers.EncoderLayer(8, 2, rng(), dtype="float64")
    with pytest.raises(ValueError, match="does not take"):
        layer(batch((1, 2, 8)), np.ones((1, 2), dtype=bool), condition=batch((1, 1, 8)))


def test_conditional_attention_matches_dense_reference():
    """
    Single head, 3 sequence rows, 2 condition rows, width 4, checked entry
    by entry against explicit loops.

    """
    attn = layers.ConditionalSelfAttention(4, 3, 1, rng(2), dtype="float64")
    attn.beta.data[:] = 0.3
    h = rng(3).normal(size=(1, 3, 4))
    cond = rng(4).normal(size=(1, 2, 3))
    bias = layers.attention_bias(np.ones((1, 3), dtype=bool), np.ones((1, 2), dtype=bool),
                                 dtype="float64")
    out = attn(tn.Tensor(h), bias, condition=tn.Tensor(cond)).data[0]

    def lin(module, x):
        return x @ module.weight.data.T + module.bias.data

    rows = np.vstack([h[0], lin(attn.adapter, cond[0])])
    q, k, v = lin(attn.w_q, rows), lin(attn.w_k, rows), lin(attn.w_v, rows)
    expected = np.zeros((3, 4))
    for i in range(3):
        scores = np.array([q[i] @ k[j] / 2.0 for j in range(5)])
        weights = np.exp(scores - scores.max())
        weights /= weights.sum()
        h_prime = sum(weights[j] * v[j] for j in range(5))
        expected[i] = lin(attn.w_o, h_prime) + lin(attn.gate, h_prime) * np.tanh(0.3)
    assert np.allclose(out, expected, atol=1e-12)
