from __future__ import annotations

import math
import struct

import numpy as np
import pytest

from roofwire.nn.batch import PointBatch, pack, pack_sets, unpack
from roofwire.nn.layers import (
    BatchNorm, ChannelAttention, Dropout, GlobalPool, GroupNorm, Linear, Module, Parameter,
    leaky_relu, residual_add, sigmoid, softplus,
)
from roofwire.nn.losses import bce_with_logits, smooth_l1
from roofwire.nn.optim import AdamW
from roofwire.nn.serialize import (
    NameMismatchError, ShapeMismatchError, UnsupportedVersionError, WeightsFormatError, load_tensors,
    load_weights, save_tensors, save_weights,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# --- linear

def test_linear_identity():
    lin = Linear(3, 3, rng(), np.float64)
    lin.weight.value[:] = np.eye(3)
    lin.bias.value[:] = 0
    x = rng(1).standard_normal((5, 3))
    assert np.array_equal(lin.forward(x), x)


def test_linear_hand_example():
    lin = Linear(2, 2, rng(), np.float64)
    lin.weight.value[:] = [[1, 1], [0, 1]]
    lin.bias.value[:] = [0, 1]
    assert lin.forward(np.array([[1.0, 2.0]])).tolist() == [[3.0, 3.0]]


# --- normalisation

def test_batchnorm_constant_input_gives_zero():
    bn = BatchNorm(4, dtype=np.float64)
    assert np.allclose(bn.forward(np.full((10, 4), 3.7)), 0)


def test_batchnorm_eval_identity_with_unit_stats():
    bn = BatchNorm(3, dtype=np.float64).eval()
    bn.weight.value[:] = [1, 2, 3]
    bn.bias.value[:] = [0, 1, -1]
    x = rng().standard_normal((6, 3))
    assert np.allclose(bn.forward(x), x / np.sqrt(1 + bn.eps) * [1, 2, 3] + [0, 1, -1])


def test_batchnorm_running_stats_update():
    bn = BatchNorm(2, dtype=np.float64)
    x = rng(2).standard_normal((50, 2)) * 3 + 5
    bn.forward(x)
    assert np.allclose(bn.running_mean, 0.1 * x.mean(0))
    assert np.allclose(bn.running_var, 0.9 + 0.1 * x.var(0, ddof=1))


def test_groupnorm_constant_groups_zero():
    gn = GroupNorm(8, 4, dtype=np.float64)
    x = np.repeat(np.arange(4.0), 2)[None].repeat(3, 0)
    assert np.allclose(gn.forward(x), 0)


def test_groupnorm_one_group_is_layernorm():
    gn = GroupNorm(6, 1, dtype=np.float64)
    x = rng(3).standard_normal((4, 6))
    ln = (x - x.mean(1, keepdims=True)) / np.sqrt(x.var(1, keepdims=True) + gn.eps)
    assert np.allclose(gn.forward(x), ln)


# --- activations

def test_activation_values():
    assert leaky_relu(np.array(-1.0)) == pytest.approx(-0.01)
    assert softplus(np.array(0.0)) == pytest.approx(math.log(2))
    assert sigmoid(np.array(0.0)) == 0.5
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        assert sigmoid(np.array(-np.inf)) == 0.0
        assert sigmoid(np.array(1000.0)) == 1.0


# --- attention and pooling

def test_zero_bottleneck_halves_input():
    att = ChannelAttention(5, 3, rng(), np.float64)
    for p in att.parameters():
        p.value[:] = 0
    x = rng(4).standard_normal((7, 5))
    assert np.allclose(att.forward(x, np.array([0, 3, 7])), x / 2)


def test_attention_permutation_equivariant():
    att = ChannelAttention(6, 4, rng(5), np.float64)
    x = rng(6).standard_normal((9, 6))
    perm = rng(7).permutation(9)
    assert np.allclose(att.forward(x[perm], np.array([0, 9])), att.forward(x, np.array([0, 9]))[perm])


def test_pool_single_point():
    x = np.array([[1.0, -2.0, 3.0]])
    for mode in ("max", "mean", "mixed"):
        assert np.allclose(GlobalPool(mode).forward(x, np.array([0, 1])), x)


def test_mixed_pool_weights():
    out = GlobalPool("mixed").forward(np.array([[1.0], [3.0]]), np.array([0, 2]))
    assert out[0, 0] == pytest.approx(0.7 * 3 + 0.3 * 2)


def test_max_pool_gradient_routes_to_argmax():
    pool = GlobalPool("max")
    x = np.array([[1.0, 5.0], [4.0, 2.0], [0.0, 0.0]])
    pool.forward(x, np.array([0, 2, 3]))
    dx = pool.backward(np.array([[1.0, 1.0], [2.0, 2.0]]))
    assert dx.tolist() == [[0, 1], [1, 0], [2, 2]]


# --- misc layers

def test_dropout_eval_identity_and_train_scaling():
    d = Dropout(0.4, rng())
    x = rng(8).standard_normal((100, 10))
    assert np.array_equal(d.eval().forward(x), x)
    y = d.train().forward(np.ones((200, 50)))
    assert set(np.unique(np.round(y, 6))) <= {0.0, round(1 / 0.6, 6)}


def test_residual_shapes():
    assert residual_add(np.ones((2, 3)), np.ones((2, 3))).sum() == 12
    with pytest.raises(ValueError):
        residual_add(np.ones((2, 3)), np.ones((2, 4)))


# --- losses

def test_loss_values():
    assert bce_with_logits(np.array([0.0]), np.array([1.0]))[0] == pytest.approx(math.log(2))
    assert smooth_l1(np.array([0.0]), np.array([0.0]))[0] == 0
    assert smooth_l1(np.array([2.0]), np.array([0.0]))[0] == 1.5


def test_bce_stable_for_large_logits():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        loss, g = bce_with_logits(np.array([800.0, -800.0]), np.array([1.0, 0.0]))
    assert loss == pytest.approx(0) and np.allclose(g, 0)


# --- batching and padding invariance

def test_pack_unpack_round_trip():
    x = rng(9).standard_normal((3, 4, 5))
    mask = rng(10).random((3, 5)) < 0.6
    mask[:, 0] = True
    back = unpack(pack(x, mask), mask)
    assert np.array_equal(back[np.broadcast_to(mask[:, None], back.shape)],
                          x[np.broadcast_to(mask[:, None], x.shape)])


def test_padding_never_changes_outputs():
    r = rng(11)
    sets = [r.standard_normal((4, n)) for n in (3, 1, 6)]
    N = 10
    x = r.standard_normal((3, 4, N)) * 100     # garbage in padded slots
    mask = np.zeros((3, N), bool)
    for b, s in enumerate(sets):
        x[b, :, :s.shape[1]] = s
        mask[b, :s.shape[1]] = True
    a, b = pack_sets(sets, np.float64), pack(x, mask)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.offsets, b.offsets)
    pool = GlobalPool("mixed")
    assert np.array_equal(pool.forward(a.x, a.offsets), pool.forward(b.x, b.offsets))


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        PointBatch(np.zeros((2, 3)), np.array([0, 2, 2]))


# --- AdamW

def single_param(value, grad):
    p = Parameter(np.array([value], dtype=np.float64))
    p.grad[:] = grad
    return p


def test_adamw_zero_grad_zero_decay_no_change():
    p = single_param(1.5, 0.0)
    AdamW([p], weight_decay=0).step()
    assert p.value[0] == 1.5


def test_adamw_single_step_closed_form():
    p = single_param(1.0, 1.0)
    AdamW([p]).step()
    lr, wd, eps = 1e-3, 1e-2, 1e-8
    # decay applied to the pre-step value, then the bias-corrected update m/(sqrt(v)+eps) = 1/(1+eps)
    assert p.value[0] == pytest.approx(1 * (1 - lr * wd) - lr / (1 + eps), abs=1e-15)


def test_adamw_quadratic_bowl():
    r = rng(12)
    target = r.standard_normal(5)
    p = Parameter(np.zeros(5))
    opt = AdamW([p], lr=1e-2, weight_decay=0)
    for _ in range(5000):
        p.grad[:] = 2 * (p.value - target)
        opt.step()
    assert np.sum((p.value - target) ** 2) < 1e-6


# --- weights files

class Tiny(Module):
    def __init__(self, seed=0):
        super().__init__()
        self.a = Linear(3, 4, rng(seed))
        self.bn = BatchNorm(4)


def test_weights_round_trip(tmp_path):
    m = Tiny(1)
    m.bn.running_mean[:] = rng(2).standard_normal(4)
    save_weights(m, tmp_path / "w.pnwt")
    n = Tiny(5)
    load_weights(n, tmp_path / "w.pnwt")
    x = rng(3).standard_normal((6, 3)).astype(np.float32)
    m.eval(), n.eval()
    assert np.array_equal(m.bn.forward(m.a.forward(x)), n.bn.forward(n.a.forward(x)))


def test_tampered_shape_field(tmp_path):
    save_tensors({"w": np.zeros((2, 3), np.float32)}, tmp_path / "t.pnwt")
    raw = bytearray((tmp_path / "t.pnwt").read_bytes())
    # header 12 bytes, name len 2 + "w" 1, dtype 1, rank 1, then dims
    struct.pack_into("<I", raw, 12 + 3 + 2, 1)
    (tmp_path / "t.pnwt").write_bytes(bytes(raw))
    with pytest.raises(ShapeMismatchError):
        load_tensors(tmp_path / "t.pnwt")


def test_name_mismatch_lists_names(tmp_path):
    state = Tiny().state_dict()
    state["extra.w"] = state.pop("a.weight")
    save_tensors(state, tmp_path / "t.pnwt")
    with pytest.raises(NameMismatchError) as e:
        load_weights(Tiny(), tmp_path / "t.pnwt")
    assert e.value.missing == ["a.weight"] and e.value.extra == ["extra.w"]


def test_bad_magic_version_truncation(tmp_path):
    save_tensors({"w": np.ones(3, np.float64)}, tmp_path / "t.pnwt")
    raw = (tmp_path / "t.pnwt").read_bytes()
    for data, err in ((b"XXXX" + raw[4:], WeightsFormatError),
                      (raw[:4] + struct.pack("<I", 9) + raw[8:], UnsupportedVersionError),
                      (raw[:-1], WeightsFormatError)):
        (tmp_path / "b.pnwt").write_bytes(data)
        with pytest.raises(err):
            load_tensors(tmp_path / "b.pnwt")


def test_float64_tensors_preserved(tmp_path):
    t = {"a": rng().standard_normal((2, 2)), "b": np.arange(3, dtype=np.float32)}
    save_tensors(t, tmp_path / "t.pnwt")
    back = load_tensors(tmp_path / "t.pnwt")
    assert back["a"].dtype == np.float64 and np.array_equal(back["a"], t["a"])
    assert back["b"].dtype == np.float32 and np.array_equal(back["b"], t["b"])
