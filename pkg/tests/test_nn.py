import math
import struct

import numpy as np
import pytest

from psforensics.nn import (SGD, ConstrainedConv2d, Conv2d, GlobalAvgPool, Linear, NonFiniteError, Parameter,
                            SeparableConv2d, Sequential, Tensor, TrainConfig, bayar_train_config,
                            clip_gradients, constrained_projection, gradcheck, lr_schedule, sgd_step)
from psforensics.nn import functional as F
from psforensics.nn.checkpoint import (MAGIC, CheckpointError, config_digest, load_checkpoint,
                                       save_checkpoint)
from psforensics.nn.layers import DegenerateFilterError, constraint_violation

TOL = 1e-4


def t(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def naive_conv(x, w, stride=1):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for b in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    for ic in range(c):
                        for p in range(kh):
                            for q in range(kw):
                                out[b, oc, i, j] += x[b, ic, i * stride + p, j * stride + q] * w[oc, ic, p, q]
    return out


def scalar(out, rng):
    """Random projection to a scalar so every output entry matters."""
    return F.weighted_sum(out, rng.standard_normal(out.shape))


# ------------------------------------------------------------------ forward oracles

def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 1, 5, 5))
    out = F.conv2d(t(x), t(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.values, x)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_nested_loops(rng, stride):
    x = rng.standard_normal((1, 1, 6, 6))
    w = rng.standard_normal((1, 1, 3, 3))
    assert np.allclose(F.conv2d(t(x), t(w), stride=stride).values, naive_conv(x, w, stride), atol=1e-12)
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 2))
    assert np.allclose(F.conv2d(t(x), t(w), stride=stride).values, naive_conv(x, w, stride), atol=1e-12)


def test_conv_shape_errors(rng):
    with pytest.raises(ValueError):
        F.conv2d(t(rng.standard_normal((1, 2, 5, 5))), t(rng.standard_normal((1, 3, 3, 3))))
    with pytest.raises(ValueError):
        F.conv2d(t(rng.standard_normal((1, 1, 2, 2))), t(rng.standard_normal((1, 1, 3, 3))))


def test_separable_is_composition(rng):
    x = rng.standard_normal((2, 3, 6, 6))
    dw = rng.standard_normal((3, 3, 3))
    pw = rng.standard_normal((5, 3, 1, 1))
    out = F.separable_conv2d(t(x), t(dw), t(pw)).values
    depth = np.concatenate([naive_conv(x[:, c:c + 1], dw[c][None, None]) for c in range(3)], axis=1)
    assert np.allclose(out, naive_conv(depth, pw), atol=1e-12)
    ident = F.separable_conv2d(t(x), t(dw), t(np.eye(3).reshape(3, 3, 1, 1))).values
    assert np.allclose(ident, F.depthwise_conv2d(t(x), t(dw)).values, atol=1e-14)


def test_maxpool_examples():
    assert F.maxpool2d(t([[[[1, 2], [3, 4]]]]), 2).values.item() == 4
    const = F.maxpool2d(t(np.full((1, 2, 4, 4), 3.0)), 2).values
    assert const.shape == (1, 2, 2, 2) and np.all(const == 3)
    with pytest.raises(ValueError):
        F.maxpool2d(t(np.zeros((1, 1, 1, 1))), 2)


def test_gap_examples():
    assert F.global_avg_pool(t(np.full((1, 1, 3, 3), 2.5))).values.item() == 2.5
    assert F.global_avg_pool(t([[[[0, 0], [0, 4]]]])).values.item() == 1


def test_relu_and_loss():
    assert F.relu(t([-1.0, 2.0])).values.tolist() == [0, 2]
    for k in (2, 4, 6):
        loss = F.softmax_cross_entropy(t(np.zeros((3, k))), [0, 1, 1])
        assert loss.values.item() == pytest.approx(math.log(k), abs=1e-12)


def test_loss_batch_mean(rng):
    logits = rng.standard_normal((4, 3))
    y = np.array([0, 2, 1, 1])
    p = F.softmax(logits)
    expected = -np.mean(np.log(p[np.arange(4), y]))
    assert F.softmax_cross_entropy(t(logits), y).values.item() == pytest.approx(expected, rel=1e-12)


def test_softmax_rows_sum_to_one(rng):
    p = F.softmax(rng.standard_normal((5, 6)) * 50)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-12)


@pytest.mark.filterwarnings("ignore:overflow")
def test_nonfinite_rejected():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteError):
        F.linear(t([[1e300]]), t([[1e300]]))


# ------------------------------------------------------------------ gradchecks

def test_gradcheck_conv(rng):
    x, w, b = t(rng.standard_normal((2, 2, 6, 5))), t(rng.standard_normal((3, 2, 3, 3))), t(rng.standard_normal(3))
    for stride, pad in [(1, 0), (2, 0), (1, 1)]:
        proj = rng.standard_normal(F.conv2d(x, w, b, stride, pad).shape)
        err = gradcheck(lambda: F.weighted_sum(F.conv2d(x, w, b, stride, pad), proj), [x, w, b])
        assert err < TOL, (stride, pad, err)


def test_gradcheck_depthwise_separable(rng):
    x = t(rng.standard_normal((2, 3, 5, 5)))
    dw, pw, b = t(rng.standard_normal((3, 3, 3))), t(rng.standard_normal((4, 3, 1, 1))), t(rng.standard_normal(4))
    proj = rng.standard_normal((2, 4, 5, 5))
    assert gradcheck(lambda: F.weighted_sum(F.separable_conv2d(x, dw, pw, b, 1), proj), [x, dw, pw, b]) < TOL
    proj2 = rng.standard_normal((2, 3, 3, 3))
    assert gradcheck(lambda: F.weighted_sum(F.depthwise_conv2d(x, dw), proj2), [x, dw]) < TOL


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 2)])
def test_gradcheck_maxpool(rng, window, stride):
    # distinct, well-separated values so the argmax is stable under perturbation
    x = t(rng.permutation(2 * 2 * 7 * 7).reshape(2, 2, 7, 7) * 0.01)
    proj = rng.standard_normal(F.maxpool2d(x, window, stride).shape)
    assert gradcheck(lambda: F.weighted_sum(F.maxpool2d(x, window, stride), proj), [x]) < TOL


def test_gradcheck_small_ops(rng):
    x = t(rng.standard_normal((3, 4, 3, 3)))
    proj = rng.standard_normal((3, 4))
    assert gradcheck(lambda: F.weighted_sum(F.global_avg_pool(x), proj), [x]) < TOL
    # keep relu inputs away from the kink
    r = t(np.sign(rng.standard_normal(20)) * rng.uniform(0.1, 1, 20))
    pr = rng.standard_normal(20)
    assert gradcheck(lambda: F.weighted_sum(F.relu(r), pr), [r]) < TOL
    pf = rng.standard_normal((3, 36))
    assert gradcheck(lambda: F.weighted_sum(F.flatten(x), pf), [x]) < TOL


def test_gradcheck_linear(rng):
    x, w, b = t(rng.standard_normal((4, 5))), t(rng.standard_normal((3, 5))), t(rng.standard_normal(3))
    proj = rng.standard_normal((4, 3))
    assert gradcheck(lambda: F.weighted_sum(F.linear(x, w, b), proj), [x, w, b]) < 1e-6


def test_gradcheck_cross_entropy(rng):
    z = t(rng.standard_normal((5, 4)))
    y = [0, 3, 2, 2, 1]
    assert gradcheck(lambda: F.softmax_cross_entropy(z, y), [z]) < TOL


def test_gradcheck_negative_control(rng):
    x, w = t(rng.standard_normal((3, 4))), t(rng.standard_normal((2, 4)))
    proj = rng.standard_normal((3, 2))
    fn = lambda: F.weighted_sum(F.linear(x, w), proj)
    fn().backward()
    broken = [x.grad, w.grad * 1.5]
    assert gradcheck(fn, [x, w], analytic=broken) > 1e-2


def test_gradcheck_layer_stack(rng):
    net = Sequential(ConstrainedConv2d(2, 3, 5, rng=rng, dtype=np.float64),
                     Conv2d(3, 4, 3, rng=rng, dtype=np.float64),
                     SeparableConv2d(4, 5, 3, padding=1, rng=rng, dtype=np.float64),
                     GlobalAvgPool(), Linear(5, 3, rng=rng, dtype=np.float64))
    x = Tensor(rng.standard_normal((2, 2, 9, 9)))
    y = [0, 2]
    params = net.parameters()
    assert gradcheck(lambda: F.softmax_cross_entropy(net(x), y), params) < TOL


# ------------------------------------------------------------------ constrained layer

def test_projection_all_ones():
    w = np.ones((1, 1, 5, 5))
    constrained_projection(w)
    assert w[0, 0, 2, 2] == -1
    others = np.delete(w.ravel(), 12)
    assert np.allclose(others, 1 / 24, atol=1e-15)


def test_projection_idempotent(rng):
    w = np.abs(rng.standard_normal((4, 3, 5, 5)))
    constrained_projection(w)
    before = w.copy()
    constrained_projection(w)
    assert np.abs(w - before).max() < 1e-12
    assert constraint_violation(w) < 1e-12


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_projection_random(rng, dtype):
    w = rng.standard_normal((8, 3, 5, 5)).astype(dtype)
    w += np.sign(w.sum(axis=(2, 3), keepdims=True)) * 0.5  # keep sums away from zero
    constrained_projection(w)
    assert np.all(w[:, :, 2, 2] == -1)
    assert constraint_violation(w) <= 1e-6


def test_projection_degenerate():
    w = np.zeros((1, 1, 5, 5))
    w[0, 0, 0, 0], w[0, 0, 0, 1] = 1.0, -1.0
    with pytest.raises(DegenerateFilterError):
        constrained_projection(w)


def test_constrained_layer_reinitialises_degenerate(rng):
    layer = ConstrainedConv2d(1, 2, rng=rng)
    layer.weight.values[0, 0] = 0.0
    layer.project()
    assert layer.satisfies_constraint()


def test_constrained_layer_init():
    layer = ConstrainedConv2d(3, 4, rng=np.random.default_rng(0))
    assert layer.satisfies_constraint(1e-6)
    assert layer.centre_mask()[:, :, 2, 2].sum() == 0


# ------------------------------------------------------------------ optimiser

def test_sgd_zero_everything():
    p = Parameter(np.array([1.5, -2.0]))
    cfg = TrainConfig(momentum=0.9, weight_decay=0.0)
    v = [np.zeros(2)]
    sgd_step([p], [np.zeros(2)], cfg, 0.1, v)
    assert p.values.tolist() == [1.5, -2.0]


def test_sgd_three_step_recurrence():
    m, wd, lr = 0.9, 0.01, 0.1
    cfg = TrainConfig(momentum=m, weight_decay=wd)
    p = Parameter(np.array([2.0]))
    v = [np.zeros(1)]
    grads = [0.5, -0.25, 1.0]
    # hand recurrence: v1 = g1 + wd*p0 ; p1 = p0 - lr*v1 ; etc.
    p0 = 2.0
    v1 = 0.5 + wd * p0
    p1 = p0 - lr * v1
    v2 = m * v1 - 0.25 + wd * p1
    p2 = p1 - lr * v2
    v3 = m * v2 + 1.0 + wd * p2
    p3 = p2 - lr * v3
    for g in grads:
        sgd_step([p], [np.array([g])], cfg, lr, v)
    assert p.values[0] == pytest.approx(p3, abs=1e-15)
    assert v[0][0] == pytest.approx(v3, abs=1e-15)


def test_sgd_keeps_constraint(rng):
    net = Sequential(ConstrainedConv2d(1, 3, rng=rng), Conv2d(3, 2, 3, rng=rng))
    cfg = TrainConfig(lr0=0.1, momentum=0.9, weight_decay=5e-4)
    opt = SGD(net, cfg)
    for p in net.parameters():
        p.grad = rng.standard_normal(p.shape).astype(p.dtype)
    opt.step(0.1)
    assert net.layers[0].satisfies_constraint(1e-6)


def test_weight_decay_skips_centre(rng):
    layer = ConstrainedConv2d(1, 1, rng=rng)
    opt = SGD(Sequential(layer), TrainConfig(momentum=0.0, weight_decay=0.5))
    before = layer.weight.values.copy()
    for p in opt.params:
        p.grad = np.zeros_like(p.values)
    opt.step(0.1)
    # decay alone scales the surround uniformly, projection then restores it exactly
    assert np.allclose(layer.weight.values, before, atol=1e-6)
    assert opt.velocity[0][0, 0, 2, 2] == 0


def test_clip_gradients():
    g = [np.array([3.0]), np.array([4.0]), None]
    clipped, norm = clip_gradients(g, 1.0)
    assert norm == 5.0
    assert np.allclose(clipped[0], 0.6) and np.allclose(clipped[1], 0.8) and clipped[2] is None
    same, _ = clip_gradients(g, 10.0)
    assert same[0] is g[0]


def test_step_schedule():
    cfg = bayar_train_config()
    assert [lr_schedule(cfg, e) for e in (0, 6, 12)] == pytest.approx([0.01, 0.007, 0.0049], abs=1e-15)
    assert lr_schedule(cfg, 5) == 0.01


def test_polynomial_schedule():
    cfg = TrainConfig(schedule="polynomial", lr0=0.01, max_iter=100)
    assert cfg.power == 0.9
    assert lr_schedule(cfg, 0) == 0.01
    assert lr_schedule(cfg, 100) == 0.0
    assert lr_schedule(cfg, 50) == pytest.approx(0.01 * 0.5 ** 0.9)
    with pytest.raises(ValueError):
        lr_schedule(TrainConfig(), 3)


@pytest.mark.parametrize("kw", [dict(lr0=0), dict(momentum=1.0), dict(batch_size=0),
                                dict(schedule="cosine"), dict(clip_norm=-1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ------------------------------------------------------------------ checkpoint

def test_checkpoint_roundtrip(tmp_path, rng):
    state = {"a.weight": rng.standard_normal((3, 2, 5, 5)).astype(np.float32),
             "b": rng.standard_normal(7).astype(np.float32), "scalar": np.float32(2.5).reshape(())}
    cfg = {"model": {"family": "proposed"}, "labels": ["x", "y"]}
    path = save_checkpoint(tmp_path / "c.ckpt", state, cfg)
    got_cfg, got = load_checkpoint(path, expected_cfg=cfg)
    assert got_cfg == cfg and list(got) == list(state)
    for k in state:
        assert got[k].tobytes() == state[k].tobytes()
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    assert struct.unpack("<I", raw[8:12])[0] == 1
    assert raw[12:44] == config_digest(cfg)


def test_checkpoint_errors(tmp_path):
    path = save_checkpoint(tmp_path / "c.ckpt", {"w": np.ones(4, np.float32)}, {"k": 1})
    raw = path.read_bytes()
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_cfg={"k": 2})
    (tmp_path / "t.ckpt").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "x.ckpt").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_module_state_roundtrip(rng):
    a = Sequential(ConstrainedConv2d(1, 2, rng=rng), Linear(3, 2, rng=rng))
    b = Sequential(ConstrainedConv2d(1, 2, rng=np.random.default_rng(9)), Linear(3, 2, rng=np.random.default_rng(9)))
    b.load_state_dict(a.state_dict())
    for (n1, p1), (n2, p2) in zip(a.named_parameters(), b.named_parameters()):
        assert n1 == n2 and p1.values.tobytes() == p2.values.tobytes()
    with pytest.raises(KeyError):
        b.load_state_dict({"nope": np.zeros(1)})


def test_tangent_project_keeps_surround_sum(rng):
    from psforensics.nn.optim import tangent_project

    layer = ConstrainedConv2d(2, 3, rng=rng, dtype=np.float64)
    g = tangent_project(rng.standard_normal(layer.weight.shape), layer.centre_mask())
    assert np.all(g[:, :, 2, 2] == 0)
    assert np.allclose(g.reshape(3, 2, -1).sum(axis=2), 0, atol=1e-12)
    # a step along it leaves the constraint intact before any re-projection
    w = layer.weight.values - 0.1 * g
    assert constraint_violation(w) < 1e-12
