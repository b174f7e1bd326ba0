import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twohand import autodiff as ad
from twohand.autodiff import (
    Adam, CompactCNN, Linear, StepSchedule, Tape, Tensor, assign_parameters, check_gradient,
    load_checkpoint, save_checkpoint,
)
from twohand.errors import ShapeMismatch


def conv_oracle(x, w, b, stride, pad):
    """Direct six-loop cross-correlation."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[oi]
                    for ci in range(c):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[ni, ci, i * stride + di, j * stride + dj] * w[oi, ci, di, dj]
                    out[ni, oi, i, j] = acc
    return out


def conv_oracle_grads(x, w, stride, pad, g):
    """Gradients of sum(g * conv(x, w)) from the loop definition."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for ni in range(n):
        for oi in range(o):
            for i in range(g.shape[2]):
                for j in range(g.shape[3]):
                    for ci in range(c):
                        for di in range(k):
                            for dj in range(k):
                                gxp[ni, ci, i * stride + di, j * stride + dj] += g[ni, oi, i, j] * w[oi, ci, di, dj]
                                gw[oi, ci, di, dj] += g[ni, oi, i, j] * xp[ni, ci, i * stride + di, j * stride + dj]
    return gxp[:, :, pad:pad + h, pad:pad + wd], gw


def test_trivial_ops():
    a = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(ad.matmul(np.eye(3), a).data, a)
    x = np.array([0.5, 2.0, 3.0])
    assert np.all(ad.relu(-x).data == 0)
    assert np.array_equal(ad.relu(x).data, x)


def test_shape_mismatch_message_has_both_shapes():
    with pytest.raises(ShapeMismatch) as err:
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)
    with pytest.raises(ShapeMismatch):
        ad.matmul(np.zeros((2, 3)), np.zeros((4, 2)))
    with pytest.raises(ShapeMismatch):
        ad.l1_loss(np.zeros(3), np.zeros(4))
    with pytest.raises(ShapeMismatch):
        ad.conv2d(np.zeros((1, 2, 5, 5)), np.zeros((1, 3, 3, 3)))


def test_conv_trivial_kernels():
    x = np.random.default_rng(1).normal(size=(1, 1, 6, 7))
    assert np.array_equal(ad.conv2d(x, np.ones((1, 1, 1, 1))).data, x)
    const = np.full((1, 1, 6, 6), 2.5)
    out = ad.conv2d(const, np.full((1, 1, 3, 3), 1 / 9), padding=1).data
    assert np.allclose(out[0, 0, 1:-1, 1:-1], 2.5, atol=1e-14)


@pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)])
def test_conv_vs_loop_oracle(stride, pad, k):
    rng = np.random.default_rng(stride * 10 + pad + k)
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    xt, wt = Tensor(x, requires_grad=True), Tensor(w, requires_grad=True)
    out = ad.conv2d(xt, wt, b, stride=stride, padding=pad)
    assert np.abs(out.data - conv_oracle(x, w, b, stride, pad)).max() < 1e-10
    g = rng.normal(size=out.shape)
    out.backward(g)
    gx, gw = conv_oracle_grads(x, w, stride, pad, g)
    assert np.abs(xt.grad - gx).max() < 1e-10
    assert np.abs(wt.grad - gw).max() < 1e-10


def test_l1_loss():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(5, 3))
    assert ad.l1_loss(a, a).item() == 0.0
    assert ad.l1_loss(a, a + np.where(rng.random(a.shape) < 0.5, 1.0, -1.0)).item() == pytest.approx(1.0, abs=1e-15)
    b = rng.normal(size=(5, 3))
    acc = 0.0
    for i in range(5):
        for j in range(3):
            acc += abs(a[i, j] - b[i, j])
    assert abs(ad.l1_loss(a, b).item() - acc / 15) < 1e-12
    t = Tensor(a.copy(), requires_grad=True)
    ad.l1_loss(t, a).backward()
    assert np.all(t.grad == 0)


def _random_graph(rng, depth):
    """Composed graph of ``depth`` random differentiable layers on a 3×4 input."""
    ops = []
    for _ in range(depth):
        kind = rng.integers(0, 6)
        w = rng.normal(size=(4, 4)) * 0.5
        ops.append((kind, w))

    def fn(t):
        x = t[0]
        for kind, w in ops:
            if kind == 0:
                x = ad.matmul(x, w)
            elif kind == 1:
                x = ad.tanh(x) * 2.0 + x
            elif kind == 2:
                x = ad.softmax(x, axis=-1) * x
            elif kind == 3:
                x = ad.exp(x * 0.3) - ad.sin(x)
            elif kind == 4:
                x = ad.concat([x[:, :2], ad.sqrt(x[:, 2:] ** 2 + 1.0)], axis=1)
            else:
                x = (x / (1.0 + ad.absolute(x) * 0.1)).reshape(4, 3).transpose().reshape(3, 4)
        return x
    return fn


@given(st.integers(0, 10_000), st.integers(5, 8))
def test_random_graph_gradients(seed, depth):
    rng = np.random.default_rng(seed)
    fn = _random_graph(rng, depth)
    ok, err = check_gradient(fn, [rng.normal(size=(3, 4))], rng=rng, h=1e-5, rtol=1e-4)
    assert ok, err


@given(st.integers(0, 10_000))
def test_broadcast_gradients(seed):
    rng = np.random.default_rng(seed)
    ok, err = check_gradient(lambda t: t[0] * t[1] + t[1] / (2.0 + t[0] ** 2),
                             [rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1))], rng=rng)
    assert ok, err


def test_tape_visits_each_node_once():
    rng = np.random.default_rng(3)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    y = x * x
    z = ad.matmul(y, y) + y          # y reused: diamond in the graph
    out = (z * x).sum()
    tape = Tape(out)
    tape.backward(np.ones(()))
    assert tape.visits == len(tape.nodes) == len({id(n) for n in tape.nodes})
    assert tape.nodes[-1] is out and tape.nodes[0] is x


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert ad.is_grad_enabled()


def test_determinism():
    def run():
        rng = np.random.default_rng(7)
        net = CompactCNN(3, (4, 4, 4), rng)
        x = rng.normal(size=(2, 3, 16, 16))
        out = net(x).sum()
        out.backward()
        return out.data.copy(), [p.grad.copy() for p in net.parameters().values()]
    a, ga = run()
    b, gb = run()
    assert a.tobytes() == b.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(ga, gb))


def test_compact_cnn_stride():
    net = CompactCNN(3, (4, 8, 16), np.random.default_rng(0))
    assert net(np.zeros((1, 3, 256, 256))).shape == (1, 16, 32, 32)


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.arange(4.0), requires_grad=True)
    opt = Adam({"p": p}, lr=1e-3)
    opt.step({"p": np.zeros(4)})
    assert np.array_equal(p.data, np.arange(4.0))


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3, -5e-2])
    p = Tensor(np.zeros(4), requires_grad=True)
    lr = 1e-3
    opt = Adam({"p": p}, lr=lr)
    opt.step({"p": g})
    # bias-corrected m = g, v = g², so the step is lr·g/(|g|+ε)
    expected = -lr * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expected, rtol=1e-12, atol=0)
    assert np.allclose(np.abs(p.data), lr, rtol=1e-4)
    assert opt.m["p"].shape == opt.v["p"].shape == p.shape


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(4)
    grads = rng.normal(size=(6, 3))
    p = Tensor(np.ones(3), requires_grad=True)
    opt = Adam({"p": p}, lr=0.01)
    ref, m, v = np.ones(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, 1):
        opt.step({"p": g})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, ref, rtol=1e-13, atol=1e-15)


def test_step_schedule():
    s = StepSchedule(base_lr=1e-4)
    assert [s.lr_at(e) for e in range(4)] == [1e-4] * 4
    assert s.lr_at(4) == pytest.approx(1e-5, rel=1e-12)
    assert s.lr_at(9) == pytest.approx(1e-5, rel=1e-12)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    net = Linear(4, 3, rng)
    params = net.parameters()
    path = tmp_path / "w.iwck"
    save_checkpoint(path, params, meta={"epoch": 3})
    blob = path.read_bytes()
    assert blob[:5] == b"IWCK1"
    arrays, meta = load_checkpoint(path)
    assert meta == {"epoch": 3}
    other = Linear(4, 3, np.random.default_rng(6))
    assign_parameters(other.parameters(), arrays)
    for a, b in zip(net.parameters().values(), other.parameters().values()):
        assert a.data.tobytes() == b.data.tobytes()
    save_checkpoint(tmp_path / "again.iwck", other.parameters(), meta={"epoch": 3})
    assert (tmp_path / "again.iwck").read_bytes() == blob


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.iwck"
    path.write_bytes(b"NOPE!" + b"\0" * 8)
    with pytest.raises(ValueError):
        load_checkpoint(path)
