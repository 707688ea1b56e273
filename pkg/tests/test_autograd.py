import numpy as np
import pytest

from tqsel.autograd import (
    Adam, Linear, Module, Parameter, Tensor, grad_check, load_checkpoint, load_tensors, no_grad, ops,
    save_checkpoint, save_tensors,
)
from tqsel.autograd.ops import ShapeMismatch


def _t(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def test_softmax_uniform():
    out = ops.softmax(_t(np.full((2, 7), 3.3), grad=False), axis=-1)
    np.testing.assert_allclose(out.data, 1 / 7, atol=1e-15)


def test_single_key_attention_returns_value():
    rng = np.random.default_rng(0)
    v = _t(rng.standard_normal((2, 1, 5)), grad=False)
    k = _t(rng.standard_normal((2, 1, 4)), grad=False)
    q = _t(rng.standard_normal((2, 6, 4)), grad=False)
    out = ops.scaled_dot_product_attention(q, k, v)
    np.testing.assert_allclose(out.data, np.repeat(v.data, 6, axis=1), atol=1e-14)


def test_identity_conv():
    x = _t(np.random.default_rng(1).standard_normal((2, 3, 4, 5)), grad=False)
    w = np.zeros((3, 3, 1, 1))
    w[np.arange(3), np.arange(3)] = 1.0
    np.testing.assert_array_equal(ops.conv2d(x, _t(w, grad=False)).data, x.data)


def test_conv_matches_scipy_correlate():
    from scipy.signal import correlate

    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 6, 7))
    w = rng.standard_normal((1, 2, 3, 3))
    out = ops.conv2d(_t(x, False), _t(w, False), padding=1).data
    ref = sum(correlate(x[0, c], w[0, c], mode="same") for c in range(2))
    np.testing.assert_allclose(out[0, 0], ref, atol=1e-12)


def test_sum_and_quadratic_grads():
    x = _t(np.random.default_rng(3).standard_normal((3, 4)))
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    x.grad = None
    ops.sum(ops.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data, atol=1e-12)


class _ThreeLayer(Module):
    def __init__(self, rng):
        self.a = Linear(5, 8, rng, dtype=np.float64)
        self.b = Linear(8, 6, rng, dtype=np.float64)
        self.c = Linear(6, 3, rng, dtype=np.float64)

    def forward(self, x):
        return self.c(ops.relu(self.b(ops.layer_norm(
            self.a(x), Tensor(np.ones(8)), Tensor(np.zeros(8)), 1e-5))))


def test_random_net_matches_finite_differences():
    rng = np.random.default_rng(4)
    net = _ThreeLayer(rng)
    x = _t(rng.standard_normal((4, 5)))
    r = Tensor(rng.standard_normal((4, 3)))
    rep = grad_check(lambda *a: ops.sum(ops.mul(net(x), r)), net.parameters() + [x], h=1e-5, tol=1e-4)
    assert rep.ok, str(rep)


def test_grad_check_detects_wrong_gradient():
    def bad_square(a):
        from tqsel.autograd.tensor import make_result
        return make_result(a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    x = _t([1.0, 2.0, -0.5])
    assert not grad_check(lambda a: ops.sum(bad_square(a)), [x]).ok


def test_shape_mismatch_errors():
    with pytest.raises(ShapeMismatch):
        ops.add(_t(np.zeros((2, 3))), _t(np.zeros((3, 2))))
    with pytest.raises(ShapeMismatch):
        ops.matmul(_t(np.zeros((2, 3))), _t(np.zeros((2, 3))))
    with pytest.raises(ShapeMismatch):
        ops.mul_broadcast(_t(np.zeros((2, 3))), _t(np.zeros((4,))))


def test_no_grad_builds_no_graph():
    x = _t([1.0, 2.0])
    with no_grad():
        y = ops.mul(x, x)
    assert not y.requires_grad


def test_adam_zero_grad_keeps_params():
    p = Parameter(np.array([1.0, -2.0]), dtype=np.float64)
    opt = Adam([("p", p)], lr=0.1)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.t == 1


def test_adam_quadratic_converges():
    # run the recurrence on (x - 3)^2 from x = 0
    x = Parameter(np.array([0.0]), dtype=np.float64)
    opt = Adam([("x", x)], lr=0.1)
    for step in range(500):
        loss = ops.sum(ops.mul(ops.sub(x, Tensor(np.array([3.0]))), ops.sub(x, Tensor(np.array([3.0])))))
        loss.backward()
        opt.step()
        if abs(x.data[0] - 3.0) < 1e-3:
            break
    assert abs(x.data[0] - 3.0) < 1e-3


def test_adam_identical_state_identical_updates():
    a = Parameter(np.array([0.5, 0.5]), dtype=np.float64)
    b = Parameter(np.array([0.5, 0.5]), dtype=np.float64)
    opt = Adam([("a", a), ("b", b)], lr=0.01)
    for _ in range(5):
        a.grad = np.array([0.3, -1.0])
        b.grad = np.array([0.3, -1.0])
        opt.step()
    np.testing.assert_array_equal(a.data, b.data)


def test_adam_rejects_nonfinite_grad():
    p = Parameter(np.zeros(3), dtype=np.float64)
    p.grad = np.array([0.0, np.nan, 1.0])
    with pytest.raises(FloatingPointError, match="'w'"):
        Adam([("w", p)]).step()


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    net = Linear(4, 3, rng)
    opt = Adam(list(net.named_parameters()), lr=1e-3)
    net.weight.grad = np.ones_like(net.weight.data)
    net.bias.grad = np.ones_like(net.bias.data)
    opt.step()
    save_checkpoint(tmp_path / "c.tqck", net, opt, {"epoch": 3})
    other = Linear(4, 3, np.random.default_rng(9))
    opt2 = Adam(list(other.named_parameters()))
    meta = load_checkpoint(tmp_path / "c.tqck", other, opt2)
    assert int(meta["epoch"]) == 3 and opt2.t == 1
    np.testing.assert_array_equal(other.weight.data, net.weight.data)

    save_tensors(tmp_path / "t.tqck", {"x": np.arange(6.0).reshape(2, 3)})
    np.testing.assert_array_equal(load_tensors(tmp_path / "t.tqck")["x"], np.arange(6.0).reshape(2, 3))
    (tmp_path / "junk.tqck").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        load_tensors(tmp_path / "junk.tqck")


def test_full_suite_passes():
    from tqsel.gradsuite import run_suite

    results = run_suite()
    assert len(results) >= 20
    failed = [f"{name}: {rep}" for name, rep in results if not rep.ok]
    assert not failed, "\n".join(failed)
