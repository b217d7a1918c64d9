import numpy as np
import pytest

from scoutsim.errors import InvariantError, NumericError
from scoutsim.nets import (
    Mlp,
    ParamSet,
    init_optimizer,
    mlp_shapes,
    optimizer_step,
    read_params,
    write_params,
)


def test_paramset_layout():
    p = ParamSet(shapes=((2, 3), (2,)), values=np.arange(8.0))
    assert p.size == 8
    assert p.offset(0) == 0 and p.offset(1) == 6
    np.testing.assert_array_equal(p.view(0), [[0, 1, 2], [3, 4, 5]])
    np.testing.assert_array_equal(p.view(1), [6, 7])
    # Views share memory with the flat vector.
    p.view(1)[0] = 99.0
    assert p.values[6] == 99.0


def test_paramset_rejects_bad_values():
    with pytest.raises(InvariantError):
        ParamSet(shapes=((2, 3),), values=np.zeros(5))
    with pytest.raises(NumericError):
        ParamSet(shapes=((2,),), values=np.array([1.0, np.nan]))


def test_paramset_checksum_tracks_values():
    p = ParamSet(shapes=((3,),), values=np.zeros(3))
    q = p.with_values(np.array([0.0, 0.0, 1e-300]))
    assert p.checksum() == p.copy().checksum()
    assert p.checksum() != q.checksum()


def test_mlp_shapes():
    assert mlp_shapes((2, 3, 1)) == ((3, 2), (3,), (1, 3), (1,))


def test_forward_zero_params():
    net = Mlp((3, 4, 2))
    p = net.init_params(0).with_values(np.zeros(net.n_params))
    y, _ = net.forward(p, np.array([1.0, -2.0, 0.5]))
    np.testing.assert_array_equal(y, np.zeros(2))


def test_forward_identity_single_layer():
    net = Mlp((3, 3))
    values = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    p = ParamSet(net.shapes, values)
    x = np.array([0.3, -0.7, 2.0])
    y, _ = net.forward(p, x)
    np.testing.assert_allclose(y, x)


def test_forward_deterministic_and_pure():
    net = Mlp((4, 5, 2))
    p = net.init_params(42)
    x = np.array([0.1, 0.2, -0.3, 0.4])
    before = p.values.copy()
    y1, _ = net.forward(p, x)
    y2, _ = net.forward(p, x)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(p.values, before)


def test_forward_input_errors():
    net = Mlp((3, 2))
    p = net.init_params(0)
    with pytest.raises(InvariantError):
        net.forward(p, np.zeros(4))
    with pytest.raises(NumericError):
        net.forward(p, np.array([1.0, np.inf, 0.0]))


def test_backward_zero_grad_output():
    net = Mlp((3, 4, 2))
    p = net.init_params(1)
    _, cache = net.forward(p, np.array([1.0, 2.0, 3.0]))
    grads, grad_in = net.backward(p, cache, np.zeros(2))
    np.testing.assert_array_equal(grads, np.zeros(net.n_params))
    np.testing.assert_array_equal(grad_in, np.zeros(3))


def test_backward_linear_case():
    # f(x) = W x with zero bias: dW = outer(g, x), dx = W^T g.
    net = Mlp((3, 1))
    w = np.array([[0.5, -1.5, 2.0]])
    p = ParamSet(net.shapes, np.concatenate([w.ravel(), [0.0]]))
    x = np.array([1.0, 2.0, -3.0])
    _, cache = net.forward(p, x)
    grads, grad_in = net.backward(p, cache, np.ones(1))
    np.testing.assert_allclose(grads[:3], x)
    assert grads[3] == 1.0
    np.testing.assert_allclose(grad_in, w[0])


def test_backward_matches_finite_differences():
    h = 1e-5
    for seed in range(10):
        rng = np.random.default_rng(seed)
        net = Mlp((4, 6, 3))
        p = net.init_params(seed)
        x = rng.standard_normal(4)
        g = rng.standard_normal(3)
        _, cache = net.forward(p, x)
        grads, grad_in = net.backward(p, cache, g)
        idx = rng.choice(net.n_params, size=20, replace=False)
        for i in idx:
            vp, vm = p.values.copy(), p.values.copy()
            vp[i] += h
            vm[i] -= h
            yp, _ = net.forward(p.with_values(vp), x)
            ym, _ = net.forward(p.with_values(vm), x)
            fd = (np.dot(g, yp) - np.dot(g, ym)) / (2 * h)
            assert abs(fd - grads[i]) <= 1e-4 * max(1.0, abs(fd))
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            yp, _ = net.forward(p, xp)
            ym, _ = net.forward(p, xm)
            fd = (np.dot(g, yp) - np.dot(g, ym)) / (2 * h)
            assert abs(fd - grad_in[i]) <= 1e-4 * max(1.0, abs(fd))


def test_optimizer_zero_gradient():
    net = Mlp((2, 2))
    p = net.init_params(0)
    st = init_optimizer(p, lr=0.1)
    p2, st2 = optimizer_step(p, np.zeros(p.size), st)
    np.testing.assert_array_equal(p2.values, p.values)
    assert st2.step == 1 and st.step == 0


def test_optimizer_first_step_is_signed_lr():
    # At t=1 bias correction makes m_hat=g, v_hat=g^2, so the update is
    # -lr * g/(|g| + eps) = -lr * sign(g) up to eps.
    p = ParamSet(shapes=((4,),), values=np.array([1.0, -1.0, 2.0, 0.5]))
    g = np.array([2.0, -3.0, 0.25, 1.0])
    st = init_optimizer(p, lr=0.01)
    p2, _ = optimizer_step(p, g, st)
    np.testing.assert_allclose(p2.values, p.values - 0.01 * np.sign(g), atol=1e-8)


def test_optimizer_deterministic_and_functional():
    p = ParamSet(shapes=((3,),), values=np.array([1.0, 2.0, 3.0]))
    g = np.array([0.1, -0.2, 0.3])
    st = init_optimizer(p, lr=0.05)
    before_m = st.m.copy()
    a, sa = optimizer_step(p, g, st)
    b, sb = optimizer_step(p, g, st)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(sa.m, sb.m)
    np.testing.assert_array_equal(st.m, before_m)
    np.testing.assert_array_equal(p.values, [1.0, 2.0, 3.0])


def test_optimizer_rejects_bad_gradient():
    p = ParamSet(shapes=((2,),), values=np.array([1.0, 2.0]))
    st = init_optimizer(p, lr=0.1)
    with pytest.raises(NumericError):
        optimizer_step(p, np.array([np.nan, 0.0]), st)
    np.testing.assert_array_equal(p.values, [1.0, 2.0])
    with pytest.raises(InvariantError):
        optimizer_step(p, np.zeros(3), st)


def test_params_round_trip(tmp_path):
    net = Mlp((5, 7, 3))
    p = net.init_params(9, extra_shapes=((4, 2),))
    path = tmp_path / "ckpt.txt"
    write_params(p, path, step=17)
    back, step = read_params(path)
    assert step == 17
    assert back.seed == 9
    assert back.shapes == p.shapes
    np.testing.assert_array_equal(back.values, p.values)
    path2 = tmp_path / "ckpt2.txt"
    write_params(back, path2, step=17)
    assert path.read_bytes() == path2.read_bytes()


def test_init_params_bounds_and_determinism():
    net = Mlp((6, 8, 2))
    a = net.init_params(5)
    b = net.init_params(5)
    np.testing.assert_array_equal(a.values, b.values)
    for i, shape in enumerate(a.shapes):
        fan_in = shape[-1] if len(shape) > 1 else 1
        bound = 1.0 / np.sqrt(fan_in)
        assert np.all(np.abs(a.view(i)) <= bound)
