import numpy as np
import pytest
from scipy import signal

from fotskit.errors import DimensionError, NumericError, TrainingAbort
from fotskit.gradsuite import CHECKS
from fotskit.nn import functional as F
from fotskit.nn.gradcheck import grad_check, rel_error
from fotskit.nn.layers import BiLSTM, Conv2d, Linear, Module
from fotskit.nn.lstm import bilstm
from fotskit.nn.optim import SGD, Adam, sgd_step


# --- conv2d -------------------------------------------------------------------

def test_conv_ones_center_is_nine():
    out, _ = F.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), padding=1)
    assert out[0, 0, 1, 1] == 9.0


def test_conv_valid_shape():
    out, _ = F.conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 3, 3)))
    assert out.shape == (1, 1, 2, 2)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_scipy_correlate(rng, stride, pad):
    x = rng.standard_normal((2, 3, 9, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = F.conv2d(x, w, b, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    for n in range(2):
        for o in range(4):
            ref = sum(signal.correlate2d(xp[n, c], w[o, c], mode="valid") for c in range(3)) + b[o]
            np.testing.assert_allclose(out[n, o], ref[::stride, ::stride], rtol=1e-10, atol=1e-10)


def test_conv_channel_mismatch_names_axis():
    with pytest.raises(DimensionError, match="channel"):
        F.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))


def test_conv_gradient_2x3x8x8(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((2, 3, 3, 3))
    g = rng.standard_normal((2, 2, 8, 8))

    def closure(x):
        out, cache = F.conv2d(x, w, None, 1, 1)
        return float((out * g).sum()), [F.conv2d_backward(g, cache)[0]]
    assert grad_check(closure, [x]).max_rel_error < 1e-4


def test_conv_does_not_mutate_inputs(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    x0, w0 = x.copy(), w.copy()
    F.conv2d(x, w, None, 2, 1)
    assert np.array_equal(x, x0) and np.array_equal(w, w0)


# --- pooling / upsampling -------------------------------------------------------

def test_height_pool_column_max():
    x = np.array([[1, 2, 3], [4, 5, 6]], dtype=float).reshape(1, 1, 2, 3)
    out, _ = F.height_max_pool(x)
    assert out.tolist() == [[[[4, 5, 6]]]]


def test_height_pool_shape_and_odd_height():
    assert F.height_max_pool(np.zeros((1, 1, 8, 20)))[0].shape == (1, 1, 4, 20)
    with pytest.raises(DimensionError):
        F.height_max_pool(np.zeros((1, 1, 3, 2)))


def test_height_pool_gradient_only_at_max(rng):
    x = rng.permutation(24).reshape(1, 2, 4, 3).astype(float)
    out, cache = F.height_max_pool(x)
    dx = F.height_max_pool_backward(np.ones_like(out), cache)
    is_max = x == np.repeat(out, 2, axis=2)
    assert np.array_equal(dx != 0, is_max)


def test_upsample_constant_and_monotone():
    out, _ = F.bilinear_upsample(np.full((1, 2, 3, 3), 2.5), 3)
    assert out.shape == (1, 2, 9, 9) and np.allclose(out, 2.5)
    ramp, _ = F.bilinear_upsample(np.array([0.0, 1.0]).reshape(1, 1, 1, 2), 2)
    assert ramp.shape == (1, 1, 2, 4) and np.all(np.diff(ramp[0, 0, 0]) >= 0)
    with pytest.raises(ValueError):
        F.bilinear_upsample(np.zeros((1, 1, 2, 2)), 0)


def test_upsample_matches_half_pixel_interpolation():
    # align_corners=False: output sample j sits at (j + 0.5) / 2 - 0.5 in the input
    x = np.array([0.0, 4.0, 8.0]).reshape(1, 1, 1, 3)
    out, _ = F.bilinear_upsample(x, 2)
    src = np.clip((np.arange(6) + 0.5) / 2 - 0.5, 0, 2)
    assert np.allclose(out[0, 0, 0], np.interp(src, [0, 1, 2], [0, 4, 8]))


def test_conv_plus_upsample_doubles_size(rng):
    x = rng.standard_normal((1, 4, 5, 7))
    y, _ = F.conv2d(x, rng.standard_normal((2, 4, 1, 1)))
    assert F.bilinear_upsample(y, 2)[0].shape[2:] == (10, 14)


# --- normalisation, activations ------------------------------------------------

def test_batch_norm_train_statistics(rng):
    x = rng.standard_normal((4, 3, 5, 6)) * 3 + 2
    out, rm, rv, _ = F.batch_norm(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3), True, eps=0.0)
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-6)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))


def test_batch_norm_eval_uses_running_stats(rng):
    x = rng.standard_normal((2, 2, 3, 3))
    out, rm, rv, _ = F.batch_norm(x, np.ones(2), np.zeros(2), np.array([1.0, -1.0]), np.array([4.0, 1.0]),
                                  False, eps=0.0)
    assert np.allclose(out[:, 0], (x[:, 0] - 1) / 2) and np.allclose(out[:, 1], x[:, 1] + 1)
    assert np.array_equal(rm, [1.0, -1.0])


def test_relu_values():
    out, _ = F.relu(np.array([-1.0, 2.0]))
    assert out.tolist() == [0.0, 2.0]


def test_log_softmax_normalised(rng):
    out, _ = F.log_softmax(rng.standard_normal((5, 7)) * 10)
    assert np.allclose(np.exp(out).sum(axis=1), 1, atol=1e-9)


def test_dropout_identity_in_eval_and_seeded(rng):
    x = rng.standard_normal((4, 4))
    assert np.array_equal(F.dropout(x, 0.5, None, train=False)[0], x)
    a = F.dropout(x, 0.5, np.random.default_rng(3))[0]
    b = F.dropout(x, 0.5, np.random.default_rng(3))[0]
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        F.dropout(x, 0.5, None, train=True)


# --- LSTM ------------------------------------------------------------------------

def _zero_params(c, h):
    return {k: np.zeros(s) for k, s in (("fw_w_ih", (4 * h, c)), ("fw_w_hh", (4 * h, h)), ("fw_b", (4 * h,)),
                                        ("bw_w_ih", (4 * h, c)), ("bw_w_hh", (4 * h, h)), ("bw_b", (4 * h,)))}


def test_bilstm_zero_weights_give_zero():
    out, _ = bilstm(np.ones((1, 2, 3)), _zero_params(3, 4))
    assert out.shape == (1, 2, 4) and np.all(out == 0)


def test_bilstm_direction_swap_symmetry(rng):
    c, h = 3, 5
    p = {k: rng.standard_normal(v.shape) * 0.5 for k, v in _zero_params(c, h).items()}
    swapped = {("bw" + k[2:] if k.startswith("fw") else "fw" + k[2:]): v for k, v in p.items()}
    x = rng.standard_normal((6, 2, c))
    a, _ = bilstm(x, p)
    b, _ = bilstm(x[::-1].copy(), swapped)
    assert np.allclose(a, b[::-1], atol=1e-12)


def test_bilstm_matches_naive_reference(rng):
    c, h, t = 3, 4, 5
    p = {k: rng.standard_normal(v.shape) * 0.5 for k, v in _zero_params(c, h).items()}
    x = rng.standard_normal((t, 1, c))
    sig = lambda z: 1 / (1 + np.exp(-z))

    def run(prefix, seq):
        hs, cs, outs = np.zeros(h), np.zeros(h), []
        for xt in seq:
            a = p[prefix + "w_ih"] @ xt + p[prefix + "w_hh"] @ hs + p[prefix + "b"]
            i, f, g, o = sig(a[:h]), sig(a[h:2 * h]), np.tanh(a[2 * h:3 * h]), sig(a[3 * h:])
            cs = f * cs + i * g
            hs = o * np.tanh(cs)
            outs.append(hs)
        return np.array(outs)
    ref = run("fw_", x[:, 0]) + run("bw_", x[::-1, 0])[::-1]
    out, _ = bilstm(x, p)
    assert np.allclose(out[:, 0], ref, atol=1e-12)


def test_bilstm_masked_item_equals_unpadded(rng):
    c, h = 3, 4
    p = {k: rng.standard_normal(v.shape) * 0.5 for k, v in _zero_params(c, h).items()}
    x = rng.standard_normal((6, 2, c))
    mask = np.ones((6, 2))
    mask[4:, 1] = 0
    out, _ = bilstm(x, p, mask)
    alone, _ = bilstm(x[:4, 1:2], p)
    assert np.allclose(out[:4, 1], alone[:, 0], atol=1e-12)


def test_bilstm_parameter_gradients(rng):
    lstm = BiLSTM(rng, 8, hidden=5).astype(np.float64)
    x = rng.standard_normal((4, 2, 8))
    g = rng.standard_normal((4, 2, 5))
    names = list(lstm.KEYS)

    def closure(*ps):
        for k, v in zip(names, ps):
            lstm._params[k].data = v
        lstm.zero_grad()
        out = lstm.forward(x)
        lstm.backward(g)
        return float((out * g).sum()), [lstm._params[k].grad.copy() for k in names]
    init = [lstm._params[k].data.copy() for k in names]
    assert grad_check(closure, init).max_rel_error < 1e-3


def test_bilstm_empty_sequence_rejected():
    with pytest.raises(ValueError):
        bilstm(np.zeros((0, 1, 3)), _zero_params(3, 2))


# --- gradient checker -------------------------------------------------------------

def test_grad_check_linear_layer(rng):
    x = rng.standard_normal((4, 8))
    w = rng.standard_normal((3, 8))

    def closure(x, w):
        out, cache = F.linear(x, w)
        dx, dw, _ = F.linear_backward(np.ones_like(out), cache)
        return float(out.sum()), [dx, dw]
    assert grad_check(closure, [x, w]).max_rel_error < 1e-6


def test_grad_check_constant_function():
    rep = grad_check(lambda x: (3.0, [np.zeros_like(x)]), [np.ones(4)])
    assert rep.max_rel_error == 0.0


def test_grad_check_conv_relu_sum_avoiding_kinks(rng):
    w = rng.standard_normal((2, 2, 3, 3))
    while True:
        x = rng.standard_normal((1, 2, 5, 5))
        pre, _ = F.conv2d(x, w, None, 1, 1)
        if np.abs(pre).min() > 1e-3:
            break

    def closure(x):
        y, cc = F.conv2d(x, w, None, 1, 1)
        r, rc = F.relu(y)
        dy = F.relu_backward(np.ones_like(r), rc)
        return float(r.sum()), [F.conv2d_backward(dy, cc)[0]]
    assert grad_check(closure, [x]).max_rel_error < 1e-4


def test_grad_check_reports_nonfinite():
    with pytest.raises(NumericError, match="myop"):
        grad_check(lambda x: (float("nan"), [x]), [np.ones(2)], name="myop")


def test_rel_error_floor():
    assert rel_error(1e-12, 0.0).item() == pytest.approx(1e-6)


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_every_backward_matches_finite_differences(name):
    rng = np.random.default_rng(7)
    for _ in range(3):
        assert CHECKS[name](rng).max_rel_error < 1e-4


# --- optimisers ---------------------------------------------------------------------

def test_sgd_step_examples():
    p, v = sgd_step(np.array(1.0), np.array(0.5), np.array(0.0), lr=1.0, momentum=0.0)
    assert p == 0.5
    p, v = sgd_step(np.array(1.0), np.array(0.0), np.array(0.0), lr=0.1)
    assert p == 1.0


def test_sgd_two_momentum_steps_by_hand():
    p, v = np.array(1.0), np.array(0.0)
    p, v = sgd_step(p, np.array(1.0), v, lr=0.1, momentum=0.9)   # v=1, p=0.9
    p, v = sgd_step(p, np.array(2.0), v, lr=0.1, momentum=0.9)   # v=2.9, p=0.61
    assert v == pytest.approx(2.9) and p == pytest.approx(0.61)
    with pytest.raises(ValueError):
        sgd_step(p, v, v, lr=0.0)


def test_optimizer_aborts_on_nonfinite_gradient(rng):
    lin = Linear(rng, 3, 2)
    lin.weight.grad[0, 0] = np.inf
    for opt in (SGD(lin.parameters(), lr=0.1), Adam(lin.parameters())):
        with pytest.raises(TrainingAbort, match="weight"):
            opt.step()


# --- modules -------------------------------------------------------------------------

def test_module_state_dict_round_trip(rng):
    class Net(Module):
        def __init__(self):
            super().__init__()
            self.a = self.add_child("a", Conv2d(rng, 2, 3))
            self.b = self.add_child("b", Linear(rng, 3, 4))
    n1, n2 = Net(), Net()
    n2.load_state_dict(n1.state_dict())
    for (k1, v1), (k2, v2) in zip(n1.state_dict().items(), n2.state_dict().items()):
        assert k1 == k2 and np.array_equal(v1, v2)
    assert len(set(n1.state_dict())) == len(n1.state_dict())
    with pytest.raises(KeyError):
        n2.load_state_dict({"nope": np.zeros(1)})
