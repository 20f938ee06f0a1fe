"""Randomised finite-difference checks of every hand-written backward pass.

Each check draws a small random float64 instance, builds a scalar loss
``sum(output * G)`` for a random ``G`` (or uses the op's own scalar loss),
and compares analytic and central-difference gradients.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import ctc, detection
from .nn import functional as F
from .nn.gradcheck import grad_check
from .nn.lstm import bilstm, bilstm_backward
from .roirotate import affine_params, batch_backward, batch_extract

TOLERANCE = 1e-4


@dataclass
class SuiteEntry:
    name: str
    instances: int
    max_rel_error: float
    seconds: float

    @property
    def ok(self):
        return self.max_rel_error <= TOLERANCE


def _check_conv(rng):
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    h, w = rng.integers(k + 1, 7, size=2)
    x = rng.standard_normal((n, c, h, w))
    wt = rng.standard_normal((o, c, k, k))
    b = rng.standard_normal(o)
    g = rng.standard_normal(F.conv2d(x, wt, b, stride, pad)[0].shape)

    def closure(x, wt, b):
        out, cache = F.conv2d(x, wt, b, stride, pad)
        return float((out * g).sum()), F.conv2d_backward(g, cache)
    return grad_check(closure, [x, wt, b], name="conv2d")


def _check_batch_norm(rng):
    n, c, h, w = 2, int(rng.integers(1, 4)), 3, int(rng.integers(2, 5))
    x = rng.standard_normal((n, c, h, w)) * 2 + 0.5
    gamma, beta = rng.standard_normal(c), rng.standard_normal(c)
    mask = None
    if rng.random() < 0.5:
        mask = (rng.random((n, 1, h, w)) < 0.7).astype(np.float64)
        mask[0, 0, 0, 0] = mask[1, 0, 0, 0] = 1.0
    g = rng.standard_normal(x.shape)
    zeros, ones = np.zeros(c), np.ones(c)

    def closure(x, gamma, beta):
        out, _, _, cache = F.batch_norm(x, gamma, beta, zeros, ones, True, mask=mask)
        return float((out * g).sum()), F.batch_norm_backward(g, cache)
    return grad_check(closure, [x, gamma, beta], name="batch_norm")


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _check_relu(rng):
    x = _away_from_zero(rng, (2, 3, 4))
    g = rng.standard_normal(x.shape)

    def closure(x):
        out, cache = F.relu(x)
        return float((out * g).sum()), [F.relu_backward(g, cache)]
    return grad_check(closure, [x], name="relu")


def _check_linear(rng):
    x = rng.standard_normal((int(rng.integers(1, 4)), 3, 5))
    wt = rng.standard_normal((4, 5))
    b = rng.standard_normal(4)
    g = rng.standard_normal(x.shape[:-1] + (4,))

    def closure(x, wt, b):
        out, cache = F.linear(x, wt, b)
        return float((out * g).sum()), F.linear_backward(g, cache)
    return grad_check(closure, [x, wt, b], name="linear")


def _check_log_softmax(rng):
    x = rng.standard_normal((3, 4, 6)) * 3
    g = rng.standard_normal(x.shape)

    def closure(x):
        out, cache = F.log_softmax(x, axis=-1)
        return float((out * g).sum()), [F.log_softmax_backward(g, cache)]
    return grad_check(closure, [x], name="log_softmax")


def _check_upsample(rng):
    x = rng.standard_normal((2, 2, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    factor = int(rng.integers(1, 4))
    g = rng.standard_normal(F.bilinear_upsample(x, factor)[0].shape)

    def closure(x):
        out, cache = F.bilinear_upsample(x, factor)
        return float((out * g).sum()), [F.bilinear_upsample_backward(g, cache)]
    return grad_check(closure, [x], name="bilinear_upsample")


def _check_height_pool(rng):
    shape = (2, 2, 2 * int(rng.integers(1, 4)), 3)
    # a permutation with unit gaps keeps every pair far from a tie
    x = rng.permutation(int(np.prod(shape))).reshape(shape).astype(np.float64) * 0.1
    g = rng.standard_normal((shape[0], shape[1], shape[2] // 2, shape[3]))

    def closure(x):
        out, cache = F.height_max_pool(x)
        return float((out * g).sum()), [F.height_max_pool_backward(g, cache)]
    return grad_check(closure, [x], name="height_max_pool")


def _check_dropout(rng):
    x = rng.standard_normal((3, 5))
    g = rng.standard_normal(x.shape)
    seed = int(rng.integers(1 << 31))

    def closure(x):
        out, cache = F.dropout(x, 0.3, np.random.default_rng(seed), True)
        return float((out * g).sum()), [F.dropout_backward(g, cache)]
    return grad_check(closure, [x], name="dropout")


def _check_bilstm(rng):
    t, n, c, hid = int(rng.integers(2, 5)), 2, 3, 3
    x = rng.standard_normal((t, n, c))
    keys = ("fw_w_ih", "fw_w_hh", "fw_b", "bw_w_ih", "bw_w_hh", "bw_b")
    shapes = ((4 * hid, c), (4 * hid, hid), (4 * hid,)) * 2
    params = [rng.standard_normal(s) * 0.5 for s in shapes]
    mask = np.ones((t, n))
    mask[int(rng.integers(1, t)):, 1] = 0.0
    g = rng.standard_normal((t, n, hid))

    def closure(x, *ps):
        out, cache = bilstm(x, dict(zip(keys, ps)), mask)
        dx, grads = bilstm_backward(g, cache)
        return float((out * g).sum()), [dx] + [grads[k] for k in keys]
    return grad_check(closure, [x] + params, name="bilstm")


def _random_gt(rng, h, w):
    """Ground-truth maps with a random label mask and random targets."""
    mask = rng.choice([detection.NEGATIVE, detection.POSITIVE, detection.NOT_CARE],
                      size=(1, h, w), p=[0.5, 0.35, 0.15]).astype(np.int8)
    score = (mask == detection.POSITIVE).astype(np.float64)
    geo = rng.uniform(1.0, 10.0, (4, h, w))
    angle = rng.uniform(-0.7, 0.7, (1, h, w))
    return detection.ScoreGeoMaps(score, geo, angle, mask)


def _selection(rng, gt, n):
    """OHEM-like selection with explicit counts, independent of the predictions."""
    flat = gt.mask.reshape(-1)
    pos = np.nonzero(flat == detection.POSITIVE)[0]
    neg = np.nonzero(flat == detection.NEGATIVE)[0]
    cls_idx = np.sort(np.concatenate([pos, rng.choice(neg, min(n, neg.size), replace=False)]))
    reg_idx = np.sort(rng.choice(pos, min(n, pos.size), replace=False)) if pos.size else pos
    return detection.OhemSelection(cls_idx, reg_idx)


def _check_cls_loss(rng):
    h, w = 4, 5
    gt = _random_gt(rng, h, w)
    sel = _selection(rng, gt, 6)
    p = rng.uniform(0.05, 0.95, (1, h, w))

    def closure(p):
        loss, grad = detection.classification_loss(p, gt, sel)
        return loss, [grad]
    return grad_check(closure, [p], name="classification_loss")


def _check_cls_logits(rng):
    h, w = 4, 5
    gt = _random_gt(rng, h, w)
    sel = _selection(rng, gt, 6)
    z = rng.standard_normal((1, h, w)) * 2

    def closure(z):
        loss, grad = detection.classification_loss_logits(z, gt, sel)
        return loss, [grad]
    return grad_check(closure, [z], name="classification_loss_logits")


def _check_reg_loss(rng):
    h, w = 4, 5
    gt = _random_gt(rng, h, w)
    sel = _selection(rng, gt, 8)
    geo = gt.geo * rng.choice([0.6, 1.5], size=gt.geo.shape) * rng.uniform(0.9, 1.1, gt.geo.shape)
    angle = rng.uniform(-1.0, 1.0, (1, h, w))

    def closure(geo, angle):
        loss, dgeo, dangle = detection.regression_loss(geo, angle, gt, sel, 10.0)
        return loss, [dgeo, dangle]
    return grad_check(closure, [geo, angle], name="regression_loss")


def _check_detection_path(rng):
    """Head conv -> (sigmoid score, 4 exp geo, linear angle) -> combined loss."""
    c, h, w = 3, 4, 4
    feats = rng.standard_normal((1, c, h, w))
    wt = rng.standard_normal((6, c, 1, 1)) * 0.3
    b = rng.standard_normal(6) * 0.3
    gt = _random_gt(rng, h, w)
    sel = _selection(rng, gt, 5)

    def closure(feats, wt, b):
        z, cache = F.conv2d(feats, wt, b)
        geo = 4.0 * np.exp(z[:, 1:5])
        lc, dl = detection.classification_loss_logits(z[:, 0:1], gt, sel)
        lr, dg, da = detection.regression_loss(geo[0], z[0, 5:6], gt, sel, 10.0)
        loss = detection.detection_loss(lc, lr, 1.0)
        dz = np.concatenate([dl, dg[None] * geo, da[None]], axis=1)
        return loss, F.conv2d_backward(dz, cache)
    return grad_check(closure, [feats, wt, b], name="detection_path")


def _check_roirotate(rng):
    c, hs, ws = 2, int(rng.integers(6, 11)), int(rng.integers(6, 11))
    u = rng.standard_normal((1, c, hs, ws))
    props = []
    for _ in range(int(rng.integers(1, 4))):
        x, y = rng.uniform(1, ws - 1), rng.uniform(1, hs - 1)
        t, b, l, r = rng.uniform(0.5, 3.0, 4)
        props.append(affine_params(x, y, t, b, l, r, rng.uniform(-np.pi / 2, np.pi / 2), h_t=8))
    batch = batch_extract(u, props)
    g = rng.standard_normal(batch.features.shape) * batch.mask[:, None, None, :]

    def closure(u):
        bt = batch_extract(u, props)
        return float((bt.features * g).sum()), [batch_backward(g, bt, u.shape)]
    return grad_check(closure, [u], name="roi_rotate")


def _check_ctc(rng):
    k = int(rng.integers(2, 6))
    blank = k - 1
    length = int(rng.integers(0, 4))
    label = list(rng.integers(0, blank, size=length)) if blank > 0 else []
    width = max(ctc.min_frames(label), 1) + int(rng.integers(0, 4))
    z = rng.standard_normal((width, k))
    lp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def closure(lp):
        loss, grad = ctc.ctc_loss_and_grad(lp, label, blank)
        return loss, [grad]
    return grad_check(closure, [lp], name="ctc")


CHECKS = {
    "conv2d": _check_conv,
    "batch_norm": _check_batch_norm,
    "relu": _check_relu,
    "linear": _check_linear,
    "log_softmax": _check_log_softmax,
    "bilinear_upsample": _check_upsample,
    "height_max_pool": _check_height_pool,
    "dropout": _check_dropout,
    "bilstm": _check_bilstm,
    "classification_loss": _check_cls_loss,
    "classification_loss_logits": _check_cls_logits,
    "regression_loss": _check_reg_loss,
    "detection_path": _check_detection_path,
    "roi_rotate": _check_roirotate,
    "ctc": _check_ctc,
}


def run_suite(instances=20, seed=0, names=None):
    """Run every check ``instances`` times; returns a list of :class:`SuiteEntry`."""
    root = np.random.SeedSequence(seed)
    selected = list(names or CHECKS)
    out = []
    for name, child in zip(selected, root.spawn(len(selected))):
        rng = np.random.default_rng(child)
        start = time.perf_counter()
        worst = max(CHECKS[name](rng).max_rel_error for _ in range(instances))
        out.append(SuiteEntry(name, instances, worst, time.perf_counter() - start))
    return out
