"""Forward/backward pairs for the primitives used by the FOTS graph.

Every forward returns ``(out, cache)`` and its companion ``*_backward`` takes
``(dout, cache)``.  Inputs are never modified; outputs are fresh arrays and
keep the input dtype, so float64 inputs give a float64 graph for gradient
checking while training runs in float32.
"""
import numpy as np

from ..errors import DimensionError


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation over an NCHW batch.

    ``weight`` has shape (out_channels, in_channels, kh, kw).
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input, got rank {x.ndim}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be rank 4, got rank {weight.ndim}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d channel axis mismatch: input has {c}, weight expects {ci}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d bias axis 0 must be {o}, got {bias.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise ValueError("stride must be positive and padding non-negative")
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1:
        raise DimensionError(f"conv2d height axis too small: {h} with kernel {kh}, padding {ph}")
    if wo < 1:
        raise DimensionError(f"conv2d width axis too small: {w} with kernel {kw}, padding {pw}")

    w2 = weight.reshape(o, -1)
    if kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0:
        cols = x.reshape(n, c, h * w)
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
        cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
        cols = cols.reshape(n, c * kh * kw, ho * wo)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias[:, None]
    cache = (x.shape, weight, bias is not None, (sh, sw), (ph, pw), cols)
    return out.reshape(n, o, ho, wo), cache


def conv2d_backward(dout, cache):
    """Returns ``(dx, dweight, dbias)``; ``dbias`` is None when the forward had no bias."""
    x_shape, weight, has_bias, (sh, sw), (ph, pw), cols = cache
    n, c, h, w = x_shape
    o, _, kh, kw = weight.shape
    ho, wo = dout.shape[2:]
    d2 = dout.reshape(n, o, ho * wo)
    w2 = weight.reshape(o, -1)

    dw = np.zeros_like(w2)
    for k in range(n):
        dw += d2[k] @ cols[k].T
    db = d2.sum(axis=(0, 2)) if has_bias else None

    dcols = np.matmul(w2.T, d2)
    if kh == 1 and kw == 1 and sh == 1 and sw == 1 and ph == 0 and pw == 0:
        dx = dcols.reshape(x_shape)
    else:
        dcols = dcols.reshape(n, c, kh, kw, ho, wo)
        dxp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += dcols[:, :, i, j]
        dx = dxp[:, :, ph:ph + h, pw:pw + w]
        if ph or pw:
            dx = np.ascontiguousarray(dx)
    return dx, dw.reshape(weight.shape), db


# --------------------------------------------------------------------------
# pooling / resampling
# --------------------------------------------------------------------------

def height_max_pool(x):
    """Max pool with kernel (2, 1) and stride (2, 1): halves height only."""
    if x.ndim != 4:
        raise DimensionError(f"height_max_pool expects NCHW input, got rank {x.ndim}")
    n, c, h, w = x.shape
    if h % 2:
        raise DimensionError(f"height_max_pool needs an even height axis, got {h}")
    xr = x.reshape(n, c, h // 2, 2, w)
    pick_lower = xr[:, :, :, 1, :] > xr[:, :, :, 0, :]
    out = np.where(pick_lower, xr[:, :, :, 1, :], xr[:, :, :, 0, :])
    return out, (x.shape, pick_lower)


def height_max_pool_backward(dout, cache):
    shape, pick_lower = cache
    n, c, h, w = shape
    dx = np.zeros((n, c, h // 2, 2, w), dtype=dout.dtype)
    dx[:, :, :, 0, :] = np.where(pick_lower, 0, dout)
    dx[:, :, :, 1, :] = np.where(pick_lower, dout, 0)
    return dx.reshape(shape)


def _linear_interp_matrix(n_in, factor, dtype):
    # align_corners=False: src = (dst + 0.5) / factor - 0.5, clamped at the borders
    n_out = n_in * factor
    dst = np.arange(n_out, dtype=np.float64)
    src = np.maximum((dst + 0.5) / factor - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    a = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(a, (np.arange(n_out), i0), 1.0 - lam)
    np.add.at(a, (np.arange(n_out), i1), lam)
    return a.astype(dtype)


def bilinear_upsample(x, factor):
    """Bilinear upsampling of an NCHW tensor by an integer factor (align_corners=False)."""
    if x.ndim != 4:
        raise DimensionError(f"bilinear_upsample expects NCHW input, got rank {x.ndim}")
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    h, w = x.shape[2:]
    ah = _linear_interp_matrix(h, factor, x.dtype)
    aw = _linear_interp_matrix(w, factor, x.dtype)
    out = np.matmul(ah, np.matmul(x, aw.T))
    return out, (ah, aw)


def bilinear_upsample_backward(dout, cache):
    ah, aw = cache
    return np.matmul(np.matmul(ah.T, dout), aw)


# --------------------------------------------------------------------------
# normalisation / activations
# --------------------------------------------------------------------------

def batch_norm(x, gamma, beta, running_mean, running_var, train=True,
               momentum=0.9, eps=1e-5, mask=None):
    """Per-channel batch normalisation for NCHW input.

    In train mode the batch statistics are used and updated running
    statistics are returned (``running = momentum * running + (1 - momentum) * batch``);
    in eval mode the running statistics are used unchanged.  ``mask``
    (N, 1, H, W) restricts the statistics to valid positions; masked-out
    outputs are zero.

    Returns ``(out, new_running_mean, new_running_var, cache)``.
    """
    if x.ndim != 4:
        raise DimensionError(f"batch_norm expects NCHW input, got rank {x.ndim}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm channel axis mismatch: input has {c}, "
                             f"affine params have {gamma.shape[0]}")
    if train:
        if mask is None:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            xc = x - mean[:, None, None]
            var = (xc * xc).mean(axis=(0, 2, 3))
        else:
            count = float(mask.sum()) * 1.0
            if count <= 0:
                raise DimensionError("batch_norm mask selects no positions")
            mean = (x * mask).sum(axis=(0, 2, 3)) / count
            xc = (x - mean[:, None, None]) * mask
            var = (xc * xc).sum(axis=(0, 2, 3)) / count
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * var
    else:
        mean, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
        new_mean, new_var = running_mean, running_var
        count = None
        xc = x - mean[:, None, None]
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std[:, None, None]
    if mask is not None:
        xhat = xhat * mask
    out = gamma[:, None, None] * xhat + beta[:, None, None]
    if mask is not None:
        out = out * mask
    cache = (xhat, gamma, inv_std, train, count, mask)
    return out, new_mean, new_var, cache


def batch_norm_backward(dout, cache):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, gamma, inv_std, train, count, mask = cache
    if mask is not None:
        dout = dout * mask
    dbeta = dout.sum(axis=(0, 2, 3))
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dxhat = dout * gamma[:, None, None]
    if not train:
        return dxhat * inv_std[:, None, None], dgamma, dbeta
    s1 = dxhat.sum(axis=(0, 2, 3))
    s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
    dx = (dxhat - (s1[:, None, None] + xhat * s2[:, None, None]) / count) * inv_std[:, None, None]
    if mask is not None:
        dx = dx * mask
    return dx, dgamma, dbeta


def relu(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, cache):
    return dout * cache


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear feature axis mismatch: input has {x.shape[-1]}, "
                             f"weight expects {weight.shape[1]}")
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out, (x, weight, bias is not None)


def linear_backward(dout, cache):
    x, weight, has_bias = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = d2.T @ x2
    db = d2.sum(axis=0) if has_bias else None
    return dout @ weight, dw, db


def log_softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return out, (out, axis)


def log_softmax_backward(dout, cache):
    out, axis = cache
    return dout - np.exp(out) * dout.sum(axis=axis, keepdims=True)


def dropout(x, rate, rng=None, train=True):
    """Inverted dropout; identity when ``train`` is False or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x.copy(), None
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache
