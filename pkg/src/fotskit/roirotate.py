"""RoIRotate: affine-rectify oriented regions of a feature map to a fixed height.

Pixel centres sit at integer coordinates in both the source map and the
output, so output pixel (i, j) samples the source at ``M^-1 (j, i, 1)``.
Sampling uses the bilinear kernel ``k(d) = max(0, 1 - |d|)``; source pixels
outside the map contribute zero.  The sampling is stored as a sparse matrix,
so the backward pass is its exact transpose.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import DegenerateBoxError, DimensionError
from .geometry import rect_params

log = logging.getLogger(__name__)


@dataclass
class AffineParams:
    matrix: np.ndarray      # 3x3, last row (0, 0, 1)
    out_height: int
    out_width: int
    scale: float
    clamped: bool = False


def round_half_up(x):
    return int(math.floor(x + 0.5))


def affine_params(x, y, t, b, l, r, theta, h_t=8, max_width=None):
    """Affine map from feature-map coordinates to the rectified region frame.

    ``(x, y)`` is an anchor inside the region and ``t, b, l, r`` its distances
    to the region sides along the rotated axes.  The region's top-left corner
    maps to (0, 0) and its bottom-right corner to (w_t, h_t).
    """
    if t + b <= 0 or l + r <= 0:
        raise DegenerateBoxError(f"degenerate proposal: height {t + b}, width {l + r}")
    c, s = math.cos(theta), math.sin(theta)
    tx = l * c - t * s - x
    ty = t * c + l * s - y
    scale = h_t / (t + b)
    width = max(1, round_half_up(scale * (l + r)))
    clamped = False
    if max_width is not None and width > max_width:
        log.info("clamping RoI width %d to %d", width, max_width)
        width, clamped = int(max_width), True
    # scale . rotate(-theta) . translate(tx, ty); rotating by -theta undoes the
    # region orientation so the top edge becomes horizontal
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    trans = np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    scl = np.diag([scale, scale, 1.0])
    return AffineParams(matrix=scl @ rot @ trans, out_height=int(h_t), out_width=width,
                        scale=scale, clamped=clamped)


def params_from_quad(quad, stride=4, h_t=8, max_width=None):
    """Affine parameters for a quad given in input-image pixels."""
    center, width, height, theta = rect_params(np.asarray(quad, dtype=np.float64) / stride)
    return affine_params(center[0], center[1], height / 2, height / 2, width / 2, width / 2,
                         theta, h_t=h_t, max_width=max_width)


def source_coords(p):
    """Source (x, y) sample positions, each of shape (h_t, w_t)."""
    inv = np.linalg.inv(p.matrix)
    if not np.all(np.isfinite(inv)):
        raise DegenerateBoxError("singular affine matrix")
    jj, ii = np.meshgrid(np.arange(p.out_width, dtype=np.float64),
                         np.arange(p.out_height, dtype=np.float64))
    xs = inv[0, 0] * jj + inv[0, 1] * ii + inv[0, 2]
    ys = inv[1, 0] * jj + inv[1, 1] * ii + inv[1, 2]
    return xs, ys


def sampling_matrix(p, input_hw):
    """Sparse (h_t * w_t, h_s * w_s) matrix of bilinear weights."""
    h_s, w_s = input_hw
    if abs(np.linalg.det(p.matrix)) < 1e-12:
        raise DegenerateBoxError("singular affine matrix")
    xs, ys = source_coords(p)
    xs, ys = xs.ravel(), ys.ravel()
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx, fy = xs - x0, ys - y0
    rows, cols, vals = [], [], []
    out_idx = np.arange(xs.size)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xn, yn = x0 + dx, y0 + dy
            w = wx * wy
            ok = (xn >= 0) & (xn < w_s) & (yn >= 0) & (yn < h_s) & (w > 0)
            rows.append(out_idx[ok])
            cols.append(yn[ok] * w_s + xn[ok])
            vals.append(w[ok])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(xs.size, h_s * w_s))


def roi_rotate_forward(U, p, smat=None):
    """Rectify one region of ``U`` (C, h_s, w_s) into (C, h_t, w_t)."""
    if U.ndim != 3:
        raise DimensionError(f"roi_rotate expects (C, H, W) features, got rank {U.ndim}")
    c, h_s, w_s = U.shape
    if smat is None:
        smat = sampling_matrix(p, (h_s, w_s))
    out = (smat @ U.reshape(c, -1).T).T
    return np.ascontiguousarray(out.reshape(c, p.out_height, p.out_width)).astype(U.dtype, copy=False)


def roi_rotate_backward(dV, p, input_shape, smat=None):
    """Adjoint of :func:`roi_rotate_forward`: scatter ``dV`` back onto the feature map."""
    c, h_s, w_s = input_shape
    if dV.shape != (c, p.out_height, p.out_width):
        raise DimensionError(f"dV has shape {dV.shape}, expected {(c, p.out_height, p.out_width)}")
    if smat is None:
        smat = sampling_matrix(p, (h_s, w_s))
    dU = (smat.T @ dV.reshape(c, -1).T).T
    return np.ascontiguousarray(dU.reshape(input_shape)).astype(dV.dtype, copy=False)


@dataclass
class RoiBatch:
    features: np.ndarray            # (N, C, h_t, W_max)
    widths: np.ndarray              # (N,)
    mask: np.ndarray                # (N, W_max) 1 for valid columns
    params: list = field(default_factory=list)
    image_index: np.ndarray = None
    _smats: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.widths)


def batch_extract(U, proposals, h_t=8, image_index=None):
    """Extract and zero-pad every proposal into one batch.

    ``U`` is (C, H, W) or (B, C, H, W); in the batched case ``image_index``
    names the source image of each proposal.  ``proposals`` is a list of
    :class:`AffineParams`.
    """
    if U.ndim == 3:
        U = U[None]
    b, c, h_s, w_s = U.shape
    n = len(proposals)
    if image_index is None:
        image_index = np.zeros(n, dtype=np.int64)
    image_index = np.asarray(image_index, dtype=np.int64)
    if n == 0:
        return RoiBatch(np.zeros((0, c, h_t, 0), U.dtype), np.zeros(0, np.int64),
                        np.zeros((0, 0), U.dtype), [], image_index)
    for p in proposals:
        if p.out_height != h_t:
            raise DimensionError(f"proposal height {p.out_height} differs from batch height {h_t}")
    widths = np.array([p.out_width for p in proposals], dtype=np.int64)
    w_max = int(widths.max())
    feats = np.zeros((n, c, h_t, w_max), dtype=U.dtype)
    mask = np.zeros((n, w_max), dtype=U.dtype)
    smats = []
    for k, p in enumerate(proposals):
        smat = sampling_matrix(p, (h_s, w_s))
        smats.append(smat)
        feats[k, :, :, :p.out_width] = roi_rotate_forward(U[image_index[k]], p, smat)
        mask[k, :p.out_width] = 1
    return RoiBatch(feats, widths, mask, list(proposals), image_index, smats)


def batch_backward(dfeats, batch, input_shape):
    """Accumulate the gradient of a padded RoI batch into a (B, C, H, W) map."""
    dU = np.zeros(input_shape, dtype=dfeats.dtype)
    c, h_s, w_s = input_shape[1:]
    for k, p in enumerate(batch.params):
        dv = np.ascontiguousarray(dfeats[k, :, :, :p.out_width])
        dU[batch.image_index[k]] += roi_rotate_backward(dv, p, (c, h_s, w_s), batch._smats[k])
    return dU
