"""Dense text detection: ground-truth maps, OHEM, losses and box decoding.

Maps are at 1/``stride`` of the input image.  The map pixel at row ``i``,
column ``j`` is anchored at input coordinate ``(stride * j, stride * i)``;
geometry distances are measured in input pixels.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBoxError, DimensionError
from .geometry import (
    ScoredBox, point_in_convex, polygon_iou, quad_to_rbox, rbox_to_quads, rotated_nms, shrink_quad,
)

log = logging.getLogger(__name__)

NEGATIVE, POSITIVE, NOT_CARE = 0, 1, 2

PROB_CLAMP = 1e-7
IOU_FLOOR = 1e-7


@dataclass
class ScoreGeoMaps:
    score: np.ndarray   # (1, h, w)
    geo: np.ndarray     # (4, h, w)  t, b, l, r in input pixels
    angle: np.ndarray   # (1, h, w)
    mask: np.ndarray    # (1, h, w)  NEGATIVE / POSITIVE / NOT_CARE
    overlaps: int = 0

    @property
    def shape(self):
        return self.score.shape[1:]


@dataclass
class OhemSelection:
    cls_indices: np.ndarray
    reg_indices: np.ndarray
    n_hard_neg: int = 0
    n_rand_neg: int = 0
    n_hard_pos: int = 0
    n_rand_pos: int = 0


def anchor_grid(h, w, stride=4):
    ys, xs = np.mgrid[0:h, 0:w]
    return np.stack([xs.ravel() * stride, ys.ravel() * stride], axis=1).astype(np.float64)


def _fill_quad(grid_mask, anchors, quad, value, h, w, stride):
    lo = np.floor(quad.min(axis=0) / stride).astype(int)
    hi = np.ceil(quad.max(axis=0) / stride).astype(int)
    x0, y0 = max(lo[0], 0), max(lo[1], 0)
    x1, y1 = min(hi[0], w - 1), min(hi[1], h - 1)
    if x1 < x0 or y1 < y0:
        return np.zeros(0, dtype=np.int64)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    flat = (ys * w + xs).ravel()
    inside = point_in_convex(anchors[flat], quad)
    return flat[inside]


def build_ground_truth(proposals, image_size, shrink_ratio=0.3, stride=4):
    """Rasterise annotations into score / geometry / angle / mask maps.

    ``proposals`` are objects with ``quad`` and ``dont_care`` attributes.
    Shrunk regions are POSITIVE, the band between shrunk and full box is
    NOT_CARE, DO_NOT_CARE annotations are NOT_CARE entirely.  Where positive
    regions overlap the later annotation wins and ``overlaps`` is incremented.
    """
    img_h, img_w = image_size
    if img_h % stride or img_w % stride:
        raise DimensionError(f"image size {image_size} not divisible by stride {stride}")
    h, w = img_h // stride, img_w // stride
    anchors = anchor_grid(h, w, stride)
    score = np.zeros(h * w, dtype=np.float32)
    geo = np.zeros((4, h * w), dtype=np.float32)
    angle = np.zeros(h * w, dtype=np.float32)
    mask = np.full(h * w, NEGATIVE, dtype=np.int8)
    owner = np.full(h * w, -1, dtype=np.int64)
    overlaps = 0

    for k, prop in enumerate(proposals):
        quad = np.asarray(prop.quad, dtype=np.float64)
        full = _fill_quad(mask, anchors, quad, NOT_CARE, h, w, stride)
        if prop.dont_care:
            keep = full[mask[full] != POSITIVE]
            mask[keep] = NOT_CARE
            continue
        try:
            core_quad = shrink_quad(quad, shrink_ratio)
        except DegenerateBoxError:
            # too thin to keep a positive core: ignore it like DO_NOT_CARE
            keep = full[mask[full] != POSITIVE]
            mask[keep] = NOT_CARE
            continue
        core = _fill_quad(mask, anchors, core_quad, POSITIVE, h, w, stride)
        band = np.setdiff1d(full, core)
        band = band[mask[band] != POSITIVE]
        mask[band] = NOT_CARE
        if core.size == 0:
            continue
        if np.any(owner[core] >= 0):
            overlaps += 1
        mask[core] = POSITIVE
        owner[core] = k
        score[core] = 1.0
        geo[:, core], angle[core] = _distances(quad, anchors[core])
    if overlaps:
        log.debug("%d annotations overlapped earlier positives", overlaps)
    return ScoreGeoMaps(
        score=score.reshape(1, h, w), geo=geo.reshape(4, h, w),
        angle=angle.reshape(1, h, w), mask=mask.reshape(1, h, w), overlaps=overlaps)


def _distances(quad, anchors):
    # vectorised quad_to_rbox over many anchors
    ref = quad_to_rbox(quad, anchors[0])
    c, s = np.cos(ref.theta), np.sin(ref.theta)
    u, v = np.array([c, s]), np.array([-s, c])
    rel = anchors - anchors[0]
    a, b = rel @ u, rel @ v
    geo = np.stack([ref.t + b, ref.b - b, ref.l + a, ref.r - a])
    return geo, np.full(len(anchors), ref.theta)


# --------------------------------------------------------------------------
# per-pixel losses
# --------------------------------------------------------------------------

def pixel_cls_loss(p, target):
    p = np.clip(p.astype(np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))


def _iou_terms(pred, gt):
    t, b, l, r = pred
    ts, bs, ls, rs = gt
    w_i = np.minimum(l, ls) + np.minimum(r, rs)
    h_i = np.minimum(t, ts) + np.minimum(b, bs)
    inter = w_i * h_i
    area_p = (t + b) * (l + r)
    area_g = (ts + bs) * (ls + rs)
    union = area_p + area_g - inter
    return w_i, h_i, inter, area_p, union


def pixel_reg_loss(pred_geo, pred_angle, gt_geo, gt_angle, lambda_theta=10.0):
    """Per-pixel ``-ln IoU + lambda_theta * (1 - cos(dtheta))`` on (4, n) / (n,) arrays."""
    pred_geo = pred_geo.astype(np.float64)
    gt_geo = gt_geo.astype(np.float64)
    _, _, inter, _, union = _iou_terms(pred_geo, gt_geo)
    iou = np.maximum(inter / np.maximum(union, 1e-12), IOU_FLOOR)
    return -np.log(iou) + lambda_theta * (1.0 - np.cos(pred_angle.astype(np.float64) - gt_angle))


def select_ohem(pred_score, gt, rng, pred_geo=None, pred_angle=None, lambda_theta=10.0,
                n_hard_neg=512, n_rand_neg=512, n_hard_pos=128, n_rand_pos=128):
    """Pick classification and regression pixels for one image.

    Classification keeps every POSITIVE pixel plus the hardest NEGATIVE pixels
    by cross entropy and a random draw from the remaining negatives.
    Regression keeps the hardest POSITIVE pixels by regression loss plus a
    random draw from the rest; without geometry predictions all regression
    pixels are drawn at random.  NOT_CARE pixels are never selected.
    """
    score = np.asarray(pred_score).reshape(-1)
    mask = gt.mask.reshape(-1)
    if score.shape != mask.shape:
        raise DimensionError(f"score map has {score.size} pixels, ground truth has {mask.size}")
    pos = np.nonzero(mask == POSITIVE)[0]
    neg = np.nonzero(mask == NEGATIVE)[0]

    neg_loss = pixel_cls_loss(score[neg], 0.0)
    order = np.argsort(-neg_loss, kind="stable")
    hard_neg = neg[order[:n_hard_neg]]
    rest = neg[order[n_hard_neg:]]
    k = min(n_rand_neg, rest.size)
    rand_neg = np.sort(rng.choice(rest, size=k, replace=False)) if k else rest[:0]
    cls_idx = np.sort(np.concatenate([pos, hard_neg, rand_neg]))

    if pred_geo is not None and pos.size:
        geo = np.asarray(pred_geo).reshape(4, -1)[:, pos]
        ang = np.asarray(pred_angle).reshape(-1)[pos]
        reg_loss = pixel_reg_loss(geo, ang, gt.geo.reshape(4, -1)[:, pos],
                                  gt.angle.reshape(-1)[pos], lambda_theta)
        order = np.argsort(-reg_loss, kind="stable")
        n_hard = n_hard_pos
    else:
        order = np.arange(pos.size)
        n_hard = 0
    hard_pos = pos[order[:n_hard]]
    rest = pos[order[n_hard:]]
    k = min(n_rand_pos, rest.size)
    rand_pos = np.sort(rng.choice(rest, size=k, replace=False)) if k else rest[:0]
    reg_idx = np.sort(np.concatenate([hard_pos, rand_pos]))
    return OhemSelection(cls_idx, reg_idx, hard_neg.size, rand_neg.size, hard_pos.size, rand_pos.size)


def classification_loss(pred_score, gt, selection):
    """Mean binary cross entropy over the selected pixels.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``pred_score``.
    """
    score = np.asarray(pred_score)
    grad = np.zeros(score.size, dtype=np.float64)
    idx = selection.cls_indices
    if idx.size == 0:
        warnings.warn("classification_loss over an empty selection", RuntimeWarning, stacklevel=2)
        return 0.0, grad.reshape(score.shape).astype(score.dtype)
    p_raw = score.reshape(-1)[idx].astype(np.float64)
    target = gt.score.reshape(-1)[idx].astype(np.float64)
    p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = float(np.mean(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))))
    inside = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
    g = (-target / p + (1.0 - target) / (1.0 - p)) * inside
    grad[idx] = g / idx.size
    return loss, grad.reshape(score.shape).astype(score.dtype)


def classification_loss_logits(logits, gt, selection):
    """Same loss as :func:`classification_loss` evaluated from pre-sigmoid logits,
    with the gradient taken w.r.t. the logits (``p - p*`` form)."""
    from .nn.functional import sigmoid
    z = np.asarray(logits)
    p = sigmoid(z.astype(np.float64))
    loss, _ = classification_loss(p, gt, selection)
    grad = np.zeros(z.size, dtype=np.float64)
    idx = selection.cls_indices
    if idx.size:
        pp = np.clip(p.reshape(-1)[idx], PROB_CLAMP, 1.0 - PROB_CLAMP)
        grad[idx] = (pp - gt.score.reshape(-1)[idx]) / idx.size
    return loss, grad.reshape(z.shape).astype(z.dtype)


def regression_loss(pred_geo, pred_angle, gt, selection, lambda_theta=10.0):
    """Mean over ``selection.reg_indices`` of ``-ln IoU + lambda_theta * (1 - cos dtheta)``.

    IoU is the closed-form overlap of two boxes sharing the pixel as anchor
    and orientation.  Returns ``(loss, dgeo, dangle)``.
    """
    geo = np.asarray(pred_geo)
    ang = np.asarray(pred_angle)
    dgeo = np.zeros((4, geo[0].size), dtype=np.float64)
    dang = np.zeros(ang.size, dtype=np.float64)
    idx = selection.reg_indices
    if idx.size == 0:
        return 0.0, dgeo.reshape(geo.shape).astype(geo.dtype), dang.reshape(ang.shape).astype(ang.dtype)
    pg = geo.reshape(4, -1)[:, idx].astype(np.float64)
    gg = gt.geo.reshape(4, -1)[:, idx].astype(np.float64)
    pa = ang.reshape(-1)[idx].astype(np.float64)
    ga = gt.angle.reshape(-1)[idx].astype(np.float64)
    n = idx.size

    w_i, h_i, inter, _, union = _iou_terms(pg, gg)
    iou_raw = inter / np.maximum(union, 1e-12)
    iou = np.maximum(iou_raw, IOU_FLOOR)
    dtheta = pa - ga
    loss = float(np.mean(-np.log(iou) + lambda_theta * (1.0 - np.cos(dtheta))))

    live = (iou_raw > IOU_FLOOR).astype(np.float64)
    t, b, l, r = pg
    ts, bs, ls, rs = gg
    # d(-ln IoU) = -dI / I + dU / U,  U = A_p + A_g - I
    inv_i = live / np.maximum(inter, 1e-300)
    inv_u = live / np.maximum(union, 1e-300)
    for k, (side, side_gt, cross_len, span) in enumerate((
            (t, ts, w_i, l + r), (b, bs, w_i, l + r), (l, ls, h_i, t + b), (r, rs, h_i, t + b))):
        di = cross_len * (side < side_gt)
        dgeo[k, idx] = (-di * inv_i + (span - di) * inv_u) / n
    dang[idx] = lambda_theta * np.sin(dtheta) / n
    return loss, dgeo.reshape(geo.shape).astype(geo.dtype), dang.reshape(ang.shape).astype(ang.dtype)


def detection_loss(cls, reg, lambda_reg=1.0):
    return cls + lambda_reg * reg


def merge_boxes(kept, candidates, anchors, geo, iou_thresh=0.5):
    """Refine each kept box from the per-pixel candidates that overlap it.

    ``candidates[j]`` was regressed at ``anchors[j]`` with side distances
    ``geo[j]`` (t, b, l, r).  Candidates overlapping a kept box at
    ``iou_thresh`` or more, with an angle within pi/4 of it, vote on its
    orientation (weighted by score) and on the position of each side (weighted
    by score over the distance to that side, since short distances regress
    more precisely than ones spanning the whole word).
    """
    if not kept:
        return kept
    quads = np.stack([c.quad for c in candidates])
    scores = np.array([c.score for c in candidates])
    thetas = np.array([c.theta for c in candidates])
    anchors = np.asarray(anchors, dtype=np.float64)
    geo = np.asarray(geo, dtype=np.float64)
    lo, hi = quads.min(axis=1), quads.max(axis=1)
    out = []
    for k in kept:
        klo, khi = k.quad.min(axis=0), k.quad.max(axis=0)
        near = np.nonzero(np.all((lo <= khi) & (hi >= klo), axis=1)
                          & (np.abs(thetas - k.theta) < np.pi / 4))[0]
        pick = np.array([j for j in near if polygon_iou(k.quad, quads[j]) >= iou_thresh], dtype=np.int64)
        if pick.size == 0:
            out.append(k)
            continue
        w = scores[pick]
        theta = float(np.dot(w, thetas[pick]) / w.sum())
        u = np.array([math.cos(theta), math.sin(theta)])
        v = np.array([-u[1], u[0]])
        au, av = anchors[pick] @ u, anchors[pick] @ v
        g = geo[pick]
        sides = (av - g[:, 0], av + g[:, 1], au - g[:, 2], au + g[:, 3])
        est = []
        for m, pos in enumerate(sides):
            ws = w / np.maximum(g[:, m], 1.0)
            est.append(float(np.dot(ws, pos) / ws.sum()))
        top, bottom, left, right = est
        quad = np.array([left * u + top * v, right * u + top * v, right * u + bottom * v, left * u + bottom * v])
        out.append(ScoredBox(quad, theta, k.score))
    return out


def decode_predictions(maps, score_thresh=0.7, nms_thresh=0.2, stride=4, merge=False):
    """Threshold the score map, turn each surviving pixel into a box, then NMS.

    With ``merge`` each surviving box is refined by :func:`merge_boxes`.
    """
    score = np.asarray(maps.score).reshape(-1)
    h, w = maps.score.shape[-2:]
    idx = np.nonzero(score >= score_thresh)[0]
    if idx.size == 0:
        return []
    geo = np.asarray(maps.geo).reshape(4, -1)[:, idx].T
    theta = np.asarray(maps.angle).reshape(-1)[idx]
    anchors = np.stack([(idx % w) * stride, (idx // w) * stride], axis=1).astype(np.float64)
    valid = np.all(geo >= 0, axis=1) & ((geo[:, 0] + geo[:, 1]) > 0) & ((geo[:, 2] + geo[:, 3]) > 0)
    quads = rbox_to_quads(anchors[valid], geo[valid], theta[valid])
    boxes = [ScoredBox(q, float(a), float(s))
             for q, a, s in zip(quads, theta[valid], score[idx][valid])]
    kept = rotated_nms(boxes, nms_thresh)
    return merge_boxes(kept, boxes, anchors[valid], geo[valid]) if merge else kept
