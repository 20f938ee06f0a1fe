"""Rotated boxes, convex quadrilaterals, IoU and NMS.

Coordinates are image pixels with the y axis pointing down.  A box with
orientation ``theta`` has its reading direction along ``(cos theta, sin theta)``
and its "down" direction along ``(-sin theta, cos theta)``; ``theta`` lives in
(-pi/2, pi/2].  Quads are (4, 2) arrays ordered top-left, top-right,
bottom-right, bottom-left of the un-rotated box, which gives a positive
shoelace area.
"""
import logging
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateBoxError

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-6


class DegenerateGeometryWarning(UserWarning):
    pass


class RBox(NamedTuple):
    """Distances from an anchor point to the four box sides plus orientation."""
    t: float
    b: float
    l: float
    r: float
    theta: float


@dataclass
class ScoredBox:
    quad: np.ndarray
    theta: float
    score: float


def normalize_angle(theta):
    """Wrap an angle into (-pi/2, pi/2]."""
    t = math.fmod(theta + math.pi / 2, math.pi)
    if t <= 0:
        t += math.pi
    return t - math.pi / 2


def _frame(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c, s]), np.array([-s, c])


def rbox_to_quad(anchor, geo):
    """Corner polygon of the box described by ``geo`` around ``anchor``."""
    t, b, l, r, theta = (float(v) for v in geo)
    if min(t, b, l, r) < 0 or t + b <= 0 or l + r <= 0:
        raise DegenerateBoxError(f"invalid box distances t={t} b={b} l={l} r={r}")
    u, v = _frame(theta)
    p = np.asarray(anchor, dtype=np.float64)
    return np.array([
        p - l * u - t * v,
        p + r * u - t * v,
        p + r * u + b * v,
        p - l * u + b * v,
    ])


def rbox_to_quads(anchors, geo, theta):
    """Vectorised :func:`rbox_to_quad`: anchors (n, 2), geo (n, 4) as t, b, l, r."""
    anchors = np.asarray(anchors, dtype=np.float64)
    geo = np.asarray(geo, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    u = np.stack([c, s], axis=1)
    v = np.stack([-s, c], axis=1)
    t, b, l, r = (geo[:, k:k + 1] for k in range(4))
    return np.stack([
        anchors - l * u - t * v,
        anchors + r * u - t * v,
        anchors + r * u + b * v,
        anchors - l * u + b * v,
    ], axis=1)


def signed_area(poly):
    poly = np.asarray(poly, dtype=np.float64)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def quad_angle(quad):
    """Orientation of a quad from the mean direction of its top and bottom edges."""
    q = np.asarray(quad, dtype=np.float64)
    d = (q[1] - q[0]) + (q[2] - q[3])
    return math.atan2(d[1], d[0])


def canonical_quad(quad):
    """Reorder vertices so the quad has positive area and an angle in (-pi/2, pi/2]."""
    q = np.asarray(quad, dtype=np.float64)
    if signed_area(q) < 0:
        q = q[[0, 3, 2, 1]]
    theta = quad_angle(q)
    if theta > math.pi / 2 or theta <= -math.pi / 2:
        q = q[[2, 3, 0, 1]]
    return q


def quad_to_rbox(quad, anchor):
    """Distances from ``anchor`` to the sides of the rectangle fitted to ``quad``.

    The rectangle is aligned with the quad's top edge and tightly encloses all
    four vertices; for a true rectangle this is exact.
    """
    q = canonical_quad(quad)
    theta = normalize_angle(quad_angle(q))
    u, v = _frame(theta)
    rel = q - np.asarray(anchor, dtype=np.float64)
    a, b = rel @ u, rel @ v
    return RBox(t=-b.min(), b=b.max(), l=-a.min(), r=a.max(), theta=theta)


def fit_rect(quad):
    """Rectangle (as a quad) aligned with the quad's top edge enclosing its vertices."""
    q = canonical_quad(quad)
    center = q.mean(axis=0)
    return rbox_to_quad(center, quad_to_rbox(q, center))


def rect_params(quad):
    """``(center, width, height, theta)`` of the rectangle fitted to ``quad``."""
    q = canonical_quad(quad)
    center = q.mean(axis=0)
    g = quad_to_rbox(q, center)
    u, v = _frame(g.theta)
    mid = center + 0.5 * (g.r - g.l) * u + 0.5 * (g.b - g.t) * v
    return mid, g.l + g.r, g.t + g.b, g.theta


def _clip(subject, a, b):
    out = []
    n = len(subject)
    ex, ey = b[0] - a[0], b[1] - a[1]
    for k in range(n):
        p = subject[k]
        q = subject[(k + 1) % n]
        sp = ex * (p[1] - a[1]) - ey * (p[0] - a[0])
        sq = ex * (q[1] - a[1]) - ey * (q[0] - a[0])
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            w = sp / (sp - sq)
            out.append((p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])))
    return out


def _area_list(poly):
    s = 0.0
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def intersection_area(a, b):
    """Area of the intersection of two convex polygons (Sutherland-Hodgman)."""
    pa = [tuple(p) for p in _positive(a)]
    pb = [tuple(p) for p in _positive(b)]
    poly = pa
    for k in range(len(pb)):
        if not poly:
            return 0.0
        poly = _clip(poly, pb[k], pb[(k + 1) % len(pb)])
    if len(poly) < 3:
        return 0.0
    return max(_area_list(poly), 0.0)


def _positive(poly):
    poly = np.asarray(poly, dtype=np.float64)
    return poly[::-1] if signed_area(poly) < 0 else poly


def polygon_iou(a, b):
    """Intersection over union of two convex quads; 0 (with a warning) if either is degenerate."""
    area_a = abs(signed_area(a))
    area_b = abs(signed_area(b))
    if area_a < DEGENERATE_AREA or area_b < DEGENERATE_AREA:
        warnings.warn("polygon_iou on a degenerate polygon", DegenerateGeometryWarning, stacklevel=2)
        return 0.0
    inter = intersection_area(a, b)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def point_in_convex(points, poly, strict=False):
    """Vectorised test of ``points`` (n, 2) against a convex polygon."""
    poly = _positive(poly)
    pts = np.asarray(points, dtype=np.float64)
    inside = np.ones(len(pts), dtype=bool)
    for k in range(len(poly)):
        a = poly[k]
        b = poly[(k + 1) % len(poly)]
        cross = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
        inside &= (cross > 0) if strict else (cross >= 0)
    return inside


def shrink_quad(quad, ratio=0.3):
    """Move each vertex inward along both adjacent edges by ``ratio`` times
    the shorter of those two edges."""
    if not 0.0 <= ratio < 0.5:
        raise ValueError(f"shrink ratio must be in [0, 0.5), got {ratio}")
    q = _positive(quad)
    if ratio == 0.0:
        return q.copy()
    out = np.empty_like(q)
    for k in range(4):
        prev_v = q[k - 1] - q[k]
        next_v = q[(k + 1) % 4] - q[k]
        lp, ln = np.hypot(*prev_v), np.hypot(*next_v)
        if lp < 1e-12 or ln < 1e-12:
            raise DegenerateBoxError("quad has a zero-length edge")
        r = min(lp, ln)
        out[k] = q[k] + ratio * r * (prev_v / lp + next_v / ln)
    if signed_area(out) < DEGENERATE_AREA:
        raise DegenerateBoxError("shrinking collapsed the quad")
    for k in range(4):
        a, b, c = out[k - 1], out[k], out[(k + 1) % 4]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) <= 0:
            raise DegenerateBoxError("shrinking folded the quad")
    return out


def min_horizontal_rect(quad):
    """Tight axis-aligned bounds ``(x_min, y_min, x_max, y_max)``."""
    q = np.asarray(quad, dtype=np.float64)
    return (float(q[:, 0].min()), float(q[:, 1].min()), float(q[:, 0].max()), float(q[:, 1].max()))


def rect_to_quad(rect):
    x0, y0, x1, y1 = rect
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def drop_degenerate(boxes):
    """Filter out boxes with area below the degeneracy threshold; returns ``(kept, n_dropped)``."""
    kept = [b for b in boxes if abs(signed_area(b.quad)) >= DEGENERATE_AREA]
    dropped = len(boxes) - len(kept)
    if dropped:
        log.warning("dropped %d degenerate boxes before NMS", dropped)
    return kept, dropped


def rotated_nms(boxes, iou_thresh=0.2):
    """Greedy non-maximum suppression by descending score using polygon IoU.

    Ties in score keep input order.  A candidate is suppressed when its IoU
    with an already kept box exceeds ``iou_thresh``.
    """
    boxes, _ = drop_degenerate(list(boxes))
    if not boxes:
        return []
    order = sorted(range(len(boxes)), key=lambda k: -boxes[k].score)
    quads = [boxes[k].quad for k in order]
    lo = np.array([q.min(axis=0) for q in quads])
    hi = np.array([q.max(axis=0) for q in quads])
    alive = np.ones(len(order), dtype=bool)
    kept = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(boxes[order[i]])
        rest = np.nonzero(alive[i + 1:])[0] + i + 1
        if rest.size == 0:
            break
        # bounding-box disjointness implies zero IoU
        touch = rest[np.all((lo[rest] <= hi[i]) & (hi[rest] >= lo[i]), axis=1)]
        for j in touch:
            if polygon_iou(quads[i], quads[j]) > iou_thresh:
                alive[j] = False
    return kept
