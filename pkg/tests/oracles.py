"""Independent reference implementations used as test oracles."""
import itertools

import numpy as np


def _row_intervals(poly, ys):
    """x-interval [lo, hi] of a convex polygon on each horizontal line y."""
    lo = np.full(ys.shape, np.inf)
    hi = np.full(ys.shape, -np.inf)
    n = len(poly)
    for k in range(n):
        (x0, y0), (x1, y1) = poly[k], poly[(k + 1) % n]
        if y0 == y1:
            continue
        ya, yb = min(y0, y1), max(y0, y1)
        on = (ys >= ya) & (ys <= yb)
        x = x0 + (ys[on] - y0) * (x1 - x0) / (y1 - y0)
        lo[on] = np.minimum(lo[on], x)
        hi[on] = np.maximum(hi[on], x)
    return lo, hi


def _count(lo, hi, h):
    # grid points at (i + 0.5) * h lying in [lo, hi]
    first = np.ceil(lo / h - 0.5)
    last = np.floor(hi / h - 0.5)
    return np.where(hi >= lo, np.maximum(last - first + 1, 0), 0)


def raster_iou(a, b, h=0.01):
    """IoU by counting points of an ``h``-spaced grid inside two convex polygons."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    y0 = min(a[:, 1].min(), b[:, 1].min())
    y1 = max(a[:, 1].max(), b[:, 1].max())
    ys = (np.arange(np.floor(y0 / h), np.ceil(y1 / h) + 1) + 0.5) * h
    la, ha = _row_intervals(a, ys)
    lb, hb = _row_intervals(b, ys)
    na = _count(la, ha, h).sum()
    nb = _count(lb, hb, h).sum()
    ni = _count(np.maximum(la, lb), np.minimum(ha, hb), h).sum()
    union = na + nb - ni
    return float(ni / union) if union else 0.0


def ctc_enumerate(log_probs, label, blank):
    """p(label | x) by summing over every path of length W."""
    w, k = log_probs.shape
    total = 0.0
    label = list(label)
    for path in itertools.product(range(k), repeat=w):
        out, prev = [], None
        for s in path:
            if s != prev and s != blank:
                out.append(s)
            prev = s
        if out == label:
            total += np.exp(sum(log_probs[t, s] for t, s in enumerate(path)))
    return total


def collapse_reference(path, blank):
    merged = [s for i, s in enumerate(path) if i == 0 or s != path[i - 1]]
    return [s for s in merged if s != blank]


def levenshtein_reference(a, b):
    """Memoised recursive edit distance."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def bilinear_sample(img, xs, ys):
    """Zero-padded bilinear sampling of a 2-D array at float coordinates."""
    out = np.zeros(np.shape(xs))
    h, w = img.shape
    for idx in np.ndindex(out.shape):
        x, y = xs[idx], ys[idx]
        x0, y0 = int(np.floor(x)), int(np.floor(y))
        acc = 0.0
        for yy in (y0, y0 + 1):
            for xx in (x0, x0 + 1):
                if 0 <= yy < h and 0 <= xx < w:
                    acc += img[yy, xx] * max(0.0, 1 - abs(x - xx)) * max(0.0, 1 - abs(y - yy))
        out[idx] = acc
    return out


def random_rect(rng, center_range=(0, 10), size_range=(0.5, 6), theta_range=np.pi / 2):
    from fotskit.geometry import rbox_to_quad
    c = rng.uniform(*center_range, size=2)
    w, h = rng.uniform(*size_range, size=2)
    theta = rng.uniform(-theta_range, theta_range)
    return rbox_to_quad(c, (h / 2, h / 2, w / 2, w / 2, theta))


def is_convex(q):
    d = np.roll(q, -1, axis=0) - q
    cross = d[:, 0] * np.roll(d, -1, axis=0)[:, 1] - d[:, 1] * np.roll(d, -1, axis=0)[:, 0]
    return bool(np.all(cross > 1e-6) or np.all(cross < -1e-6))


def random_convex_quad(rng, center_range=(0, 10), radius=(1, 5)):
    c = rng.uniform(*center_range, size=2)
    while True:
        angles = np.sort(rng.uniform(0, 2 * np.pi, 4))
        r = rng.uniform(*radius, 4)
        q = c + np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)
        if is_convex(q):
            return q


def random_sliver(rng, center_range=(0, 10)):
    """Long thin rotated rectangle (width 0.3 to 1 px)."""
    from fotskit.geometry import rbox_to_quad
    c = rng.uniform(*center_range, size=2)
    length, width = rng.uniform(4, 10), rng.uniform(0.3, 1.0)
    return rbox_to_quad(c, (width / 2, width / 2, length / 2, length / 2, rng.uniform(-1.5, 1.5)))


def quad_pairs(rng, n, sliver_fraction=0.2):
    """Random convex quad pairs; some include slivers, all with overlapping bounds."""
    pairs = []
    while len(pairs) < n:
        kind = rng.random()
        if kind < sliver_fraction:
            a, b = random_sliver(rng, (3, 7)), (random_sliver(rng, (3, 7)) if rng.random() < 0.5
                                                else random_rect(rng, (3, 7)))
        elif kind < 0.6:
            a, b = random_rect(rng, (3, 7)), random_rect(rng, (3, 7))
        else:
            a, b = random_convex_quad(rng, (3, 7)), random_convex_quad(rng, (3, 7))
        pairs.append((a, b))
    return pairs
