"""Procedural oriented-text images with exact ground truth.

Glyphs are polylines in a unit cell (x right, y down) drawn with a round pen,
so no font files are involved and every transcription is known exactly.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from ..geometry import intersection_area, rbox_to_quad
from .sample import Sample, TextProposal

log = logging.getLogger(__name__)

_O = [(0.25, 0), (0.75, 0), (1, 0.2), (1, 0.8), (0.75, 1), (0.25, 1), (0, 0.8), (0, 0.2), (0.25, 0)]
_P = [(0, 1), (0, 0), (0.8, 0), (1, 0.15), (1, 0.4), (0.8, 0.55), (0, 0.55)]

GLYPHS = {
    "0": [[(0.2, 0), (0.8, 0), (1, 0.15), (1, 0.85), (0.8, 1), (0.2, 1), (0, 0.85), (0, 0.15), (0.2, 0)],
          [(0.15, 0.85), (0.85, 0.15)]],
    "1": [[(0.2, 0.2), (0.5, 0), (0.5, 1)], [(0.2, 1), (0.8, 1)]],
    "2": [[(0, 0.2), (0.2, 0), (0.8, 0), (1, 0.2), (1, 0.4), (0, 1), (1, 1)]],
    "3": [[(0, 0), (1, 0), (0.5, 0.45), (0.8, 0.45), (1, 0.6), (1, 0.85), (0.8, 1), (0, 1)]],
    "4": [[(0.7, 1), (0.7, 0), (0, 0.7), (1, 0.7)]],
    "5": [[(1, 0), (0, 0), (0, 0.45), (0.8, 0.45), (1, 0.6), (1, 0.85), (0.8, 1), (0, 1)]],
    "6": [[(0.9, 0), (0.3, 0), (0, 0.3), (0, 0.85), (0.2, 1), (0.8, 1), (1, 0.85), (1, 0.6),
           (0.8, 0.45), (0, 0.45)]],
    "7": [[(0, 0), (1, 0), (0.3, 1)]],
    "8": [[(0.2, 0), (0.8, 0), (1, 0.2), (0.8, 0.45), (0.2, 0.45), (0, 0.2), (0.2, 0)],
          [(0.2, 0.45), (0, 0.65), (0, 0.85), (0.2, 1), (0.8, 1), (1, 0.85), (1, 0.65), (0.8, 0.45)]],
    "9": [[(0.1, 1), (0.7, 1), (1, 0.7), (1, 0.15), (0.8, 0), (0.2, 0), (0, 0.15), (0, 0.4),
           (0.2, 0.55), (1, 0.55)]],
    "A": [[(0, 1), (0.5, 0), (1, 1)], [(0.25, 0.55), (0.75, 0.55)]],
    "B": [[(0, 0), (0, 1), (0.8, 1), (1, 0.85), (1, 0.65), (0.8, 0.5), (0, 0.5)],
          [(0, 0), (0.75, 0), (0.95, 0.15), (0.95, 0.35), (0.75, 0.5)]],
    "C": [[(1, 0.1), (0.85, 0), (0.2, 0), (0, 0.2), (0, 0.8), (0.2, 1), (0.85, 1), (1, 0.9)]],
    "D": [[(0, 0), (0, 1), (0.7, 1), (1, 0.7), (1, 0.3), (0.7, 0), (0, 0)]],
    "E": [[(1, 0), (0, 0), (0, 1), (1, 1)], [(0, 0.5), (0.7, 0.5)]],
    "F": [[(1, 0), (0, 0), (0, 1)], [(0, 0.5), (0.7, 0.5)]],
    "G": [[(1, 0.15), (0.85, 0), (0.2, 0), (0, 0.2), (0, 0.8), (0.2, 1), (0.8, 1), (1, 0.8),
           (1, 0.55), (0.5, 0.55)]],
    "H": [[(0, 0), (0, 1)], [(1, 0), (1, 1)], [(0, 0.5), (1, 0.5)]],
    "I": [[(0.5, 0), (0.5, 1)], [(0.15, 0), (0.85, 0)], [(0.15, 1), (0.85, 1)]],
    "J": [[(0.3, 0), (1, 0)], [(0.8, 0), (0.8, 0.8), (0.6, 1), (0.2, 1), (0, 0.8)]],
    "K": [[(0, 0), (0, 1)], [(1, 0), (0, 0.55)], [(0.3, 0.4), (1, 1)]],
    "L": [[(0, 0), (0, 1), (1, 1)]],
    "M": [[(0, 1), (0, 0), (0.5, 0.6), (1, 0), (1, 1)]],
    "N": [[(0, 1), (0, 0), (1, 1), (1, 0)]],
    "O": [_O],
    "P": [_P],
    "Q": [_O, [(0.6, 0.7), (1, 1)]],
    "R": [_P, [(0.4, 0.55), (1, 1)]],
    "S": [[(1, 0.1), (0.8, 0), (0.2, 0), (0, 0.15), (0, 0.35), (0.2, 0.5), (0.8, 0.5), (1, 0.65),
           (1, 0.85), (0.8, 1), (0.2, 1), (0, 0.9)]],
    "T": [[(0, 0), (1, 0)], [(0.5, 0), (0.5, 1)]],
    "U": [[(0, 0), (0, 0.8), (0.2, 1), (0.8, 1), (1, 0.8), (1, 0)]],
    "V": [[(0, 0), (0.5, 1), (1, 0)]],
    "W": [[(0, 0), (0.25, 1), (0.5, 0.4), (0.75, 1), (1, 0)]],
    "X": [[(0, 0), (1, 1)], [(1, 0), (0, 1)]],
    "Y": [[(0, 0), (0.5, 0.5), (1, 0)], [(0.5, 0.5), (0.5, 1)]],
    "Z": [[(0, 0), (1, 0), (0, 1), (1, 1)]],
}

GLYPH_ASPECT = 0.6      # cell width / glyph height
SPACING = 0.25          # gap between cells, in glyph heights
THICKNESS = 0.12        # pen width, in glyph heights
MARGIN = 0.15           # box margin around the ink, in glyph heights


@dataclass
class SynthConfig:
    glyphs: str = "0123456789"
    count_range: tuple = (1, 3)
    size: tuple = (320, 320)
    height_range: tuple = (20.0, 36.0)
    length_range: tuple = (2, 5)
    angle_range: float = math.pi / 4
    channels: int = 1
    noise: float = 0.03
    distractors: int = 2
    max_tries: int = 100


def segments(text, height):
    """Stroke segments of ``text`` in the word's local frame, as an (n, 4) array.

    The frame origin is the top-left corner of the first glyph cell; x runs
    along the reading direction and y down across the text.
    """
    gw = GLYPH_ASPECT * height
    adv = gw + SPACING * height
    segs = []
    for k, ch in enumerate(text):
        for line in GLYPHS[ch]:
            pts = np.array(line, dtype=np.float64) * (gw, height) + (k * adv, 0.0)
            segs.append(np.concatenate([pts[:-1], pts[1:]], axis=1))
    return np.concatenate(segs, axis=0)


def word_extent(text, height):
    """Width and height of the ink skeleton of ``text``."""
    gw = GLYPH_ASPECT * height
    return len(text) * gw + (len(text) - 1) * SPACING * height, height


def _segment_distance(px, py, segs):
    d = np.full(px.shape, np.inf)
    for x0, y0, x1, y1 in segs:
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        t = np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0) if ll > 0 else 0.0
        d = np.minimum(d, np.hypot(px - x0 - t * dx, py - y0 - t * dy))
    return d


def ink_coverage(local_x, local_y, text, height):
    """Anti-aliased pen coverage in [0, 1] at local word coordinates."""
    d = _segment_distance(local_x, local_y, segments(text, height))
    return np.clip(THICKNESS * height / 2.0 - d + 0.5, 0.0, 1.0)


def word_box(text, height, center, theta):
    """Ground-truth quad of a word: ink bounds plus a fixed margin."""
    w, h = word_extent(text, height)
    pad = THICKNESS * height / 2.0 + MARGIN * height
    half_w, half_h = w / 2.0 + pad, h / 2.0 + pad
    return rbox_to_quad(center, (half_h, half_h, half_w, half_w, theta))


def _draw_word(canvas, text, height, center, theta, ink):
    h_img, w_img = canvas.shape[1:]
    quad = word_box(text, height, center, theta)
    x0 = max(int(np.floor(quad[:, 0].min())) - 1, 0)
    x1 = min(int(np.ceil(quad[:, 0].max())) + 1, w_img - 1)
    y0 = max(int(np.floor(quad[:, 1].min())) - 1, 0)
    y1 = min(int(np.ceil(quad[:, 1].max())) + 1, h_img - 1)
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(np.float64)
    w, h = word_extent(text, height)
    c, s = math.cos(theta), math.sin(theta)
    rx, ry = xs - center[0], ys - center[1]
    lx = rx * c + ry * s + w / 2.0
    ly = -rx * s + ry * c + h / 2.0
    cov = ink_coverage(lx, ly, text, height)
    region = canvas[:, y0:y1 + 1, x0:x1 + 1]
    canvas[:, y0:y1 + 1, x0:x1 + 1] = region * (1.0 - cov) + np.asarray(ink)[:, None, None] * cov
    return quad


def _background(rng, cfg):
    h, w = cfg.size
    base = rng.uniform(0.15, 0.85, size=cfg.channels)
    gx, gy = rng.uniform(-0.15, 0.15, size=2)
    ys, xs = np.mgrid[0:h, 0:w]
    ramp = gx * (xs / w - 0.5) + gy * (ys / h - 0.5)
    img = base[:, None, None] + ramp[None]
    for _ in range(rng.integers(0, cfg.distractors + 1)):
        p0 = rng.uniform(0, (w, h))
        p1 = rng.uniform(0, (w, h))
        width = rng.uniform(1.0, 3.0)
        d = _segment_distance(xs.astype(np.float64), ys.astype(np.float64), [np.r_[p0, p1]])
        cov = np.clip(width / 2 - d + 0.5, 0, 1)
        tone = rng.uniform(0, 1, size=cfg.channels)
        img = img * (1 - cov) + tone[:, None, None] * cov
    return img


def _dilate(quad, pad):
    c = quad.mean(axis=0)
    d = quad - c
    n = np.linalg.norm(d, axis=1, keepdims=True)
    return c + d * (1 + pad / np.maximum(n, 1e-9))


def render_synthetic(config=None, seed=0):
    """Render one sample; identical seeds give bitwise identical samples."""
    cfg = config or SynthConfig()
    h, w = cfg.size
    if h % 4 or w % 4:
        raise ValueError(f"image size {cfg.size} must be divisible by 4")
    unknown = set(cfg.glyphs) - set(GLYPHS)
    if unknown:
        raise ValueError(f"no glyph drawing for {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    canvas = _background(rng, cfg)
    lo, hi = cfg.count_range
    wanted = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    placed = []
    failed = 0
    for _ in range(wanted):
        n = int(rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
        text = "".join(cfg.glyphs[k] for k in rng.integers(0, len(cfg.glyphs), size=n))
        for _try in range(cfg.max_tries):
            height = rng.uniform(*cfg.height_range)
            theta = rng.uniform(-cfg.angle_range, cfg.angle_range)
            center = rng.uniform(0, (w, h))
            quad = word_box(text, height, center, theta)
            if quad.min() < 2 or quad[:, 0].max() > w - 3 or quad[:, 1].max() > h - 3:
                continue
            grown = _dilate(quad, 4.0)
            if any(intersection_area(grown, _dilate(q, 4.0)) > 0 for q, *_ in placed):
                continue
            placed.append((quad, text, height, center, theta))
            break
        else:
            failed += 1
    if failed:
        log.info("seed %s: could not place %d of %d words", seed, failed, wanted)
    proposals = []
    for quad, text, height, center, theta in placed:
        bg = canvas[:, int(np.clip(center[1], 0, h - 1)), int(np.clip(center[0], 0, w - 1))]
        delta = rng.uniform(0.35, 0.6, size=cfg.channels)
        ink = np.where(bg > 0.5, bg - delta, bg + delta)
        _draw_word(canvas, text, height, center, theta, ink)
        proposals.append(TextProposal(quad=quad, transcription=text, theta=theta))
    if cfg.noise:
        canvas = canvas + rng.normal(0.0, cfg.noise, size=canvas.shape)
    image = np.clip(canvas, 0.0, 1.0).astype(np.float32)
    return Sample(image=image, proposals=proposals, seed=seed, meta={"failed_placements": failed})


def render_dataset(count, config=None, seed=0):
    """``count`` samples with per-sample seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [render_synthetic(config, int(s)) for s in seeds]
