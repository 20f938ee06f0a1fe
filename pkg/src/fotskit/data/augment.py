"""Training-time augmentation: resize, rotate, rescale height, random crop.

All geometric steps are composed into one affine map that is applied to the
image once (bilinear) and to every annotation quad exactly.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..geometry import intersection_area, rect_to_quad, signed_area
from .sample import DO_NOT_CARE, Sample, TextProposal


@dataclass
class AugmentConfig:
    longer_side: tuple = (640, 2560)   # None disables resizing
    rotation_deg: float = 10.0
    height_scale: tuple = (0.8, 1.2)
    crop: tuple = (320, 320)           # 640x640 in the original large-scale setting
    cut_fraction: float = 0.3

    @classmethod
    def identity(cls, crop=None):
        return cls(longer_side=None, rotation_deg=0.0, height_scale=(1.0, 1.0), crop=crop, cut_fraction=0.3)


def _warp(image, forward, out_hw):
    # ndimage maps output -> input coordinates in (row, col) order
    inv = np.linalg.inv(forward)
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=np.float64)
    m = swap @ inv @ swap
    out = np.empty((image.shape[0],) + tuple(out_hw), dtype=np.float32)
    for c in range(image.shape[0]):
        out[c] = ndimage.affine_transform(image[c], m[:2, :2], offset=m[:2, 2],
                                          output_shape=out_hw, order=1, mode="constant", cval=0.0)
    return out


def augment(sample, rng, config=None):
    """Return an augmented copy of ``sample``.

    Every input proposal appears in the output; those whose area falls
    outside the crop by more than ``cut_fraction`` become DO_NOT_CARE.
    """
    cfg = config or AugmentConfig()
    _, h, w = sample.image.shape
    m = np.eye(3)

    if cfg.longer_side is not None:
        target = rng.uniform(*cfg.longer_side)
        s = target / max(h, w)
        m = np.diag([s, s, 1.0]) @ m
    cur_w, cur_h = w * m[0, 0], h * m[1, 1]

    if cfg.rotation_deg:
        a = math.radians(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
        c, s = math.cos(a), math.sin(a)
        cx, cy = cur_w / 2.0, cur_h / 2.0
        rot = np.array([[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy], [0, 0, 1]])
        m = rot @ m

    lo, hi = cfg.height_scale
    if (lo, hi) != (1.0, 1.0):
        m = np.diag([1.0, rng.uniform(lo, hi), 1.0]) @ m

    corners = np.array([[0, 0, 1], [w, 0, 1], [w, h, 1], [0, h, 1]], dtype=np.float64) @ m.T
    bx0, by0 = corners[:, 0].min(), corners[:, 1].min()
    bx1, by1 = corners[:, 0].max(), corners[:, 1].max()

    if cfg.crop is not None:
        ch, cw = cfg.crop
        ox = rng.uniform(bx0, max(bx0, bx1 - cw))
        oy = rng.uniform(by0, max(by0, by1 - ch))
        out_hw = (ch, cw)
    else:
        ox, oy = 0.0, 0.0
        out_hw = (int(math.ceil(by1 / 4.0) * 4), int(math.ceil(bx1 / 4.0) * 4))
    m = np.array([[1, 0, -ox], [0, 1, -oy], [0, 0, 1]], dtype=np.float64) @ m

    if np.allclose(m, np.eye(3), atol=0) and out_hw == (h, w):
        return Sample(sample.image.copy(), [TextProposal(p.quad.copy(), p.transcription, p.theta, p.score)
                                            for p in sample.proposals], sample.seed, dict(sample.meta))

    image = _warp(sample.image, m, out_hw)
    window = rect_to_quad((0, 0, out_hw[1], out_hw[0]))
    proposals = []
    converted = 0
    for p in sample.proposals:
        quad = np.c_[p.quad, np.ones(4)] @ m.T
        quad = quad[:, :2]
        text = p.transcription
        area = abs(signed_area(quad))
        inside = intersection_area(quad, window) if area > 0 else 0.0
        if text != DO_NOT_CARE and (area <= 0 or 1.0 - inside / area > cfg.cut_fraction):
            text = DO_NOT_CARE
            converted += 1
        proposals.append(TextProposal(quad, text, score=p.score))
    meta = dict(sample.meta, converted_dont_care=converted, transform=m)
    return Sample(image, proposals, sample.seed, meta)
