"""Shared-convolution spotting network: backbone, detection head, recognition branch.

``FOTSModel`` holds one backbone whose 1/4-resolution feature map feeds both
the dense detection head and, through RoIRotate, the recognition branch.
The mode decides which heads take part in the loss:

* ``joint``: detection and recognition share every backbone update.
* ``detect_only``: no recognition branch at all (the separate detector).
* ``recog_only``: the separate recogniser; it reads image crops, and its
  detection head is built but never used.
"""
import math

import numpy as np

from .. import checkpoint
from ..errors import DimensionError
from ..geometry import min_horizontal_rect
from ..nn import functional as F
from ..nn.layers import Conv2d, ConvBNReLU, Module
from ..recognition import CharSet, RecognitionBranch
from ..roirotate import batch_backward, batch_extract, params_from_quad
from .config import ModelConfig, parse_config

STRIDE = 4
GEO_SCALE = 4.0
GEO_LOGIT_MAX = 10.0


class Backbone(Module):
    """Four stride-2 stages followed by two top-down merges back to 1/4 scale.

    ``deep_convs`` stride-1 3x3 convs close the last (1/16) stage; each adds
    32 input pixels of receptive field at little cost.

    Each merge is a 1x1 conv, a bilinear x2 upsample cropped to the skip
    connection's size, a channel concat with that skip, and a 3x3 conv.
    """

    def __init__(self, rng, in_channels, widths=(16, 32, 64, 96), merge=(64, 32),
                 bn_momentum=0.9, dtype=np.float32, deep_convs=1):
        super().__init__()
        c1, c2, c3, c4 = widths
        m3, m2 = merge
        self.in_channels = in_channels
        add = self.add_child
        self.stages = [
            [add("s1", ConvBNReLU(rng, in_channels, c1, 3, 2, dtype))],
            [add("s2a", ConvBNReLU(rng, c1, c2, 3, 2, dtype)), add("s2b", ConvBNReLU(rng, c2, c2, 3, 1, dtype))],
            [add("s3a", ConvBNReLU(rng, c2, c3, 3, 2, dtype)), add("s3b", ConvBNReLU(rng, c3, c3, 3, 1, dtype))],
            [add("s4a", ConvBNReLU(rng, c3, c4, 3, 2, dtype))]
            + [add(f"s4{chr(98 + k)}", ConvBNReLU(rng, c4, c4, 3, 1, dtype)) for k in range(deep_convs)],
        ]
        self.lat4 = add("lat4", Conv2d(rng, c4, m3, 1, dtype=dtype))
        self.merge3 = add("merge3", ConvBNReLU(rng, m3 + c3, m3, 3, 1, dtype))
        self.lat3 = add("lat3", Conv2d(rng, m3, m2, 1, dtype=dtype))
        self.merge2 = add("merge2", ConvBNReLU(rng, m2 + c2, m2, 3, 1, dtype))
        for _, child in self._children.items():
            for m in [child] + list(child._iter_modules()):
                if hasattr(m, "momentum"):
                    m.momentum = bn_momentum
        self.out_channels = m2
        self._cache = None

    def forward(self, x):
        if x.ndim != 4:
            raise DimensionError(f"backbone expects (N, C, H, W) images, got rank {x.ndim}")
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"backbone expects {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[2] % STRIDE or x.shape[3] % STRIDE:
            raise DimensionError(f"image height and width must be multiples of {STRIDE}, got {x.shape[2:]}")
        skips = []
        h = x
        for stage in self.stages:
            for layer in stage:
                h = layer.forward(h)
            skips.append(h)
        _, c2, c3, c4 = skips
        m, up4 = self._merge(c4, c3, self.lat4, self.merge3)
        out, up3 = self._merge(m, c2, self.lat3, self.merge2)
        self._cache = (up4, up3, c3.shape[1], c2.shape[1])
        return out

    @staticmethod
    def _merge(deep, skip, lateral, fuse):
        lat = lateral.forward(deep)
        up, ucache = F.bilinear_upsample(lat, 2)
        hs, ws = skip.shape[2:]
        full = up.shape
        up = up[:, :, :hs, :ws]
        return fuse.forward(np.concatenate([up, skip], axis=1)), (ucache, full)

    @staticmethod
    def _merge_backward(dout, lateral, fuse, ucache, n_skip):
        (cache, full) = ucache
        dcat = fuse.backward(dout)
        n_up = dcat.shape[1] - n_skip
        dup = np.zeros(full, dtype=dout.dtype)
        dup[:, :, :dcat.shape[2], :dcat.shape[3]] = dcat[:, :n_up]
        dlat = F.bilinear_upsample_backward(dup, cache)
        return lateral.backward(dlat), dcat[:, n_up:]

    def backward(self, dout):
        up4, up3, n3, n2 = self._cache
        dm, dc2 = self._merge_backward(dout, self.lat3, self.merge2, up3, n2)
        dc4, dc3 = self._merge_backward(dm, self.lat4, self.merge3, up4, n3)
        dskips = [None, dc2, dc3, dc4]
        d = None
        for k in range(3, -1, -1):
            if dskips[k] is not None:
                d = dskips[k] if d is None else d + dskips[k]
            for layer in reversed(self.stages[k]):
                d = layer.backward(d)
        self._cache = None
        return d


class DetectionHead(Module):
    """1x1 conv to six channels: text score, four side distances, angle.

    The score is a sigmoid, the distances ``4 * exp(z)`` input pixels and the
    angle a raw linear output in radians.
    """

    def __init__(self, rng, in_channels, dtype=np.float32):
        super().__init__()
        self.conv = self.add_child("conv", Conv2d(rng, in_channels, 6, 1, dtype=dtype))
        self.conv.weight.data *= 0.1
        self._cache = None

    def forward(self, feats):
        z = self.conv.forward(feats)
        logits = z[:, 0:1]
        zg = z[:, 1:5]
        geo = GEO_SCALE * np.exp(np.minimum(zg, GEO_LOGIT_MAX))
        self._cache = (geo, zg < GEO_LOGIT_MAX)
        return logits, F.sigmoid(logits), geo, z[:, 5:6]

    def backward(self, dlogits, dgeo, dangle):
        geo, live = self._cache
        dz = np.concatenate([dlogits, dgeo * geo * live, dangle], axis=1).astype(geo.dtype, copy=False)
        self._cache = None
        return self.conv.backward(dz)


class FOTSModel(Module):
    def __init__(self, config=None, charset=None):
        super().__init__()
        self.config = config or ModelConfig()
        self.charset = charset if charset is not None else _load_charset(self.config.charset)
        cfg = self.config
        det_seed, rec_seed = np.random.SeedSequence(cfg.seed).spawn(2)
        rng = np.random.default_rng(det_seed)
        self.backbone = self.add_child("backbone", Backbone(
            rng, cfg.input_channels, cfg.backbone_channels, cfg.merge_channels, cfg.bn_momentum,
            deep_convs=cfg.deep_convs))
        self.det_head = self.add_child("det_head", DetectionHead(rng, self.backbone.out_channels))
        self.recog = None
        if cfg.mode != "detect_only":
            self.recog = self.add_child("recog", RecognitionBranch(
                np.random.default_rng(rec_seed), self.backbone.out_channels, self.charset.num_classes,
                cfg.recog_channels, cfg.lstm_hidden, cfg.dropout))
            for m in self.recog._iter_modules():
                if hasattr(m, "momentum"):
                    m.momentum = cfg.bn_momentum

    @property
    def mode(self):
        return self.config.mode

    @property
    def max_width(self):
        return self.config.max_roi_width or None

    def set_dropout_rng(self, rng):
        if self.recog is not None:
            self.recog.drop.rng = rng

    # -- forward pieces -----------------------------------------------------

    def features(self, images):
        return self.backbone.forward(images)

    def detect(self, feats):
        """``(logits, score, geo, angle)`` maps at 1/4 resolution."""
        return self.det_head.forward(feats)

    def roi_params(self, quads, offset=(0.0, 0.0), feat_width=None):
        """Affine parameters for image-pixel quads, shifted by ``-offset``; quads
        too small to rectify come back as ``None``.  Widths are capped at
        ``max_roi_width`` if configured, else at ``feat_width``."""
        out = []
        off = np.asarray(offset, dtype=np.float64)
        cap = self.max_width or feat_width
        for q in quads:
            try:
                out.append(params_from_quad(np.asarray(q) - off, STRIDE, self.config.h_t, cap))
            except (ValueError, ArithmeticError):
                out.append(None)
        return out

    def recognize(self, feats, params, image_index=None):
        """Rectify regions of ``feats`` and run the recognition branch.

        Returns ``(roi_batch, log_probs)``; ``log_probs`` is (N, W_max, K).
        """
        batch = batch_extract(feats, params, self.config.h_t, image_index)
        if len(batch) == 0:
            return batch, np.zeros((0, 0, self.charset.num_classes), dtype=feats.dtype)
        return batch, self.recog.forward(batch.features, batch.mask)

    def recognize_backward(self, dlogp, batch, feat_shape):
        droi = self.recog.backward(dlogp.astype(batch.features.dtype, copy=False))
        return batch_backward(droi, batch, feat_shape)

    # -- persistence ----------------------------------------------------------

    def state_with_meta(self):
        state = dict(self.state_dict())
        state["__config__"] = _text_to_array(self.config.dumps())
        state["__charset__"] = _text_to_array(self.charset.symbols)
        return state

    def save(self, path):
        checkpoint.save(path, self.state_with_meta())

    @classmethod
    def from_state(cls, state, mode=None):
        state = dict(state)
        config = parse_config(_array_to_text(state.pop("__config__")))
        if mode is not None:
            config = config.replace(mode=mode)
        charset = CharSet(_array_to_text(state.pop("__charset__")))
        model = cls(config, charset)
        model.load_state_dict(state, strict=mode is None)
        return model

    @classmethod
    def load(cls, path, mode=None):
        return cls.from_state(checkpoint.load(path), mode)


def _load_charset(path):
    return CharSet.load(path) if path else CharSet()


def _text_to_array(text):
    return np.array([ord(ch) for ch in text], dtype=np.float32)


def _array_to_text(arr):
    return "".join(chr(int(v)) for v in np.asarray(arr).reshape(-1))


# --------------------------------------------------------------------------
# two-stage recogniser input: axis-aligned crops around each region
# --------------------------------------------------------------------------

def crop_window(quad, image_hw, margin=8):
    """Axis-aligned crop ``(x0, y0, x1, y1)`` around ``quad`` with ``margin``
    context pixels; corners are snapped outward to multiples of 4 and clipped
    to the image."""
    h, w = image_hw
    x0, y0, x1, y1 = min_horizontal_rect(quad)
    x0 = max(0, int(math.floor((x0 - margin) / STRIDE)) * STRIDE)
    y0 = max(0, int(math.floor((y0 - margin) / STRIDE)) * STRIDE)
    x1 = min(w, int(math.ceil((x1 + margin) / STRIDE)) * STRIDE)
    y1 = min(h, int(math.ceil((y1 + margin) / STRIDE)) * STRIDE)
    x1 = max(x1, x0 + STRIDE)
    y1 = max(y1, y0 + STRIDE)
    return x0, y0, x1, y1


def crop_batch(images, quads, image_index, margin=8):
    """Cut one crop per region and zero-pad them into a common (N, C, H, W) block.

    Returns ``(crops, origins)`` where ``origins[k]`` is the crop's top-left
    corner in image pixels.
    """
    windows = []
    for q, b in zip(quads, image_index):
        windows.append(crop_window(q, images.shape[2:], margin))
    if not windows:
        return np.zeros((0, images.shape[1], STRIDE, STRIDE), images.dtype), np.zeros((0, 2))
    hmax = max(y1 - y0 for x0, y0, x1, y1 in windows)
    wmax = max(x1 - x0 for x0, y0, x1, y1 in windows)
    crops = np.zeros((len(windows), images.shape[1], hmax, wmax), dtype=images.dtype)
    for k, ((x0, y0, x1, y1), b) in enumerate(zip(windows, image_index)):
        crops[k, :, :y1 - y0, :x1 - x0] = images[b, :, y0:y1, x0:x1]
    origins = np.array([(x0, y0) for x0, y0, _, _ in windows], dtype=np.float64)
    return crops, origins


def build_detector_and_recognizer(model):
    """Split a joint model's weights into the two separate networks of a
    two-stage pipeline (for timing and parameter accounting)."""
    state = model.state_with_meta()
    det = FOTSModel.from_state(state, mode="detect_only")
    rec = FOTSModel.from_state(state, mode="recog_only")
    return det, rec
