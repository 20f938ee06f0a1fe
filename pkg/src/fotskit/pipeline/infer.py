"""Inference: detect, rectify the detected regions, recognise."""
import time
from dataclasses import dataclass, field

import numpy as np

from ..ctc import lexicon_match
from ..data.icdar import format_quad, pad_to_multiple
from ..detection import ScoreGeoMaps, decode_predictions
from ..recognition import decode_batch
from .model import STRIDE, crop_batch


@dataclass
class Detection:
    quad: np.ndarray
    score: float
    transcription: str = ""
    theta: float = 0.0

    def to_line(self):
        return f"{format_quad(np.round(self.quad, 2))},{self.score:.6f},{self.transcription}"


@dataclass
class InferResult:
    detections: list = field(default_factory=list)
    det_ms: float = 0.0
    e2e_ms: float = 0.0


def _as_batch(image):
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        image = image[None]
    return pad_to_multiple(image, STRIDE)[None]


def _thresholds(model, score_thresh, nms_thresh):
    cfg = model.config
    return (cfg.score_thresh if score_thresh is None else score_thresh,
            cfg.nms_thresh if nms_thresh is None else nms_thresh)


def detect_boxes(model, batch, score_thresh, nms_thresh):
    feats = model.features(batch)
    _, score, geo, angle = model.detect(feats)
    maps = ScoreGeoMaps(score[0], geo[0], angle[0], mask=None)
    return feats, decode_predictions(maps, score_thresh, nms_thresh, STRIDE, merge=model.config.box_merge)


def _apply_lexicon(texts, lexicon):
    if not lexicon:
        return texts
    return [lexicon_match(t, lexicon)[0] for t in texts]


def infer(model, image, score_thresh=None, nms_thresh=None, lexicon=None, recognize=True):
    """Spot text in one (C, H, W) image with a joint model.

    Returns an :class:`InferResult` with the detection-only and end-to-end
    wall-clock times in milliseconds.
    """
    model.eval()
    score_thresh, nms_thresh = _thresholds(model, score_thresh, nms_thresh)
    t0 = time.perf_counter()
    batch = _as_batch(image)
    feats, boxes = detect_boxes(model, batch, score_thresh, nms_thresh)
    t1 = time.perf_counter()
    dets = [Detection(b.quad, b.score, "", b.theta) for b in boxes]
    if recognize and model.recog is not None and dets:
        params = model.roi_params([d.quad for d in dets], feat_width=feats.shape[3])
        ok = [k for k, p in enumerate(params) if p is not None]
        if ok:
            roi, logp = model.recognize(feats, [params[k] for k in ok])
            texts = _apply_lexicon(decode_batch(logp, roi.widths, model.charset), lexicon)
            for k, t in zip(ok, texts):
                dets[k].transcription = t
    t2 = time.perf_counter()
    return InferResult(dets, (t1 - t0) * 1e3, (t2 - t0) * 1e3)


def infer_two_stage(detector, recognizer, image, score_thresh=None, nms_thresh=None, lexicon=None):
    """Separate detector, then the recogniser re-encodes a crop around each region."""
    detector.eval()
    recognizer.eval()
    score_thresh, nms_thresh = _thresholds(detector, score_thresh, nms_thresh)
    t0 = time.perf_counter()
    batch = _as_batch(image)
    _, boxes = detect_boxes(detector, batch, score_thresh, nms_thresh)
    t1 = time.perf_counter()
    dets = [Detection(b.quad, b.score, "", b.theta) for b in boxes]
    if dets:
        quads = [d.quad for d in dets]
        crops, origins = crop_batch(batch, quads, np.zeros(len(quads), dtype=np.int64),
                                    recognizer.config.crop_margin)
        params = [recognizer.roi_params([q], o, crops.shape[3] // STRIDE)[0] for q, o in zip(quads, origins)]
        ok = [k for k, p in enumerate(params) if p is not None]
        if ok:
            feats = recognizer.features(crops[ok])
            roi, logp = recognizer.recognize(feats, [params[k] for k in ok], np.arange(len(ok)))
            texts = _apply_lexicon(decode_batch(logp, roi.widths, recognizer.charset), lexicon)
            for k, t in zip(ok, texts):
                dets[k].transcription = t
    t2 = time.perf_counter()
    return InferResult(dets, (t1 - t0) * 1e3, (t2 - t0) * 1e3)


def write_predictions(path, detections):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in detections:
            fh.write(d.to_line() + "\n")


def read_predictions(path):
    """Parse ``x1,y1,...,x4,y4,score,transcription`` lines."""
    from ..errors import ParseError
    out = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split(",", 9)
            if len(parts) < 9:
                raise ParseError("prediction lines need 8 coordinates and a score", line=k, path=path)
            try:
                coords = np.array([float(v) for v in parts[:8]]).reshape(4, 2)
                score = float(parts[8])
            except ValueError:
                raise ParseError("non-numeric coordinate or score", line=k, path=path) from None
            out.append(Detection(coords, score, parts[9] if len(parts) > 9 else ""))
    return out
