"""Detection and end-to-end evaluation with greedy one-to-one matching."""
from dataclasses import dataclass, field

import numpy as np

from ..ctc import lexicon_match
from ..geometry import min_horizontal_rect, polygon_iou


@dataclass
class EvalResult:
    precision: float
    recall: float
    f_measure: float
    matched: int
    missed: int
    false: int
    e2e: dict = field(default_factory=dict)     # lexicon name -> end-to-end F
    det_ms: float = 0.0
    e2e_ms: float = 0.0

    def summary(self):
        parts = [f"P={self.precision:.4f} R={self.recall:.4f} F={self.f_measure:.4f}",
                 f"matched={self.matched} missed={self.missed} false={self.false}"]
        parts += [f"e2e[{k}]={v:.4f}" for k, v in self.e2e.items()]
        return " ".join(parts)


def f_measure(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _boxes_touch(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return ax0 <= bx1 and bx0 <= ax1 and ay0 <= by1 and by0 <= ay1


def _iou(pq, gq, pbox, gbox):
    return polygon_iou(pq, gq) if _boxes_touch(pbox, gbox) else 0.0


def match_image(predictions, ground_truth, iou_thresh=0.5, e2e=False, lexicon=None):
    """Match one image's predictions to its annotations.

    Predictions are visited by descending score; each takes the unmatched
    readable annotation of highest IoU (at least ``iou_thresh``).  With
    ``e2e`` the transcription must also agree, case-insensitively, after
    optional lexicon correction.  An unmatched prediction that overlaps a
    DO_NOT_CARE annotation at ``iou_thresh`` is dropped instead of counted
    as false.  Returns ``(matched, missed, false, pairs)``.
    """
    order = sorted(range(len(predictions)), key=lambda k: -float(predictions[k].score))
    care = [g for g in ground_truth if not g.dont_care]
    ignore = [g for g in ground_truth if g.dont_care]
    care_box = [min_horizontal_rect(g.quad) for g in care]
    ign_box = [min_horizontal_rect(g.quad) for g in ignore]
    taken = np.zeros(len(care), dtype=bool)
    pairs = []
    false = 0
    for k in order:
        p = predictions[k]
        pbox = min_horizontal_rect(p.quad)
        text = p.transcription
        if e2e and lexicon:
            text = lexicon_match(text, lexicon)[0]
        best, best_iou = -1, iou_thresh
        for j, g in enumerate(care):
            if taken[j]:
                continue
            if e2e and text.lower() != g.transcription.lower():
                continue
            iou = _iou(p.quad, g.quad, pbox, care_box[j])
            if iou >= best_iou:
                if best < 0 or iou > best_iou:
                    best, best_iou = j, iou
        if best >= 0:
            taken[best] = True
            pairs.append((k, best))
            continue
        if any(_iou(p.quad, g.quad, pbox, ign_box[j]) >= iou_thresh for j, g in enumerate(ignore)):
            continue
        false += 1
    return len(pairs), int(len(care) - taken.sum()), false, pairs


def evaluate(predictions, ground_truth, iou_thresh=0.5, lexicon=None, e2e=False):
    """Aggregate P/R/F over images.

    ``predictions`` and ``ground_truth`` are parallel lists (one entry per
    image) of objects with ``quad``/``score``/``transcription`` and
    ``quad``/``transcription``/``dont_care`` respectively.
    """
    if len(predictions) != len(ground_truth):
        raise ValueError(f"{len(predictions)} prediction sets for {len(ground_truth)} images")
    tp = fn = fp = 0
    for preds, gts in zip(predictions, ground_truth):
        m, miss, f, _ = match_image(preds, gts, iou_thresh, e2e, lexicon)
        tp, fn, fp = tp + m, fn + miss, fp + f
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return EvalResult(p, r, f_measure(p, r), tp, fn, fp)


def evaluate_spotting(predictions, ground_truth, iou_thresh=0.5, lexicons=None):
    """Detection metrics plus an end-to-end F per lexicon (``None`` = no lexicon)."""
    res = evaluate(predictions, ground_truth, iou_thresh)
    lexicons = lexicons or {"none": None}
    for name, lex in lexicons.items():
        res.e2e[name] = evaluate(predictions, ground_truth, iou_thresh, lex, e2e=True).f_measure
    return res
