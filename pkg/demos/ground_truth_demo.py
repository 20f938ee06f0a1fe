"""Build score / geometry / angle maps for a scene and decode them back into boxes."""
import numpy as np

from fotskit.data import SynthConfig, render_synthetic
from fotskit.detection import build_ground_truth, decode_predictions
from fotskit.geometry import polygon_iou

sample = render_synthetic(SynthConfig(count_range=(3, 3)), seed=3)
gt = build_ground_truth(sample.proposals, sample.image.shape[1:])
print("map shape:", gt.score.shape, "positive pixels:", int(gt.score.sum()))
boxes = decode_predictions(gt, score_thresh=0.5, nms_thresh=0.2)
for prop in sample.proposals:
    best = max(polygon_iou(b.quad, prop.quad) for b in boxes)
    print(f"{prop.transcription!r}: best decoded IoU {best:.4f}")
