"""Rotated boxes: geometry round trip, polygon IoU and rotated NMS."""
import numpy as np

from fotskit.geometry import ScoredBox, polygon_iou, quad_to_rbox, rbox_to_quad, rotated_nms, shrink_quad

anchor = (60.0, 40.0)
quad = rbox_to_quad(anchor, (6, 10, 30, 20, 0.3))
print("quad from anchor + (t, b, l, r, theta):\n", np.round(quad, 2))
print("recovered rbox:", np.round(quad_to_rbox(quad, anchor), 4))
print("shrunk quad:\n", np.round(shrink_quad(quad, 0.3), 2))

other = rbox_to_quad((64.0, 42.0), (6, 10, 30, 20, 0.25))
print(f"IoU with a nearby box: {polygon_iou(quad, other):.4f}")

boxes = [ScoredBox(quad, 0.3, 0.9), ScoredBox(other, 0.25, 0.8),
         ScoredBox(rbox_to_quad((150.0, 90.0), (5, 5, 12, 12, -0.4)), -0.4, 0.7)]
kept = rotated_nms(boxes, iou_thresh=0.2)
print("NMS keeps scores:", [b.score for b in kept])
