"""Rectify every word of a synthetic image to a fixed-height strip and save them."""
import os
import sys

import numpy as np

from fotskit.data import SynthConfig, render_synthetic, write_pnm
from fotskit.roirotate import params_from_quad, roi_rotate_forward

out_dir = sys.argv[1] if len(sys.argv) > 1 else "roirotate_out"
os.makedirs(out_dir, exist_ok=True)
sample = render_synthetic(SynthConfig(count_range=(3, 3)), seed=7)
write_pnm(os.path.join(out_dir, "scene.pgm"), sample.image)
for k, prop in enumerate(sample.proposals):
    # stride 1 samples the image itself; inside the model the same map runs on stride-4 features
    p = params_from_quad(prop.quad, stride=1, h_t=32)
    strip = roi_rotate_forward(sample.image.astype(np.float64), p)
    path = os.path.join(out_dir, f"word{k}_{prop.transcription}.pgm")
    write_pnm(path, np.clip(strip, 0, 1))
    print(f"{prop.transcription!r}: {strip.shape[2]}x{strip.shape[1]} strip -> {path}")
