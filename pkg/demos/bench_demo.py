"""Compare joint and two-stage inference time and parameter counts.

Argument: a joint checkpoint (default toy.ckpt, as written by train_toy_demo.py).
"""
import sys

from fotskit.data import SynthConfig, render_dataset
from fotskit.pipeline import FOTSModel
from fotskit.pipeline.bench import bench

model = FOTSModel.load(sys.argv[1] if len(sys.argv) > 1 else "toy.ckpt")
images = [s.image for s in render_dataset(10, SynthConfig(), seed=4)]
report = bench(model, images, repetitions=3)
print(f"{report.regions} regions per run")
for line in report.lines():
    print(line)
