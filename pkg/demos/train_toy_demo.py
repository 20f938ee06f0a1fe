"""Train a joint model on synthetic digits for a few epochs, then spot, score and save it.

Arguments: number of epochs (default 6, about 10 minutes; 14 give the full toy model) and the
checkpoint path (default toy.ckpt).
"""
import sys

from fotskit.data import SynthConfig, render_dataset
from fotskit.pipeline import evaluate_spotting, infer, toy_config, train_model

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 6
ckpt = sys.argv[2] if len(sys.argv) > 2 else "toy.ckpt"
train = render_dataset(500, SynthConfig(), seed=1)
test = render_dataset(20, SynthConfig(), seed=2)
cfg = toy_config(epochs=epochs, lr_decay_epochs=(round(epochs * 5 / 7),))


def show(row):
    if row["step"] % 25 == 0:
        print(f"step {row['step']:4d} loss {row['loss']:.3f} (det {row['det']:.3f}, recog {row['recog']:.3f})")


result = train_model(train, cfg, progress=show)
print(f"trained in {result.seconds:.0f}s")
result.model.save(ckpt)
preds = [infer(result.model, s.image).detections for s in test]
res = evaluate_spotting(preds, [s.proposals for s in test])
print(f"detection F {res.f_measure:.3f}, end-to-end F {res.e2e['none']:.3f}")
for d in preds[0]:
    print(d.to_line())
