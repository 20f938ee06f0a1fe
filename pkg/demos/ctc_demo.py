"""CTC loss, its gradient, greedy decoding and lexicon matching."""
import numpy as np

from fotskit.ctc import ctc_greedy_decode, ctc_loss_and_grad, lexicon_match
from fotskit.nn.functional import log_softmax
from fotskit.recognition import CharSet

charset = CharSet("0123456789")
rng = np.random.default_rng(0)
logits = 0.5 * rng.normal(size=(12, charset.num_classes))
logits[:, charset.blank_index] += 3.0
label = charset.encode("2024")
# make the label's path likely: frames 1, 4, 7, 10 favour its symbols
for frame, k in zip((1, 4, 7, 10), label):
    logits[frame, k] += 6.0
lp, _ = log_softmax(logits)

loss, grad = ctc_loss_and_grad(lp, label, charset.blank_index)
print(f"CTC loss for '2024': {loss:.4f}")
print("gradient rows sum to -1 (one unit of occupancy per frame):", np.round(grad.sum(axis=1), 6))

decoded = charset.decode(ctc_greedy_decode(lp, blank=charset.blank_index))
print("greedy decode:", decoded)
print("closest lexicon word:", lexicon_match(decoded, ["2023", "2024", "1999"]))
