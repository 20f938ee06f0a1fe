"""Text recognition branch: height-reducing CNN, summed BiLSTM, per-frame classifier."""
import string
from dataclasses import dataclass

import numpy as np

from .ctc import ctc_batch_loss, ctc_greedy_decode
from .errors import DimensionError
from .nn import functional as F
from .nn.layers import BiLSTM, ConvBNReLU, Dropout, Linear, Module

DEFAULT_SYMBOLS = string.digits + string.ascii_uppercase


@dataclass(frozen=True)
class CharSet:
    """Ordered symbol set; the CTC blank is the extra class after the last symbol."""
    symbols: str = DEFAULT_SYMBOLS

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in charset")

    @property
    def blank_index(self):
        return len(self.symbols)

    @property
    def num_classes(self):
        return len(self.symbols) + 1

    def encode(self, text):
        try:
            return [self.symbols.index(ch) for ch in text]
        except ValueError:
            missing = sorted(set(text) - set(self.symbols))
            raise ValueError(f"characters {missing} are not in the charset") from None

    def decode(self, indices):
        return "".join(self.symbols[k] for k in indices)

    def dumps(self):
        return "".join(ch + "\n" for ch in self.symbols)

    @classmethod
    def loads(cls, text):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        for k, line in enumerate(lines, 1):
            if len(line) != 1:
                raise ValueError(f"charset line {k} must hold exactly one symbol, got {line!r}")
        return cls("".join(lines))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


class RecognitionBranch(Module):
    """conv_bn_relu x2 / height pool, three times, then BiLSTM, dropout, FC, log-softmax.

    Input is a padded RoI batch (N, C, 8, W) with a (N, W) column mask; the
    width is never reduced, so the output is (N, W, num_classes) log-probs.
    Padded columns are re-zeroed after every conv so each item sees exactly
    what it would see when processed alone.
    """

    def __init__(self, rng, in_channels, num_classes, channels=(64, 128, 256), hidden=256,
                 dropout=0.2, dtype=np.float32):
        super().__init__()
        self.blocks = []
        cin = in_channels
        for stage, cout in enumerate(channels):
            a = self.add_child(f"conv{stage}a", ConvBNReLU(rng, cin, cout, 3, 1, dtype))
            b = self.add_child(f"conv{stage}b", ConvBNReLU(rng, cout, cout, 3, 1, dtype))
            self.blocks.append((a, b))
            cin = cout
        self.lstm = self.add_child("lstm", BiLSTM(rng, cin, hidden, dtype))
        self.drop = self.add_child("dropout", Dropout(dropout))
        self.fc = self.add_child("fc", Linear(rng, hidden, num_classes, dtype))
        self._cache = None

    def forward(self, x, col_mask=None):
        if x.ndim != 4:
            raise DimensionError(f"recognition input must be (N, C, H, W), got rank {x.ndim}")
        if x.shape[2] != 8:
            raise DimensionError(f"recognition input height axis must be 8, got {x.shape[2]}")
        n, _, _, w = x.shape
        if col_mask is None:
            col_mask = np.ones((n, w), dtype=x.dtype)
        col_mask = col_mask.astype(x.dtype)
        m4 = col_mask[:, None, None, :]
        pools = []
        h = x * m4
        for a, b in self.blocks:
            mh = np.broadcast_to(m4, (n, 1, h.shape[2], w))
            h = a.forward(h, mask=mh) * m4
            h = b.forward(h, mask=mh) * m4
            h, pc = F.height_max_pool(h)
            pools.append(pc)
        seq = h[:, :, 0, :].transpose(2, 0, 1)           # (W, N, C)
        enc = self.lstm.forward(np.ascontiguousarray(seq), mask=col_mask.T)
        enc = self.drop.forward(enc)
        logits = self.fc.forward(enc)
        logp, ls_cache = F.log_softmax(logits, axis=-1)
        self._cache = (pools, m4, ls_cache)
        return logp.transpose(1, 0, 2)                    # (N, W, K)

    def backward(self, dlogp):
        pools, m4, ls_cache = self._cache
        d = F.log_softmax_backward(dlogp.transpose(1, 0, 2), ls_cache)
        d = self.fc.backward(d)
        d = self.drop.backward(d)
        d = self.lstm.backward(d)                         # (W, N, C)
        d = d.transpose(1, 2, 0)[:, :, None, :]
        for (a, b), pc in zip(reversed(self.blocks), reversed(pools)):
            d = F.height_max_pool_backward(np.ascontiguousarray(d), pc)
            d = b.backward(d * m4)
            d = a.backward(d * m4)
        self._cache = None
        return d * m4


def recognition_loss(log_probs, labels, widths, blank):
    """Mean CTC loss over the regions in a batch; see :func:`ctc_batch_loss`."""
    return ctc_batch_loss(log_probs, labels, widths, blank)


def decode_batch(log_probs, widths, charset):
    return [charset.decode(ctc_greedy_decode(log_probs[n], max(int(w), 1), charset.blank_index))
            for n, w in enumerate(widths)]
