"""Connectionist temporal classification: loss, gradient and greedy decoding.

All recursions run in log space.  ``log_probs`` is a (W, K) array of per-frame
log-probabilities; the blank is a class index passed explicitly.
"""
import numpy as np

from .errors import InfeasibleLabelError

NEG_INF = -np.inf


def min_frames(label):
    """Frames needed to emit ``label``: one per symbol plus a blank between repeats."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def _extended(label, blank):
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def _logsumexp(*arrays):
    stacked = np.stack(arrays)
    m = stacked.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(stacked - safe).sum(axis=0))


def _skip_allowed(ext, blank):
    s = np.arange(len(ext))
    allowed = np.zeros(len(ext), dtype=bool)
    allowed[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return allowed & (s >= 2)


def _alpha(lp, ext, skip):
    w, n = lp.shape[0], len(ext)
    alpha = np.full((w, n), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if n > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, w):
        prev = alpha[t - 1]
        shift1 = np.full(n, NEG_INF)
        shift1[1:] = prev[:-1]
        shift2 = np.full(n, NEG_INF)
        shift2[2:] = prev[:-2]
        shift2 = np.where(skip, shift2, NEG_INF)
        alpha[t] = _logsumexp(prev, shift1, shift2) + lp[t, ext]
    return alpha


def _beta(lp, ext, skip):
    # beta[t, s]: log-prob of emitting the rest of the label from frame t+1 on,
    # given state s at frame t (frame t's own emission excluded)
    w, n = lp.shape[0], len(ext)
    beta = np.full((w, n), NEG_INF)
    beta[w - 1, n - 1] = 0.0
    if n > 1:
        beta[w - 1, n - 2] = 0.0
    skip_from = np.zeros(n, dtype=bool)
    skip_from[:max(n - 2, 0)] = skip[2:]
    for t in range(w - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, ext]
        stay = nxt
        step1 = np.full(n, NEG_INF)
        step1[:-1] = nxt[1:]
        step2 = np.full(n, NEG_INF)
        step2[:n - 2] = nxt[2:]
        step2 = np.where(skip_from, step2, NEG_INF)
        beta[t] = _logsumexp(stay, step1, step2)
    return beta


def _check(log_probs, label, blank):
    label = [int(v) for v in label]
    if any(v == blank for v in label):
        raise ValueError("label contains the blank index")
    if min_frames(label) > log_probs.shape[0]:
        raise InfeasibleLabelError(
            f"label of length {len(label)} needs {min_frames(label)} frames, only {log_probs.shape[0]} available")
    return label


def ctc_loss(log_probs, label, blank):
    """``-log p(label | x)`` summed over all alignments."""
    lp = np.asarray(log_probs, dtype=np.float64)
    label = _check(lp, label, blank)
    ext = _extended(label, blank)
    alpha = _alpha(lp, ext, _skip_allowed(ext, blank))
    tail = alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:]
    return float(-_logsumexp(*tail))


def ctc_loss_and_grad(log_probs, label, blank):
    """Loss and its gradient w.r.t. ``log_probs`` (treated as free inputs).

    The gradient is ``-gamma``: minus the posterior occupancy of each class
    at each frame.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    label = _check(lp, label, blank)
    ext = _extended(label, blank)
    skip = _skip_allowed(ext, blank)
    alpha = _alpha(lp, ext, skip)
    beta = _beta(lp, ext, skip)
    tail = alpha[-1, -2:] if len(ext) > 1 else alpha[-1, -1:]
    log_p = float(_logsumexp(*tail))
    occ = np.exp(alpha + beta - log_p)
    grad = np.zeros_like(lp)
    for s, k in enumerate(ext):
        grad[:, k] -= occ[:, s]
    return -log_p, grad


def ctc_batch_loss(log_probs, labels, widths, blank):
    """Mean CTC loss over a padded batch.

    ``log_probs`` is (N, W_max, K); only the first ``widths[n]`` frames of item
    ``n`` are used.  Infeasible items are skipped and counted.  Returns
    ``(loss, grad, n_used, n_skipped)``.
    """
    grad = np.zeros(log_probs.shape, dtype=np.float64)
    losses = []
    used = []
    for n, (label, w) in enumerate(zip(labels, widths)):
        try:
            loss, g = ctc_loss_and_grad(log_probs[n, :int(w)], label, blank)
        except InfeasibleLabelError:
            continue
        losses.append(loss)
        used.append(n)
        grad[n, :int(w)] = g
    if not losses:
        return 0.0, grad, 0, len(labels)
    grad /= len(losses)
    return float(np.mean(losses)), grad, len(losses), len(labels) - len(losses)


def collapse(path, blank):
    """The many-to-one map: merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def ctc_greedy_decode(log_probs, valid_width=None, blank=None):
    lp = np.asarray(log_probs)
    if blank is None:
        blank = lp.shape[1] - 1
    w = lp.shape[0] if valid_width is None else int(valid_width)
    if w < 1:
        raise ValueError("valid_width must be >= 1")
    return collapse(lp[:w].argmax(axis=1), blank)


def levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def lexicon_match(decoded, lexicon):
    """Closest lexicon word by case-insensitive edit distance; ties go to the
    lexicographically smallest word.  Returns ``(word, distance)``."""
    if not lexicon:
        raise ValueError("lexicon is empty")
    key = decoded.lower()
    return min(((w, levenshtein(key, w.lower())) for w in lexicon), key=lambda wd: (wd[1], wd[0]))
