"""Training loops for the joint model and the two-stage baseline.

One optimisation step on a batch of images:

1. backbone forward on the whole batch;
2. detection loss on OHEM-selected pixels of every image;
3. RoIRotate on the ground-truth regions, recognition branch, CTC loss;
4. ``L = L_det + lambda_recog * L_recog`` and a single backward pass into
   the shared features.

Randomness comes from independent streams (shuffling, augmentation, OHEM,
dropout) derived from ``config.seed``, so a joint run with
``lambda_recog = 0`` takes exactly the same steps as a ``detect_only`` run.
"""
import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ..data.augment import AugmentConfig, augment
from ..detection import (
    build_ground_truth, classification_loss_logits, regression_loss, select_ohem,
)
from ..errors import TrainingAbort
from ..nn.optim import SGD, Adam
from ..recognition import recognition_loss
from .model import STRIDE, FOTSModel, crop_batch

log = logging.getLogger(__name__)

TRACE_FIELDS = ("step", "epoch", "loss", "det", "cls", "reg", "recog", "regions", "lr")


@dataclass
class TrainResult:
    model: FOTSModel
    trace: list = field(default_factory=list)
    seconds: float = 0.0

    def save_trace(self, path):
        save_trace(path, self.trace)


def save_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def load_trace(path):
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k in ("step", "epoch", "regions") else float(v)) for k, v in r.items()})
    return out


def training_streams(seed):
    shuffle, aug, ohem, drop = np.random.SeedSequence([int(seed), 1]).spawn(4)
    return {name: np.random.default_rng(s) for name, s in
            (("shuffle", shuffle), ("augment", aug), ("ohem", ohem), ("dropout", drop))}


def augment_config(config):
    if not config.augment:
        return None
    return AugmentConfig(longer_side=config.aug_longer_side, rotation_deg=config.aug_rotation,
                         height_scale=config.aug_height_scale,
                         crop=(config.crop_size, config.crop_size))


def stack_images(images):
    """Zero-pad (C, H, W) images to a common multiple-of-4 size and stack them."""
    h = max(im.shape[1] for im in images)
    w = max(im.shape[2] for im in images)
    h, w = -(-h // STRIDE) * STRIDE, -(-w // STRIDE) * STRIDE
    out = np.zeros((len(images), images[0].shape[0], h, w), dtype=np.float32)
    for k, im in enumerate(images):
        out[k, :, :im.shape[1], :im.shape[2]] = im
    return out


def recognition_targets(proposals, charset):
    """Indices and encoded labels of the regions used for recognition; DO_NOT_CARE
    regions and transcriptions outside the charset are left out."""
    picks, labels = [], []
    for k, p in enumerate(proposals):
        if p.dont_care or not p.transcription:
            continue
        try:
            labels.append(charset.encode(p.transcription))
        except ValueError:
            continue
        picks.append(k)
    return picks, labels


def make_optimizer(model, config):
    params = model.parameters()
    if config.optimizer == "adam":
        return Adam(params, lr=config.lr, weight_decay=config.weight_decay)
    return SGD(params, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)


class Trainer:
    """Holds the model, optimiser and RNG streams; ``step`` runs one update."""

    def __init__(self, config, charset=None, model=None):
        self.config = config
        self.model = model or FOTSModel(config, charset)
        self.model.train()
        self.streams = training_streams(config.seed)
        self.model.set_dropout_rng(self.streams["dropout"])
        self.optimizer = make_optimizer(self.model, config)
        self.aug = augment_config(config)
        self.step_count = 0
        self.trace = []

    # -- data ------------------------------------------------------------------

    def prepare(self, samples):
        if self.aug is not None:
            samples = [augment(s, self.streams["augment"], self.aug) for s in samples]
        images = stack_images([s.image for s in samples])
        return samples, images

    # -- losses ----------------------------------------------------------------

    def _detection(self, feats, samples, images):
        cfg = self.config
        logits, score, geo, angle = self.model.detect(feats)
        b = len(samples)
        dlogits = np.zeros_like(logits)
        dgeo = np.zeros_like(geo)
        dangle = np.zeros_like(angle)
        cls_total = reg_total = 0.0
        for k, s in enumerate(samples):
            gt = build_ground_truth(s.proposals, images.shape[2:], cfg.shrink_ratio, STRIDE)
            sel = select_ohem(score[k], gt, self.streams["ohem"], geo[k], angle[k], cfg.lambda_theta,
                              cfg.ohem_hard_neg, cfg.ohem_rand_neg, cfg.ohem_hard_pos, cfg.ohem_rand_pos)
            lc, gl = classification_loss_logits(logits[k], gt, sel)
            lr_, gg, ga = regression_loss(geo[k], angle[k], gt, sel, cfg.lambda_theta)
            cls_total += lc
            reg_total += lr_
            dlogits[k] = gl / b
            dgeo[k] = cfg.lambda_reg * gg / b
            dangle[k] = cfg.lambda_reg * ga / b
        cls_loss, reg_loss = cls_total / b, reg_total / b
        return cls_loss, reg_loss, (dlogits, dgeo, dangle)

    def _regions(self, samples):
        quads, labels, index = [], [], []
        for k, s in enumerate(samples):
            picks, labs = recognition_targets(s.proposals, self.model.charset)
            for j, lab in zip(picks, labs):
                quads.append(s.proposals[j].quad)
                labels.append(lab)
                index.append(k)
        return quads, labels, index

    def _recognition_joint(self, feats, samples):
        quads, labels, index = self._regions(samples)
        params = self.model.roi_params(quads, feat_width=feats.shape[3])
        keep = [k for k, p in enumerate(params) if p is not None]
        if not keep:
            return 0.0, 0, None
        params = [params[k] for k in keep]
        labels = [labels[k] for k in keep]
        batch, logp = self.model.recognize(feats, params, [index[k] for k in keep])
        loss, dlogp, used, _ = recognition_loss(logp, labels, batch.widths, self.model.charset.blank_index)
        if used == 0:
            return 0.0, 0, None
        return loss, used, (dlogp, batch)

    # -- step ------------------------------------------------------------------

    def step(self, samples, epoch=0):
        cfg = self.config
        model = self.model
        samples, images = self.prepare(samples)
        self.optimizer.zero_grad()
        if cfg.mode == "recog_only":
            return self._record(epoch, *self._step_recognizer(samples, images))

        feats = model.features(images)
        cls_loss, reg_loss, dhead = self._detection(feats, samples, images)
        det_loss = cls_loss + cfg.lambda_reg * reg_loss
        rec_loss, n_rec, rec_back = 0.0, 0, None
        if cfg.mode == "joint":
            rec_loss, n_rec, rec_back = self._recognition_joint(feats, samples)
        total = det_loss + cfg.lambda_recog * rec_loss
        self._check(total, det_loss, rec_loss)

        dfeat = model.det_head.backward(*dhead)
        if rec_back is not None:
            dlogp, batch = rec_back
            dfeat = dfeat + model.recognize_backward(cfg.lambda_recog * dlogp, batch, feats.shape)
        model.backbone.backward(dfeat)
        self.optimizer.step()
        return self._record(epoch, total, det_loss, cls_loss, reg_loss, rec_loss, n_rec)

    def _step_recognizer(self, samples, images):
        cfg = self.config
        model = self.model
        quads, labels, index = self._regions(samples)
        if not quads:
            return 0.0, 0.0, 0.0, 0.0, 0.0, 0
        crops, origins = crop_batch(images, quads, index, cfg.crop_margin)
        params = [model.roi_params([q], o, crops.shape[3] // STRIDE)[0] for q, o in zip(quads, origins)]
        keep = [k for k, p in enumerate(params) if p is not None]
        if not keep:
            return 0.0, 0.0, 0.0, 0.0, 0.0, 0
        crops = crops[keep]
        feats = model.features(crops)
        batch, logp = model.recognize(feats, [params[k] for k in keep], np.arange(len(keep)))
        loss, dlogp, used, _ = recognition_loss(logp, [labels[k] for k in keep], batch.widths,
                                                model.charset.blank_index)
        self._check(loss, 0.0, loss)
        if used:
            model.backbone.backward(model.recognize_backward(dlogp, batch, feats.shape))
            self.optimizer.step()
        return loss, 0.0, 0.0, 0.0, loss, used

    def _check(self, total, det, rec):
        if not np.isfinite(total):
            raise TrainingAbort(f"non-finite loss at step {self.step_count}: detection={det!r}, "
                                f"recognition={rec!r}")

    def _record(self, epoch, total, det, cls, reg, rec, n_rec):
        row = {"step": self.step_count, "epoch": epoch, "loss": float(total), "det": float(det),
               "cls": float(cls), "reg": float(reg), "recog": float(rec), "regions": int(n_rec),
               "lr": float(self.optimizer.lr)}
        self.trace.append(row)
        self.step_count += 1
        return row

    def set_lr(self, lr):
        self.optimizer.lr = lr

    def fit(self, dataset, epochs=None, max_steps=None, progress=None):
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        n = len(dataset)
        start = time.perf_counter()
        for epoch in range(epochs):
            lr = cfg.lr * (0.1 ** sum(1 for e in cfg.lr_decay_epochs if epoch >= e))
            self.set_lr(lr)
            order = self.streams["shuffle"].permutation(n)
            for lo in range(0, n, cfg.batch_size):
                batch = [dataset[i] for i in order[lo:lo + cfg.batch_size]]
                row = self.step(batch, epoch)
                if progress is not None:
                    progress(row)
                if max_steps is not None and self.step_count >= max_steps:
                    return TrainResult(self.model, self.trace, time.perf_counter() - start)
            log.info("epoch %d done: last loss %.4f", epoch, self.trace[-1]["loss"] if self.trace else float("nan"))
        self.model.eval()
        return TrainResult(self.model, self.trace, time.perf_counter() - start)


def train_joint(dataset, config, epochs=None, charset=None, max_steps=None, progress=None):
    if config.mode != "joint":
        raise ValueError(f"train_joint needs mode 'joint', got {config.mode!r}")
    result = Trainer(config, charset).fit(dataset, epochs, max_steps, progress)
    result.model.eval()
    return result


def train_model(dataset, config, epochs=None, charset=None, max_steps=None, progress=None):
    """Train in whatever mode ``config`` names."""
    result = Trainer(config, charset).fit(dataset, epochs, max_steps, progress)
    result.model.eval()
    return result


def train_two_stage(dataset, config, epochs=None, charset=None, max_steps=None, progress=None):
    """Train the separate detector and recogniser with the same seed and budget.

    Returns ``(detector_result, recognizer_result)``.
    """
    det = train_model(dataset, config.replace(mode="detect_only"), epochs, charset, max_steps, progress)
    rec = train_model(dataset, config.replace(mode="recog_only"), epochs, charset, max_steps, progress)
    return det, rec
