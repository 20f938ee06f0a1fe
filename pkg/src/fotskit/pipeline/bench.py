"""Timing and model-size comparison of the joint and two-stage pipelines."""
import statistics
from dataclasses import dataclass, field

from .infer import infer, infer_two_stage
from .model import build_detector_and_recognizer


@dataclass
class BenchReport:
    images: int
    repetitions: int
    det_ms: list = field(default_factory=list)        # per run: total ms over all images
    e2e_ms: list = field(default_factory=list)
    two_stage_ms: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    regions: int = 0

    @staticmethod
    def _median(xs):
        return statistics.median(xs) if xs else float("nan")

    @property
    def e2e_over_det(self):
        return self._median(self.e2e_ms) / self._median(self.det_ms)

    @property
    def two_stage_over_e2e(self):
        return self._median(self.two_stage_ms) / self._median(self.e2e_ms)

    def lines(self):
        per = max(self.images, 1)
        out = []
        for name, xs in (("detection-only", self.det_ms), ("end-to-end", self.e2e_ms),
                         ("two-stage", self.two_stage_ms)):
            out.append(f"{name:15s} mean {statistics.fmean(xs) / per:8.2f} ms/img  "
                       f"median {self._median(xs) / per:8.2f} ms/img")
        out.append(f"end-to-end / detection-only = {self.e2e_over_det:.3f}")
        out.append(f"two-stage / end-to-end      = {self.two_stage_over_e2e:.3f}")
        for name, n in self.params.items():
            out.append(f"params {name:22s} {n}")
        shared = self.params.get("joint", 0)
        separate = self.params.get("detector", 0) + self.params.get("recognizer", 0)
        out.append(f"joint < detector + recognizer: {shared} < {separate} -> {shared < separate}")
        return out


def active_parameters(model):
    """Parameters that take part in the model's own forward pass."""
    if model.mode == "recog_only":
        return model.backbone.num_parameters() + model.recog.num_parameters()
    return model.num_parameters()


def bench(model, images, repetitions=5, detector=None, recognizer=None, warmup=1):
    """Time detection-only, end-to-end and two-stage inference over ``images``.

    Each run processes every image once; the report keeps per-run totals so
    medians are taken over runs.  Without an explicit detector/recogniser the
    joint model's weights are split into the two separate networks, which
    share its architecture.
    """
    if detector is None or recognizer is None:
        det_split, rec_split = build_detector_and_recognizer(model)
        detector = detector or det_split
        recognizer = recognizer or rec_split
    report = BenchReport(len(images), repetitions)
    report.params = {"joint": model.num_parameters(), "detector": active_parameters(detector),
                     "recognizer": active_parameters(recognizer)}
    for _ in range(warmup):
        for im in images[:2]:
            infer(model, im)
            infer_two_stage(detector, recognizer, im)
    for _ in range(repetitions):
        det = e2e = two = 0.0
        regions = 0
        for im in images:
            det += infer(model, im, recognize=False).e2e_ms
            r = infer(model, im)
            e2e += r.e2e_ms
            regions += len(r.detections)
            two += infer_two_stage(detector, recognizer, im).e2e_ms
        report.det_ms.append(det)
        report.e2e_ms.append(e2e)
        report.two_stage_ms.append(two)
        report.regions = regions
    return report
