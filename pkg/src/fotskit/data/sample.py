from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DO_NOT_CARE = "###"


@dataclass
class TextProposal:
    """One annotated or detected text region in input-image pixels."""
    quad: np.ndarray
    transcription: str = ""
    theta: Optional[float] = None
    score: Optional[float] = None

    def __post_init__(self):
        self.quad = np.asarray(self.quad, dtype=np.float64).reshape(4, 2)
        if self.theta is None:
            from ..geometry import canonical_quad, normalize_angle, quad_angle
            self.theta = normalize_angle(quad_angle(canonical_quad(self.quad)))

    @property
    def dont_care(self):
        return self.transcription == DO_NOT_CARE


@dataclass
class Sample:
    image: np.ndarray                     # (C, H, W) float32 in [0, 1]
    proposals: list = field(default_factory=list)
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.image.shape[1:]
