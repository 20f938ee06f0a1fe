"""Model and training configuration, read from ``key = value`` text files."""
import dataclasses
from dataclasses import dataclass, fields

from ..errors import ParseError

MODES = ("joint", "detect_only", "recog_only")


@dataclass
class ModelConfig:
    mode: str = "joint"
    seed: int = 0
    input_channels: int = 3
    # backbone: four stride-2 stages, then two top-down merges
    backbone_channels: tuple = (16, 32, 64, 96)
    merge_channels: tuple = (64, 32)
    deep_convs: int = 1                # stride-1 convs at the end of the 1/16 stage
    # detection
    shrink_ratio: float = 0.3
    lambda_theta: float = 10.0
    lambda_reg: float = 1.0
    score_thresh: float = 0.7
    nms_thresh: float = 0.2
    box_merge: bool = False            # refine NMS survivors by score-weighted averaging
    ohem_hard_neg: int = 512
    ohem_rand_neg: int = 512
    ohem_hard_pos: int = 128
    ohem_rand_pos: int = 128
    # recognition
    h_t: int = 8
    lambda_recog: float = 1.0
    charset: str = ""                  # path to a charset file; empty means digits + A-Z
    recog_channels: tuple = (64, 128, 256)
    lstm_hidden: int = 256
    dropout: float = 0.2
    max_roi_width: int = 0             # 0 disables the cap
    crop_margin: int = 8               # two-stage crops: context pixels around each region
    # optimisation
    optimizer: str = "sgd"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay_epochs: tuple = ()        # epochs after which lr is divided by 10
    batch_size: int = 4
    epochs: int = 10
    bn_momentum: float = 0.9
    # augmentation
    augment: bool = True
    aug_longer_side: tuple = (640, 2560)
    aug_rotation: float = 10.0
    aug_height_scale: tuple = (0.8, 1.2)
    crop_size: int = 320               # 640 in the large-scale setting

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if len(self.backbone_channels) != 4:
            raise ValueError("backbone_channels needs exactly 4 stage widths")
        if self.deep_convs < 1:
            raise ValueError("deep_convs must be >= 1")
        if len(self.merge_channels) != 2:
            raise ValueError("merge_channels needs exactly 2 widths")
        if len(self.recog_channels) != 3:
            raise ValueError("recog_channels needs exactly 3 widths")
        if self.h_t != 8:
            raise ValueError("h_t must be 8: the recognition branch halves the height three times")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.crop_size % 4:
            raise ValueError("crop_size must be a multiple of 4")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def dumps(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def _coerce(name, raw, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        if raw.strip().lower() in ("", "none"):
            return ()
        items = [x.strip() for x in raw.split(",")]
        caster = float if name in ("aug_longer_side", "aug_height_scale") else int
        return tuple(caster(x) for x in items)
    return raw


def parse_config(text, path=None, base=None):
    """Parse ``key = value`` lines over ``base`` (default: :class:`ModelConfig` defaults).

    Blank lines and ``#`` comments are ignored; unknown or repeated keys are errors.
    """
    base = base or ModelConfig()
    typed = ModelConfig()
    defaults = {f.name: getattr(typed, f.name) for f in fields(typed)}
    values = {f.name: getattr(base, f.name) for f in fields(base)}
    seen = set()
    if text.startswith("﻿"):
        text = text[1:]
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", line=k, path=path)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ParseError(f"unknown config key {key!r}", line=k, path=path)
        if key in seen:
            raise ParseError(f"config key {key!r} given twice", line=k, path=path)
        seen.add(key)
        try:
            values[key] = _coerce(key, value, defaults[key])
        except ValueError as exc:
            raise ParseError(f"bad value for {key}: {exc}", line=k, path=path) from None
    if values["aug_longer_side"] == ():
        values["aug_longer_side"] = None
    try:
        return ModelConfig(**values)
    except ValueError as exc:
        raise ParseError(str(exc), path=path) from None


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), path=path)


def toy_config(**overrides):
    """Small configuration sized for the synthetic desk-scale runs."""
    cfg = ModelConfig(
        input_channels=1,
        backbone_channels=(16, 32, 48, 64),
        merge_channels=(48, 32),
        deep_convs=3,
        box_merge=True,
        charset="",
        recog_channels=(32, 64, 96),
        lstm_hidden=96,
        optimizer="adam",
        lr=2e-3,
        batch_size=4,
        epochs=14,
        lr_decay_epochs=(10,),
        aug_longer_side=(320, 400),
        aug_rotation=10.0,
        crop_size=320,
    )
    return cfg.replace(**overrides) if overrides else cfg
