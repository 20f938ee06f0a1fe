from .augment import AugmentConfig, augment
from .icdar import load_dataset, load_icdar, read_gt, read_manifest, save_dataset, write_gt
from .pnm import read_pnm, write_pnm
from .sample import DO_NOT_CARE, Sample, TextProposal
from .synthetic import SynthConfig, render_dataset, render_synthetic
