"""ICDAR-style annotation files and dataset manifests.

Annotation lines are ``x1,y1,x2,y2,x3,y3,x4,y4,transcription``; the
transcription may itself contain commas.  ``###`` marks DO_NOT_CARE.
"""
import os

import numpy as np

from ..errors import ParseError
from .pnm import read_pnm, write_pnm
from .sample import Sample, TextProposal


def parse_gt_line(line, lineno=None, path=None):
    parts = line.split(",", 8)
    if len(parts) < 9:
        raise ParseError(f"expected 8 coordinates and a transcription, got {len(parts)} fields",
                         line=lineno, path=path)
    try:
        coords = [float(v) for v in parts[:8]]
    except ValueError:
        # a ninth numeric-looking field means too many vertices
        raise ParseError("non-numeric coordinate", line=lineno, path=path) from None
    tail = parts[8]
    extra = tail.split(",")
    if len(extra) >= 2 and all(_is_number(v) for v in extra[:2]):
        raise ParseError("annotation is not a quadrilateral (more than 4 vertices)", line=lineno, path=path)
    return TextProposal(np.array(coords).reshape(4, 2), tail)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_gt(text, path=None):
    if text.startswith("﻿"):
        text = text[1:]
    proposals = []
    for k, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        proposals.append(parse_gt_line(line, k, path))
    return proposals


def read_gt(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_gt(fh.read(), path)


def format_quad(quad):
    return ",".join(_fmt(v) for v in np.asarray(quad, dtype=np.float64).reshape(-1))


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_gt(path, proposals):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in proposals:
            fh.write(f"{format_quad(p.quad)},{p.transcription}\n")


def pad_to_multiple(image, k=4):
    c, h, w = image.shape
    ph, pw = (-h) % k, (-w) % k
    if not ph and not pw:
        return image
    return np.pad(image, ((0, 0), (0, ph), (0, pw)))


def load_icdar(image_path, gt_path):
    """Read an image and its annotations; the image is zero-padded on the
    bottom/right to multiple-of-4 dimensions (quads are not shifted)."""
    if not os.path.exists(gt_path):
        raise FileNotFoundError(gt_path)
    image = pad_to_multiple(read_pnm(image_path))
    return Sample(image=image, proposals=read_gt(gt_path))


def save_sample(sample, image_path, gt_path):
    write_pnm(image_path, sample.image)
    write_gt(gt_path, sample.proposals)


def read_manifest(path):
    """Pairs of (image, gt) paths, one pair per line; relative paths resolve
    against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t") if "\t" in line else line.split()
            if len(fields) != 2:
                raise ParseError("manifest lines need an image path and a gt path", line=k, path=path)
            pairs.append(tuple(f if os.path.isabs(f) else os.path.join(base, f) for f in fields))
    return pairs


def write_manifest(path, pairs):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for img, gt in pairs:
            fh.write(f"{os.path.relpath(img, base)}\t{os.path.relpath(gt, base)}\n")


def load_dataset(manifest):
    return [load_icdar(img, gt) for img, gt in read_manifest(manifest)]


def save_dataset(samples, directory, prefix="img"):
    """Write samples as PNM + gt files plus a ``manifest.txt``; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    pairs = []
    for k, s in enumerate(samples):
        ext = "pgm" if s.image.shape[0] == 1 else "ppm"
        img = os.path.join(directory, f"{prefix}_{k:05d}.{ext}")
        gt = os.path.join(directory, f"gt_{prefix}_{k:05d}.txt")
        save_sample(s, img, gt)
        pairs.append((img, gt))
    manifest = os.path.join(directory, "manifest.txt")
    write_manifest(manifest, pairs)
    return manifest
