import math

import numpy as np
import pytest
from scipy import ndimage

from fotskit.data import (
    DO_NOT_CARE, AugmentConfig, Sample, SynthConfig, TextProposal, augment, load_dataset,
    load_icdar, read_pnm, render_dataset, render_synthetic, save_dataset, write_pnm,
)
from fotskit.data.icdar import parse_gt, parse_gt_line, read_manifest, write_gt
from fotskit.data.synthetic import GLYPH_ASPECT, MARGIN, SPACING, THICKNESS, ink_coverage
from fotskit.errors import ParseError
from fotskit.geometry import quad_to_rbox, rect_to_quad


# --- PNM ------------------------------------------------------------------------------

@pytest.mark.parametrize("channels", [1, 3])
def test_pnm_round_trip(tmp_path, rng, channels):
    img = rng.integers(0, 256, (channels, 7, 5)) / 255.0
    path = tmp_path / "x.pnm"
    write_pnm(path, img)
    back = read_pnm(path)
    assert back.shape == img.shape and back.dtype == np.float32
    assert np.max(np.abs(back - img)) < 1e-6


def test_pnm_header_comments_and_errors(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# comment\n2 1\n255\n\x00\xff")
    assert np.allclose(read_pnm(path), [[[0, 1]]])
    bad = tmp_path / "b.pgm"
    bad.write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(ParseError):
        read_pnm(bad)
    short = tmp_path / "s.pgm"
    short.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ParseError):
        read_pnm(short)


# --- ICDAR annotations ----------------------------------------------------------------

def test_parse_examples():
    p = parse_gt_line("0,0,10,0,10,5,0,5,hello")
    assert np.array_equal(p.quad, rect_to_quad((0, 0, 10, 5))) and p.transcription == "hello"
    assert parse_gt_line("0,0,10,0,10,5,0,5,###").dont_care
    assert parse_gt_line("0,0,10,0,10,5,0,5,a,b").transcription == "a,b"


def test_parse_bom_crlf_and_errors():
    props = parse_gt("﻿0,0,1,0,1,1,0,1,a\r\n\r\n2,2,3,2,3,3,2,3,b\r\n")
    assert [p.transcription for p in props] == ["a", "b"]
    with pytest.raises(ParseError) as exc:
        parse_gt("0,0,1,0,1,1,0,1,a\n0,0,1,x,1,1,0,1,b\n")
    assert "2" in str(exc.value)
    with pytest.raises(ParseError):
        parse_gt_line("0,0,1,0,1,1")
    with pytest.raises(ParseError):
        parse_gt_line("0,0,1,0,1,1,0,1,5,5,word")


def test_icdar_round_trip(tmp_path, rng):
    props = [TextProposal(rng.uniform(0, 50, (4, 2)), "x,y"), TextProposal(rect_to_quad((1, 2, 3, 4)), DO_NOT_CARE)]
    write_gt(tmp_path / "gt.txt", props)
    write_pnm(tmp_path / "im.pgm", np.zeros((1, 10, 13)))
    s = load_icdar(tmp_path / "im.pgm", tmp_path / "gt.txt")
    assert s.image.shape == (1, 12, 16)
    for a, b in zip(props, s.proposals):
        assert np.array_equal(a.quad, b.quad) and a.transcription == b.transcription
    with pytest.raises(FileNotFoundError):
        load_icdar(tmp_path / "im.pgm", tmp_path / "missing.txt")


def test_dataset_round_trip(tmp_path):
    samples = render_dataset(3, SynthConfig(size=(64, 96), height_range=(12, 16)), seed=4)
    manifest = save_dataset(samples, tmp_path / "ds")
    loaded = load_dataset(manifest)
    assert len(loaded) == 3
    for a, b in zip(samples, loaded):
        assert np.max(np.abs(a.image - b.image)) <= 0.5 / 255 + 1e-7
        assert [p.transcription for p in a.proposals] == [p.transcription for p in b.proposals]
        for p, q in zip(a.proposals, b.proposals):
            assert np.array_equal(p.quad, q.quad)
    (tmp_path / "bad.txt").write_text("only_one_field\n")
    with pytest.raises(ParseError):
        read_manifest(tmp_path / "bad.txt")


# --- synthetic ------------------------------------------------------------------------

def test_blank_when_no_words():
    s = render_synthetic(SynthConfig(count_range=(0, 0), noise=0.0, distractors=0), seed=3)
    assert s.proposals == []
    assert np.ptp(s.image) < 0.2


def test_render_deterministic():
    a, b = render_synthetic(seed=11), render_synthetic(seed=11)
    assert a.image.tobytes() == b.image.tobytes()
    assert [p.quad.tobytes() for p in a.proposals] == [p.quad.tobytes() for p in b.proposals]


def test_render_contract():
    for s in render_dataset(10, SynthConfig(), seed=1):
        assert s.image.shape[1] % 4 == 0 and s.image.shape[2] % 4 == 0
        assert 0 <= s.image.min() and s.image.max() <= 1
        assert 1 <= len(s.proposals) <= 3
        for p in s.proposals:
            assert -math.pi / 4 <= p.theta <= math.pi / 4
            assert set(p.transcription) <= set("0123456789")


def _read_word(image, prop, glyphs):
    """Classify each glyph cell of a word by correlation with the glyph stroke templates."""
    g = quad_to_rbox(prop.quad, prop.quad.mean(axis=0))
    box_h = g.t + g.b
    height = box_h / (1 + THICKNESS + 2 * MARGIN)
    pad = THICKNESS * height / 2 + MARGIN * height
    ink_w = g.l + g.r - 2 * pad
    n = int(round((ink_w / height + SPACING) / (GLYPH_ASPECT + SPACING)))
    gw, adv = GLYPH_ASPECT * height, (GLYPH_ASPECT + SPACING) * height
    u = np.array([math.cos(g.theta), math.sin(g.theta)])
    v = np.array([-math.sin(g.theta), math.cos(g.theta)])
    origin = prop.quad.mean(axis=0) - ink_w / 2 * u - height / 2 * v
    margin = 0.06 * height
    ly, lx = np.mgrid[-margin:height + margin:0.5, -margin:gw + margin:0.5]
    out = []
    for k in range(n):
        cx = lx + k * adv
        pts = origin + cx[..., None] * u + ly[..., None] * v
        patch = ndimage.map_coordinates(image[0], [pts[..., 1], pts[..., 0]], order=1)
        best, best_ch = -1.0, None
        for ch in glyphs:
            templ = ink_coverage(lx, ly, ch, height)
            score = abs(np.corrcoef(patch.ravel(), templ.ravel())[0, 1])
            if score > best:
                best, best_ch = score, ch
        out.append(best_ch)
    return "".join(out)


def test_transcriptions_match_glyph_templates():
    cfg = SynthConfig(glyphs="0123456789")
    samples = render_dataset(100, cfg, seed=123)
    for s in samples:
        for p in s.proposals:
            assert _read_word(s.image, p, cfg.glyphs) == p.transcription


# --- augmentation ---------------------------------------------------------------------

def _sample():
    return render_synthetic(SynthConfig(size=(96, 128), height_range=(12, 16)), seed=5)


def test_identity_augment(rng):
    s = _sample()
    out = augment(s, rng, AugmentConfig.identity())
    assert np.array_equal(out.image, s.image)
    for a, b in zip(s.proposals, out.proposals):
        assert np.array_equal(a.quad, b.quad) and a.transcription == b.transcription


class _Fixed:
    """Stand-in RNG returning a fixed value from ``uniform``."""

    def __init__(self, value):
        self.value = value

    def uniform(self, lo, hi):
        return self.value if lo != hi else lo


def test_pure_rotation_moves_quads_exactly():
    s = _sample()
    cfg = AugmentConfig(longer_side=None, rotation_deg=10.0, height_scale=(1.0, 1.0), crop=None)
    out = augment(s, _Fixed(10.0), cfg)
    a = math.radians(10.0)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    center = np.array([128 / 2, 96 / 2])
    for p, q in zip(s.proposals, out.proposals):
        assert np.allclose(q.quad, (p.quad - center) @ rot.T + center, atol=1e-6)


def test_height_rescale():
    s = _sample()
    cfg = AugmentConfig(longer_side=None, rotation_deg=0.0, height_scale=(0.8, 1.2), crop=None)
    out = augment(s, _Fixed(1.2), cfg)
    assert out.image.shape[1] >= 96 * 1.2 and out.image.shape[1] % 4 == 0
    for p, q in zip(s.proposals, out.proposals):
        assert np.allclose(np.ptp(q.quad[:, 1]), 1.2 * np.ptp(p.quad[:, 1]), atol=1e-6)
        assert np.allclose(q.quad[:, 0], p.quad[:, 0], atol=1e-6)


def test_random_augment_keeps_every_proposal(rng):
    cfg = AugmentConfig(longer_side=(100, 200), crop=(64, 64))
    for seed in range(10):
        s = render_synthetic(SynthConfig(size=(96, 128), height_range=(12, 16), count_range=(2, 3)), seed)
        out = augment(s, rng, cfg)
        assert out.image.shape == (1, 64, 64)
        assert len(out.proposals) == len(s.proposals)
        converted = sum(1 for a, b in zip(s.proposals, out.proposals)
                        if not a.dont_care and b.dont_care)
        assert converted == out.meta["converted_dont_care"]
