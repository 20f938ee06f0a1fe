import itertools

import numpy as np
import pytest

from fotskit.data import DO_NOT_CARE, Sample, SynthConfig, TextProposal, render_dataset
from fotskit.errors import DimensionError, ParseError
from fotskit.geometry import polygon_iou, rbox_to_quad, rect_to_quad
from fotskit.nn.gradcheck import grad_check
from fotskit.pipeline import (
    Backbone, FOTSModel, ModelConfig, Trainer, evaluate, infer, parse_config, toy_config,
    train_model, train_two_stage,
)
from fotskit.pipeline.bench import active_parameters, bench
from fotskit.pipeline.evaluate import f_measure, match_image
from fotskit.pipeline.infer import Detection, read_predictions, write_predictions
from fotskit.pipeline.model import build_detector_and_recognizer, crop_batch, crop_window
from fotskit.pipeline.train import load_trace, recognition_targets


def tiny_config(**kw):
    base = dict(input_channels=1, backbone_channels=(8, 8, 12, 12), merge_channels=(12, 8),
                recog_channels=(8, 8, 12), lstm_hidden=12, optimizer="adam", lr=3e-3,
                batch_size=2, augment=False, charset="", dropout=0.1)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def tiny_data():
    cfg = SynthConfig(size=(64, 96), height_range=(14, 18), length_range=(2, 3), count_range=(1, 2))
    return render_dataset(8, cfg, seed=7)


# --- config ---------------------------------------------------------------------------

def test_config_defaults():
    cfg = ModelConfig()
    assert (cfg.lambda_theta, cfg.lambda_reg, cfg.lambda_recog, cfg.h_t) == (10.0, 1.0, 1.0, 8)


def test_config_round_trip_and_errors():
    cfg = toy_config(lr_decay_epochs=(3, 5), seed=4, deep_convs=2, box_merge=not toy_config().box_merge)
    assert parse_config(cfg.dumps()) == cfg
    text = "# comment\nseed = 9   # inline\n\nmode = detect_only\n"
    parsed = parse_config(text)
    assert parsed.seed == 9 and parsed.mode == "detect_only"
    with pytest.raises(ParseError):
        parse_config("unknown_key = 1\n")
    with pytest.raises(ParseError):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ParseError):
        parse_config("seed = abc\n")
    with pytest.raises(ParseError):
        parse_config("mode = sideways\n")


# --- backbone -------------------------------------------------------------------------

def test_backbone_shapes(rng):
    bb = Backbone(rng, 3)
    assert bb.forward(rng.random((1, 3, 64, 64)).astype(np.float32)).shape[2:] == (16, 16)
    assert bb.forward(rng.random((1, 3, 128, 128)).astype(np.float32)).shape[2:] == (32, 32)
    assert bb.forward(rng.random((1, 3, 40, 72)).astype(np.float32)).shape[2:] == (10, 18)
    with pytest.raises(DimensionError):
        bb.forward(np.zeros((1, 3, 30, 32), np.float32))
    with pytest.raises(DimensionError):
        bb.forward(np.zeros((1, 2, 32, 32), np.float32))


@pytest.mark.parametrize("deep_convs", [1, 3])
def test_backbone_gradient(rng, deep_convs):
    bb = Backbone(rng, 2, (4, 4, 6, 6), (6, 4), deep_convs=deep_convs).astype(np.float64)
    x = rng.normal(size=(2, 2, 16, 16))
    w = rng.normal(size=(2, 4, 4, 4))

    def closure(inp):
        out = bb.forward(inp)
        return float(np.sum(out * w)), [bb.backward(w)]
    rep = grad_check(closure, [x], tol=1e-3)
    assert rep.ok, rep.max_rel_error


def test_deep_convs_widen_receptive_field(rng):
    x = rng.normal(size=(1, 1, 384, 384))
    moved = x.copy()
    moved[0, 0, 192, 192 + 72] += 10.0      # 72 px right of the probed output pixel
    changed = []
    for deep in (1, 3):
        bb = Backbone(np.random.default_rng(0), 1, (4, 4, 4, 4), (4, 4), deep_convs=deep).astype(np.float64)
        bb.eval()
        changed.append(bool(np.any(bb.forward(x)[0, :, 48, 48] != bb.forward(moved)[0, :, 48, 48])))
    assert changed == [False, True]


# --- model ----------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    m = FOTSModel(tiny_config(seed=3))
    m.save(tmp_path / "m.ckpt")
    back = FOTSModel.load(tmp_path / "m.ckpt")
    assert back.config == m.config and back.charset == m.charset
    for (n1, a), (n2, b) in zip(m.state_dict().items(), back.state_dict().items()):
        assert n1 == n2 and a.tobytes() == b.tobytes()


def test_detect_only_has_no_recognition_parameters():
    m = FOTSModel(tiny_config(mode="detect_only"))
    assert m.recog is None
    assert not any(n.startswith("recog") for n, _ in m.named_parameters())


def test_split_and_parameter_counts():
    joint = FOTSModel(tiny_config())
    det, rec = build_detector_and_recognizer(joint)
    assert det.num_parameters() == joint.num_parameters() - joint.recog.num_parameters()
    assert active_parameters(rec) == joint.backbone.num_parameters() + joint.recog.num_parameters()
    assert joint.num_parameters() < active_parameters(det) + active_parameters(rec)


def test_crop_window_and_batch(rng):
    quad = rect_to_quad((13, 21, 50, 30))
    x0, y0, x1, y1 = crop_window(quad, (64, 96), 8)
    assert (x0, y0, x1, y1) == (4, 12, 60, 40)
    images = rng.random((2, 1, 64, 96)).astype(np.float32)
    crops, origins = crop_batch(images, [quad, rect_to_quad((0, 0, 10, 10))], [1, 0], 8)
    assert crops.shape == (2, 1, 28, 56)
    assert np.array_equal(crops[0, :, :28, :56], images[1, :, 12:40, 4:60])
    assert np.array_equal(origins, [[4, 12], [0, 0]])


# --- training -------------------------------------------------------------------------

def test_recognition_targets_skip_dont_care():
    from fotskit.recognition import CharSet
    props = [TextProposal(rect_to_quad((0, 0, 10, 5)), "12"), TextProposal(rect_to_quad((0, 0, 10, 5)), DO_NOT_CARE),
             TextProposal(rect_to_quad((0, 0, 10, 5)), "a?")]
    picks, labels = recognition_targets(props, CharSet("0123456789"))
    assert picks == [0] and labels == [[1, 2]]


def test_dont_care_only_image_trains(rng):
    s = Sample(rng.random((1, 64, 64)).astype(np.float32), [TextProposal(rect_to_quad((8, 8, 40, 24)), DO_NOT_CARE)])
    tr = Trainer(tiny_config())
    row = tr.step([s, s])
    assert row["recog"] == 0.0 and row["regions"] == 0 and np.isfinite(row["loss"])


def test_training_is_deterministic(tiny_data):
    a = train_model(tiny_data, tiny_config(augment=True, aug_longer_side=(64, 96), crop_size=64), epochs=1)
    b = train_model(tiny_data, tiny_config(augment=True, aug_longer_side=(64, 96), crop_size=64), epochs=1)
    assert a.trace == b.trace
    for x, y in zip(a.model.state_dict().values(), b.model.state_dict().values()):
        assert x.tobytes() == y.tobytes()


def test_lambda_zero_joint_equals_detect_only(tiny_data):
    joint = train_model(tiny_data, tiny_config(lambda_recog=0.0), epochs=1)
    det = train_model(tiny_data, tiny_config(mode="detect_only", lambda_recog=0.0), epochs=1)
    keys = ("step", "loss", "det", "cls", "reg")
    assert [{k: r[k] for k in keys} for r in joint.trace] == [{k: r[k] for k in keys} for r in det.trace]
    det_state = det.model.state_dict()
    for name, value in joint.model.state_dict().items():
        if not name.startswith("recog"):
            assert value.tobytes() == det_state[name].tobytes(), name


def test_two_stage_detector_matches_joint_lambda_zero(tiny_data):
    det, rec = train_two_stage(tiny_data, tiny_config(lambda_recog=0.0), epochs=1)
    joint = train_model(tiny_data, tiny_config(lambda_recog=0.0), epochs=1)
    assert [r["det"] for r in det.trace] == [r["det"] for r in joint.trace]
    init = FOTSModel(tiny_config(mode="recog_only"))
    for name, p in rec.model.det_head.named_parameters("det_head."):
        assert p.data.tobytes() == dict(init.named_parameters())[name].data.tobytes()
    assert any(not np.array_equal(p.data, dict(init.named_parameters())[n].data)
               for n, p in rec.model.recog.named_parameters("recog."))


def test_recognition_gradient_linear_in_lambda(tiny_data):
    grads = []
    for lam in (1.0, 2.5):
        tr = Trainer(tiny_config(lambda_recog=lam, optimizer="sgd", lr=1e-30, momentum=0.0, dropout=0.0))
        tr.step(tiny_data[:2])
        grads.append([p.grad.astype(np.float64) for p in tr.model.recog.parameters()])
    for g1, g2 in zip(*grads):
        assert np.allclose(g2, 2.5 * g1, rtol=1e-3, atol=1e-5 * np.abs(g2).max())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(tiny_data):
    from fotskit.errors import TrainingAbort
    with pytest.raises(TrainingAbort):
        train_model(tiny_data, tiny_config(optimizer="sgd", lr=1e20), epochs=2)


@pytest.mark.slow
def test_loss_decreases_over_windows():
    data = render_dataset(50, SynthConfig(size=(64, 96), height_range=(14, 18), length_range=(2, 3),
                                          count_range=(1, 2)), seed=21)
    # batch 5 makes every 20-step window two full passes over the data
    cfg = toy_config(augment=False, batch_size=5, dropout=0.0)
    res = train_model(data, cfg, epochs=20, max_steps=200)
    losses = np.array([r["loss"] for r in res.trace])
    assert losses.size == 200
    windows = losses.reshape(10, 20).mean(axis=1)
    assert np.all(np.diff(windows) < 0), windows


def test_trace_csv_round_trip(tmp_path, tiny_data):
    res = train_model(tiny_data[:2], tiny_config(), epochs=1)
    res.save_trace(tmp_path / "t.csv")
    assert load_trace(tmp_path / "t.csv") == res.trace


# --- inference ------------------------------------------------------------------------

def test_infer_blank_and_unreachable_threshold(rng):
    m = FOTSModel(tiny_config())
    assert infer(m, np.zeros((1, 64, 64), np.float32)).detections == []
    out = infer(m, rng.random((1, 64, 64)).astype(np.float32), score_thresh=1.01)
    assert out.detections == [] and out.e2e_ms >= out.det_ms >= 0


def test_infer_deterministic(rng):
    m = FOTSModel(tiny_config())
    img = rng.random((1, 62, 70)).astype(np.float32)
    a = infer(m, img, score_thresh=0.0)
    b = infer(m, img, score_thresh=0.0)
    assert [d.to_line() for d in a.detections] == [d.to_line() for d in b.detections]


def test_prediction_file_round_trip(tmp_path):
    dets = [Detection(rect_to_quad((1, 2, 30, 12.5)), 0.875, "12,3"), Detection(rect_to_quad((0, 0, 4, 4)), 0.5, "")]
    write_predictions(tmp_path / "p.txt", dets)
    back = read_predictions(tmp_path / "p.txt")
    assert [(d.transcription, d.score) for d in back] == [("12,3", 0.875), ("", 0.5)]
    assert np.allclose(back[0].quad, dets[0].quad)


# --- evaluation -----------------------------------------------------------------------

def _gt(quad, text="12"):
    return TextProposal(quad, text)


def _pred(quad, score, text="12"):
    return Detection(np.asarray(quad, float), score, text)


def test_evaluate_perfect_and_empty():
    gts = [[_gt(rect_to_quad((0, 0, 20, 10))), _gt(rect_to_quad((30, 0, 50, 10)), "7")]]
    preds = [[_pred(g.quad, 0.9, g.transcription) for g in gts[0]]]
    r = evaluate(preds, gts)
    assert (r.precision, r.recall, r.f_measure) == (1.0, 1.0, 1.0)
    assert evaluate(preds, gts, e2e=True).f_measure == 1.0
    r = evaluate([[]], gts)
    assert (r.precision, r.recall, r.f_measure) == (0.0, 0.0, 0.0)
    assert f_measure(0.0, 0.0) == 0.0 and f_measure(0.5, 1.0) == pytest.approx(2 / 3)


def test_e2e_text_and_lexicon():
    g = [[_gt(rect_to_quad((0, 0, 20, 10)), "Hotel")]]
    p = [[_pred(rect_to_quad((0, 0, 20, 10)), 0.9, "h0tel")]]
    assert evaluate(p, g, e2e=True).f_measure == 0.0
    assert evaluate(p, g, e2e=True, lexicon=["hotel", "motel"]).f_measure == 1.0
    p = [[_pred(rect_to_quad((0, 0, 20, 10)), 0.9, "HOTEL")]]
    assert evaluate(p, g, e2e=True).f_measure == 1.0


def _random_instance(rng, n=10):
    gts = [_gt(rbox_to_quad(rng.uniform(10, 90, 2), (4, 4, 10, 10, rng.uniform(-0.5, 0.5)))) for _ in range(n)]
    preds = []
    for g in gts:
        if rng.random() < 0.8:
            preds.append(_pred(g.quad + rng.normal(0, 2, (4, 2)), float(rng.random())))
    for _ in range(3):
        preds.append(_pred(rbox_to_quad(rng.uniform(10, 90, 2), (4, 4, 10, 10, 0.0)), float(rng.random())))
    return preds, gts


def _brute_force_matches(preds, gts, thresh=0.5):
    iou = np.array([[polygon_iou(p.quad, g.quad) for g in gts] for p in preds])
    best = 0
    cols = list(range(len(gts)))
    # maximum one-to-one matching over pairs above threshold (small instance, exhaustive)
    edges = [(i, j) for i in range(len(preds)) for j in cols if iou[i, j] >= thresh]

    def grow(k, used_p, used_g):
        nonlocal best
        best = max(best, len(used_p))
        for idx in range(k, len(edges)):
            i, j = edges[idx]
            if i not in used_p and j not in used_g:
                grow(idx + 1, used_p | {i}, used_g | {j})
    grow(0, frozenset(), frozenset())
    return best, iou


def test_matching_equals_brute_force(rng):
    checked = 0
    while checked < 20:
        preds, gts = _random_instance(rng)
        best, iou = _brute_force_matches(preds, gts)
        # non-ambiguous: every prediction overlaps at most one annotation above threshold
        if np.any((iou >= 0.5).sum(axis=1) > 1) or np.any((iou >= 0.5).sum(axis=0) > 1):
            continue
        matched, missed, false, _ = match_image(preds, gts)
        assert matched == best and missed == len(gts) - best and false == len(preds) - best
        checked += 1


def test_evaluate_order_symmetric(rng):
    preds, gts = _random_instance(rng)
    base = evaluate([preds], [gts])
    perm = [preds[k] for k in rng.permutation(len(preds))]
    again = evaluate([perm], [gts])
    assert (base.precision, base.recall) == (again.precision, again.recall)


def test_dont_care_never_changes_scores(rng):
    for _ in range(10):
        preds, gts = _random_instance(rng)
        base = evaluate([preds], [gts])
        far = [_gt(rect_to_quad((200, 200, 230, 210)), DO_NOT_CARE)]
        with_dnc = evaluate([preds], [gts + far])
        assert (base.precision, base.recall, base.f_measure) == (with_dnc.precision, with_dnc.recall, with_dnc.f_measure)


def test_prediction_on_dont_care_is_ignored():
    dnc = _gt(rect_to_quad((0, 0, 20, 10)), DO_NOT_CARE)
    real = _gt(rect_to_quad((40, 0, 60, 10)))
    preds = [_pred(dnc.quad, 0.9), _pred(real.quad, 0.8)]
    r = evaluate([preds], [[dnc, real]])
    assert (r.matched, r.missed, r.false) == (1, 0, 0) and r.precision == 1.0


# --- bench ----------------------------------------------------------------------------

def test_bench_report(rng):
    m = FOTSModel(tiny_config())
    images = [rng.random((1, 64, 64)).astype(np.float32) for _ in range(2)]
    rep = bench(m, images, repetitions=2, warmup=0)
    assert len(rep.det_ms) == 2 and len(rep.e2e_ms) == 2 and len(rep.two_stage_ms) == 2
    assert rep.params["joint"] < rep.params["detector"] + rep.params["recognizer"]
    assert any("joint < detector + recognizer" in line for line in rep.lines())
