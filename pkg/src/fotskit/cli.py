"""``fots`` command line: train, train2stage, infer, eval, bench, gradcheck, synth.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
import argparse
import glob
import logging
import os
import sys

import numpy as np

from .errors import FotsError, NumericError, ParseError, TrainingAbort

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _load_lexicon(path):
    if not path:
        return None
    with open(path, encoding="utf-8") as fh:
        words = [w.strip() for w in fh if w.strip()]
    if not words:
        raise ParseError("lexicon file is empty", path=path)
    return words


def _load_samples(manifest, limit=None):
    from .data.icdar import load_icdar, read_manifest
    pairs = read_manifest(manifest)
    if limit:
        pairs = pairs[:limit]
    return [load_icdar(img, gt) for img, gt in pairs], pairs


def _config(args):
    from .pipeline.config import load_config, ModelConfig
    cfg = load_config(args.config) if args.config else ModelConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def _progress(verbose):
    if not verbose:
        return None

    def show(row):
        print(f"step {row['step']:6d} epoch {row['epoch']:3d} loss {row['loss']:.4f} "
              f"det {row['det']:.4f} recog {row['recog']:.4f}", file=sys.stderr)
    return show


def cmd_train(args):
    from .pipeline.train import train_model
    cfg = _config(args)
    if cfg.mode == "recog_only":
        raise UsageError("use 'fots train2stage' for the separate recogniser")
    samples, _ = _load_samples(args.data)
    result = train_model(samples, cfg, progress=_progress(args.verbose))
    result.model.save(args.out)
    result.save_trace(args.trace or args.out + ".trace.csv")
    print(f"trained {len(result.trace)} steps in {result.seconds:.1f}s -> {args.out}")
    return EXIT_OK


def cmd_train2stage(args):
    from .pipeline.train import train_two_stage
    cfg = _config(args)
    samples, _ = _load_samples(args.data)
    det, rec = train_two_stage(samples, cfg, progress=_progress(args.verbose))
    det.model.save(args.out_det)
    rec.model.save(args.out_rec)
    det.save_trace(args.out_det + ".trace.csv")
    rec.save_trace(args.out_rec + ".trace.csv")
    print(f"detector -> {args.out_det}\nrecognizer -> {args.out_rec}")
    return EXIT_OK


def _predict(args, image):
    from .pipeline.infer import infer, infer_two_stage
    lexicon = _load_lexicon(args.lexicon)
    if args.rec_ckpt:
        return infer_two_stage(args._model, args._rec, image, args.score_thresh, args.nms_thresh, lexicon)
    return infer(args._model, image, args.score_thresh, args.nms_thresh, lexicon)


def cmd_infer(args):
    from .data.pnm import read_pnm
    from .pipeline.infer import write_predictions
    from .pipeline.model import FOTSModel
    if bool(args.image) == bool(args.data):
        raise UsageError("give exactly one of --image or --data")
    args._model = FOTSModel.load(args.ckpt)
    args._rec = FOTSModel.load(args.rec_ckpt) if args.rec_ckpt else None
    if args.image:
        result = _predict(args, read_pnm(args.image))
        lines = [d.to_line() for d in result.detections]
        if args.out:
            write_predictions(args.out, result.detections)
        else:
            sys.stdout.write("".join(line + "\n" for line in lines))
        return EXIT_OK
    if not args.out:
        raise UsageError("--data needs --out <directory>")
    os.makedirs(args.out, exist_ok=True)
    from .data.icdar import read_manifest
    for img, gt in read_manifest(args.data):
        result = _predict(args, read_pnm(img))
        write_predictions(os.path.join(args.out, os.path.basename(gt)), result.detections)
    return EXIT_OK


def cmd_eval(args):
    from .data.icdar import read_gt
    from .pipeline.evaluate import evaluate
    from .pipeline.infer import read_predictions
    if os.path.isfile(args.gt):
        from .data.icdar import read_manifest
        gt_files = [gt for _, gt in read_manifest(args.gt)]
    else:
        gt_files = sorted(p for p in glob.glob(os.path.join(args.gt, "*.txt"))
                          if os.path.basename(p) != "manifest.txt")
    if not gt_files:
        raise ParseError(f"no ground-truth files in {args.gt}")
    preds, gts = [], []
    for path in gt_files:
        name = os.path.basename(path)
        candidates = [os.path.join(args.pred, name)]
        if name.startswith("gt_"):
            candidates.append(os.path.join(args.pred, "res_" + name[3:]))
        found = next((c for c in candidates if os.path.exists(c)), None)
        preds.append(read_predictions(found) if found else [])
        gts.append(read_gt(path))
    lexicon = _load_lexicon(args.lexicon)
    res = evaluate(preds, gts, args.iou, lexicon=lexicon, e2e=args.e2e)
    kind = "end-to-end" if args.e2e else "detection"
    print(f"{kind}: precision {res.precision:.4f} recall {res.recall:.4f} f-measure {res.f_measure:.4f} "
          f"(matched {res.matched}, missed {res.missed}, false {res.false})")
    return EXIT_OK


def cmd_bench(args):
    from .pipeline.bench import bench
    from .pipeline.model import FOTSModel
    model = FOTSModel.load(args.ckpt)
    samples, _ = _load_samples(args.data, args.limit)
    det = FOTSModel.load(args.det_ckpt) if args.det_ckpt else None
    rec = FOTSModel.load(args.rec_ckpt) if args.rec_ckpt else None
    report = bench(model, [s.image for s in samples], args.reps, det, rec)
    print(f"{report.images} images, {report.repetitions} runs, {report.regions} regions per run")
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradsuite import TOLERANCE, run_suite
    entries = run_suite(args.instances, args.seed)
    for e in entries:
        flag = "PASS" if e.ok else "FAIL"
        print(f"{flag} {e.name:28s} instances={e.instances:3d} max_rel_error={e.max_rel_error:.3e} "
              f"({e.seconds:.2f}s)")
    failed = [e.name for e in entries if not e.ok]
    if failed:
        print(f"{len(failed)} checks above tolerance {TOLERANCE:g}: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_synth(args):
    from .data.icdar import save_dataset
    from .data.synthetic import SynthConfig, render_dataset
    cfg = SynthConfig(glyphs=args.glyphs, count_range=(1, args.max_words), size=(args.size, args.size),
                      channels=args.channels)
    samples = render_dataset(args.count, cfg, args.seed)
    manifest = save_dataset(samples, args.out)
    print(manifest)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="fots", description="Oriented text spotting toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a joint (or detection-only) model")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="manifest of image/gt pairs")
    t.add_argument("--out", required=True)
    t.add_argument("--trace")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    t2 = sub.add_parser("train2stage", help="train separate detector and recogniser")
    t2.add_argument("--config")
    t2.add_argument("--data", required=True)
    t2.add_argument("--out-det", required=True)
    t2.add_argument("--out-rec", required=True)
    t2.add_argument("--seed", type=int)
    t2.add_argument("--epochs", type=int)
    t2.set_defaults(func=cmd_train2stage)

    i = sub.add_parser("infer", help="spot text in an image (or every image of a manifest)")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--rec-ckpt", help="separate recogniser: run the two-stage pipeline")
    i.add_argument("--image")
    i.add_argument("--data")
    i.add_argument("--out")
    i.add_argument("--lexicon")
    i.add_argument("--score-thresh", type=float)
    i.add_argument("--nms-thresh", type=float)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score prediction files against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True, help="directory of gt files, or a dataset manifest")
    e.add_argument("--e2e", action="store_true")
    e.add_argument("--lexicon")
    e.add_argument("--iou", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time joint vs two-stage inference, count parameters")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--det-ckpt")
    b.add_argument("--rec-ckpt")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--limit", type=int, default=50)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    g.add_argument("--instances", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="render a synthetic dataset with a manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=320)
    s.add_argument("--glyphs", default="0123456789")
    s.add_argument("--max-words", type=int, default=3)
    s.add_argument("--channels", type=int, default=1)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"fots: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAbort, NumericError, FloatingPointError) as exc:
        print(f"fots: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, FotsError, OSError, ValueError, UnicodeDecodeError) as exc:
        print(f"fots: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
