"""Subcommand CLI wiring the three-stage pipeline:

    synth -> train-sim -> gen-cam / mine-vocab -> score-boxes / select-pgt
          -> train-mil -> detect -> evaluate

Every numeric default is exposed as a flag, every stage takes ``--seed``, and
each run writes a manifest so reruns are bit-reproducible.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evalkit, fileio, milhead, objectness, report, synth
from .errors import CapgroundError
from .grounding import (ActivationMap, Caption, GroundingParams, Vocabulary,
                        class_activation_map, mine_vocabulary)
from .milhead import InstanceBag, MilParams, detect as run_detect, tokenize
from .objectness import Box, ScoringConfig, grid_proposals
from .training import TrainConfig, train

log = logging.getLogger("capground")


# ---------------------------------------------------------------------------
# dataset / store helpers

def load_dataset(data_dir):
    data_dir = Path(data_dir)
    vocab = fileio.read_vocabulary(data_dir / "vocab.txt")
    captions = fileio.read_captions_jsonl(data_dir / "captions.jsonl")
    image_ids = sorted(captions)
    return data_dir, vocab, captions, image_ids


def load_fmap(data_dir, image_id):
    return fileio.read_fmap(Path(data_dir) / "fmaps" / f"{image_id}.fmap")


def caption_of(vocab, image_id, text) -> Caption:
    tokens = [vocab.word_index(t) for t in tokenize(text) if t in vocab]
    return Caption(image_id, tokens, text)


def load_cam_store(cams_dir):
    cams_dir = Path(cams_dir)
    meta = json.loads((cams_dir / "cam_classes.json").read_text())
    image_ids = sorted(p.stem for p in (cams_dir / "cams").glob("*.fmap"))
    return cams_dir, meta, image_ids


def read_cams(cams_dir, meta, vocab, image_id):
    stack = fileio.read_fmap(Path(cams_dir) / "cams" / f"{image_id}.fmap")
    return [ActivationMap(class_word=vocab.word_index(w), heat=stack[:, :, k])
            for k, w in enumerate(meta["classes"])]


def proposals_from_args(args, image_id=None, _cache={}):
    if getattr(args, "proposals", None):
        if args.proposals not in _cache:
            _cache[args.proposals] = fileio.read_boxes_jsonl(args.proposals)
        return _cache[args.proposals].get(image_id, [])
    if "grid" not in _cache:
        _cache["grid"] = {}
    key = (args.grid_steps, tuple(args.scales), tuple(args.aspects))
    if key not in _cache["grid"]:
        _cache["grid"][key] = grid_proposals(args.grid_steps, args.scales,
                                             args.aspects)
    return _cache["grid"][key]


def add_proposal_args(p):
    p.add_argument("--proposals", help="boxes JSONL file; omit to use a "
                   "sliding-window grid")
    p.add_argument("--grid-steps", type=int, default=6)
    p.add_argument("--scales", type=float, nargs="+",
                   default=[0.2, 0.3, 0.45])
    p.add_argument("--aspects", type=float, nargs="+", default=[0.5, 1.0, 2.0])


def add_scoring_args(p):
    p.add_argument("--criterion", choices=objectness.CRITERIA,
                   default="min-edge-gradient")
    p.add_argument("--margin-fraction", type=float, default=0.02)
    p.add_argument("--beta", type=float, default=0.005)
    p.add_argument("--border-fraction", type=float, default=0.2)


def scoring_config(args, **extra) -> ScoringConfig:
    return ScoringConfig(margin_fraction=args.margin_fraction, beta=args.beta,
                         criterion=args.criterion,
                         border_fraction=args.border_fraction, **extra)


def emit(args, payload: dict):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def manifest(args, stage, t0, inputs, outputs):
    config = {k: v for k, v in vars(args).items()
              if k not in ("func", "json", "log_level")}
    out_dir = Path(outputs.get("out", "."))
    fileio.write_manifest(out_dir if out_dir.is_dir() else out_dir.parent,
                          stage, {k: str(v) for k, v in config.items()},
                          {"seed": getattr(args, "seed", None)},
                          inputs, {k: str(v) for k, v in outputs.items()},
                          {"seconds": round(time.time() - t0, 3)})


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    t0 = time.time()
    spec = synth.SyntheticSceneSpec(
        classes=args.classes, scenes=args.scenes, grid=args.grid,
        dim=args.dim, max_objects=args.max_objects, noise=args.noise,
        seed=args.seed, signature_seed=args.sig_seed)
    scenes, vocab, class_words = synth.generate_dataset(spec, args.out)
    manifest(args, "synth", t0, {}, {"out": args.out})
    emit(args, {"scenes": len(scenes), "vocab_size": len(vocab),
                "classes": ",".join(class_words), "out": args.out})
    return 0


def cmd_train_sim(args):
    t0 = time.time()
    data_dir, vocab, captions, image_ids = load_dataset(args.data)
    samples = [(load_fmap(data_dir, i), caption_of(vocab, i, captions[i]))
               for i in image_ids]
    dim = samples[0][0].shape[2]
    params = GroundingParams.random_init(len(vocab), dim, args.embed_dim,
                                         seed=args.seed)
    if args.import_embeddings:
        _import_embeddings(params, vocab, args.import_embeddings)
    config = TrainConfig(margin=args.margin, learning_rate=args.lr,
                         steps=args.steps, batch_size=args.batch_size,
                         seed=args.seed,
                         checkpoint_interval=args.checkpoint_interval)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def checkpoint(step, p):
        fileio.write_grounding_params(out / f"grounding_{step:07d}.gpar", p)

    trained, trace = train(samples, params, config, checkpoint)
    fileio.write_grounding_params(out / "grounding.gpar", trained)
    report.write_loss_trace(trace, out / "loss.csv", out / "loss.png")
    manifest(args, "train-sim", t0, {"data": str(data_dir)},
             {"out": str(out)})
    tail = trace[-50:]
    emit(args, {"steps": len(trace),
                "final_loss": round(float(np.mean([t[1] for t in tail])), 5),
                "retrieval_top1": round(float(np.mean([t[2] for t in tail])), 4),
                "checkpoint": str(out / "grounding.gpar")})
    return 0


def _import_embeddings(params, vocab, path):
    """Seed word embeddings from a text file: ``word v1 v2 ...`` per line."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != params.embed_dim + 1 or parts[0] not in vocab:
                continue
            params.word_embeddings[vocab.word_index(parts[0])] = \
                [float(x) for x in parts[1:]]


def _resolve_classes(args, vocab, params):
    if args.classes:
        return [w.strip() for w in args.classes.split(",")]
    exclusion = None
    if args.exclude:
        seeds = [vocab.word_index(w) for w in args.exclude.split(",")]
        exclusion = (seeds, args.exclude_threshold)
    mined = mine_vocabulary(vocab, params, args.mine_k,
                            min_freq=args.min_freq, exclusion=exclusion)
    return [vocab.words[i] for i in mined]


def add_class_args(p):
    p.add_argument("--classes", help="comma-separated class words; omit to "
                   "mine them from the checkpoint")
    p.add_argument("--mine-k", type=int, default=8)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--exclude", help="comma-separated seed words to filter "
                   "near-duplicates of")
    p.add_argument("--exclude-threshold", type=float, default=0.6)


def cmd_gen_cam(args):
    t0 = time.time()
    data_dir, vocab, captions, image_ids = load_dataset(args.data)
    params = fileio.read_grounding_params(args.params)
    class_words = _resolve_classes(args, vocab, params)
    class_idx = [vocab.word_index(w) for w in class_words]
    out = Path(args.out)
    (out / "cams").mkdir(parents=True, exist_ok=True)

    def one(image_id):
        fmap = load_fmap(data_dir, image_id)
        maps = [class_activation_map(fmap, c, params, args.raster,
                                     args.raster, args.smooth_kernel,
                                     gate=args.cam_gate)
                for c in class_idx]
        stack = np.stack([m.heat for m in maps], axis=-1)
        fileio.write_fmap(out / "cams" / f"{image_id}.fmap", stack)
        return maps

    with ThreadPoolExecutor(max_workers=fileio.worker_count()) as pool:
        all_maps = list(pool.map(one, image_ids))
    for image_id, maps in list(zip(image_ids, all_maps))[:args.export_heatmaps]:
        for word, amap in zip(class_words, maps):
            fileio.export_heatmap(amap, out / f"heat_{image_id}_{word}.png")
    (out / "cam_classes.json").write_text(json.dumps(
        {"classes": class_words, "raster": args.raster,
         "smooth_kernel": args.smooth_kernel, "gate": args.cam_gate},
        indent=2))
    manifest(args, "gen-cam", t0,
             {"data": str(data_dir), "params": args.params},
             {"out": str(out)})
    emit(args, {"images": len(image_ids), "classes": ",".join(class_words),
                "out": str(out)})
    return 0


def cmd_mine_vocab(args):
    t0 = time.time()
    vocab = fileio.read_vocabulary(args.vocab)
    params = fileio.read_grounding_params(args.params)
    exclusion = None
    if args.exclude:
        seeds = [vocab.word_index(w) for w in args.exclude.split(",")]
        exclusion = (seeds, args.exclude_threshold)
    mined = mine_vocabulary(vocab, params, args.k, min_freq=args.min_freq,
                            exclusion=exclusion)
    words = [vocab.words[i] for i in mined]
    if args.out:
        Path(args.out).write_text("\n".join(words) + "\n")
        manifest(args, "mine-vocab", t0, {"vocab": args.vocab},
                 {"out": args.out})
    emit(args, {"words": ",".join(words)})
    return 0


def _score_stage(args, select: bool):
    t0 = time.time()
    cams_dir, meta, image_ids = load_cam_store(args.cams)
    vocab = fileio.read_vocabulary(args.vocab)
    extra = {"nms_iou": args.nms_iou, "top_k": args.top_k} if select else {}
    cfg = scoring_config(args, **extra)

    def one(image_id):
        maps = read_cams(cams_dir, meta, vocab, image_id)
        props = proposals_from_args(args, image_id)
        if not props:
            return image_id, []
        if select:
            boxes = objectness.select_pseudo_gt(maps, props, cfg)
        else:
            boxes = sorted(objectness.score_proposals(maps, props, cfg),
                           key=lambda b: -b.score)
        return image_id, boxes

    with ThreadPoolExecutor(max_workers=fileio.worker_count()) as pool:
        results = dict(pool.map(one, image_ids))
    fileio.write_boxes_jsonl(args.out, results, vocab)
    manifest(args, "select-pgt" if select else "score-boxes", t0,
             {"cams": str(cams_dir)}, {"out": args.out})
    emit(args, {"images": len(image_ids), "out": args.out})
    return 0


def cmd_score_boxes(args):
    return _score_stage(args, select=False)


def cmd_select_pgt(args):
    return _score_stage(args, select=True)


def cmd_train_mil(args):
    t0 = time.time()
    data_dir, vocab, captions, image_ids = load_dataset(args.data)
    pgt = fileio.read_boxes_jsonl(args.pgt, vocab)
    class_words = [w.strip() for w in args.classes.split(",")] \
        if args.classes else json.loads(
            (Path(args.cams) / "cam_classes.json").read_text())["classes"]
    bags = []
    for image_id in image_ids:
        if image_id not in pgt or not pgt[image_id]:
            continue
        fmap = load_fmap(data_dir, image_id)
        props = proposals_from_args(args, image_id)
        bag = InstanceBag.build(image_id, fmap, props, pgt[image_id],
                                tokenize(captions[image_id]), class_words)
        if bag is not None and bag.usable:
            bags.append(bag)
    config = TrainConfig(learning_rate=args.lr, steps=args.steps,
                         seed=args.seed, batch_size=2)
    params = milhead.train_mil(bags, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_mil_params(out / "mil.mpar", params)
    (out / "mil_classes.json").write_text(json.dumps(
        {"classes": class_words}, indent=2))
    manifest(args, "train-mil", t0,
             {"data": str(data_dir), "pgt": args.pgt}, {"out": str(out)})
    emit(args, {"bags": len(bags), "classes": ",".join(class_words),
                "out": str(out)})
    return 0


def cmd_detect(args):
    t0 = time.time()
    data_dir, vocab, captions, image_ids = load_dataset(args.data)
    cams_dir, meta, cam_ids = load_cam_store(args.cams)
    mil_params = fileio.read_mil_params(Path(args.mil) / "mil.mpar")
    mil_classes = json.loads(
        (Path(args.mil) / "mil_classes.json").read_text())["classes"]
    class_idx = [vocab.word_index(w) for w in mil_classes]
    cfg = scoring_config(args, nms_iou=args.nms_iou, top_k=args.top_k)

    def one(image_id):
        fmap = load_fmap(data_dir, image_id)
        maps = read_cams(cams_dir, meta, vocab, image_id)
        props = proposals_from_args(args, image_id)
        return image_id, run_detect(fmap, props, maps, mil_params,
                                    class_idx, cfg)

    with ThreadPoolExecutor(max_workers=fileio.worker_count()) as pool:
        results = dict(pool.map(one, cam_ids))
    fileio.write_boxes_jsonl(args.out, results, vocab)
    manifest(args, "detect", t0,
             {"data": str(data_dir), "cams": str(cams_dir),
              "mil": args.mil}, {"out": args.out})
    emit(args, {"images": len(results), "out": args.out})
    return 0


def cmd_evaluate(args):
    t0 = time.time()
    preds = fileio.read_boxes_jsonl(args.pred)
    gts = fileio.read_boxes_jsonl(args.gt)
    classes = sorted({g.class_word for boxes in gts.values() for g in boxes
                      if g.class_word is not None})
    mAP, curves = evalkit.mean_average_precision(
        preds, gts, classes, iou_thresh=args.iou,
        interpolation=args.interpolation)
    metrics = {"mAP": mAP,
               "per_class_AP": {str(c): curves[c].ap for c in curves},
               "precision_at_k": {}, "recall_at_k": {},
               "AR_at_k": {}}
    for k in args.ks:
        p, r = evalkit.precision_recall_at_k(
            preds, gts, k, iou_thresh=args.iou,
            class_aware=not args.class_agnostic)
        metrics["precision_at_k"][str(k)] = p
        metrics["recall_at_k"][str(k)] = r
    metrics["AR_at_k"] = {str(k): v for k, v in evalkit.average_recall_at_k(
        preds, gts, args.ar_ks, iou_thresh=args.iou).items()}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2,
                                                 sort_keys=True))
    report.write_pr_curves(curves, out / "pr_curves.csv",
                           out / "pr_curves.png")
    manifest(args, "evaluate", t0, {"pred": args.pred, "gt": args.gt},
             {"out": str(out)})
    emit(args, {"mAP": round(mAP, 4), "out": str(out / "metrics.json")})
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capground",
        description="Weakly supervised object localization from "
                    "image-caption pairs.")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable JSON on stdout")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--scenes", type=int, default=500)
    p.add_argument("--grid", type=int, default=14)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--max-objects", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sig-seed", type=int, default=None,
                   help="signature seed; set to a training corpus seed to "
                        "build a held-out split over the same signatures")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-sim", help="train the grounding model")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--embed-dim", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--import-embeddings",
                   help="optional text embedding file: word v1 v2 ...")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_sim)

    p = sub.add_parser("gen-cam", help="generate class activation maps")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    add_class_args(p)
    p.add_argument("--raster", type=int, default=448)
    p.add_argument("--smooth-kernel", type=int, default=32)
    p.add_argument("--cam-gate", choices=["logit", "softmax"],
                   default="logit")
    p.add_argument("--export-heatmaps", type=int, default=0,
                   help="export PNG heat maps for the first N images")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_cam)

    p = sub.add_parser("mine-vocab", help="mine the object vocabulary")
    p.add_argument("--params", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--exclude")
    p.add_argument("--exclude-threshold", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mine_vocab)

    for name, func, select in [("score-boxes", cmd_score_boxes, False),
                               ("select-pgt", cmd_select_pgt, True)]:
        p = sub.add_parser(name, help="score candidate boxes" if not select
                           else "select pseudo-ground-truth boxes")
        p.add_argument("--cams", required=True)
        p.add_argument("--vocab", required=True)
        add_proposal_args(p)
        add_scoring_args(p)
        if select:
            p.add_argument("--nms-iou", type=float, default=0.5)
            p.add_argument("--top-k", type=int, default=5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("train-mil", help="train the MIL instance classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--pgt", required=True)
    p.add_argument("--cams", help="CAM store whose class list to reuse")
    p.add_argument("--classes", help="comma-separated class words")
    add_proposal_args(p)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_mil)

    p = sub.add_parser("detect", help="run the detector")
    p.add_argument("--data", required=True)
    p.add_argument("--cams", required=True)
    p.add_argument("--mil", required=True)
    add_proposal_args(p)
    add_scoring_args(p)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="compute detection metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--ks", type=int, nargs="+", default=[1, 5, 10, 50, 100])
    p.add_argument("--ar-ks", type=int, nargs="+", default=[1, 10, 100])
    p.add_argument("--class-agnostic", action="store_true")
    p.add_argument("--interpolation", choices=["all-point", "11point"],
                   default="all-point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=getattr(logging, args.log_level.upper(),
                                      logging.WARNING))
    try:
        return args.func(args)
    except (CapgroundError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
