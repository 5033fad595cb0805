"""Command line entry point: ``jointspace {gen-data,train,eval,compose,cache-demo}``.

Settings resolve in three layers: built-in defaults, then the ``--config``
JSON file, then individual flags.  Exit codes: 0 success, 2 usage, config or
file-format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import numcore as nc
from .alignment import FrozenTargets, load_checkpoint, save_checkpoint, train
from .cache import build_cache, enhance
from .config import RunConfig, load_config, validate
from .dataset import generate_corpus, load_corpus, save_corpus
from .encoders import AlignmentModel
from .errors import JointSpaceError, ShapeError, UnknownSample
from .retrieval import (
    DIRECTIONS,
    build_joint_gallery,
    compose_embeddings,
    cosine_sim_matrix,
    evaluation_report,
    rank,
)

MODALITY_CHOICES = ("3d", "image", "text", "audio")


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    for flag, (section, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(getattr(cfg, section), key, value)
    return validate(cfg)


_OVERRIDES = {
    "categories": ("corpus", "categories"),
    "noise": ("corpus", "noise"),
    "epochs": ("train", "epochs"),
    "lr": ("train", "lr"),
    "batch_size": ("train", "batch_size"),
    "proj_depth": ("model", "proj_depth"),
    "hidden": ("model", "hidden"),
    "head_templates": ("eval", "head_templates"),
    "k": ("cache", "k"),
    "beta": ("cache", "beta"),
    "gamma": ("cache", "gamma"),
}


def _check_compatible(model: AlignmentModel, corpus) -> None:
    if model.config.joint_dim != corpus.config.joint_dim:
        raise ShapeError(f"checkpoint joint_dim {model.config.joint_dim} vs corpus joint_dim "
                         f"{corpus.config.joint_dim}")
    for modality, dim in corpus.config.raw_dims().items():
        enc = model.anchors.get(modality)
        if enc is None or enc.raw_dim != dim:
            have = None if enc is None else enc.raw_dim
            raise ShapeError(f"checkpoint {modality} anchor width {have} vs corpus {modality}_dim {dim}")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    out = args.out or cfg.paths.corpus
    corpus = generate_corpus(cfg.corpus, cfg.seed)
    save_corpus(corpus, out)
    print(f"{'id':>3} {'family':<9} {'audio':<5}")
    for c in corpus.categories:
        print(f"{c.id:>3} {c.family:<9} {'yes' if c.audio_capable else 'no':<5}")
    print(f"train {len(corpus.train_idx)}  test {len(corpus.test_idx)}  -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    corpus = load_corpus(args.corpus or cfg.paths.corpus)
    if corpus.config.joint_dim != cfg.model.joint_dim:
        raise ShapeError(f"model joint_dim {cfg.model.joint_dim} vs corpus joint_dim {corpus.config.joint_dim}")
    out = args.out or cfg.paths.checkpoint
    model = AlignmentModel.init(cfg.model, corpus.anchors, cfg.seed)
    report = train(corpus, model, cfg.train, cfg.seed)
    save_checkpoint(model, out)
    payload = report.to_dict()
    payload.pop("wall_clock")
    payload["config"] = cfg.to_dict()
    report_path = args.report or f"{out}.train.json"
    _write_json(report_path, payload)
    print(f"initial loss {report.initial_loss:.6f}  final loss {report.final_loss:.6f}  "
          f"({report.wall_clock:.1f}s)  -> {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    if args.directions:
        cfg.eval.directions = [d.strip() for d in args.directions.split(",") if d.strip()]
        cfg.eval.validate()
    model = load_checkpoint(args.checkpoint or cfg.paths.checkpoint)
    corpus = load_corpus(args.corpus or cfg.paths.corpus)
    _check_compatible(model, corpus)
    report = evaluation_report(model, corpus, cfg.eval.directions, cfg.eval.head_templates,
                               config=cfg.to_dict())
    _write_json(args.out or cfg.paths.report or "eval.json", report)
    print(f"{'direction':<10} {'mAP':>10} {'chance':>10}")
    for d in cfg.eval.directions:
        print(f"{d:<10} {report['map'][d]:>10.6f} {report['chance_map'][d]:>10.6f}")
    print(f"{'zero-shot':<10} {report['zero_shot']['accuracy']:>10.6f}")
    return 0


def _embedding(model, corpus, targets, sample: int, modality: str) -> np.ndarray:
    s = corpus.sample(sample)
    if modality == "3d":
        return model.embed_points(s.points).data
    if modality == "audio" and s.audio is None:
        raise UnknownSample(f"sample {sample} (category {s.category}) has no audio")
    return getattr(targets, modality)[sample]


def cmd_compose(args) -> int:
    cfg = _resolve(args)
    model = load_checkpoint(args.checkpoint or cfg.paths.checkpoint)
    corpus = load_corpus(args.corpus or cfg.paths.corpus)
    _check_compatible(model, corpus)
    targets = FrozenTargets.compute(corpus, model.anchors)
    query = compose_embeddings(_embedding(model, corpus, targets, args.sample_a, args.modality_a),
                               _embedding(model, corpus, targets, args.sample_b, args.modality_b))
    idx = corpus.test_idx
    if args.gallery == "joint":
        gallery = build_joint_gallery(model, corpus, nc.derive(cfg.seed, "compose.gallery"))
        items, labels = gallery.embeddings, ["+".join(map(str, k)) for k in gallery.pairs]
    elif args.gallery == "3d":
        items, labels = model.embed_points_array(corpus.points[idx]), [str(corpus.labels[i]) for i in idx]
    else:
        items, labels = targets.image[idx], [str(corpus.labels[i]) for i in idx]
    scores = cosine_sim_matrix(query, items)[0]
    order = rank(scores)[:args.top]
    listing = [{"rank": r + 1, "item": int(i), "category": labels[i], "score": float(scores[i])}
               for r, i in enumerate(order)]
    print(f"{'rank':>4} {'item':>5} {'category':<8} {'score':>10}")
    for row in listing:
        print(f"{row['rank']:>4} {row['item']:>5} {row['category']:<8} {row['score']:>10.6f}")
    if args.out:
        _write_json(args.out, {"gallery": args.gallery, "results": listing})
    return 0


def cmd_cache_demo(args) -> int:
    cfg = _resolve(args)
    model = load_checkpoint(args.checkpoint or cfg.paths.checkpoint)
    corpus = load_corpus(args.corpus or cfg.paths.corpus)
    _check_compatible(model, corpus)
    targets = FrozenTargets.compute(corpus, model.anchors)
    cache = build_cache(targets.image[corpus.train_idx], cfg.cache.k, cfg.cache.beta, cfg.cache.gamma)
    f3d = model.embed_points_array(corpus.points[corpus.test_idx])
    paired = targets.image[corpus.test_idx]
    before = float(np.mean(np.sum(f3d * paired, axis=1)))
    after = float(np.mean(np.sum(enhance(cache, f3d) * paired, axis=1)))
    print(f"mean cos(3d, paired image)  before {before:.6f}  after {after:.6f}")
    if args.out:
        _write_json(args.out, {"k": cache.k, "beta": cache.beta, "gamma": cache.gamma,
                               "before": before, "after": after, "bank_size": cache.size})
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointspace", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--config", help="JSON run config; unknown keys are rejected")
        p.add_argument("--seed", type=int, help="run seed (config default 0)")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=fn)
        return p

    defaults = RunConfig()
    p = command("gen-data", cmd_gen_data, "generate a synthetic paired corpus")
    p.add_argument("--categories", type=int, help=f"number of categories (default {defaults.corpus.categories})")
    p.add_argument("--noise", type=float, help=f"modality noise sigma (default {defaults.corpus.noise})")

    p = command("train", cmd_train, "align the point encoder to the anchor space")
    p.add_argument("--corpus", help="corpus file")
    p.add_argument("--report", help="training report path (default <out>.train.json)")
    p.add_argument("--epochs", type=int, help=f"default {defaults.train.epochs}")
    p.add_argument("--lr", type=float, help=f"default {defaults.train.lr}")
    p.add_argument("--batch-size", type=int, help=f"default {defaults.train.batch_size}")
    p.add_argument("--proj-depth", type=int, choices=(1, 2, 3), help=f"default {defaults.model.proj_depth}")
    p.add_argument("--hidden", type=int, help=f"point encoder width (default {defaults.model.hidden})")

    p = command("eval", cmd_eval, "retrieval mAP and zero-shot accuracy on the test split")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--directions", help=f"comma list from {','.join(DIRECTIONS)}")
    p.add_argument("--head-templates", type=int,
                   help=f"templates per zero-shot head (default {defaults.eval.head_templates})")

    p = command("compose", cmd_compose, "retrieve with the sum of two embeddings")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--sample-a", type=int, required=True)
    p.add_argument("--modality-a", choices=MODALITY_CHOICES, required=True)
    p.add_argument("--sample-b", type=int, required=True)
    p.add_argument("--modality-b", choices=MODALITY_CHOICES, required=True)
    p.add_argument("--gallery", choices=("image", "3d", "joint"), default="image")
    p.add_argument("--top", type=int, default=10)

    p = command("cache-demo", cmd_cache_demo, "cosine to paired images before and after cache enhancement")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--k", type=int, help=f"default {defaults.cache.k}")
    p.add_argument("--beta", type=float, help=f"default {defaults.cache.beta}")
    p.add_argument("--gamma", type=float, help=f"default {defaults.cache.gamma}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except JointSpaceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: IoError: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
