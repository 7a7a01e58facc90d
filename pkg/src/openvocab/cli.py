"""Command-line interface.

Subcommands mirror the pipeline stages so each can be run (and ablated)
independently: gen, train-plac, pseudo-label, train-detector, eval, match,
gradcheck, pipeline. Exit codes: 0 success, 2 config error, 3 data/format
error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import io_formats as iof
from .detector import Vocabulary, train_detector
from .errors import ConfigError, DataFormatError, EvaluationError, NumericError, OpenVocabError
from .gradcheck import run_all
from .labeler import PairBatch, TrainTrace, train_plac
from .matcher import MatchConfig, two_stage_match
from .metrics import evaluate
from .pipeline import build_world, generate_data, pseudo_labels_for_scenes, run_pipeline

GRADCHECK_TOLERANCE = 1e-4


def _load_config(args) -> iof.RunConfig:
    if getattr(args, "config", None):
        return iof.read_config(args.config)
    return iof.RunConfig()


def _echo_config(config: iof.RunConfig, out_path):
    iof.write_config(Path(out_path).parent / "config_echo.json", config)


def cmd_gen(args):
    config = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(config)
    pairs, train_scenes, eval_scenes = generate_data(config, world)
    iof.write_world(out / "world.json", world)
    iof.write_embeddings(out / "pairs_image.emb", pairs.image_embeddings)
    iof.write_embeddings(out / "pairs_text.emb", pairs.text_embeddings)
    iof.write_scenes(out / "train_scenes.json", train_scenes)
    iof.write_scenes(out / "eval_scenes.json", eval_scenes)
    iof.write_config(out / "config_echo.json", config)
    print(f"wrote world + {len(train_scenes)}/{len(eval_scenes)} scenes to {out}")


def cmd_train_plac(args):
    config = _load_config(args)
    pairs = PairBatch(
        iof.read_embeddings(args.pairs_image), iof.read_embeddings(args.pairs_text)
    )
    cfg = dataclasses.replace(config.plac, seed=config.seed)
    trace = TrainTrace()
    model = train_plac(pairs, cfg, trace=trace)
    iof.write_plac_model(args.out, model)
    Path(str(args.out) + ".trace.json").write_text(json.dumps({"loss": trace.losses}))
    _echo_config(config, args.out)
    final = trace.losses[-1] if trace.losses else float("nan")
    print(f"trained labeler on {pairs.size} pairs; final loss {final:.6f} -> {args.out}")


def cmd_pseudo_label(args):
    config = _load_config(args)
    world = iof.read_world(args.world)
    scenes = iof.read_scenes(args.scenes)
    model = iof.read_plac_model(args.model) if args.model else None
    source = args.source or config.pseudo_source
    labels = pseudo_labels_for_scenes(scenes, source, world, model)
    iof.write_pseudo_labels(args.out, labels)
    _echo_config(config, args.out)
    print(f"wrote {sum(len(l) for l in labels)} pseudo-labels ({source}) -> {args.out}")


def cmd_train_detector(args):
    config = _load_config(args)
    world = iof.read_world(args.world)
    scenes = iof.read_scenes(args.scenes)
    if args.pseudo:
        pseudo = iof.read_pseudo_labels(args.pseudo)
        if len(pseudo) != len(scenes):
            raise DataFormatError("pseudo-label file does not cover the scene set")
    else:
        pseudo = [[] for _ in scenes]
    vocab = Vocabulary.from_world(world)
    cfg = dataclasses.replace(config.detector, seed=config.seed)
    trace = []
    model = train_detector(scenes, pseudo, vocab, cfg, trace=trace)
    iof.write_detector_model(args.out, model)
    _echo_config(config, args.out)
    final = trace[-1] if trace else float("nan")
    print(f"trained detector for {cfg.iterations} iterations; final loss {final:.6f} -> {args.out}")


def cmd_eval(args):
    config = _load_config(args)
    world = iof.read_world(args.world)
    scenes = iof.read_scenes(args.scenes)
    model = iof.read_detector_model(args.model)
    vocab = Vocabulary.from_world(world)
    report = evaluate(
        model, scenes, vocab, k_list=config.eval.k_list, top_k=config.eval.top_k
    )
    out = Path(args.out)
    out.write_text(json.dumps(report.to_dict(), indent=2))
    out.with_suffix(".txt").write_text(report.format_table() + "\n")
    _echo_config(config, args.out)
    print(report.format_table())


def cmd_match(args):
    config = _load_config(args)
    world = iof.read_world(args.world)
    scenes = iof.read_scenes(args.scenes)
    model = iof.read_detector_model(args.model)
    pseudo = iof.read_pseudo_labels(args.pseudo) if args.pseudo else [[] for _ in scenes]
    scene = scenes[args.scene_index]
    labels = pseudo[args.scene_index]
    vocab = Vocabulary.from_world(world)
    regions, boxes, _ = model.forward(scene.features)
    cfg = MatchConfig(
        weights=config.detector.weights, single_stage=config.detector.single_stage
    )
    result = two_stage_match(
        regions, boxes, scene.base_annotations, labels, vocab.base_subset().concept_map(), cfg
    )
    dump = {
        "stage1": [[int(q), int(j)] for q, j in result.stage1],
        "stage2": [[int(q), int(j)] for q, j in result.stage2],
        "unmatched_queries": [int(q) for q in result.unmatched_queries],
    }
    text = json.dumps(dump, indent=2)
    if args.dump and args.dump != "-":
        Path(args.dump).write_text(text)
    else:
        print(text)


def cmd_gradcheck(args):
    seeds = range(args.seeds)
    results = run_all(seeds)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        status = "ok" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name:<20} max_rel_err={err:.3e}  [{status}]")
    if worst > GRADCHECK_TOLERANCE:
        raise NumericError(f"gradient check failed: worst error {worst:.3e}")
    print(f"all gradient paths within {GRADCHECK_TOLERANCE:g} over {args.seeds} seeds")


def cmd_pipeline(args):
    config = _load_config(args)
    artifacts = run_pipeline(config, out_dir=args.out_dir)
    print(artifacts.report.format_table())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openvocab",
        description="Embedding-level open-vocabulary detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", help="RunConfig JSON; defaults when omitted")
        p.set_defaults(fn=fn)
        return p

    p = add("gen", cmd_gen, help="generate world, pairs and scenes")
    p.add_argument("--out-dir", required=True)

    p = add("train-plac", cmd_train_plac, help="train the pseudo-labeler")
    p.add_argument("--pairs-image", required=True)
    p.add_argument("--pairs-text", required=True)
    p.add_argument("--out", required=True)

    p = add("pseudo-label", cmd_pseudo_label, help="filter proposals and label them")
    p.add_argument("--world", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", help="labeler model (required for the plac source)")
    p.add_argument("--source", choices=iof.PSEUDO_SOURCES)
    p.add_argument("--out", required=True)

    p = add("train-detector", cmd_train_detector, help="train the detector heads")
    p.add_argument("--world", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--pseudo", help="pseudo-label file; omit for base-only")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, help="evaluate a detector on scenes")
    p.add_argument("--world", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = add("match", cmd_match, help="dump the matching result for one scene")
    p.add_argument("--world", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--pseudo")
    p.add_argument("--scene-index", type=int, default=0)
    p.add_argument("--dump", default="-", help="output path, '-' for stdout")

    p = add("gradcheck", cmd_gradcheck, help="finite-difference gradient verification")
    p.add_argument("--seeds", type=int, default=20)

    p = add("pipeline", cmd_pipeline, help="run every stage end to end")
    p.add_argument("--out-dir", help="persist artifacts here")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataFormatError, EvaluationError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4
    except OpenVocabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
