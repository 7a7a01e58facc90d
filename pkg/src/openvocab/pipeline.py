"""End-to-end driver: generate -> train labeler -> pseudo-label -> train
detector -> evaluate. Equivalent to running the CLI subcommands in sequence;
every stage is deterministic under the run seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detector import DetectorModel, Vocabulary, train_detector
from .errors import ConfigError
from .io_formats import (
    RunConfig,
    write_config,
    write_detector_model,
    write_embeddings,
    write_plac_model,
    write_pseudo_labels,
    write_scenes,
    write_world,
)
from .labeler import PlacModel, train_plac
from .metrics import EvalReport, evaluate
from .pseudo import concept_pool_label, filter_proposals, generate_pseudo_labels, image_embed_label
from .synth import World, make_world, sample_pairs, sample_scenes


@dataclass
class PipelineArtifacts:
    world: World
    plac_model: PlacModel | None
    detector: DetectorModel
    report: EvalReport


def build_world(config: RunConfig) -> World:
    w = config.world
    return make_world(
        seed=config.seed,
        d=w.d,
        n_base=w.n_base,
        n_novel=w.n_novel,
        noise=w.noise,
        g_gain=w.g_gain,
    )


def generate_data(config: RunConfig, world: World):
    """Training pairs plus train/eval scene sets, seeded off the run seed."""
    w = config.world
    pairs = sample_pairs(world, w.n_pairs, seed=config.seed + 10)
    scene_kwargs = dict(
        n_objects=w.n_objects,
        n_distractors=w.n_distractors,
        novel_fraction=w.novel_fraction,
    )
    train_scenes = sample_scenes(world, w.n_train_scenes, seed=config.seed + 20, **scene_kwargs)
    eval_scenes = sample_scenes(world, w.n_eval_scenes, seed=config.seed + 30, **scene_kwargs)
    return pairs, train_scenes, eval_scenes


def pseudo_labels_for_scenes(scenes, source: str, world: World, plac_model=None):
    """Filter each scene's proposals, then label the survivors.

    source 'none' produces empty lists (base-only training). The concept
    pool is the base text anchors only: novel concepts are deliberately
    absent, which is the failure mode that labeler-based pseudo-labels fix.
    """
    if source == "none":
        return [[] for _ in scenes]
    if source == "plac" and plac_model is None:
        raise ConfigError("pseudo source 'plac' needs a trained labeler")
    pool = None
    if source == "concept_pool":
        pool = np.stack([c.anchor_text for c in world.base_concepts])
    out = []
    for scene in scenes:
        kept = filter_proposals(
            scene.proposals, [a.box for a in scene.base_annotations]
        )
        if source == "plac":
            out.append(generate_pseudo_labels(plac_model, kept))
        elif source == "concept_pool":
            out.append(concept_pool_label(kept, pool) if kept else [])
        elif source == "image_embed":
            out.append(image_embed_label(kept))
        else:
            raise ConfigError(f"unknown pseudo source {source!r}")
    return out


def run_pipeline(config: RunConfig, out_dir=None) -> PipelineArtifacts:
    """Run every stage; optionally persist all artifacts under out_dir."""
    config.validate()
    world = build_world(config)
    pairs, train_scenes, eval_scenes = generate_data(config, world)

    plac_model = None
    if config.pseudo_source == "plac":
        plac_cfg = dataclasses.replace(config.plac, seed=config.seed)
        plac_model = train_plac(pairs, plac_cfg)

    pseudo = pseudo_labels_for_scenes(
        train_scenes, config.pseudo_source, world, plac_model
    )
    vocabulary = Vocabulary.from_world(world)
    det_cfg = dataclasses.replace(config.detector, seed=config.seed)
    detector = train_detector(train_scenes, pseudo, vocabulary, det_cfg)
    report = evaluate(
        detector,
        eval_scenes,
        vocabulary,
        k_list=config.eval.k_list,
        top_k=config.eval.top_k,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_config(out / "config_echo.json", config)
        write_world(out / "world.json", world)
        write_embeddings(out / "pairs_image.emb", pairs.image_embeddings)
        write_embeddings(out / "pairs_text.emb", pairs.text_embeddings)
        write_scenes(out / "train_scenes.json", train_scenes)
        write_scenes(out / "eval_scenes.json", eval_scenes)
        if plac_model is not None:
            write_plac_model(out / "labeler.model", plac_model)
        write_pseudo_labels(out / "pseudo_labels.emb", pseudo)
        write_detector_model(out / "detector.model", detector)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
        (out / "report.txt").write_text(report.format_table() + "\n")
    return PipelineArtifacts(world, plac_model, detector, report)
