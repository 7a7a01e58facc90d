"""Embedding-level open-vocabulary detection pipeline.

Train an image-to-text embedding pseudo-labeler, generate pseudo-labels for
filtered region proposals, train a set-prediction detector with base-first
two-stage Hungarian matching, and evaluate noun and free-form retrieval on
a planted synthetic embedding world.
"""

from .boxes import Box, giou, iou
from .detector import DetectorModel, Detection, Vocabulary, classify_prob
from .labeler import PairBatch, PlacModel, mse_loss, rkd_loss, train_plac
from .matcher import MatchResult, hungarian, single_stage_match, two_stage_match
from .metrics import EvalReport, evaluate
from .pipeline import run_pipeline
from .pseudo import BaseAnnotation, Proposal, PseudoLabel, filter_proposals
from .synth import World, make_world, sample_pairs, sample_scene

__version__ = "0.1.0"

__all__ = [
    "BaseAnnotation",
    "Box",
    "Detection",
    "DetectorModel",
    "EvalReport",
    "MatchResult",
    "PairBatch",
    "PlacModel",
    "Proposal",
    "PseudoLabel",
    "Vocabulary",
    "World",
    "classify_prob",
    "evaluate",
    "filter_proposals",
    "giou",
    "hungarian",
    "iou",
    "make_world",
    "mse_loss",
    "rkd_loss",
    "run_pipeline",
    "sample_pairs",
    "sample_scene",
    "single_stage_match",
    "train_plac",
    "two_stage_match",
]
