"""Evaluation: precision@k for referring queries and average precision
split into base/novel concept subsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou
from .detector import DetectorModel, Vocabulary, predict, predict_query
from .errors import EvaluationError

REC_IOU_THRESHOLD = 0.5
AP_IOU_THRESHOLD = 0.5


@dataclass
class EvalReport:
    prec_at: dict = field(default_factory=dict)  # k -> precision
    ap_base: float | None = None
    ap_novel: float | None = None
    ap_all: float | None = None
    counts: dict = field(default_factory=dict)  # images / queries / detections

    def to_dict(self) -> dict:
        return {
            "prec_at": {str(k): v for k, v in self.prec_at.items()},
            "ap_base": self.ap_base,
            "ap_novel": self.ap_novel,
            "ap_all": self.ap_all,
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            prec_at={int(k): v for k, v in d.get("prec_at", {}).items()},
            ap_base=d.get("ap_base"),
            ap_novel=d.get("ap_novel"),
            ap_all=d.get("ap_all"),
            counts=d.get("counts", {}),
        )

    def format_table(self) -> str:
        rows = [("metric", "value")]
        for k in sorted(self.prec_at):
            rows.append((f"prec@{k}", f"{self.prec_at[k]:.4f}"))
        for name, val in (
            ("ap_base", self.ap_base),
            ("ap_novel", self.ap_novel),
            ("ap_all", self.ap_all),
        ):
            rows.append((name, "absent" if val is None else f"{val:.4f}"))
        for name in sorted(self.counts):
            rows.append((name, str(self.counts[name])))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b}" for a, b in rows)


def rec_hit(predicted_boxes, target, k: int, iou_threshold: float = REC_IOU_THRESHOLD) -> bool:
    """True iff any of the first k ranked boxes overlaps the target at or
    above the IoU threshold."""
    if k < 1:
        raise EvaluationError("k must be at least 1")
    return any(iou(b, target) >= iou_threshold for b in predicted_boxes[:k])


def rec_eval(model: DetectorModel, scenes, k_list=(1, 5, 10)) -> EvalReport:
    """Precision@k over every referring query of every scene."""
    k_list = sorted(k_list)
    hits = {k: 0 for k in k_list}
    total = 0
    for scene in scenes:
        for query, target in scene.rec_queries:
            ranked = predict_query(model, scene, query, k=max(k_list))
            for k in k_list:
                if rec_hit(ranked, target, k):
                    hits[k] += 1
            total += 1
    if total == 0:
        raise EvaluationError("no referring queries in the evaluation scenes")
    return EvalReport(
        prec_at={k: hits[k] / total for k in k_list},
        counts={"images": len(scenes), "queries": total},
    )


def average_precision(
    detections,
    ground_truth,
    vocabulary: Vocabulary,
    iou_threshold: float = AP_IOU_THRESHOLD,
    subset: str = "all",
):
    """All-point interpolated AP at a single IoU threshold, averaged over
    the subset's concepts.

    detections: list of (scene_index, Detection), any order; score ties are
    broken by insertion order. ground_truth: per scene, a list of objects
    with box / concept_id / is_novel. Returns None when the subset has no
    ground-truth instances.
    """
    if subset not in ("all", "base", "novel"):
        raise EvaluationError(f"unknown subset {subset!r}")
    novel_of = dict(zip(vocabulary.ids, vocabulary.is_novel))
    concept_ids = [
        cid
        for cid, nov in novel_of.items()
        if subset == "all" or (nov if subset == "novel" else not nov)
    ]

    aps = []
    for cid in concept_ids:
        gts = []  # (scene_idx, box)
        for si, objs in enumerate(ground_truth):
            for obj in objs:
                if obj.concept_id == cid:
                    gts.append((si, obj.box))
        if not gts:
            continue
        dets = [
            (si, det) for si, det in detections if det.concept_id == cid
        ]
        dets.sort(key=lambda t: -t[1].score)  # stable: ties keep insertion order
        matched = [False] * len(gts)
        tp = np.zeros(len(dets))
        for di, (si, det) in enumerate(dets):
            best, best_iou = -1, -1.0
            for gi, (gsi, gbox) in enumerate(gts):
                if gsi != si or matched[gi]:
                    continue
                v = iou(det.box, gbox)
                if v >= iou_threshold and v > best_iou:
                    best, best_iou = gi, v
            if best >= 0:
                matched[best] = True
                tp[di] = 1.0
        if len(dets) == 0:
            aps.append(0.0)
            continue
        cum_tp = np.cumsum(tp)
        precision = cum_tp / (np.arange(len(dets)) + 1)
        recall = cum_tp / len(gts)
        # precision envelope, area under the all-point interpolated curve
        env = np.maximum.accumulate(precision[::-1])[::-1]
        ap = 0.0
        prev_r = 0.0
        for di in range(len(dets)):
            if tp[di]:
                ap += (recall[di] - prev_r) * env[di]
                prev_r = recall[di]
        aps.append(ap)
    if not aps:
        return None
    return float(np.mean(aps))


def detection_eval(
    model: DetectorModel,
    scenes,
    vocabulary: Vocabulary,
    top_k: int = 20,
    iou_threshold: float = AP_IOU_THRESHOLD,
) -> EvalReport:
    """Run the detector on every scene and compute the AP split."""
    detections = []
    ground_truth = []
    for si, scene in enumerate(scenes):
        for det in predict(model, scene, vocabulary, top_k=top_k):
            detections.append((si, det))
        ground_truth.append(scene.objects)
    report = EvalReport(
        ap_base=average_precision(detections, ground_truth, vocabulary, iou_threshold, "base"),
        ap_novel=average_precision(detections, ground_truth, vocabulary, iou_threshold, "novel"),
        ap_all=average_precision(detections, ground_truth, vocabulary, iou_threshold, "all"),
        counts={"images": len(scenes), "detections": len(detections)},
    )
    return report


def evaluate(
    model: DetectorModel,
    scenes,
    vocabulary: Vocabulary,
    k_list=(1, 5, 10),
    top_k: int = 20,
) -> EvalReport:
    """Full report: referring precision@k plus the AP split."""
    rec = rec_eval(model, scenes, k_list=k_list)
    det = detection_eval(model, scenes, vocabulary, top_k=top_k)
    return EvalReport(
        prec_at=rec.prec_at,
        ap_base=det.ap_base,
        ap_novel=det.ap_novel,
        ap_all=det.ap_all,
        counts={**rec.counts, **det.counts},
    )
