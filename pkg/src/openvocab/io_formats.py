"""On-disk formats.

Binary, little-endian:
  PLACEMB1  embedding matrix: magic, u32 count, u32 dim, count*dim float32
            row-major; optional JSON sidecar at <path>.json
  PLACMDL1  pseudo-labeler: magic, u32 n_dims, dims, float64 parameters in
            fixed order (W0, b0, W1, b1, ...)
  PLACDET1  detector: magic, the two heads' dims, float64 alpha/beta, then
            both heads' parameters (embedding head first)

Structured data (worlds, scenes, configs, reports) is JSON.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .boxes import Box
from .detector import DetectorModel, DetectorTrainConfig
from .errors import ConfigError, DataFormatError
from .labeler import PlacModel, PlacTrainConfig
from .matcher import MatchWeights
from .numerics import Mlp, as_matrix
from .pseudo import BaseAnnotation, Proposal, PseudoLabel
from .synth import Concept, NoiseConfig, Scene, SceneObject, World

EMB_MAGIC = b"PLACEMB1"
MDL_MAGIC = b"PLACMDL1"
DET_MAGIC = b"PLACDET1"


def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise DataFormatError(
            f"{path}: truncated while reading {what}: expected {n} bytes at offset "
            f"{f.tell() - len(data)}, got {len(data)}"
        )
    return data


# ---------------------------------------------------------------- embeddings


def write_embeddings(path, matrix, sidecar: dict | None = None):
    """Write a PLACEMB1 file (float32 payload) and an optional JSON sidecar."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise DataFormatError(f"embeddings must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DataFormatError("embeddings contain non-finite values")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", m.shape[0], m.shape[1]))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2))


def read_embeddings(path, with_sidecar: bool = False):
    """Read a PLACEMB1 file. Returns the matrix (float64), or a
    (matrix, sidecar) tuple when with_sidecar is set."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, path, "magic")
        if magic != EMB_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0")
        count, dim = struct.unpack("<II", _read_exact(f, 8, path, "header"))
        payload = _read_exact(f, 4 * count * dim, path, "payload")
        extra = f.read(1)
        if extra:
            raise DataFormatError(
                f"{path}: {len(extra)}+ trailing bytes after offset {16 + 4 * count * dim}"
            )
    m = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)
    if not np.all(np.isfinite(m)):
        raise DataFormatError(f"{path}: payload contains non-finite values")
    if not with_sidecar:
        return m
    sp = sidecar_path(path)
    sidecar = json.loads(sp.read_text()) if sp.exists() else None
    return m, sidecar


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


# -------------------------------------------------------------------- models


def _write_mlp(f, mlp: Mlp):
    dims = mlp.dims
    f.write(struct.pack("<I", len(dims)))
    f.write(struct.pack(f"<{len(dims)}I", *dims))
    for p in mlp.params():
        f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_mlp(f, path) -> Mlp:
    (n_dims,) = struct.unpack("<I", _read_exact(f, 4, path, "dim count"))
    if not (2 <= n_dims <= 16):
        raise DataFormatError(f"{path}: implausible layer count {n_dims}")
    dims = struct.unpack(f"<{n_dims}I", _read_exact(f, 4 * n_dims, path, "dims"))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        wb = _read_exact(f, 8 * fan_in * fan_out, path, "weights")
        bb = _read_exact(f, 8 * fan_out, path, "biases")
        weights.append(np.frombuffer(wb, dtype="<f8").reshape(fan_in, fan_out).copy())
        biases.append(np.frombuffer(bb, dtype="<f8").copy())
    mlp = Mlp(weights, biases)
    if any(not np.all(np.isfinite(p)) for p in mlp.params()):
        raise DataFormatError(f"{path}: non-finite model parameters")
    return mlp


def write_plac_model(path, model: PlacModel):
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MDL_MAGIC)
        _write_mlp(f, model.mlp)
    sidecar_path(path).write_text(
        json.dumps(
            {"lambda_rkd": model.lambda_rkd, "epochs": model.epochs, "seed": model.seed},
            indent=2,
        )
    )


def read_plac_model(path) -> PlacModel:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, path, "magic")
        if magic != MDL_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0")
        mlp = _read_mlp(f, path)
    meta = {}
    sp = sidecar_path(path)
    if sp.exists():
        meta = json.loads(sp.read_text())
    return PlacModel(
        mlp,
        lambda_rkd=meta.get("lambda_rkd", 0.0),
        epochs=meta.get("epochs", 0),
        seed=meta.get("seed", 0),
    )


def write_detector_model(path, model: DetectorModel):
    path = Path(path)
    with open(path, "wb") as f:
        f.write(DET_MAGIC)
        f.write(struct.pack("<dd", model.alpha, model.beta))
        _write_mlp(f, model.embed_head)
        _write_mlp(f, model.box_head)


def read_detector_model(path) -> DetectorModel:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, 8, path, "magic")
        if magic != DET_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r} at offset 0")
        alpha, beta = struct.unpack("<dd", _read_exact(f, 16, path, "alpha/beta"))
        embed_head = _read_mlp(f, path)
        box_head = _read_mlp(f, path)
    return DetectorModel(embed_head, box_head, alpha=alpha, beta=beta)


# ------------------------------------------------------------- worlds/scenes


def _box_to_list(b: Box):
    return [b.x1, b.y1, b.x2, b.y2]


def world_to_dict(world: World) -> dict:
    return {
        "dim": world.dim,
        "feature_dim": world.feature_dim,
        "seed": world.seed,
        "noise": asdict(world.noise),
        "concepts": [
            {
                "id": c.id,
                "anchor_image": c.anchor_image.tolist(),
                "anchor_text": c.anchor_text.tolist(),
                "is_novel": c.is_novel,
            }
            for c in world.concepts
        ],
        "g_w1": world.g_w1.tolist(),
        "g_b1": world.g_b1.tolist(),
        "g_w2": world.g_w2.tolist(),
        "f_matrix": world.f_matrix.tolist(),
    }


def world_from_dict(d: dict) -> World:
    try:
        return World(
            dim=d["dim"],
            feature_dim=d["feature_dim"],
            seed=d["seed"],
            concepts=[
                Concept(
                    id=c["id"],
                    anchor_image=np.array(c["anchor_image"], dtype=np.float64),
                    anchor_text=np.array(c["anchor_text"], dtype=np.float64),
                    is_novel=c["is_novel"],
                )
                for c in d["concepts"]
            ],
            g_w1=np.array(d["g_w1"], dtype=np.float64),
            g_b1=np.array(d["g_b1"], dtype=np.float64),
            g_w2=np.array(d["g_w2"], dtype=np.float64),
            f_matrix=np.array(d["f_matrix"], dtype=np.float64),
            noise=NoiseConfig(**d["noise"]),
        )
    except KeyError as e:
        raise DataFormatError(f"world JSON missing field {e.args[0]!r}") from e


def scene_to_dict(scene: Scene) -> dict:
    return {
        "objects": [
            {"box": _box_to_list(o.box), "concept_id": o.concept_id, "is_novel": o.is_novel}
            for o in scene.objects
        ],
        "base_annotations": [
            {"box": _box_to_list(a.box), "concept_id": a.concept_id}
            for a in scene.base_annotations
        ],
        "proposals": [
            {
                "box": _box_to_list(p.box),
                "objectness": p.objectness,
                "image_embedding": np.asarray(p.image_embedding).tolist(),
            }
            for p in scene.proposals
        ],
        "features": np.asarray(scene.features).tolist(),
        "rec_queries": [
            {"query": np.asarray(q).tolist(), "target": _box_to_list(t)}
            for q, t in scene.rec_queries
        ],
    }


def scene_from_dict(d: dict) -> Scene:
    try:
        features = np.array(d["features"], dtype=np.float64)
        if features.size == 0:
            features = features.reshape(0, 0)
        return Scene(
            objects=[
                SceneObject(Box.from_array(o["box"]), o["concept_id"], o["is_novel"])
                for o in d["objects"]
            ],
            base_annotations=[
                BaseAnnotation(Box.from_array(a["box"]), a["concept_id"])
                for a in d["base_annotations"]
            ],
            proposals=[
                Proposal(
                    Box.from_array(p["box"]),
                    p["objectness"],
                    np.array(p["image_embedding"], dtype=np.float64),
                )
                for p in d["proposals"]
            ],
            features=features,
            rec_queries=[
                (np.array(q["query"], dtype=np.float64), Box.from_array(q["target"]))
                for q in d["rec_queries"]
            ],
        )
    except KeyError as e:
        raise DataFormatError(f"scene JSON missing field {e.args[0]!r}") from e


def write_scenes(path, scenes):
    Path(path).write_text(json.dumps([scene_to_dict(s) for s in scenes]))


def read_scenes(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e
    return [scene_from_dict(d) for d in data]


def write_world(path, world: World):
    Path(path).write_text(json.dumps(world_to_dict(world)))


def read_world(path) -> World:
    try:
        return world_from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON: {e}") from e


# ------------------------------------------------------------- pseudo-labels


def write_pseudo_labels(path, labels_per_scene):
    """All labels concatenated into one PLACEMB1 file; the sidecar maps each
    row back to its scene and carries the box and source objectness."""
    rows, meta = [], []
    for si, labels in enumerate(labels_per_scene):
        for pl in labels:
            rows.append(np.asarray(pl.embedding, dtype=np.float64))
            meta.append(
                {"scene": si, "box": _box_to_list(pl.box), "objectness": pl.source_objectness}
            )
    dim = rows[0].shape[0] if rows else 0
    matrix = np.stack(rows) if rows else np.zeros((0, dim))
    write_embeddings(path, matrix, sidecar={"n_scenes": len(labels_per_scene), "rows": meta})


def read_pseudo_labels(path):
    matrix, sidecar = read_embeddings(path, with_sidecar=True)
    if sidecar is None:
        raise DataFormatError(f"{path}: pseudo-label sidecar {sidecar_path(path)} missing")
    out = [[] for _ in range(sidecar["n_scenes"])]
    rows = sidecar["rows"]
    if len(rows) != matrix.shape[0]:
        raise DataFormatError(f"{path}: sidecar rows do not match embedding count")
    for i, r in enumerate(rows):
        out[r["scene"]].append(
            PseudoLabel(Box.from_array(r["box"]), matrix[i], r["objectness"])
        )
    return out


# -------------------------------------------------------------------- config

PSEUDO_SOURCES = ("none", "plac", "concept_pool", "image_embed")


@dataclass
class WorldConfig:
    d: int = 32
    n_base: int = 20
    n_novel: int = 10
    n_pairs: int = 2000
    n_train_scenes: int = 500
    n_eval_scenes: int = 100
    n_objects: int = 5
    n_distractors: int = 3
    novel_fraction: float = 0.4
    g_gain: float = 3.0
    noise: NoiseConfig = field(default_factory=NoiseConfig)


@dataclass
class EvalConfig:
    k_list: tuple = (1, 5, 10)
    top_k: int = 20
    iou_threshold: float = 0.5


@dataclass
class RunConfig:
    seed: int = 0
    pseudo_source: str = "plac"
    world: WorldConfig = field(default_factory=WorldConfig)
    plac: PlacTrainConfig = field(default_factory=PlacTrainConfig)
    detector: DetectorTrainConfig = field(default_factory=DetectorTrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        if self.pseudo_source not in PSEUDO_SOURCES:
            raise ConfigError(
                f"pseudo_source must be one of {PSEUDO_SOURCES}, got {self.pseudo_source!r}"
            )
        self.plac.validate()
        self.detector.validate()
        self.world.noise.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval"]["k_list"] = list(self.eval.k_list)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        try:
            world_d = dict(d.get("world", {}))
            noise = NoiseConfig(**world_d.pop("noise", {}))
            plac_d = dict(d.get("plac", {}))
            det_d = dict(d.get("detector", {}))
            weights = MatchWeights(**det_d.pop("weights", {}))
            eval_d = dict(d.get("eval", {}))
            if "k_list" in eval_d:
                eval_d["k_list"] = tuple(eval_d["k_list"])
            cfg = cls(
                seed=d.get("seed", 0),
                pseudo_source=d.get("pseudo_source", "plac"),
                world=WorldConfig(noise=noise, **world_d),
                plac=PlacTrainConfig(**plac_d),
                detector=DetectorTrainConfig(weights=weights, **det_d),
                eval=EvalConfig(**eval_d),
            )
        except TypeError as e:
            raise ConfigError(f"invalid config field: {e}") from e
        cfg.validate()
        return cfg


def paper_scale_profile() -> RunConfig:
    """The published training scale, recorded for reference. Never the
    default: running it takes hours and is not the point of this package."""
    cfg = RunConfig()
    cfg.plac = PlacTrainConfig(epochs=4, batch_size=8192, lr=1e-3, lambda_rkd=20.0)
    cfg.detector = DetectorTrainConfig(iterations=180_000, lr=2e-4, decay_factor=0.1, decay_at=150_000 / 180_000)
    return cfg


def read_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return RunConfig.from_dict(data)


def write_config(path, config: RunConfig):
    Path(path).write_text(json.dumps(config.to_dict(), indent=2))
