import json
import struct

import numpy as np
import pytest

from openvocab.boxes import Box
from openvocab.detector import DetectorTrainConfig, init_detector
from openvocab.errors import ConfigError, DataFormatError
from openvocab.io_formats import (
    EMB_MAGIC,
    RunConfig,
    read_config,
    read_detector_model,
    read_embeddings,
    read_plac_model,
    read_pseudo_labels,
    read_scenes,
    read_world,
    sidecar_path,
    write_config,
    write_detector_model,
    write_embeddings,
    write_plac_model,
    write_pseudo_labels,
    write_scenes,
    write_world,
)
from openvocab.labeler import PlacModel
from openvocab.numerics import Mlp
from openvocab.pseudo import PseudoLabel
from openvocab.synth import make_world, sample_scenes


class TestEmbeddings:
    def test_round_trip(self, tmp_path):
        m = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32)
        p = tmp_path / "x.emb"
        write_embeddings(p, m)
        np.testing.assert_array_equal(read_embeddings(p), m.astype(np.float64))

    def test_empty_matrix(self, tmp_path):
        p = tmp_path / "x.emb"
        write_embeddings(p, np.zeros((0, 4)))
        out = read_embeddings(p)
        assert out.shape == (0, 4)

    def test_sidecar_round_trip(self, tmp_path):
        p = tmp_path / "x.emb"
        write_embeddings(p, np.zeros((2, 2)), sidecar={"k": [1, 2]})
        m, sc = read_embeddings(p, with_sidecar=True)
        assert sc == {"k": [1, 2]}
        assert sidecar_path(p).exists()

    def test_layout_is_exactly_specified(self, tmp_path):
        p = tmp_path / "x.emb"
        write_embeddings(p, [[1.5, -2.0]])
        raw = p.read_bytes()
        assert raw[:8] == EMB_MAGIC
        assert struct.unpack("<II", raw[8:16]) == (1, 2)
        assert np.frombuffer(raw[16:], dtype="<f4").tolist() == [1.5, -2.0]

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.emb"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 8)
        with pytest.raises(DataFormatError, match="magic"):
            read_embeddings(p)

    def test_truncated_payload_reports_offset(self, tmp_path):
        p = tmp_path / "x.emb"
        write_embeddings(p, np.ones((3, 4)))
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(DataFormatError, match="offset"):
            read_embeddings(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "x.emb"
        write_embeddings(p, np.ones((1, 1)))
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(DataFormatError, match="trailing"):
            read_embeddings(p)

    def test_non_finite_rejected_on_write(self, tmp_path):
        with pytest.raises(DataFormatError):
            write_embeddings(tmp_path / "x.emb", np.array([[np.inf]]))

    def test_non_finite_rejected_on_read(self, tmp_path):
        p = tmp_path / "x.emb"
        payload = struct.pack("<f", float("nan"))
        p.write_bytes(EMB_MAGIC + struct.pack("<II", 1, 1) + payload)
        with pytest.raises(DataFormatError, match="non-finite"):
            read_embeddings(p)


class TestModels:
    def test_plac_round_trip(self, tmp_path):
        mlp = Mlp.create([4, 6, 6, 4], np.random.default_rng(0))
        model = PlacModel(mlp, lambda_rkd=20.0, epochs=7, seed=3)
        p = tmp_path / "m.model"
        write_plac_model(p, model)
        again = read_plac_model(p)
        for a, b in zip(model.mlp.params(), again.mlp.params()):
            np.testing.assert_array_equal(a, b)
        assert again.lambda_rkd == 20.0
        assert again.epochs == 7
        assert again.seed == 3

    def test_detector_round_trip(self, tmp_path):
        model = init_detector(12, 8, DetectorTrainConfig(hidden_dim=6, seed=1))
        p = tmp_path / "d.model"
        write_detector_model(p, model)
        again = read_detector_model(p)
        assert again.alpha == model.alpha
        assert again.beta == model.beta
        for a, b in zip(
            model.embed_head.params() + model.box_head.params(),
            again.embed_head.params() + again.box_head.params(),
        ):
            np.testing.assert_array_equal(a, b)

    def test_wrong_magic_cross_read(self, tmp_path):
        mlp = Mlp.create([4, 5, 5, 4], np.random.default_rng(0))
        p = tmp_path / "m.model"
        write_plac_model(p, PlacModel(mlp))
        with pytest.raises(DataFormatError, match="magic"):
            read_detector_model(p)

    def test_truncated_model(self, tmp_path):
        mlp = Mlp.create([4, 5, 5, 4], np.random.default_rng(0))
        p = tmp_path / "m.model"
        write_plac_model(p, PlacModel(mlp))
        p.write_bytes(p.read_bytes()[:-12])
        with pytest.raises(DataFormatError, match="truncated"):
            read_plac_model(p)


class TestWorldsAndScenes:
    def test_world_round_trip(self, tmp_path):
        world = make_world(4, d=16, n_base=4, n_novel=2)
        p = tmp_path / "w.json"
        write_world(p, world)
        again = read_world(p)
        assert again.dim == world.dim
        assert [c.id for c in again.concepts] == [c.id for c in world.concepts]
        np.testing.assert_array_equal(again.f_matrix, world.f_matrix)
        # the reloaded world computes identical ground truth
        x = np.random.default_rng(0).normal(size=(3, 16))
        np.testing.assert_array_equal(again.ground_truth_map(x), world.ground_truth_map(x))

    def test_scenes_round_trip(self, tmp_path):
        world = make_world(4, d=16, n_base=4, n_novel=2)
        scenes = sample_scenes(world, 3, seed=1)
        p = tmp_path / "s.json"
        write_scenes(p, scenes)
        again = read_scenes(p)
        assert len(again) == 3
        for sa, sb in zip(scenes, again):
            assert [o.concept_id for o in sa.objects] == [o.concept_id for o in sb.objects]
            assert sa.base_annotations == sb.base_annotations
            np.testing.assert_allclose(sa.features, sb.features, atol=1e-15)
            assert [p.box for p in sa.proposals] == [p.box for p in sb.proposals]

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "w.json"
        p.write_text("{not json")
        with pytest.raises(DataFormatError, match="JSON"):
            read_world(p)
        with pytest.raises(DataFormatError, match="JSON"):
            read_scenes(p)

    def test_missing_field(self, tmp_path):
        p = tmp_path / "w.json"
        p.write_text(json.dumps({"dim": 16}))
        with pytest.raises(DataFormatError, match="missing field"):
            read_world(p)


class TestPseudoLabels:
    def test_round_trip_preserves_scene_grouping(self, tmp_path):
        rng = np.random.default_rng(0)
        labels = [
            [
                PseudoLabel(Box(0.1, 0.1, 0.4, 0.4), rng.normal(size=6), 0.9),
                PseudoLabel(Box(0.5, 0.5, 0.8, 0.8), rng.normal(size=6), 0.7),
            ],
            [],
            [PseudoLabel(Box(0.2, 0.2, 0.6, 0.6), rng.normal(size=6), 0.5)],
        ]
        p = tmp_path / "pl.emb"
        write_pseudo_labels(p, labels)
        again = read_pseudo_labels(p)
        assert [len(g) for g in again] == [2, 0, 1]
        for ga, gb in zip(labels, again):
            for a, b in zip(ga, gb):
                assert a.box == b.box
                assert a.source_objectness == b.source_objectness
                np.testing.assert_allclose(a.embedding, b.embedding, atol=1e-6)

    def test_missing_sidecar(self, tmp_path):
        p = tmp_path / "pl.emb"
        write_pseudo_labels(p, [[PseudoLabel(Box(0, 0, 0.1, 0.1), np.ones(3), 0.9)]])
        sidecar_path(p).unlink()
        with pytest.raises(DataFormatError, match="sidecar"):
            read_pseudo_labels(p)


class TestConfig:
    def test_default_round_trip(self, tmp_path):
        cfg = RunConfig()
        p = tmp_path / "c.json"
        write_config(p, cfg)
        again = read_config(p)
        assert again.seed == cfg.seed
        assert again.pseudo_source == cfg.pseudo_source
        assert again.world.d == cfg.world.d
        assert again.eval.k_list == cfg.eval.k_list
        assert again.detector.weights == cfg.detector.weights

    def test_partial_config_uses_defaults(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 9, "world": {"d": 16}}))
        cfg = read_config(p)
        assert cfg.seed == 9
        assert cfg.world.d == 16
        assert cfg.world.n_base == 20

    def test_unknown_field_rejected(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"world": {"banana": 1}}))
        with pytest.raises(ConfigError):
            read_config(p)

    def test_bad_pseudo_source(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"pseudo_source": "telepathy"}))
        with pytest.raises(ConfigError, match="pseudo_source"):
            read_config(p)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("]")
        with pytest.raises(ConfigError, match="JSON"):
            read_config(p)
