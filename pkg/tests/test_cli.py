import json

import numpy as np
import pytest

from openvocab.cli import main
from openvocab.io_formats import RunConfig, read_config, write_config
from openvocab.pipeline import run_pipeline


def small_config(seed=5, pseudo_source="plac"):
    cfg = RunConfig.from_dict(
        {
            "seed": seed,
            "pseudo_source": pseudo_source,
            "world": {
                "d": 16,
                "n_base": 6,
                "n_novel": 3,
                "n_pairs": 64,
                "n_train_scenes": 6,
                "n_eval_scenes": 3,
            },
            "plac": {"epochs": 2, "batch_size": 32},
            "detector": {"iterations": 30, "hidden_dim": 8},
        }
    )
    return cfg


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "config.json"
    write_config(p, small_config())
    return p


class TestSubcommandChain:
    def test_stages_compose(self, tmp_path, config_path, capsys):
        data = tmp_path / "data"
        c = ["--config", str(config_path)]
        assert main(["gen", "--out-dir", str(data)] + c) == 0
        for name in (
            "world.json",
            "pairs_image.emb",
            "pairs_text.emb",
            "train_scenes.json",
            "eval_scenes.json",
            "config_echo.json",
        ):
            assert (data / name).exists()

        labeler = tmp_path / "labeler.model"
        assert (
            main(
                [
                    "train-plac",
                    "--pairs-image",
                    str(data / "pairs_image.emb"),
                    "--pairs-text",
                    str(data / "pairs_text.emb"),
                    "--out",
                    str(labeler),
                ]
                + c
            )
            == 0
        )
        assert labeler.exists()

        pseudo = tmp_path / "pseudo.emb"
        assert (
            main(
                [
                    "pseudo-label",
                    "--world",
                    str(data / "world.json"),
                    "--scenes",
                    str(data / "train_scenes.json"),
                    "--model",
                    str(labeler),
                    "--out",
                    str(pseudo),
                ]
                + c
            )
            == 0
        )

        detector = tmp_path / "detector.model"
        assert (
            main(
                [
                    "train-detector",
                    "--world",
                    str(data / "world.json"),
                    "--scenes",
                    str(data / "train_scenes.json"),
                    "--pseudo",
                    str(pseudo),
                    "--out",
                    str(detector),
                ]
                + c
            )
            == 0
        )

        report_path = tmp_path / "report.json"
        assert (
            main(
                [
                    "eval",
                    "--world",
                    str(data / "world.json"),
                    "--scenes",
                    str(data / "eval_scenes.json"),
                    "--model",
                    str(detector),
                    "--out",
                    str(report_path),
                ]
                + c
            )
            == 0
        )
        report = json.loads(report_path.read_text())
        assert set(report["prec_at"]) == {"1", "5", "10"}
        assert "ap_novel" in report

        # the library pipeline on the same config lands on comparable metrics
        # (embeddings round-trip through float32 on disk, so training is not
        # bit-identical between the two paths)
        lib_report = run_pipeline(read_config(config_path)).report.to_dict()
        for k in ("1", "5", "10"):
            assert abs(report["prec_at"][k] - lib_report["prec_at"][k]) <= 0.35

        # match dump for scene 0 is valid JSON with the stage split
        dump = tmp_path / "match.json"
        assert (
            main(
                [
                    "match",
                    "--world",
                    str(data / "world.json"),
                    "--scenes",
                    str(data / "train_scenes.json"),
                    "--model",
                    str(detector),
                    "--pseudo",
                    str(pseudo),
                    "--scene-index",
                    "0",
                    "--dump",
                    str(dump),
                ]
                + c
            )
            == 0
        )
        match = json.loads(dump.read_text())
        assert set(match) == {"stage1", "stage2", "unmatched_queries"}
        assert all(len(pair) == 2 for pair in match["stage1"])

    def test_chain_deterministic(self, tmp_path, config_path):
        reports = []
        for run in ("a", "b"):
            data = tmp_path / run
            main(["gen", "--out-dir", str(data), "--config", str(config_path)])
            labeler = data / "labeler.model"
            main(
                [
                    "train-plac",
                    "--pairs-image",
                    str(data / "pairs_image.emb"),
                    "--pairs-text",
                    str(data / "pairs_text.emb"),
                    "--out",
                    str(labeler),
                    "--config",
                    str(config_path),
                ]
            )
            reports.append(labeler.read_bytes())
        assert reports[0] == reports[1]


class TestPipelineCommand:
    def test_writes_artifacts(self, tmp_path, config_path, capsys):
        out = tmp_path / "run"
        assert main(["pipeline", "--config", str(config_path), "--out-dir", str(out)]) == 0
        for name in (
            "config_echo.json",
            "world.json",
            "labeler.model",
            "pseudo_labels.emb",
            "detector.model",
            "report.json",
            "report.txt",
        ):
            assert (out / name).exists()
        assert "prec@1" in capsys.readouterr().out

    def test_base_only_skips_labeler(self, tmp_path):
        p = tmp_path / "config.json"
        write_config(p, small_config(pseudo_source="none"))
        out = tmp_path / "run"
        assert main(["pipeline", "--config", str(p), "--out-dir", str(out)]) == 0
        assert not (out / "labeler.model").exists()
        assert (out / "report.json").exists()


class TestGradcheckCommand:
    def test_passes_quickly(self, capsys):
        assert main(["gradcheck", "--seeds", "2"]) == 0
        out = capsys.readouterr().out
        assert "ok" in out and "FAIL" not in out


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"pseudo_source": "telepathy"}))
        assert main(["gen", "--config", str(bad), "--out-dir", str(tmp_path / "d")]) == 2

    def test_missing_input_is_3(self, tmp_path, capsys):
        assert (
            main(
                [
                    "train-plac",
                    "--pairs-image",
                    str(tmp_path / "missing.emb"),
                    "--pairs-text",
                    str(tmp_path / "missing2.emb"),
                    "--out",
                    str(tmp_path / "m.model"),
                ]
            )
            == 3
        )

    def test_corrupt_input_is_3(self, tmp_path, capsys):
        bad = tmp_path / "bad.emb"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        assert (
            main(
                [
                    "train-plac",
                    "--pairs-image",
                    str(bad),
                    "--pairs-text",
                    str(bad),
                    "--out",
                    str(tmp_path / "m.model"),
                ]
            )
            == 3
        )

    def test_plac_source_without_model_is_2(self, tmp_path, config_path, capsys):
        data = tmp_path / "data"
        main(["gen", "--out-dir", str(data), "--config", str(config_path)])
        assert (
            main(
                [
                    "pseudo-label",
                    "--world",
                    str(data / "world.json"),
                    "--scenes",
                    str(data / "train_scenes.json"),
                    "--source",
                    "plac",
                    "--out",
                    str(tmp_path / "p.emb"),
                ]
            )
            == 2
        )
