import csv
import json

import pytest

from anomsynth.cli import main

from conftest import small_scene_doc

FAST = {
    "seed": 0,
    "segmenter": {"epochs": 2, "max_frames": 4},
    "bayes": {"input_size": [16, 16], "widths": [4, 8], "rates": [0.1, 0.2], "fc": [8],
              "epochs": 2, "mc_samples": 3},
    "curriculum": {"thresholds": [0.0, 0.5, 1.0], "normal_keep_every": 1},
    "metrics": {"pad_epochs": 5},
}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in ("run.json", "verify.json")}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = write_json(root / "scene.json", small_scene_doc(length=60, anomaly_fraction=0.1, seed=2))
    cfg = write_json(root / "cfg.json", FAST)
    assert main(["gen-synthetic", "--spec", str(spec), "--out", str(root / "gen")]) == 0
    assert main(["split", "--frames", str(root / "gen/frames"), "--labels", str(root / "gen/labels.csv"),
                 "--out", str(root / "split")]) == 0
    assert main(["synth", "--in", str(root / "split/train"), "--out", str(root / "synth"),
                 "--config", str(cfg)]) == 0
    assert main(["train", "--normals", str(root / "split/train"), "--synth", str(root / "synth"),
                 "--config", str(cfg), "--out", str(root / "model")]) == 0
    assert main(["eval", "--model", str(root / "model"), "--test", str(root / "split/test"),
                 "--labels", str(root / "split/test_labels.csv"), "--out", str(root / "report"),
                 "--synth", str(root / "synth"), "--config", str(cfg)]) == 0
    return root


class TestPipeline:
    def test_labels_rows(self, pipeline):
        rows = list(csv.DictReader(open(pipeline / "gen/labels.csv")))
        assert len(rows) == 60 and {r["label"] for r in rows} == {"normal", "abnormal"}

    def test_split_composition(self, pipeline):
        labels = {r["frame_id"]: r["label"] for r in csv.DictReader(open(pipeline / "gen/labels.csv"))}
        test = [r["label"] for r in csv.DictReader(open(pipeline / "split/test_labels.csv"))]
        train = [r["label"] for r in csv.DictReader(open(pipeline / "split/train_labels.csv"))]
        n_norm = sum(v == "normal" for v in labels.values())
        assert test.count("abnormal") == sum(v == "abnormal" for v in labels.values())
        assert set(train) == {"normal"}
        assert test.count("normal") == round(0.25 * n_norm)

    def test_manifest_matches_images(self, pipeline):
        manifest = json.loads((pipeline / "synth/manifest.json").read_text())
        assert len(manifest["records"]) == len(list((pipeline / "synth/images").iterdir())) > 0

    def test_verify_only(self, pipeline, capsys):
        assert main(["synth", "--out", str(pipeline / "synth"), "--verify"]) == 0
        assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["ok"] is True

    def test_train_outputs(self, pipeline):
        rows = list(csv.DictReader(open(pipeline / "model/curriculum.csv")))
        assert [float(r["t"]) for r in rows] == [0.0, 0.5, 1.0]
        for name in ("model.bin", "base.bin", "scores.csv", "best.json", "run.json"):
            assert (pipeline / "model" / name).exists()
        assert (pipeline / "model/curriculum.png").read_bytes()[:4] == b"\x89PNG"

    def test_eval_outputs(self, pipeline):
        rep = json.loads((pipeline / "report/report.json").read_text())
        assert {"auc_pr", "ap", "d_A_synth_abnormal", "d_A_synth_normal"} <= set(rep)
        n_test = len(list((pipeline / "split/test").iterdir()))
        assert len(list(csv.DictReader(open(pipeline / "report/scores.csv")))) == n_test
        assert (pipeline / "report/pr.png").read_bytes()[:4] == b"\x89PNG"
        assert (pipeline / "report/pr.svg").exists() and (pipeline / "report/pr.csv").exists()

    def test_gen_deterministic(self, pipeline, tmp_path):
        assert main(["gen-synthetic", "--spec", str(pipeline / "scene.json"), "--out", str(tmp_path / "g")]) == 0
        assert tree(tmp_path / "g") == tree(pipeline / "gen")

    def test_rerun_from_run_json(self, pipeline, tmp_path):
        run = pipeline / "model/run.json"
        assert main(["train", "--normals", str(pipeline / "split/train"), "--synth", str(pipeline / "synth"),
                     "--config", str(run), "--out", str(tmp_path / "m")]) == 0
        assert tree(tmp_path / "m") == tree(pipeline / "model")

    def test_synth_rerun_identical(self, pipeline, tmp_path):
        assert main(["synth", "--in", str(pipeline / "split/train"), "--out", str(tmp_path / "s"),
                     "--config", str(pipeline / "synth/run.json")]) == 0
        assert tree(tmp_path / "s") == tree(pipeline / "synth")

    def test_single_threshold(self, pipeline, tmp_path):
        cfg = write_json(tmp_path / "c.json", {**FAST, "curriculum": {"thresholds": [1.0], "normal_keep_every": 1}})
        assert main(["train", "--normals", str(pipeline / "split/train"), "--synth", str(pipeline / "synth"),
                     "--config", str(cfg), "--out", str(tmp_path / "m")]) == 0
        assert len((tmp_path / "m/curriculum.csv").read_text().splitlines()) == 2


class TestExitCodes:
    def test_missing_spec(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen-synthetic", "--out", "x"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {"bayes": {"epochz": 3}})
        (tmp_path / "in").mkdir()
        assert main(["synth", "--in", str(tmp_path / "in"), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2
        assert "epochz" in capsys.readouterr().err

    def test_empty_input(self, tmp_path):
        (tmp_path / "in").mkdir()
        assert main(["synth", "--in", str(tmp_path / "in"), "--out", str(tmp_path / "o")]) == 1

    def test_unlabeled_frame(self, pipeline, tmp_path, capsys):
        rows = (pipeline / "split/test_labels.csv").read_text().splitlines()
        missing = rows[1].split(",")[0]
        (tmp_path / "l.csv").write_text("\n".join(rows[:1] + rows[2:]) + "\n")
        assert main(["eval", "--model", str(pipeline / "model"), "--test", str(pipeline / "split/test"),
                     "--labels", str(tmp_path / "l.csv"), "--out", str(tmp_path / "r")]) == 1
        assert missing in capsys.readouterr().err

    def test_single_class_test_set(self, pipeline, tmp_path):
        assert main(["eval", "--model", str(pipeline / "model"), "--test", str(pipeline / "split/train"),
                     "--labels", str(pipeline / "split/train_labels.csv"), "--out", str(tmp_path / "r")]) == 1

    def test_bad_json(self, tmp_path):
        (tmp_path / "s.json").write_text("{nope")
        assert main(["gen-synthetic", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "o")]) == 2

    def test_default_spec_prints_json(self, capsys):
        assert main(["default-spec", "--length", "30"]) == 0
        assert json.loads(capsys.readouterr().out)["length"] == 30
