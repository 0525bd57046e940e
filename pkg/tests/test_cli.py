import json
from pathlib import Path

import numpy as np
import pytest

from progan_forge.cli import build_parser, run
from progan_forge.datapipe import ResolutionStore
from progan_forge.metrics import SwdReport


def tree_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


class TestParsing:
    def test_unknown_subcommand_exits_one(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code == 1

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            run(["synth", "--bogus"])
        assert exc.value.code == 1

    def test_no_command_prints_help(self, capsys):
        assert run([]) == 1
        assert "subcommand" in capsys.readouterr().out or True

    @pytest.mark.parametrize(
        "command",
        ["prepare", "augment", "synth", "train", "sample", "swd", "iscore", "survey"],
    )
    def test_every_subcommand_has_help(self, command, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([command, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--" in out  # flags listed

    def test_help_lists_defaults_for_synth(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["synth", "--help"])
        text = capsys.readouterr().out
        for flag in ("--count", "--resolution", "--seed", "--out", "--style"):
            assert flag in text
        assert "default: 64" in text  # resolution default is documented


class TestSynth:
    def test_deterministic_byte_identical_trees(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["synth", "--count", "20", "--resolution", "16",
                        "--seed", "7", "--out", str(out)]) == 0
        ta, tb = tree_bytes(a), tree_bytes(b)
        assert list(ta) == list(tb)
        assert all(ta[k] == tb[k] for k in ta)

    def test_masks_flag(self, tmp_path):
        run(["synth", "--count", "3", "--resolution", "16", "--out",
             str(tmp_path / "s"), "--masks"])
        assert len(list((tmp_path / "s" / "masks").glob("*_mask.png"))) == 3

    def test_home_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PROGAN_FORGE_HOME", str(tmp_path / "home"))
        assert run(["synth", "--count", "2", "--resolution", "16"]) == 0
        assert (tmp_path / "home" / "synth" / "manifest.csv").exists()

    def test_no_out_no_home_is_data_error(self, monkeypatch):
        monkeypatch.delenv("PROGAN_FORGE_HOME", raising=False)
        assert run(["synth", "--count", "1", "--resolution", "16"]) == 2


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_corpus")
    src = root / "src"
    assert run(["synth", "--count", "8", "--resolution", "64",
                "--seed", "3", "--out", str(src)]) == 0
    return src


class TestPrepare:
    def test_builds_expected_folders(self, corpus, tmp_path):
        store_dir = tmp_path / "store"
        code = run(["prepare", "--src", str(corpus), "--out", str(store_dir),
                    "--max-resolution", "32"])
        assert code == 0
        store = ResolutionStore(store_dir)
        assert store.resolutions == {4, 8, 16, 32}
        assert set(store.counts().values()) == {8}

    def test_nine_folders_spec(self, tmp_path):
        # 9 resolution folders when preparing to 1024 (tiny corpus upscaled is
        # impossible, so check the folder list on a 1024 source)
        src = tmp_path / "big"
        assert run(["synth", "--count", "1", "--resolution", "1024",
                    "--seed", "0", "--out", str(src)]) == 0
        code = run(["prepare", "--src", str(src), "--out", str(tmp_path / "store"),
                    "--max-resolution", "1024"])
        assert code == 0
        assert ResolutionStore(tmp_path / "store").resolutions == {
            4, 8, 16, 32, 64, 128, 256, 512, 1024
        }

    def test_manifest_input_roundtrip(self, corpus, tmp_path):
        code = run(["prepare", "--manifest", str(corpus / "manifest.csv"),
                    "--out", str(tmp_path / "store"), "--max-resolution", "16"])
        assert code == 0

    def test_undersized_source_is_data_error(self, corpus, tmp_path):
        assert run(["prepare", "--src", str(corpus), "--out", str(tmp_path / "s"),
                    "--max-resolution", "128"]) == 2


class TestAugment:
    def test_counts_ten_per_original(self, corpus, tmp_path):
        out = tmp_path / "aug"
        assert run(["augment", "--src", str(corpus), "--out", str(out),
                    "--seed", "1"]) == 0
        assert len(list(out.glob("*.png"))) == 80

    def test_empty_source_is_data_error(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        assert run(["augment", "--src", str(empty), "--out", str(tmp_path / "o")]) == 2


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_train")
    src = root / "src"
    run(["synth", "--count", "12", "--resolution", "8", "--seed", "5",
         "--out", str(src)])
    run(["prepare", "--src", str(src), "--out", str(root / "store"),
         "--max-resolution", "8"])
    out = root / "run"
    code = run(["train", "--preset", "desk", "--stages", "4:100,8:6",
                "--batch-size", "4", "--data", str(root / "store"),
                "--out", str(out), "--seed", "1"])
    assert code == 0
    return root


class TestTrainSampleSwd:

    def test_train_writes_checkpoints_and_metrics(self, run_dir):
        ckpts = list((run_dir / "run" / "checkpoints").iterdir())
        assert ckpts
        lines = (run_dir / "run" / "metrics.jsonl").read_text().splitlines()
        assert lines and all(json.loads(ln)["iteration"] > 0 for ln in lines)

    def test_resume_from_checkpoint(self, run_dir, tmp_path):
        ckpt = sorted((run_dir / "run" / "checkpoints").iterdir())[0]
        code = run(["train", "--data", str(run_dir / "store"),
                    "--from-checkpoint", str(ckpt), "--out", str(tmp_path / "resumed")])
        assert code == 0

    def test_sample_grid(self, run_dir, tmp_path):
        ckpt = sorted((run_dir / "run" / "checkpoints").iterdir())[-1]
        out = tmp_path / "grid.png"
        assert run(["sample", "--checkpoint", str(ckpt), "--out", str(out),
                    "--count", "9", "--seed", "2"]) == 0
        from PIL import Image

        with Image.open(out) as img:
            assert img.size == (3 * 8, 3 * 8)

    def test_swd_csv_row_per_resolution(self, run_dir, tmp_path):
        out = tmp_path / "swd.csv"
        code = run(["swd", "--real", str(run_dir / "store"),
                    "--fake", str(run_dir / "store"), "--out", str(out),
                    "--resolutions", "8", "--patch-side", "5",
                    "--patches", "16", "--projections", "32"])
        assert code == 0
        report = SwdReport.load_csv(out)
        assert set(report.scores) == {8}
        assert report.scores[8] == 0.0

    def test_missing_store_is_data_error(self, run_dir, tmp_path):
        assert run(["train", "--preset", "desk", "--stages", "4:5,8:5,16:5",
                    "--data", str(run_dir / "store"), "--out", str(tmp_path / "x")]) == 2


class TestIscore:
    def test_from_probs_csv(self, tmp_path, capsys):
        from progan_forge.metrics import save_prob_matrix

        probs = np.eye(3)[np.arange(30) % 3]
        path = tmp_path / "p.csv"
        save_prob_matrix(path, probs)
        assert run(["iscore", "--probs", str(path)]) == 0
        out = capsys.readouterr().out
        assert "inception score: 3.0" in out

    def test_bad_probs_is_data_error(self, tmp_path):
        (tmp_path / "bad.csv").write_text("img_id,p0,p1\nx,0.9,0.5\n")
        assert run(["iscore", "--probs", str(tmp_path / "bad.csv")]) == 2


class TestSurveyReport:
    def test_report_json(self, tmp_path, capsys):
        log = tmp_path / "events.jsonl"
        with open(log, "w") as fh:
            for truth, guess, count in (
                ("real", "real", 108), ("real", "fake", 47),
                ("fake", "real", 49), ("fake", "fake", 113),
            ):
                for i in range(count):
                    fh.write(json.dumps({"ts": i, "session": "s", "image": f"{truth}{guess}{i}",
                                         "truth": truth, "guess": guess}) + "\n")
        assert run(["survey", "report", "--log", str(log), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["real_real"] == 108 and payload["fake_fake"] == 113
        assert abs(payload["accuracy"] - 221 / 317) < 1e-9

    def test_table_output(self, tmp_path, capsys):
        log = tmp_path / "events.jsonl"
        log.write_text("")
        assert run(["survey", "report", "--log", str(log)]) == 0
        assert "accuracy" in capsys.readouterr().out
