import json
import os

import pytest

from videnoise.blocks import DenoisingBlock
from videnoise.checkpoint import checkpoint_meta, save_checkpoint
from videnoise.cli import main
from videnoise.frameio import load_frame_dir, save_frame_dir, save_image

from conftest import texture_image, texture_sequence


@pytest.fixture
def tiny_checkpoints(tmp_path):
    sp = tmp_path / "spatial.npz"
    tp = tmp_path / "temporal.npz"
    save_checkpoint(DenoisingBlock("spatial", depth=4, width=8, seed=1), sp)
    save_checkpoint(DenoisingBlock("temporal", depth=3, width=8, seed=1), tp)
    return str(sp), str(tp)


@pytest.fixture
def noisy_dir(tmp_path):
    seq = texture_sequence(32, 48, 3, seed=70)
    path = tmp_path / "noisy"
    save_frame_dir(seq, path)
    return str(path)


def read_all_bytes(directory):
    return {
        name: open(os.path.join(directory, name), "rb").read()
        for name in sorted(os.listdir(directory))
    }


class TestAddNoise:
    def test_deterministic_bytes(self, tmp_path, noisy_dir):
        out1 = str(tmp_path / "n1")
        out2 = str(tmp_path / "n2")
        args = ["add-noise", "--in", noisy_dir, "--sigma", "50", "--seed", "7"]
        assert main(args + ["--out", out1]) == 0
        assert main(args + ["--out", out2]) == 0
        assert read_all_bytes(out1) == read_all_bytes(out2)

    def test_different_seed_differs(self, tmp_path, noisy_dir):
        out1 = str(tmp_path / "n1")
        out2 = str(tmp_path / "n2")
        assert main(["add-noise", "--in", noisy_dir, "--out", out1,
                     "--sigma", "50", "--seed", "7"]) == 0
        assert main(["add-noise", "--in", noisy_dir, "--out", out2,
                     "--sigma", "50", "--seed", "8"]) == 0
        assert read_all_bytes(out1) != read_all_bytes(out2)

    def test_negative_sigma_usage_error(self, tmp_path, noisy_dir):
        code = main(["add-noise", "--in", noisy_dir, "--out", str(tmp_path / "x"),
                     "--sigma", "-5"])
        assert code == 2

    def test_sigma_above_75_usage_error(self, tmp_path, noisy_dir):
        code = main(["add-noise", "--in", noisy_dir, "--out", str(tmp_path / "x"),
                     "--sigma", "80"])
        assert code == 2

    def test_sigma_above_trained_range_warns(self, tmp_path, noisy_dir, capsys):
        code = main(["add-noise", "--in", noisy_dir, "--out", str(tmp_path / "x"),
                     "--sigma", "60"])
        assert code == 0
        assert "above the trained range" in capsys.readouterr().err


class TestDenoise:
    def test_end_to_end(self, tmp_path, noisy_dir, tiny_checkpoints, capsys):
        sp, tp = tiny_checkpoints
        out = str(tmp_path / "den")
        code = main(["denoise", "--in", noisy_dir, "--out", out, "--sigma", "25",
                     "--spatial", sp, "--temporal", tp, "--quiet"])
        assert code == 0
        err = capsys.readouterr().err
        assert err.startswith("config: ")  # resolved config precedes any work
        frames = load_frame_dir(out)
        assert len(frames) == 3
        assert frames.frames.shape == (3, 32, 48, 3)

    def test_missing_checkpoint_config_error(self, tmp_path, noisy_dir, monkeypatch):
        monkeypatch.delenv("VIDENOISE_CKPT_DIR", raising=False)
        code = main(["denoise", "--in", noisy_dir, "--out", str(tmp_path / "d"),
                     "--sigma", "25", "--quiet"])
        assert code == 4

    def test_env_checkpoint_dir(self, tmp_path, noisy_dir, monkeypatch):
        env = tmp_path / "ckpts"
        env.mkdir()
        save_checkpoint(DenoisingBlock("spatial", depth=4, width=8, seed=1),
                        env / "spatial.npz")
        save_checkpoint(DenoisingBlock("temporal", depth=3, width=8, seed=1),
                        env / "temporal.npz")
        monkeypatch.setenv("VIDENOISE_CKPT_DIR", str(env))
        code = main(["denoise", "--in", noisy_dir, "--out", str(tmp_path / "d"),
                     "--sigma", "25", "--quiet"])
        assert code == 0

    def test_workers_identical_output(self, tmp_path, noisy_dir, tiny_checkpoints):
        sp, tp = tiny_checkpoints
        o1, o4 = str(tmp_path / "w1"), str(tmp_path / "w4")
        base = ["denoise", "--in", noisy_dir, "--sigma", "25",
                "--spatial", sp, "--temporal", tp, "--quiet"]
        assert main(base + ["--out", o1, "--workers", "1"]) == 0
        assert main(base + ["--out", o4, "--workers", "4"]) == 0
        assert read_all_bytes(o1) == read_all_bytes(o4)

    def test_missing_input_data_error(self, tmp_path, tiny_checkpoints):
        sp, tp = tiny_checkpoints
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["denoise", "--in", str(empty), "--out", str(tmp_path / "d"),
                     "--sigma", "25", "--spatial", sp, "--temporal", tp, "--quiet"])
        assert code == 3

    def test_unknown_flag_usage_error(self, noisy_dir):
        assert main(["denoise", "--in", noisy_dir, "--frobnicate"]) == 2


class TestTraining:
    def test_train_spatial_and_temporal(self, tmp_path, capsys):
        images = tmp_path / "imgs"
        images.mkdir()
        for i in range(2):
            save_image(texture_image(64, 64, i), images / f"{i}.png")
        seqs = tmp_path / "seqs"
        save_frame_dir(texture_sequence(64, 64, 6, seed=3), seqs / "a")
        sp = tmp_path / "sp.npz"
        tp = tmp_path / "tp.npz"
        code = main(["train-spatial", "--images", str(images), "--out", str(sp),
                     "--samples", "8", "--epochs", "1", "--batch", "4",
                     "--ortho-until", "0", "--quiet"])
        assert code == 0
        meta = checkpoint_meta(sp)
        assert meta["mode"] == "eval"
        assert meta["train_config"]["epochs"] == 1
        # NOTE: full-size blocks; keep the temporal run minimal
        code = main(["train-temporal", "--sequences", str(seqs.parent / "seqs"),
                     "--spatial", str(sp), "--out", str(tp), "--samples", "4",
                     "--epochs", "1", "--batch", "4", "--ortho-until", "0",
                     "--crops-per-window", "4", "--quiet"])
        assert code == 0
        assert checkpoint_meta(tp)["kind"] == "temporal"

    def test_train_spatial_needs_corpus(self, tmp_path):
        code = main(["train-spatial", "--out", str(tmp_path / "x.npz"), "--quiet"])
        assert code == 4


class TestBenchmark:
    def test_report_files(self, tmp_path, tiny_checkpoints, capsys):
        sp, tp = tiny_checkpoints
        testset = tmp_path / "testset"
        save_frame_dir(texture_sequence(32, 48, 3, seed=80), testset / "one")
        save_frame_dir(texture_sequence(32, 48, 3, seed=81), testset / "two")
        out_json = tmp_path / "report.json"
        out_text = tmp_path / "report.txt"
        code = main(["benchmark", "--testset", str(testset), "--sigmas", "10,25",
                     "--spatial", sp, "--temporal", tp, "--out", str(out_json),
                     "--text", str(out_text), "--quiet"])
        assert code == 0
        stdout = capsys.readouterr().out
        assert "PSNR_seq" in stdout
        data = json.loads(out_json.read_text())
        assert data["sequences"] == ["one", "two"]
        assert len(data["entries"]) == 4
        assert out_text.read_text() == stdout


class TestConfigFile:
    def test_config_file_defaults(self, tmp_path, noisy_dir, tiny_checkpoints):
        sp, tp = tiny_checkpoints
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"spatial": sp, "temporal": tp, "quiet": True}))
        code = main(["--config", str(cfg), "denoise", "--in", noisy_dir,
                     "--out", str(tmp_path / "d"), "--sigma", "25"])
        assert code == 0
