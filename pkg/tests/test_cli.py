import json

import pytest

from gatcap.checkpoint import read_checkpoint
from gatcap.cli import main
from gatcap.experiment import caption_all
from gatcap.scenes import load_jsonl
from gatcap.search import greedy_decode

SMALL = ["--set", "d_m=16", "--set", "d_h=16", "--set", "d_w=8", "--set", "d_ff=16", "--set", "L_enc=1",
         "--set", "L_dec=1", "--set", "h=2"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def memorized(tmp_path_factory):
    d = tmp_path_factory.mktemp("mem")
    data, ckpt = d / "train.jsonl", d / "m.ckpt"
    assert main(["gen", "--seed", "1", "--scenes", "10", "--d", "16", "--out", str(data)]) == 0
    code = main(["train", "--data", str(data), "--out-ckpt", str(ckpt), "--epochs", "50", "--lr", "3e-3",
                 "--set", "batch_size=2"])
    return code, data, ckpt


class TestGen:
    def test_deterministic(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        code, out, _ = run(capsys, "gen", "--seed", 7, "--scenes", 100, "--out", a)
        assert code == 0 and "scenes=100" in out and "vocab=" in out
        run(capsys, "gen", "--seed", 7, "--scenes", 100, "--out", b)
        assert a.read_bytes() == b.read_bytes()
        assert len(a.read_text().splitlines()) == 100
        assert len(json.loads(a.read_text().splitlines()[0])["regions"][0]["feat"]) == 32

    def test_zero_scenes(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--scenes", 0, "--out", tmp_path / "x.jsonl")
        assert code == 2 and "--scenes" in err
        assert not (tmp_path / "x.jsonl").exists()

    def test_unwritable(self, tmp_path, capsys):
        (tmp_path / "file").write_text("")
        code, _, _ = run(capsys, "gen", "--scenes", 2, "--out", tmp_path / "file" / "x.jsonl")
        assert code == 2

    def test_missing_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["gen", "--out", "x.jsonl"])
        assert info.value.code == 2


class TestTrainEval:
    def test_memorization(self, memorized):
        code, _, ckpt = memorized
        assert code == 0 and ckpt.exists()
        report = json.loads((ckpt.parent / "m.ckpt.report.json").read_text())
        assert report["final_loss"] < 0.1 and report["final_token_accuracy"] >= 0.99
        assert len(report["epochs"]) == 50 and report["seed"] == 0
        assert (ckpt.parent / "m.ckpt.loss.png").stat().st_size > 0

    def test_eval_memorized(self, memorized, tmp_path, capsys):
        _, data, ckpt = memorized
        code, out, _ = run(capsys, "eval", "--data", data, "--ckpt", ckpt, "--report", tmp_path / "r.json")
        assert code == 0
        table = out.split("=== scores ===")[1].split("=== end ===")[0]
        rows = {line.split()[0]: float(line.split()[1]) for line in table.strip().splitlines()[2:]}
        assert rows["BLEU-1"] >= 0.99 and rows["spatial_accuracy"] == 1.0
        report = json.loads((tmp_path / "r.json").read_text())
        assert set(report) == {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L", "CIDEr", "spatial_accuracy"}
        for name, entry in report.items():
            assert set(entry) == {"corpus", "per_instance"}
            assert len(entry["per_instance"]) == 10
            assert entry["corpus"] == pytest.approx(rows[name], abs=5e-5)
        assert (tmp_path / "r.png").stat().st_size > 0

    def test_beam_one_is_greedy(self, memorized, capsys):
        _, data, ckpt = memorized
        code, out, _ = run(capsys, "caption", "--data", data, "--ckpt", ckpt, "--beam", 1)
        ck = read_checkpoint(ckpt)
        pairs = load_jsonl(data)
        greedy = [" ".join(ck.vocab.decode(greedy_decode(p.regions, ck.params, ck.config))) for p in pairs]
        assert code == 0 and out.splitlines() == greedy

    def test_caption_index(self, memorized, capsys):
        _, data, ckpt = memorized
        code, out, _ = run(capsys, "caption", "--data", data, "--ckpt", ckpt, "--index", 3)
        ck = read_checkpoint(ckpt)
        expected = caption_all(load_jsonl(data)[3:4], ck.params, ck.config, ck.vocab, beam=5)
        assert code == 0 and out.split() == expected[0]
        assert run(capsys, "caption", "--data", data, "--ckpt", ckpt, "--index", 10)[0] == 2

    def test_vocab_mismatch(self, memorized, tmp_path, capsys):
        _, data, ckpt = memorized
        other = tmp_path / "other.jsonl"
        lines = data.read_text().splitlines()
        rec = json.loads(lines[0])
        rec["refs"] = [["a", "purple", "zebra"]]
        other.write_text(json.dumps(rec) + "\n")
        code, _, err = run(capsys, "eval", "--data", other, "--ckpt", ckpt)
        assert code == 4 and "zebra" in err

    def test_corrupt_checkpoint(self, memorized, tmp_path, capsys):
        _, data, ckpt = memorized
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(ckpt.read_bytes()[:-3])
        assert run(capsys, "eval", "--data", data, "--ckpt", bad)[0] == 4

    def test_divergence_exit_code(self, memorized, tmp_path, capsys):
        _, data, _ = memorized
        out = tmp_path / "nan.ckpt"
        code, _, err = run(capsys, "train", "--data", data, "--out-ckpt", out, "--epochs", 3, "--lr", "1e200",
                           "--no-figures", *SMALL)
        assert code == 3 and "diverged" in err
        assert not out.exists()

    def test_identical_checkpoints(self, memorized, tmp_path, capsys):
        _, data, _ = memorized
        paths = [tmp_path / "a.ckpt", tmp_path / "b.ckpt"]
        for p in paths:
            assert run(capsys, "train", "--data", data, "--out-ckpt", p, "--epochs", 2, "--seed", 4,
                       "--no-figures", *SMALL)[0] == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_mode_geometry_off_is_base_row(self, memorized, tmp_path, capsys):
        _, data, _ = memorized
        out = tmp_path / "base.ckpt"
        run(capsys, "train", "--data", data, "--out-ckpt", out, "--epochs", 1, "--mode-geometry", "off",
            "--mode-position", "sinusoidal", "--glu", "none", "--no-figures", *SMALL)
        cfg = read_checkpoint(out).config
        assert (cfg.mode_geometry, cfg.mode_position, cfg.glu_placement) == ("off", "sinusoidal", "none")

    def test_config_file(self, memorized, tmp_path, capsys):
        _, data, _ = memorized
        conf = tmp_path / "c.conf"
        conf.write_text("# tiny\nd_m = 8\nh = 2\nd_h = 4\nd_w = 4\nd_ff = 8\nepochs = 1\n")
        out = tmp_path / "c.ckpt"
        assert run(capsys, "train", "--data", data, "--out-ckpt", out, "--config", conf, "--no-figures")[0] == 0
        cfg = read_checkpoint(out).config
        assert (cfg.d, cfg.d_m, cfg.d_h) == (16, 8, 4)

    @pytest.mark.parametrize("argv", [["--set", "h=3"], ["--set", "nope=1"], ["--set", "h"], ["--epochs", "0"]])
    def test_bad_config(self, memorized, tmp_path, capsys, argv):
        _, data, _ = memorized
        assert run(capsys, "train", "--data", data, "--out-ckpt", tmp_path / "x.ckpt", *argv)[0] == 2

    def test_bad_thread_env(self, memorized, tmp_path, capsys, monkeypatch):
        _, data, ckpt = memorized
        monkeypatch.setenv("GAT_THREADS", "zero")
        assert run(capsys, "caption", "--data", data, "--ckpt", ckpt)[0] == 2
        monkeypatch.setenv("GAT_THREADS", "1")
        assert run(capsys, "caption", "--data", data, "--ckpt", ckpt, "--beam", 1)[0] == 0


class TestAblate:
    def test_table_rows_and_outputs(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        main(["gen", "--seed", "2", "--scenes", "24", "--d", "8", "--out", str(data)])
        code, out, _ = run(capsys, "ablate", "--data", data, "--seeds", 1, "--train", 20, "--epochs", 1,
                           "--out-md", tmp_path / "t.md", "--out-json", tmp_path / "t.json",
                           "--figure", tmp_path / "t.png", *SMALL)
        assert code == 0
        table = out.split("=== ablation ===")[1].split("=== end ===")[0].strip().splitlines()
        rows = [line.split("|")[1].strip() for line in table[2:]]
        assert rows == ["Base", "Base+GSR", "Base+position-LSTM", "Full: GAT"]
        assert "ordering full_minus_base:" in out
        data_json = json.loads((tmp_path / "t.json").read_text())
        assert len(data_json["runs"]) == 4 and "ordering" in data_json
        assert (tmp_path / "t.md").read_text().strip().splitlines() == table
        assert (tmp_path / "t.png").stat().st_size > 0

    def test_train_split_validated(self, tmp_path, capsys):
        data = tmp_path / "d.jsonl"
        main(["gen", "--scenes", "5", "--out", str(data)])
        assert run(capsys, "ablate", "--data", data, "--train", 5)[0] == 2


class TestGradcheck:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--only", "softmax")
        assert code == 0 and "checks passed" in out

    def test_corrupted_backward_named(self, capsys):
        code, _, err = run(capsys, "gradcheck", "--only", "softmax", "--corrupt-op", "softmax")
        assert code == 1
        assert "softmax" in err.splitlines()[-1]

    def test_report_names_worst_element(self, capsys):
        _, out, _ = run(capsys, "gradcheck", "--only", "matmul")
        first = out.splitlines()[0]
        assert first.startswith("PASS matmul:") and "max rel err" in first and "index" in first
