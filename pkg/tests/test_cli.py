import csv
import json

from tqsel.cli import main


def test_cli_end_to_end(tmp_path, capsys):
    corpus, data = tmp_path / "corpus", tmp_path / "data"
    assert main(["toy-corpus", "--out", str(corpus), "--train", "1", "--eval", "1", "--test", "0",
                 "--duration", "2"]) == 0
    for split, protocol, seed in [("train", "moving", 1), ("eval", "moving", 2)]:
        assert main(["synth", "--corpus", str(corpus), "--protocol", protocol, "--count", "2", "--seed", str(seed),
                     "--out", str(data / split), "--split", split, "--duration", "2", "--max-order", "1"]) == 0
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(
        "model = \"frame_cross_attn\"\nbatch_size = 2\n"
        "model.d_model = 8\nmodel.heads = 2\nmodel.n_enc = 1\nmodel.n_dec = 1\nmodel.d_ff = 8\n",
        encoding="utf-8",
    )
    assert main(["train", "--config", str(cfg), "--train", str(data / "train" / "manifest.jsonl"),
                 "--eval", str(data / "eval" / "manifest.jsonl"), "--out", str(tmp_path / "run"),
                 "--max-epochs", "1"]) == 0
    ckpt = tmp_path / "run" / "best.tqck"
    report = tmp_path / "report.json"
    assert main(["eval", "--ckpt", str(ckpt), "--manifest", str(data / "eval" / "manifest.jsonl"),
                 "--report", str(report)]) == 0
    assert set(json.loads(report.read_text())) >= {"mae", "per_split", "per_example", "config_hash"}
    traj = tmp_path / "traj.csv"
    assert main(["export-traj", "--ckpt", str(ckpt), "--example", "eval_000000", "--out", str(traj)]) == 0
    with open(traj) as fh:
        assert len(list(csv.reader(fh))) == 21
    capsys.readouterr()
    assert main(["export-traj", "--ckpt", str(ckpt), "--example", "nope", "--out", str(traj)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_reports_bad_corpus(tmp_path, capsys):
    assert main(["synth", "--corpus", str(tmp_path / "missing"), "--protocol", "2dir", "--count", "1",
                 "--seed", "0", "--out", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err
