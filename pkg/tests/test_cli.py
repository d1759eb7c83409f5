import json

import numpy as np
import pytest

from conftest import make_tiny_cfg
from sada.cli import main
from sada.config import save_config
from sada.data import read_feature_file


def _gen(tmp_path, name="bench", videos=3, seed=1):
    out = tmp_path / name
    code = main([
        "gen-bench", "--classes", "3", "--videos", str(videos),
        "--val-videos", "2", "--steps", "32", "--features", "8",
        "--seg-min", "1", "--seg-max", "2", "--min-len", "4", "--max-len", "8",
        "--seed", str(seed), "--out", str(out),
    ])
    assert code == 0
    return out


def _tiny_config(tmp_path):
    cfg = make_tiny_cfg(epochs=2, per_domain_batch=2)
    path = tmp_path / "tiny.toml"
    save_config(cfg, path)
    return path


def test_unknown_command_is_validation_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "error:" in capsys.readouterr().err


def test_missing_required_flag(capsys):
    assert main(["gen-bench"]) == 1
    assert main(["train", "--data", "x"]) == 1


def test_gen_bench_writes_and_reruns_identically(tmp_path, capsys):
    out_a = _gen(tmp_path, "a")
    capsys.readouterr()
    out_b = _gen(tmp_path, "b")
    captured = capsys.readouterr().out
    assert "source_train: 3 videos" in captured
    fa = read_feature_file(out_a / "source_train" / "features" / "v0000s.sadf")
    fb = read_feature_file(out_b / "source_train" / "features" / "v0000s.sadf")
    np.testing.assert_array_equal(fa.features, fb.features)
    assert (out_a / "bench.json").is_file()


def test_train_eval_flow(tmp_path, capsys):
    bench = _gen(tmp_path)
    cfg_path = _tiny_config(tmp_path)
    run_dir = tmp_path / "run"
    code = main(["train", "--config", str(cfg_path), "--data", str(bench),
                 "--out", str(run_dir), "--epochs", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "trained 1 epochs" in out
    assert (run_dir / "config.toml").is_file()
    assert (run_dir / "checkpoint.npz").is_file()
    metrics = (run_dir / "metrics.csv").read_text().strip().split("\n")
    assert metrics[0] == "epoch,lr,task_loss,sada_loss,val_map"
    assert len(metrics) == 2

    eval_dir = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(run_dir / "checkpoint.npz"),
                 "--data", str(bench), "--out", str(eval_dir)])
    assert code == 0
    out = capsys.readouterr().out
    assert "evaluated target_val" in out
    assert (eval_dir / "predictions.jsonl").is_file()
    report = json.loads((eval_dir / "report.json").read_text())
    assert "avg_map" in report
    # the metrics row logged at train time matches the eval of the checkpoint
    logged = float(metrics[1].rsplit(",", 1)[1])
    assert report["avg_map"] == pytest.approx(logged, abs=1e-6)


def test_train_rejects_wrong_feature_dim(tmp_path, capsys):
    bench = _gen(tmp_path)
    cfg = make_tiny_cfg()
    cfg.model.in_dim = 12
    cfg_path = tmp_path / "bad.toml"
    save_config(cfg, cfg_path)
    code = main(["train", "--config", str(cfg_path), "--data", str(bench),
                 "--out", str(tmp_path / "run")])
    assert code == 1
    assert "in_dim" in capsys.readouterr().err


def test_eval_missing_checkpoint(tmp_path, capsys):
    bench = _gen(tmp_path)
    code = main(["eval", "--checkpoint", str(tmp_path / "nope.npz"),
                 "--data", str(bench), "--out", str(tmp_path / "e")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_ablate_rejects_unknown_grid(tmp_path, capsys):
    code = main(["ablate", "--grid", "nope", "--data", str(tmp_path / "missing"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    err = capsys.readouterr().err
    assert "valid names" in err


def test_ablate_and_report_flow(tmp_path, capsys):
    bench = _gen(tmp_path, videos=2)
    cfg_path = _tiny_config(tmp_path)
    out_dir = tmp_path / "grid"
    code = main(["ablate", "--grid", "mask-bkg", "--data", str(bench),
                 "--config", str(cfg_path), "--seeds", "1",
                 "--out", str(out_dir)])
    assert code == 0
    out = capsys.readouterr().out
    assert "mask_100 vs mask_0" in out
    csv_path = out_dir / "mask-bkg_results.csv"
    assert csv_path.is_file()

    code = main(["report", "--results", str(csv_path),
                 "--compare", "mask_50", "mask_0"])
    assert code == 0
    out = capsys.readouterr().out
    assert "grid: mask-bkg" in out
    assert "mask_50 vs mask_0" in out
