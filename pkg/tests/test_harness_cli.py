"""Harness and CLI tests: ablation outputs and contracts on miniature runs,
sweep/significance plumbing, exit codes, and artifact round trips."""
import json

import pytest

from vivqa.cli import main
from vivqa.config import RunConfig
from vivqa.data import make_synthetic, save_jsonl
from vivqa.errors import ConfigError
from vivqa.harness import ablate_freeze, ablate_fusion, significance, sweep


def mini_cfg(**kw):
    base = dict(preset="tiny", epochs=1, batch_size=8, lr=1e-3, layers=1, heads=2,
                drop_path=0.0, seed=0)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def splits():
    return make_synthetic(16, 2, 2, seed=1), make_synthetic(8, 2, 2, seed=2,
                                                            id_prefix="te")


# ---------------------------------------------------------------------------
# Harness


def test_ablate_fusion_outputs(tmp_path, splits):
    train, test = splits
    results = ablate_fusion(mini_cfg(), train, test, out_dir=str(tmp_path))
    assert set(results) == {"multiply", "add", "concatenate"}
    assert results["concatenate"]["fused_dims"] == "16x24"
    assert results["add"]["fused_dims"] == "8x24"
    assert results["multiply"]["fused_dims"] == "8x24"
    for r in results.values():
        assert len(r["boxplot_means"]) == len(train)
        assert {"q1", "q2", "q3"} <= set(r["sparsity"])
    assert (tmp_path / "fusion_ablation.csv").exists()
    assert (tmp_path / "fusion_ablation.md").exists()
    assert (tmp_path / "fusion_boxplot_data.csv").exists()


def test_ablate_freeze_contract(tmp_path, splits):
    train, test = splits
    results = ablate_freeze(mini_cfg(), train, test, out_dir=str(tmp_path))
    contract = results["contract"]
    assert contract["frozen_bytes_unchanged"]
    assert contract["fewer_trainable_params"]
    assert contract["fewer_backward_visits"]
    assert not results["unfrozen"]["extractor_bytes_unchanged"]
    table = (tmp_path / "freeze_ablation.csv").read_text()
    assert "Training Time (s)" in table


def test_sweep_axis(tmp_path, splits):
    train, test = splits
    curve = sweep(mini_cfg(), "heads", [1, 2], train, test, out_dir=str(tmp_path))
    assert [pt["heads"] for pt in curve] == [1, 2]
    assert all(0.0 <= pt["accuracy"] <= 1.0 for pt in curve)
    assert (tmp_path / "sweep_heads.csv").exists()
    with pytest.raises(ConfigError):
        sweep(mini_cfg(), "depth", [1], train, test)


def test_significance_runs_and_serializes(tmp_path, splits):
    train, test = splits
    res = significance(mini_cfg(), mini_cfg(lr=5e-4), train, test, n_seeds=2,
                       out_dir=str(tmp_path))
    assert len(res["accuracies_a"]) == 2
    assert isinstance(res["significant"], bool)
    saved = json.loads((tmp_path / "significance.json").read_text())
    assert saved["t"] == res["t"]
    with pytest.raises(ConfigError):
        significance(mini_cfg(), mini_cfg(), train, test, n_seeds=1)


# ---------------------------------------------------------------------------
# CLI


def write_corpus(tmp_path, n=16):
    path = tmp_path / "corpus.jsonl"
    save_jsonl(path, make_synthetic(n, 2, 2, seed=1))
    return str(path)


def write_config(tmp_path, data, **kw):
    cfg = dict(preset="tiny", epochs=1, batch_size=8, lr=1e-3, layers=1, heads=2,
               drop_path=0.0, data=data)
    cfg.update(kw)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_train_eval_score_round_trip(tmp_path, capsys):
    data = write_corpus(tmp_path)
    out = tmp_path / "run"
    cfg = write_config(tmp_path, data)
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "checkpoint.npz").exists()
    capsys.readouterr()

    eval_out = tmp_path / "eval"
    assert main(["eval", "--ckpt", str(out / "checkpoint.npz"), "--data", data,
                 "--out", str(eval_out)]) == 0
    evaluated = json.loads(capsys.readouterr().out)
    assert set(evaluated) == {"accuracy", "precision", "recall", "f1", "n"}
    assert (eval_out / "predictions.jsonl").exists()

    assert main(["score", "--pred", str(eval_out / "predictions.jsonl")]) == 0
    scored = json.loads(capsys.readouterr().out)
    assert set(scored) == {"accuracy", "precision", "recall", "f1", "n"}


def test_cli_stats_fixture(tmp_path, capsys):
    from vivqa.data import Example
    path = tmp_path / "fixture.jsonl"
    save_jsonl(path, [
        Example("1", "x", "màu gì đây", "đỏ"),
        Example("2", "y", "con vật này là con gì vậy", "con mèo"),
        Example("3", "z", "ai", "một người đàn ông"),
    ])
    assert main(["stats", "--data", str(path)]) == 0
    out = capsys.readouterr().out
    assert "No. Samples             3" in out
    assert "Longest Question Length 7" in out
    assert "Longest Answer Length   4" in out
    assert "Average Question Length 3.67" in out
    assert "Average Answer Length   2.33" in out


def test_cli_synth_writes_corpus(tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--n", "8", "--global", "2", "--local", "2",
                 "--seed", "3", "--out", str(out)]) == 0
    from vivqa.data import load_jsonl
    assert len(load_jsonl(out / "corpus.jsonl")) == 8


def test_cli_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"preset": "huge"}))
    assert main(["train", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 2
    # missing data
    ok = tmp_path / "ok.json"
    ok.write_text(json.dumps({"preset": "tiny"}))
    assert main(["train", "--config", str(ok)]) == 2


def test_cli_exit_code_data_error(tmp_path):
    data = tmp_path / "broken.jsonl"
    data.write_text("{broken\n")
    cfg = write_config(tmp_path, str(data))
    assert main(["train", "--config", cfg]) == 3


def test_cli_exit_code_runtime_error(tmp_path):
    cfg = write_config(tmp_path, str(tmp_path / "missing.jsonl"))
    assert main(["train", "--config", cfg]) == 4


def test_cli_ablate_freeze(tmp_path, capsys):
    data = write_corpus(tmp_path)
    cfg = write_config(tmp_path, data)
    out = tmp_path / "ab"
    assert main(["ablate", "freeze", "--config", cfg, "--out", str(out)]) == 0
    contract = json.loads(capsys.readouterr().out)
    assert contract["frozen_bytes_unchanged"] is True


def test_cli_sweep(tmp_path, capsys):
    data = write_corpus(tmp_path)
    cfg = write_config(tmp_path, data)
    assert main(["sweep", "--axis", "heads", "--values", "1,2",
                 "--config", cfg]) == 0
    curve = json.loads(capsys.readouterr().out)
    assert len(curve) == 2


def test_cli_unknown_config_field_rejected(tmp_path):
    data = write_corpus(tmp_path)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"preset": "tiny", "data": data, "learning_rate": 1}))
    assert main(["train", "--config", str(cfg)]) == 2
