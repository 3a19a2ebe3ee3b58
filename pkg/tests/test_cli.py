import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from surgidepth.cli import RunConfig, UsageError, main, parse_config
from surgidepth.evaluation import compute_metrics
from surgidepth.fileio import read_pgm8, write_depth
from surgidepth.lora import count_trainable


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out), "--n", "4", "--seed", "7"]) == 0
    return out


def test_empty_config_gives_published_defaults(tmp_path):
    (tmp_path / "c.json").write_text("")
    cfg = parse_config("train", str(tmp_path / "c.json"), {"data": "d", "out": "o"})
    t = cfg.train_config()
    assert (t.lr, t.weight_decay, t.batch_size, t.epochs, t.rank) == (1e-5, 1e-4, 8, 50, 4)
    assert (t.lambda1, t.lambda2, t.lambda3) == (1.0, 0.85, 0.5)
    (tmp_path / "c.json").write_text("{}")
    assert parse_config("train", str(tmp_path / "c.json"), {"data": "d", "out": "o"}) == cfg


def test_flags_override_file(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"lr": 1e-5, "epochs": 3}))
    cfg = parse_config("train", str(tmp_path / "c.json"), {"lr": 1e-3, "data": "d", "out": "o"})
    assert cfg.lr == 1e-3 and cfg.epochs == 3


@pytest.mark.parametrize("values, key", [
    ({"rank": -1}, "rank"),
    ({"colour": 1}, "colour"),
    ({"lr": "fast"}, "lr"),
    ({"epochs": 2.5}, "epochs"),
    ({"batch_size": 0}, "batch_size"),
    ({"lambda2": 1.5}, "lambda"),
    ({"profile": "huge"}, "profile"),
    ({"ranks": []}, "ranks"),
])
def test_usage_errors_name_the_key(tmp_path, values, key):
    (tmp_path / "c.json").write_text(json.dumps(values))
    with pytest.raises(UsageError, match=key):
        parse_config("train", str(tmp_path / "c.json"), {"data": "d", "out": "o"})


def test_usage_error_exit_code_and_no_output(tmp_path, dataset, capsys):
    out = tmp_path / "never"
    assert main(["train", "--rank", "-1", "--data", str(dataset), "--out", str(out)]) == 2
    assert "rank" in capsys.readouterr().err
    assert not out.exists()
    assert main(["gen-data", "--n", "0", "--out", str(out)]) == 2
    assert not out.exists()
    assert main(["train", "--data", str(dataset)]) == 2
    with pytest.raises(SystemExit) as info:
        main(["train", "--epochs", "x"])
    assert info.value.code == 2


def test_gen_data_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--out", str(tmp_path / name), "--n", "4", "--seed", "7"]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert len(a) == 8 and a == b


def test_eval_perfect_and_mismatch(tmp_path, dataset, capsys):
    assert main(["eval", "--pred", str(dataset), "--gt", str(dataset), "--out", str(tmp_path / "e")]) == 0
    lines = (tmp_path / "e" / "metrics.csv").read_text().splitlines()
    assert lines == ["abs_rel,sq_rel,rmse,rmse_log,delta", "0,0,0,0,1"]
    rows = list(csv.DictReader(open(tmp_path / "e" / "per_image.csv")))
    assert [r["image"] for r in rows] == [f"sample_{i:04d}" for i in range(4)]

    partial = tmp_path / "partial"
    partial.mkdir()
    write_depth(partial / "sample_0000.depth.pfm", np.ones((56, 56)))
    assert main(["eval", "--pred", str(partial), "--gt", str(dataset)]) == 1
    assert "1 predictions" in capsys.readouterr().err


def test_eval_csv_matches_metric_oracle(tmp_path):
    pred, gt = tmp_path / "p", tmp_path / "g"
    pred.mkdir(), gt.mkdir()
    p, g = np.array([[2.0, 1.0, 2.0]]), np.array([[2.0, 2.0, 2.0]])
    write_depth(pred / "x.pfm", p)
    write_depth(gt / "x.pfm", g)
    assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / "e")]) == 0
    row = (tmp_path / "e" / "metrics.csv").read_text().splitlines()[1]
    oracle = compute_metrics(p, g)
    assert [float(v) for v in row.split(",")] == pytest.approx(oracle.as_tuple(), rel=1e-9)
    assert oracle.abs_rel == pytest.approx(1 / 6)


def test_constant_visualisation_is_flat_grey(tmp_path):
    pred, gt = tmp_path / "p", tmp_path / "g"
    pred.mkdir(), gt.mkdir()
    write_depth(pred / "x.pfm", np.full((4, 5), 30.0))
    write_depth(gt / "x.pfm", np.full((4, 5), 60.0))
    assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / "e"),
                 "--visualize"]) == 0
    assert np.array_equal(read_pgm8(tmp_path / "e" / "vis" / "x.pgm"), np.full((4, 5), 128))


def test_unwritable_output_is_runtime_error(tmp_path, dataset):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["eval", "--pred", str(dataset), "--gt", str(dataset), "--out", str(blocker)]) == 1


def test_train_infer_eval_pipeline(tmp_path, dataset):
    args = ["train", "--data", str(dataset), "--epochs", "2", "--lr", "1e-3", "--batch-size", "2"]
    assert main(args + ["--out", str(tmp_path / "t1")]) == 0
    assert main(args + ["--out", str(tmp_path / "t2")]) == 0
    assert tree_bytes(tmp_path / "t1") == tree_bytes(tmp_path / "t2")
    log = (tmp_path / "t1" / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,loss" and len(log) == 3

    assert main(["infer", "--model", str(tmp_path / "t1" / "model.json"), "--data", str(dataset),
                 "--out", str(tmp_path / "pred"), "--visualize"]) == 0
    assert len(list((tmp_path / "pred").glob("*.depth.pfm"))) == 4
    assert len(list((tmp_path / "pred" / "vis").glob("*.pgm"))) == 4
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(dataset),
                 "--out", str(tmp_path / "ev")]) == 0
    delta = float((tmp_path / "ev" / "metrics.csv").read_text().splitlines()[1].split(",")[-1])
    assert 0.0 <= delta <= 1.0


def test_checkpoint_every(tmp_path, dataset):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"checkpoint_every": 1, "batch_size": 4}))
    assert main(["train", "--config", str(cfg), "--data", str(dataset), "--epochs", "2",
                 "--out", str(tmp_path / "t")]) == 0
    assert sorted(p.name for p in (tmp_path / "t").glob("model_epoch*.json")) == [
        "model_epoch0001.json", "model_epoch0002.json"]


def test_sweep_rank_rows(tmp_path, dataset):
    assert main(["sweep-rank", "--data", str(dataset), "--epochs", "1", "--lr", "1e-3",
                 "--out", str(tmp_path / "s")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "s" / "rank_sweep.csv")))
    assert [int(r["rank"]) for r in rows] == [1, 4, 8, 16]
    decoder = 256 * 4 * 64 + 256
    assert [int(r["trainable_params"]) for r in rows] == [
        count_trainable(4, 64, r, decoder) for r in (1, 4, 8, 16)]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "surgidepth", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep-rank" in res.stdout


def test_run_config_defaults_round_trip():
    assert RunConfig().ranks == (1, 4, 8, 16)
