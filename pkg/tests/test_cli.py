import json

import numpy as np
import pytest

from mislstm import ensemble as ens
from mislstm import pipeline
from mislstm.cli import main

TINY = {
    "train": {"epochs": 2, "batch_size": 8},
    "block": {"n_hours": 4, "raster_height": 16},
    "model": {
        "lstm_hidden": 16,
        "continuous": {"stages": [[8, 1], [16, 2]], "embed_dim": 16},
    },
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    conf = root / "tiny.json"
    conf.write_text(json.dumps(TINY))
    assert main(["generate", "--subjects", "3", "--days", "6", "--seed", "2", "--out", str(root / "raw")]) == 0
    assert main(["preprocess", "--data", str(root / "raw"), "--out", str(root / "cache")]) == 0
    for name, extra in (("m1", ["--seed", "1"]), ("m2", ["--seed", "2", "--encoding", "stacked_vertical"])):
        argv = ["train", "--data", str(root / "cache"), "--config", str(conf), "--out", str(root / name), *extra]
        assert main(argv) == 0
    return root


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code != 0
    with pytest.raises(SystemExit):
        main(["ensemble", "--data", ".", "--out", str(tmp_path), "--quantile", "2"])
    assert main(["evaluate", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "e")]) != 0


def test_train_outputs(workspace):
    run = workspace / "m1"
    for name in ("params.bin", "meta.json", "manifest.json", "train_log.jsonl", "logits_val.jsonl", "metrics.json"):
        assert (run / name).exists(), name
    assert not (run / ".lock").exists()
    log = [json.loads(line) for line in (run / "train_log.jsonl").read_text().splitlines()]
    assert [e["epoch"] for e in log] == [1, 2]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["configs"]["block"]["raster_height"] == 16


def test_evaluate_checkpoint_matches_logits(workspace):
    a, b = workspace / "eval_ckpt", workspace / "eval_logits"
    assert main(["evaluate", "--data", str(workspace / "cache"), "--checkpoint", str(workspace / "m1"), "--out", str(a)]) == 0
    logits = workspace / "m1" / "logits_val.jsonl"
    assert main(["evaluate", "--data", str(workspace / "cache"), "--logits", str(logits), "--out", str(b)]) == 0
    ra, rb = (json.loads((d / "report.json").read_text()) for d in (a, b))
    assert ra["per_head"] == rb["per_head"]


def test_ensemble_matches_module(workspace, capsys):
    out = workspace / "ens"
    logits = [str(workspace / m / "logits_val.jsonl") for m in ("m1", "m2")]
    fit = [str(workspace / m / "logits_train.jsonl") for m in ("m1", "m2")]
    argv = ["ensemble", "--data", str(workspace / "cache"), "--logits", *logits, "--fit-logits", *fit, "--out", str(out)]
    assert main(argv) == 0
    assert "ualre" in capsys.readouterr().out

    data = pipeline.load_prepared(workspace / "cache")
    pos = {d: i for i, d in enumerate(data.day_ids)}
    fit_pool = ens.pool_from_files(fit)
    fitted = fit_pool.fit(fit_pool.logits, data.labels[[pos[d] for d in fit_pool.day_ids]], 0.5)
    pool = ens.pool_from_files(logits)
    pool = ens.EnsemblePool(pool.logits, pool.model_ids, pool.day_ids, fitted.best_index, fitted.thresholds)
    expected = ens.ualre(pool)
    rows = [json.loads(line) for line in (out / "decisions.jsonl").read_text().splitlines()]
    got = np.array([list(r["ualre"].values()) for r in rows])
    assert np.array_equal(got, expected)
    assert (out / "thresholds.json").exists()


def test_ensemble_manifest_and_report(workspace):
    man = workspace / "pool.json"
    man.write_text(json.dumps({"logits": ["m1/logits_val.jsonl", "m2/logits_val.jsonl"]}))
    out = workspace / "ens_manifest"
    assert main(["ensemble", "--data", str(workspace / "cache"), "--manifest", str(man), "--method", "soft", "--out", str(out)]) == 0
    rep = workspace / "report"
    assert main(["report", str(workspace / "m1"), str(out / "report.json"), "--out", str(rep)]) == 0
    assert (rep / "table.txt").read_text().count("\n") >= 3
    assert (rep / "metrics.png").stat().st_size > 0


def test_lock_blocks_second_run(workspace):
    out = workspace / "locked"
    out.mkdir()
    (out / ".lock").write_text("123")
    argv = ["generate", "--subjects", "2", "--days", "3", "--out", str(out)]
    assert main(argv) == 2
    assert not (out / "sensors.csv").exists()
