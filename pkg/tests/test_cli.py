import json
import re
import subprocess
import sys

import numpy as np
import pytest

from stgeom import cli
from stgeom.grid_masks import parse_mask
from stgeom.pipeline.evaluate import gt_as_prediction, read_metrics_csv, write_prediction
from stgeom.scenes import read_dataset

TINY = {"scene": {"V": 1, "T": 2, "H": 16, "W": 16, "setting": "mono-d", "n_queries": 4},
        "model": {"d": 8, "heads": 2, "L": 1, "dense_dim": 4, "track_dim": 4}}


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys else ""
    return code, err


@pytest.fixture
def tiny_data(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "data"),
                     "--seed", "3", "--count", "2"]) == 0
    return cfg, tmp_path / "data"


def _flags(parser):
    return {a for action in parser._actions for a in action.option_strings}


def test_help_documents_every_flag(capsys):
    parser = cli.build_parser()
    subs = next(a for a in parser._actions if a.choices and "train" in a.choices).choices
    assert set(subs) == {"gen-data", "train", "eval", "infer", "dump-masks"}
    for name, sub in subs.items():
        assert cli.main([name, "--help"]) == 0
        text = capsys.readouterr().out
        documented = set(re.findall(r"(--[a-z][a-z-]*)", text))
        assert _flags(sub) - {"-h"} <= documented, name
        for action in sub._actions:
            if action.option_strings and action.option_strings[0] != "-h":
                assert action.help, action.option_strings


def test_usage_errors_exit_1(capsys, tmp_path):
    for argv in (["bogus"], ["train", "--data", "x"], ["gen-data", "--out", "x", "--seed", "1",
                                                       "--unknown"],
                 ["dump-masks", "--views", "1", "--times", "1", "--patches", "1", "--window", "2",
                  "--setting", "mono-s", "--kind", "temporal", "--out", tmp_path / "m.txt"]):
        code, err = run(argv, capsys)
        assert code == 1
        lines = err.strip().splitlines()
        assert len(lines) == 1 and lines[0].startswith("stgeom: error: usage: ")


def test_runtime_errors_exit_2(capsys, tmp_path):
    code, err = run(["eval", "--ckpt", tmp_path / "none.q4dg", "--data", tmp_path, "--out",
                     tmp_path / "m.csv"], capsys)
    assert code == 2 and len(err.strip().splitlines()) == 1 and err.startswith("stgeom: error: ")
    code, err = run(["train", "--data", tmp_path, "--stage", "2", "--steps", "1", "--ckpt",
                     tmp_path / "none.q4dg", "--seed", "0"], capsys)
    assert code == 2


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 9}))
    code, err = run(["gen-data", "--config", bad, "--out", tmp_path / "o", "--seed", "1"], capsys)
    assert code == 1 and "config" in err


def test_dump_masks_single_token(tmp_path):
    out = tmp_path / "m.txt"
    assert cli.main(["dump-masks", "--views", "1", "--times", "1", "--patches", "1", "--window",
                     "1", "--setting", "mono-s", "--kind", "spatial", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 and lines[1] == "1"


def test_dump_masks_matches_builder(tmp_path):
    out = tmp_path / "m.txt"
    assert cli.main(["dump-masks", "--views", "2", "--times", "3", "--patches", "2", "--window",
                     "3", "--setting", "multi-s", "--kind", "temporal", "--out", str(out)]) == 0
    header, bits = parse_mask(out.read_text())
    assert bits.shape == (12, 12) and header["S"] == 3


def test_gen_data_layout_and_threads(tiny_data, tmp_path, monkeypatch):
    cfg, data = tiny_data
    assert sorted(p.name for p in data.iterdir()) == ["resolved_config.json", "scene_0000",
                                                      "scene_0001"]
    monkeypatch.setenv("Q4DG_THREADS", "2")
    assert cli.main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d2"),
                     "--seed", "3", "--count", "2"]) == 0
    for name in ("scene_0000", "scene_0001"):
        for f in ("frames.q4dg", "tracks.csv", "meta.json"):
            assert (data / name / f).read_bytes() == (tmp_path / "d2" / name / f).read_bytes()
    monkeypatch.setenv("Q4DG_THREADS", "zero")
    assert cli.main(["gen-data", "--out", str(tmp_path / "d3"), "--seed", "1"]) == 1


def test_train_zero_steps_keeps_checkpoint_bytes(tiny_data, tmp_path):
    cfg, data = tiny_data
    ck = tmp_path / "run" / "model.q4dg"
    base = ["train", "--data", str(data), "--ckpt", str(ck), "--seed", "0", "--config", str(cfg)]
    assert cli.main(base + ["--stage", "1", "--task", "depth", "--steps", "1"]) == 0
    first = ck.read_bytes()
    assert cli.main(base + ["--stage", "1", "--steps", "0"]) == 0
    assert ck.read_bytes() == first
    assert cli.main(base + ["--stage", "2", "--steps", "0"]) == 0
    assert ck.read_bytes() == first
    assert (tmp_path / "run" / "resolved_config.json").exists()
    log = (tmp_path / "run" / "train_log.csv").read_text().splitlines()
    assert log[0].startswith("stage,task,step") and len(log) == 2


def test_train_eval_infer_chain(tiny_data, tmp_path):
    cfg, data = tiny_data
    ck = tmp_path / "run" / "model.q4dg"
    base = ["train", "--data", str(data), "--ckpt", str(ck), "--seed", "0", "--config", str(cfg)]
    assert cli.main(base + ["--stage", "1", "--steps", "1", "--no-avg"]) == 0
    assert cli.main(base + ["--stage", "2", "--steps", "2"]) == 0
    assert cli.main(["eval", "--ckpt", str(ck), "--data", str(data), "--out",
                     str(tmp_path / "metrics.csv")]) == 0
    rows = read_metrics_csv(tmp_path / "metrics.csv")
    assert set(rows) == {"scene_0000", "scene_0001"} and "deviation@12" in rows["scene_0000"]
    assert cli.main(["infer", "--ckpt", str(ck), "--data", str(data), "--out",
                     str(tmp_path / "pred")]) == 0
    assert (tmp_path / "pred" / "scene_0001" / "frame_v0_t001.q4dg").exists()
    assert cli.main(["eval", "--pred", str(tmp_path / "pred"), "--data", str(data), "--out",
                     str(tmp_path / "m2.csv")]) == 0
    assert read_metrics_csv(tmp_path / "m2.csv") == rows


def test_eval_on_ground_truth_prediction(tiny_data, tmp_path):
    _, data = tiny_data
    scene_dir = data / "scene_0000"
    write_prediction(gt_as_prediction(read_dataset(scene_dir)), tmp_path / "pred", "scene_0000")
    assert cli.main(["eval", "--pred", str(tmp_path / "pred"), "--data", str(scene_dir),
                     "--out", str(tmp_path / "m.csv")]) == 0
    m = read_metrics_csv(tmp_path / "m.csv")["scene_0000"]
    assert m["ATE"] < 1e-12 and m["AbsRel"] < 1e-12 and m["J_M"] == 1.0
    assert cli.main(["eval", "--data", str(scene_dir), "--out", str(tmp_path / "x.csv")]) == 1


def test_ablation_flags_are_stored_in_checkpoint(tiny_data, tmp_path):
    cfg, data = tiny_data
    ck = tmp_path / "abl" / "model.q4dg"
    assert cli.main(["train", "--data", str(data), "--ckpt", str(ck), "--seed", "0",
                     "--config", str(cfg), "--stage", "1", "--steps", "1", "--task", "pose",
                     "--no-cvgf", "--no-temporal-mask"]) == 0
    meta = json.loads((tmp_path / "abl" / "model.q4dg.json").read_text())
    assert meta["model"]["use_cvgf"] is False and meta["model"]["temporal_mask"] is False


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.txt"
    proc = subprocess.run([sys.executable, "-m", "stgeom.cli", "dump-masks", "--views", "1",
                           "--times", "2", "--patches", "1", "--window", "3", "--setting",
                           "mono-d", "--kind", "temporal", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    np.testing.assert_array_equal(parse_mask(out.read_text())[1], np.ones((2, 2), bool))
