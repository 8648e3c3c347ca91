import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pgdimp.attack import AttackConfig
from pgdimp.cli import main
from pgdimp.data import load_dataset, load_image, save_dataset, save_image
from pgdimp.engine import save_model
from pgdimp.harness import PER_IMAGE_FIELDS, ablation_rows, schedule_rows, sweep_rows
from pgdimp.metrics import REPORT_FIELDS, pair_metrics


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, small_toy):
    model, train, test = small_toy
    root = tmp_path_factory.mktemp("ws")
    save_dataset(root / "data" / "train", train)
    save_dataset(root / "data" / "test", test)
    save_model(model, root / "model.bin")
    return root


def common(ws, out, *extra):
    return ["--model", str(ws / "model.bin"), "--data", str(ws / "data"), "--out", str(out), *extra]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_gen_data_and_train(tmp_path):
    data = tmp_path / "d"
    assert main(["gen-data", "--out", str(data), "--seed", "3", "--classes", "3", "--per-class", "40",
                 "--test-per-class", "4", "--shape", "1,6,6", "--amplitude", "16", "--noise", "8"]) == 0
    assert len(read_csv(data / "train" / "manifest.csv")) == 120
    assert main(["train", "--data", str(data), "--out", str(tmp_path / "m.bin"), "--seed", "1",
                 "--arch", "conv:4:3,relu,flatten,dense:3", "--epochs", "100", "--lr", "0.05"]) == 0
    assert (tmp_path / "m.bin").is_file()


@pytest.mark.parametrize("argv", [["gen-data", "--out", "x"], ["attack", "--epsilon", "big"], ["nope"]])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_attack_writes_consistent_reports(workspace):
    out = workspace / "run"
    assert main(["attack", *common(workspace, out)]) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert set(REPORT_FIELDS) <= set(agg)
    assert agg["meta"]["config"]["variant"] == "pgd-imp"
    rows = read_csv(out / "per_image.csv")
    assert list(rows[0]) == list(PER_IMAGE_FIELDS)
    batch, names = load_dataset(workspace / "data" / "test")
    for i, row in enumerate(rows):
        adv = load_image(out / "images" / (names[i].rsplit(".", 1)[0] + "_adv.pgm"))
        m = pair_metrics(batch.images[i], adv)
        assert [repr(m.linf), repr(m.l2), repr(m.psnr), repr(m.ssim)] == [row["linf"], row["l2"], row["psnr"], row["ssim"]]
        assert np.abs(adv - batch.images[i]).max() <= 8
        assert int(row["success"]) == int(row["pred_after"] != row["label"])


def test_default_attack_on_toy_benchmark(tmp_path, toy_benchmark):
    model, _, test = toy_benchmark
    save_model(model, tmp_path / "model.bin")
    save_dataset(tmp_path / "data" / "test", test)
    assert main(["attack", "--model", str(tmp_path / "model.bin"), "--data", str(tmp_path / "data"),
                 "--out", str(tmp_path / "run")]) == 0
    agg = json.loads((tmp_path / "run" / "aggregate.json").read_text())
    assert agg["asr"] >= 99 and agg["n"] == len(test)


def test_attack_reports_are_deterministic(workspace):
    a, b = workspace / "r1", workspace / "r2"
    for out in (a, b):
        assert main(["attack", *common(workspace, out, "--steps", "30", "--epsilon", "4")]) == 0
    for name in ("aggregate.json", "per_image.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    for f in (a / "images").iterdir():
        assert f.read_bytes() == (b / "images" / f.name).read_bytes()


def test_sub_quantization_attack(workspace):
    out = workspace / "tiny"
    assert main(["attack", *common(workspace, out, "--epsilon", "0.4")]) == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["asr"] == 0 and agg["linf"] == 0
    assert all(float(r["linf"]) == 0 for r in read_csv(out / "per_image.csv"))


def test_targeted_at_true_label(workspace):
    out = workspace / "tgt"
    assert main(["attack", *common(workspace, out, "--mode", "targeted", "--target", "0", "--steps", "20")]) == 0
    rows = read_csv(out / "per_image.csv")
    hits = sum(r["pred_after"] == "0" for r in rows)
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["asr"] == pytest.approx(100 * hits / len(rows))
    assert all(int(r["success"]) == (r["pred_after"] == "0") for r in rows)


def test_ablation_schedule_and_sweep_tables(small_toy):
    model, _, test = small_toy
    cfg = AttackConfig(epsilon=4, steps=20)
    abl = ablation_rows(model, test, cfg)
    assert [r[0] for r in abl] == ["pgd", "pgd-dss", "pgd-aes", "pgd-imp"]
    assert abl[0][1].mean_iter == 20
    assert abl[2][1].mean_iter < 20
    sched = schedule_rows(model, test, cfg)
    assert [r[0] for r in sched] == ["constant", "cosine_reverse", "cosine", "linear_reverse", "linear"]
    sweep = sweep_rows(model, test, cfg, [5, 10], [2, 4, 8])
    assert [(t, e) for t, e, _ in sweep] == [(5, 2), (5, 4), (5, 8), (10, 2), (10, 4), (10, 8)]


def test_table_subcommands(workspace):
    args = common(workspace, workspace / "abl.csv", "--steps", "10")
    assert main(["ablate", *args]) == 0
    assert len(read_csv(workspace / "abl.csv")) == 4
    assert main(["schedules", *common(workspace, workspace / "sch.csv", "--steps", "10")]) == 0
    assert len(read_csv(workspace / "sch.csv")) == 5
    assert main(["sweep", *common(workspace, workspace / "sw.csv"), "--steps-grid", "5,10",
                 "--epsilon-grid", "2,4"]) == 0
    rows = read_csv(workspace / "sw.csv")
    assert len(rows) == 4 and list(rows[0])[:2] == ["steps", "epsilon"]


def test_metrics_and_plan(tmp_path, capsys):
    a = np.full((1, 4, 4), 100, np.uint8)
    b = a.copy()
    b[0, 0, 0] = 101
    save_image(tmp_path / "a.pgm", a)
    save_image(tmp_path / "b.pgm", b)
    assert main(["metrics", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm")]) == 0
    assert round(json.loads(capsys.readouterr().out)["psnr"], 2) == 60.17
    assert main(["metrics", str(tmp_path / "a.pgm"), str(tmp_path / "a.pgm")]) == 0
    assert json.loads(capsys.readouterr().out)["psnr"] is None
    assert main(["plan", "--schedule", "constant", "--steps", "4", "--epsilon", "8"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "t,eta,alpha,cumulative"
    assert [float(l.split(",")[3]) for l in lines[1:]] == [2, 4, 6, 8]


def test_exit_codes(workspace, tmp_path, capsys):
    assert main(["attack", "--model", str(tmp_path / "none.bin"), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "o")]) == 1
    (tmp_path / "junk.bin").write_bytes(b"not a model")
    assert main(["attack", "--model", str(tmp_path / "junk.bin"), "--data", str(workspace / "data"),
                 "--out", str(tmp_path / "o")]) == 1
    assert main(["attack", *common(workspace, tmp_path / "o")[:3], str(tmp_path / "nodata"),
                 "--out", str(tmp_path / "o")]) == 1
    assert main(["attack", *common(workspace, tmp_path / "o", "--mode", "targeted")]) == 1
    assert main(["sweep", *common(workspace, tmp_path / "s.csv"), "--steps-grid", ""]) == 1
    assert main(["plan", "--steps", "0"]) == 1
    assert "error:" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "pgdimp", "plan", "--steps", "2", "--epsilon", "3"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.splitlines()[1:] == ["1,0.5,1.0,1.0", "2,1.0,2.0,3.0"]
