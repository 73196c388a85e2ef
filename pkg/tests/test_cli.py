import subprocess
import sys

import numpy as np
import pytest

from prism_ood import cli
from prism_ood.data import Dataset, ScoreRecord, load_checkpoint, load_scores, save_dataset, save_scores
from prism_ood.metrics import auroc, fpr_at_tpr
from prism_ood.model import init_model

SMALL_CONFIG = """\
# tiny run
K = 3
D = 4
n_per_class = 25
epochs = 2
M = 2
L = 6
hidden = 8
k = 3
"""


@pytest.fixture
def workspace(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_CONFIG)
    return tmp_path, str(cfg)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_parse_run_config():
    vals = cli.parse_run_config("lambda = 0.1  # comment\nhidden = 4,5\nfreeze_B_in_reg = true\n")
    assert vals == {"lambda": 0.1, "hidden": (4, 5), "freeze_B_in_reg": True}
    with pytest.raises(cli.ConfigError):
        cli.parse_run_config("colour = red")
    with pytest.raises(cli.ConfigError):
        cli.parse_run_config("epochs = many")
    with pytest.raises(cli.ConfigError):
        cli.parse_run_config("just words")


def test_full_flow(workspace, capsys):
    tmp, cfg = workspace
    data, ckpt = tmp / "data", tmp / "run" / "model.prsm"
    assert run("gen-data", "--config", cfg, "--out", data) == 0
    assert run("train", "--config", cfg, "--data", data, "--out", ckpt, "--lambda", "0.1") == 0
    assert (tmp / "run" / "model.log.csv").read_text().startswith("epoch,ce,reg,total,acc\n")
    err = capsys.readouterr().err
    assert "# resolved config:" in err and "lambda=0.1" in err and "# seed: 7" in err

    for split in ("test_id", "test_ood"):
        assert run("score", "--config", cfg, "--checkpoint", ckpt, "--data", data / f"{split}.prsm",
                   "--out", tmp / f"{split}.scores") == 0
    reg = load_scores(tmp / "test_id.scores.reg")
    assert len(reg) == 15 and all(0 <= r.score <= 1 for r in reg)

    capsys.readouterr()
    out_csv = tmp / "report.csv"
    assert run("eval", tmp / "test_id.scores", tmp / "test_ood.scores", "--out", out_csv, "--bins", "4") == 0
    printed = capsys.readouterr().out
    assert printed == out_csv.read_text()
    id_s = [r.score for r in load_scores(tmp / "test_id.scores")]
    ood_s = [r.score for r in load_scores(tmp / "test_ood.scores")]
    row = printed.splitlines()[1].split(",")
    assert row[0] == "test_ood"
    assert row[1] == f"{fpr_at_tpr(id_s, ood_s, 0.95):.6f}"
    assert row[2] == f"{auroc(id_s, ood_s):.6f}"
    assert (tmp / "report.hist.id.csv").exists()


def test_repeat_runs_are_byte_identical(workspace):
    tmp, cfg = workspace
    run("gen-data", "--config", cfg, "--out", tmp / "d")
    for tag in ("a", "b"):
        run("train", "--config", cfg, "--data", tmp / "d", "--out", tmp / tag / "m.prsm")
        run("score", "--config", cfg, "--checkpoint", tmp / tag / "m.prsm", "--data", tmp / "d" / "test_id.prsm",
            "--out", tmp / tag / "s")
    for name in ("m.prsm", "m.log.csv", "s", "s.reg"):
        assert (tmp / "a" / name).read_bytes() == (tmp / "b" / name).read_bytes()


def test_zero_epochs_checkpoint_is_init(workspace):
    tmp, cfg = workspace
    run("gen-data", "--config", cfg, "--out", tmp / "d")
    assert run("train", "--config", cfg, "--data", tmp / "d", "--out", tmp / "m.prsm", "--seed", "3") == 0
    (tmp / "zero.cfg").write_text(SMALL_CONFIG.replace("epochs = 2", "epochs = 0"))
    run("train", "--config", tmp / "zero.cfg", "--data", tmp / "d", "--out", tmp / "z.prsm", "--seed", "3")
    m = load_checkpoint(tmp / "z.prsm")
    ref = init_model(4, 3, 2, L=6, hidden=(8,), seed=3)
    for k in ref.params:
        np.testing.assert_array_equal(m.params[k], ref.params[k])


def test_eval_perfect_separation(tmp_path, capsys):
    save_scores(tmp_path / "id", [ScoreRecord(i, "test_id", -0.1 * (i + 1)) for i in range(5)])
    save_scores(tmp_path / "ood", [ScoreRecord(i, "test_ood", -5.0 - i) for i in range(5)])
    assert run("eval", tmp_path / "id", tmp_path / "ood") == 0
    assert capsys.readouterr().out.splitlines()[1] == "ood,0.000000,1.000000"


def test_exit_codes(workspace, capsys):
    tmp, cfg = workspace
    assert run("train", "--config", tmp / "nope.cfg") == 1
    assert run("eval", tmp / "missing", tmp / "missing2") == 1
    (tmp / "bad.cfg").write_text("unknown_key = 1\n")
    assert run("gen-data", "--config", tmp / "bad.cfg", "--out", tmp / "x") == 2
    (tmp / "garbage").write_bytes(b"not a container")
    (tmp / "garbage.scores").write_text("1,2\n")
    assert run("eval", tmp / "garbage.scores", tmp / "garbage.scores") == 2

    run("gen-data", "--config", cfg, "--out", tmp / "d")
    run("train", "--config", cfg, "--data", tmp / "d", "--out", tmp / "m.prsm")
    assert run("score", "--checkpoint", tmp / "garbage", "--data", tmp / "d" / "test_id.prsm") == 2
    save_dataset(tmp / "wide.prsm", Dataset(np.zeros((3, 9)), [0, 1, 2], "test_id"))
    assert run("score", "--checkpoint", tmp / "m.prsm", "--data", tmp / "wide.prsm") == 3
    err = capsys.readouterr().err
    assert "error: dimension-mismatch:" in err and "error: missing-file:" in err


def test_grad_check(tmp_path, capsys):
    assert run("grad-check", "--lambda", "0.05") == 0
    out = capsys.readouterr().out
    assert "grad-check passed" in out
    assert {line.split(",")[0] for line in out.splitlines()[:-1]} == \
        {"encoder", "head", "confusion_logits", "mixture_logits"}
    (tmp_path / "c.cfg").write_text("inversion = exact\ninit_variant = linear_d\n")
    assert run("grad-check", "--config", tmp_path / "c.cfg") == 0


def test_ablate(workspace, capsys):
    tmp, cfg = workspace
    assert run("ablate", "--config", cfg, "--sweep", "lambda", "--values", "0,0.05", "--out", tmp / "a.csv") == 0
    lines = (tmp / "a.csv").read_text().splitlines()
    assert lines[0].startswith("sweep,value,id_accuracy,fpr_at_95,auroc")
    assert [ln.split(",")[:2] for ln in lines[1:]] == [["lambda", "0.0"], ["lambda", "0.05"]]
    assert run("ablate", "--config", cfg, "--sweep", "M", "--values", "1") == 0
    row = capsys.readouterr().out.splitlines()[-1].split(",")
    assert row[:2] == ["M", "1"] and float(row[5]) == 0.0
    assert run("ablate", "--config", cfg, "--sweep", "M", "--values", "x") == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "prism_ood.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen-data", "train", "score", "eval", "grad-check", "ablate"):
        assert cmd in res.stdout
