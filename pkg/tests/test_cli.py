import json

import numpy as np
import pytest

from hyperdisc import cli, harness
from hyperdisc.harness import ConfigError

SMALL = """
[arch]
layers = 2,16,2

[data]
kind = moons
n = 300
noise = 0.2

[train]
tbs = 32
epochs = 3

[policies]
lr = 0.05-0.5/1
momentum = 0.85-0.95
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out if capsys else ""
    return code, out


def test_shorthand_examples():
    assert cli.parse_schedule_shorthand("0.08-0.8/41") == (0.08, 0.8, 41)
    s = cli.parse_schedule_shorthand("0.1")
    assert s == (0.1, 0.1, None) and s.constant
    assert cli.parse_schedule_shorthand("1e-3-3e0/2.5") == (1e-3, 3.0, 2.5)
    for bad in ("0.8-0.08/41", "abc", "0.1-/3", "0.1-0.2/0"):
        with pytest.raises(ConfigError):
            cli.parse_schedule_shorthand(bad)
    with pytest.raises(ConfigError):
        cli.parse_schedule_shorthand("0.1-0.2")
    assert cli.parse_schedule_shorthand("0.1-0.2", require_ss=False) == (0.1, 0.2, None)


@pytest.mark.parametrize("text", ["0.08-0.8/41", "0.1", "0.001-3.0", "0.5-2.0/2.5"])
def test_shorthand_format_round_trip(text):
    s = cli.parse_schedule_shorthand(text, require_ss=False)
    assert cli.parse_schedule_shorthand(cli.format_shorthand(s), require_ss=False) == s


def test_config_round_trip():
    cfg = cli.ConfigFile.from_text(SMALL)
    again = cli.ConfigFile.from_text(cfg.to_text())
    assert again == cfg and again.to_text() == cfg.to_text()
    assert cli.ConfigFile.from_text(cli.ConfigFile.default().to_text()) == cli.ConfigFile.default()


def test_config_rejects_unknown_keys_and_sections():
    with pytest.raises(ConfigError, match="unknown key"):
        cli.ConfigFile.from_text("[train]\nbatch = 3\n")
    with pytest.raises(ConfigError, match="sections"):
        cli.ConfigFile.from_text("[extra]\nx = 1\n")


def test_run_config_converts_epochs_to_iterations():
    cfg = cli.ConfigFile.from_text(SMALL)
    rc = cfg.run_config(240)
    ipe = 8
    assert rc.lr_policy.kind == "one_cycle" and rc.lr_policy.stepsize_iters == ipe
    assert rc.total_iters(240) == 3 * ipe
    assert rc.momentum_policy.kind == "one_cycle_inverse"
    assert rc.eval_interval_iters == ipe
    const = cfg.with_values("policies", lr="0.1", momentum="0.9").run_config(240)
    assert const.lr_policy.kind == "constant" and const.momentum_policy.kind == "constant"


def test_train_writes_artifacts_and_names_dir(small_cfg, tmp_path, capsys):
    code, out = run(["train", "--config", small_cfg, "--out-dir", tmp_path / "runs", "--seed", 3], capsys)
    assert code == cli.EXIT_OK
    cfg = cli.apply_overrides(cli.ConfigFile.load(small_cfg), cli.build_parser().parse_args(["train", "--seed", "3"]))
    _, obj, rc = cli._setup_from(cfg)
    d = tmp_path / "runs" / f"train-{rc.hash()}-s3"
    assert d.is_dir() and str(d) in out
    for name in ("runlog.csv", "snapshot.hdsn", "report.json", "config.cfg"):
        assert (d / name).exists()
    report = json.loads((d / "report.json").read_text())
    assert report["seed"] == 3 and not report["diverged"]


def test_persisted_config_reproduces_run(small_cfg, tmp_path):
    assert cli.main(["train", "--config", str(small_cfg), "--out-dir", str(tmp_path / "a"), "--wd", "1e-3"]) == 0
    first = next((tmp_path / "a").iterdir())
    assert cli.main(["train", "--config", str(first / "config.cfg"), "--out-dir", str(tmp_path / "b")]) == 0
    second = next((tmp_path / "b").iterdir())
    assert first.name == second.name
    a = harness.RunLog.from_csv(first / "runlog.csv").records
    b = harness.RunLog.from_csv(second / "runlog.csv").records
    assert a == b


def test_resume_from_snapshot(small_cfg, tmp_path):
    out = tmp_path / "runs"
    assert cli.main(["train", "--config", str(small_cfg), "--out-dir", str(out)]) == 0
    full = harness.RunLog.from_csv(next(out.iterdir()) / "runlog.csv").records
    out2 = tmp_path / "head"
    assert cli.main(["train", "--config", str(small_cfg), "--out-dir", str(out2), "--stop-after", "9"]) == 0
    d = next(out2.iterdir())
    assert cli.main(["train", "--config", str(small_cfg), "--out-dir", str(tmp_path / "tail"),
                     "--resume", str(d / "snapshot.hdsn")]) == 0
    tail = harness.RunLog.from_csv(next((tmp_path / "tail").iterdir()) / "runlog.csv").records
    assert harness.RunLog.from_csv(d / "runlog.csv").records + tail == full


def test_range_test_end_to_end(small_cfg, tmp_path, capsys):
    code, out = run(["range-test", "--config", small_cfg, "--lr", "0.001-5", "--epochs", 4,
                     "--out-dir", tmp_path / "runs"], capsys)
    assert code == cli.EXIT_OK
    d = next((tmp_path / "runs").iterdir())
    assert d.name.startswith("range-test-")
    header = (d / "range_test.csv").read_text().splitlines()[0]
    assert header.startswith("lr,")
    summary = json.loads((d / "range_test.json").read_text())
    assert "overfit_region" in summary and "divergence_lr" in summary
    assert "one_cycle:" in out and "cycle:" in out


def test_exit_codes(small_cfg, tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", str(small_cfg), "--lr", "0.8-0.08/1",
                     "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", str(small_cfg), "--tbs", "0", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2
    # a constant LR far past stability blows up the run
    assert cli.main(["train", "--config", str(small_cfg), "--lr", "500", "--out-dir", str(tmp_path)]) == cli.EXIT_FAILED
    # an absurd ramp diverges at its first point
    assert cli.main(["range-test", "--config", str(small_cfg), "--lr", "1000-10000",
                     "--out-dir", str(tmp_path)]) == cli.EXIT_FAILED


def test_diagnose_and_short_series(tmp_path, capsys):
    t = np.arange(100)
    p = tmp_path / "curve.csv"
    p.write_text("iter,val_loss\n" + "".join(f"{i},{0.5 + 0.5 * abs(i - 50) / 50}\n" for i in t))
    code, out = run(["diagnose", p], capsys)
    assert code == 0 and out.startswith("overfitting")
    short = tmp_path / "short.csv"
    short.write_text("iter,val_loss\n0,1\n1,0.9\n2,0.8\n")
    assert cli.main(["diagnose", str(short)]) == cli.EXIT_FAILED
    assert cli.main(["diagnose", str(p), "--column", "nope"]) == cli.EXIT_CONFIG


def test_plot_writes_svg(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("lr,val_loss\n" + "".join(f"{x},{(x - 0.5) ** 2}\n" for x in np.linspace(0, 1, 20)))
    out = tmp_path / "r.svg"
    assert cli.main(["plot", str(p), "-o", str(out)]) == 0
    svg = out.read_text()
    assert svg.startswith("<svg") and "<polyline" in svg and "val_loss" in svg


def test_search_commands_run(small_cfg, tmp_path):
    common = ["--config", str(small_cfg), "--out-dir", str(tmp_path), "--epochs", "2"]
    assert cli.main(["wd-search", "--candidates", "1e-3,1e-4"] + common) == 0
    assert cli.main(["momentum-sweep", "--values", "0.9,0.95"] + common) == 0
    assert cli.main(["tbs-compare"] + common) == 0
    names = sorted(d.name.split("-")[0] for d in tmp_path.iterdir() if d.is_dir())
    assert names == ["momentum", "tbs", "wd"]
