import csv

import numpy as np
import pytest

from shallowiv import market as mk
from shallowiv.cli import main
from shallowiv.neural import NetConfig, he_uniform_init, load_checkpoint

SMALL = """\
train_tau_start = 0.2
train_tau_stop = 1.0
train_tau_step = 0.2
train_kappa_start = -0.5
train_kappa_stop = 0.5
train_kappa_step = 0.05
valid_tau_start = 0.2
valid_tau_stop = 1.0
valid_tau_step = 0.1
valid_kappa_start = -0.5
valid_kappa_stop = 0.5
valid_kappa_step = 0.025
"""


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    (d / "small.cfg").write_text(SMALL)
    assert main(["generate", "--config", str(d / "small.cfg"), "--out", str(d)]) == 0
    return d


def run_train(data_dir, out, *extra):
    return main(["train", "--train", str(data_dir / "train.csv"), "--valid", str(data_dir / "valid.csv"),
                 "--out", str(out), *extra])


def test_generate_counts(data_dir, capsys):
    assert mk.ChainDataset.from_csv(data_dir / "train.csv").size == 5 * 21
    assert mk.ChainDataset.from_csv(data_dir / "valid.csv").size == 9 * 41


def test_generate_unit_grid(tmp_path):
    cfg = "".join(f"{p}_{k} = {v}\n" for p in ("train", "valid")
                  for k, v in (("tau_start", 1), ("tau_stop", 1), ("kappa_start", 0), ("kappa_stop", 0)))
    (tmp_path / "u.cfg").write_text(cfg)
    assert main(["generate", "--config", str(tmp_path / "u.cfg"), "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "train.csv").read_text().splitlines()) == 2


def test_generate_inadmissible_names_condition(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("sigma0 = -0.1\n")
    assert main(["generate", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 2
    assert "(iii)" in capsys.readouterr().err


def test_generate_unreadable_config(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 1
    (tmp_path / "garbled.cfg").write_text("no pair here\n")
    assert main(["generate", "--config", str(tmp_path / "garbled.cfg"), "--out", str(tmp_path)]) == 1


def test_train_artifacts_and_determinism(data_dir, tmp_path):
    args = ("--activation", "relu2", "--width", "16", "--depth", "1", "--seed", "7", "--epochs", "4",
            "--eval-every", "2")
    assert run_train(data_dir, tmp_path / "a", *args) == 0
    assert run_train(data_dir, tmp_path / "b", *args) == 0
    for name in ("checkpoint.bin", "history.csv", "summary.csv", "run.cfg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    rows = list(csv.DictReader(open(tmp_path / "a" / "summary.csv")))
    assert [r["dataset"] for r in rows] == ["train", "valid"]
    assert all(float(r["loss_D_bps"]) > 0 for r in rows)


def test_train_zero_epochs_keeps_init(data_dir, tmp_path):
    assert run_train(data_dir, tmp_path, "--model", "tanh-8x2", "--seed", "3", "--epochs", "0") == 0
    init = he_uniform_init(NetConfig("tanh", 8, 2), 3)
    got = load_checkpoint(tmp_path / "checkpoint.bin")
    assert all(np.array_equal(a, b) for a, b in zip(init.params(), got.params()))


def test_train_flags_override_config(data_dir, tmp_path):
    (tmp_path / "t.cfg").write_text("activation = tanh\nwidth = 8\ndepth = 1\nepochs = 3\n")
    assert run_train(data_dir, tmp_path / "o", "--config", str(tmp_path / "t.cfg"), "--epochs", "1") == 0
    meta = (tmp_path / "o" / "run.cfg").read_text()
    assert "model = tanh-8x1" in meta and "train_epochs = 1" in meta
    assert len((tmp_path / "o" / "history.csv").read_text().splitlines()) == 2


def test_train_error_codes(data_dir, tmp_path):
    assert main(["train", "--train", str(tmp_path / "nope.csv"), "--model", "relu-8x1", "--out", str(tmp_path)]) == 1
    assert run_train(data_dir, tmp_path, "--model", "gelu-8x1") == 2
    assert run_train(data_dir, tmp_path, "--model", "relu-8x1", "--vega-floor", "-1", "--epochs", "0") == 2


def test_train_numeric_abort_exit_code(data_dir, tmp_path):
    # an absurd learning rate blows the cubic network up within a few epochs
    code = run_train(data_dir, tmp_path, "--model", "relu3-32x3", "--lr", "1e6", "--epochs", "50", "--seed", "1")
    assert code == 4


def test_sweep_subset(data_dir, tmp_path):
    subset = "relu2-16x1,relu-16x2,tanh-16x1"
    code = main(["sweep", "--train", str(data_dir / "train.csv"), "--valid", str(data_dir / "valid.csv"),
                 "--widths", "16", "--depths", "1,2", "--subset", subset, "--epochs", "2", "--jobs", "2",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "sweep.csv")))
    assert sorted(r["name"] for r in rows) == sorted(subset.split(","))
    assert all(r["loss_P_train_bps"] and r["loss_P_valid_bps"] and r["loss_D_valid_bps"] for r in rows)
    assert all((tmp_path / r["name"] / "checkpoint.bin").is_file() for r in rows)


def test_sweep_empty_subset(data_dir, tmp_path):
    code = main(["sweep", "--train", str(data_dir / "train.csv"), "--subset", "", "--out", str(tmp_path)])
    assert code == 0
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 1


def test_sweep_unknown_model(data_dir, tmp_path):
    code = main(["sweep", "--train", str(data_dir / "train.csv"), "--subset", "relu-7x9", "--out", str(tmp_path)])
    assert code == 2


def test_sweep_seeds_independent_of_subset(data_dir, tmp_path):
    common = ["--train", str(data_dir / "train.csv"), "--widths", "8", "--depths", "1", "--epochs", "1"]
    main(["sweep", *common, "--subset", "tanh-8x1", "--out", str(tmp_path / "one")])
    main(["sweep", *common, "--subset", "tanh-8x1,elu-8x1", "--out", str(tmp_path / "two")])
    a = (tmp_path / "one" / "tanh-8x1" / "checkpoint.bin").read_bytes()
    b = (tmp_path / "two" / "tanh-8x1" / "checkpoint.bin").read_bytes()
    assert a == b


def test_audit_exit_codes(tmp_path):
    assert main(["audit", "--kappa-min", "-0.5", "--kappa-max", "0.5", "--kappa-step", "0.1",
                 "--out", str(tmp_path / "a.csv")]) == 0
    assert (tmp_path / "a.csv").read_text().startswith("tau,kappa,err_pdf")
    assert main(["audit", "--kappa-min", "-0.5", "--kappa-max", "0.5", "--kappa-step", "0.1",
                 "--fd-step", "0.1"]) == 3
    assert main(["audit", "--flat-sigma", "0.2", "--kappa-step", "0.1"]) == 0


def test_report(data_dir, tmp_path):
    run = tmp_path / "run"
    assert run_train(data_dir, run, "--model", "relu-8x2", "--epochs", "2") == 0
    assert main(["report", str(run), "--out", str(tmp_path / "rep"), "--surface-grid", "train"]) == 0
    names = sorted(p.name for p in (tmp_path / "rep").iterdir())
    assert names == ["learning_curve_relu-8x2.csv", "scatter.csv", "surface_relu-8x2.csv"]
    surf = np.loadtxt(tmp_path / "rep" / "surface_relu-8x2.csv", delimiter=",", skiprows=1)
    assert surf.shape == (mk.TRAIN_GRID.tenors().size * mk.TRAIN_GRID.moneyness().size, 6)
    (tmp_path / "empty").mkdir()
    assert main(["report", str(tmp_path / "empty"), "--out", str(tmp_path / "rep2")]) == 1


def test_help_documents_every_subcommand(capsys):
    for cmd in ("generate", "train", "sweep", "audit", "report"):
        with pytest.raises(SystemExit) as e:
            main([cmd, "--help"])
        assert e.value.code == 0
        assert "--out" in capsys.readouterr().out or cmd == "audit"
