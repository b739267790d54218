import numpy as np
import pytest

from covest.cli import load_input, main, thread_budget
from covest.errors import InputError
from covest.gp import GridGeometry, lambda_for_edf
from covest.grids import training_grid, write_grid_csv
from covest.ml import read_records_csv
from covest.raster import read_raster


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, tiny_grid):
    d = tmp_path_factory.mktemp("cli")
    write_grid_csv(tiny_grid, d / "grid.csv")
    return d


@pytest.fixture(scope="module")
def nv30_file(workdir):
    cfg = workdir / "nv30.cfg"
    cfg.write_text(f"architecture = NV30\nepochs = 1\nfields_per_config = 1\ngrid = {workdir / 'grid.csv'}\n")
    assert main(["train", "--config", str(cfg), "--out", str(workdir / "nv30.covnn"), "--quiet"]) == 0
    return workdir / "nv30.covnn"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate(capsys, workdir):
    a, b = workdir / "a.covr", workdir / "b.covr"
    code, out, _ = run(capsys, "simulate", "--theta", 10, "--edf", 128, "--replicates", 30, "--seed", 4, "--out", a)
    assert code == 0
    lam = float(out.split("lambda=")[1].split()[0])
    assert lam == pytest.approx(lambda_for_edf(10.0, 128.0, GridGeometry(16, 16)), rel=1e-12)
    assert read_raster(a).replicates == 30
    run(capsys, "simulate", "--theta", 10, "--edf", 128, "--replicates", 30, "--seed", 4, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    code, out, _ = run(capsys, "simulate", "--theta", 3, "--lambda", 0, "--out", workdir / "c.covr")
    assert code == 0 and float(out.split("edf=")[1]) == pytest.approx(256.0)


def test_usage_errors(capsys, workdir):
    for argv in (
        ["simulate", "--theta", "3", "--edf", "10", "--lambda", "1", "--out", "x"],
        ["simulate", "--theta", "3", "--out", "x"],
        ["simulate", "--theta", "3", "--lambda", "-1", "--out", "x"],
        ["frobnicate"],
        ["grid", "--n-theta", "0", "--out", "x"],
    ):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    capsys.readouterr()


def test_data_errors(capsys, workdir):
    (workdir / "junk.covr").write_bytes(b"garbage")
    code, _, err = run(capsys, "ml-fit", "--in", workdir / "junk.covr", "--grid", workdir / "grid.csv", "--out", workdir / "o.csv")
    assert code == 1 and "junk.covr" in err and "COVR1" in err
    code, _, err = run(capsys, "variogram", "--in", workdir / "missing.covr", "--out", workdir / "o.csv")
    assert code == 1 and "missing.covr" in err
    code, _, err = run(capsys, "simulate", "--theta", 3, "--edf", 900, "--out", workdir / "x.covr")
    assert code == 1


def test_fit_predict_variogram(capsys, workdir, nv30_file):
    f = workdir / "f.covr"
    run(capsys, "simulate", "--theta", 6, "--edf", 100, "--replicates", 30, "--seed", 1, "--out", f)
    code, out, _ = run(capsys, "ml-fit", "--in", f, "--grid", workdir / "grid.csv", "--out", workdir / "ml.csv")
    assert code == 0 and out.startswith("ML30")
    code, _, _ = run(capsys, "ml-fit", "--in", f, "--grid", workdir / "grid.csv", "--each", "--out", workdir / "ml1.csv")
    assert code == 0 and len(read_records_csv(workdir / "ml1.csv")) == 30

    cfg = workdir / "smoke.cfg"
    cfg.write_text(f"architecture = NV30\nepochs = 1\nfields_per_config = 1\ngrid = {workdir / 'grid.csv'}\n")
    code, out, _ = run(capsys, "train", "--config", cfg, "--out", workdir / "nv30.covnn", "--report", workdir / "r.csv", "--quiet")
    assert code == 0 and (workdir / "nv30.covnn").exists() and (workdir / "r.csv").exists()
    code, out, _ = run(capsys, "predict", "--weights", workdir / "nv30.covnn", "--in", f, "--out", workdir / "nn.csv")
    assert code == 0 and out.startswith("NV30")
    ml = read_records_csv(workdir / "ml.csv")
    nn = read_records_csv(workdir / "nn.csv")
    assert len(ml) == len(nn) == 1

    code, _, _ = run(capsys, "variogram", "--in", f, "--out", workdir / "v.csv", "--lags", workdir / "lags.csv")
    assert code == 0
    kind, vg = load_input(workdir / "v.csv")
    assert kind == "variograms" and vg.shape == (30, 119)
    code, _, _ = run(capsys, "predict", "--weights", workdir / "nv30.covnn", "--in", workdir / "v.csv", "--out", workdir / "nv.csv")
    assert code == 0
    assert read_records_csv(workdir / "nv.csv")[0].theta_hat == nn[0].theta_hat

    cfg.write_text(f"architecture = NF\nepochs = 1\nfields_per_config = 1\naugment = false\ngrid = {workdir / 'grid.csv'}\n")
    run(capsys, "train", "--config", cfg, "--out", workdir / "nf.covnn", "--quiet")
    code, _, err = run(capsys, "predict", "--weights", workdir / "nf.covnn", "--in", workdir / "v.csv", "--out", workdir / "x.csv")
    assert code == 1 and "variogram" in err


def test_grid_and_scan(capsys, workdir):
    code, out, _ = run(capsys, "grid", "--n-theta", 5, "--n-edf", 4, "--out", workdir / "g.csv")
    assert code == 0 and out.startswith("20 entries")
    code, out, _ = run(capsys, "grid", "--kind", "test", "--n-configs", 30, "--out", workdir / "t.csv")
    assert code == 0 and out.startswith("30 entries")
    r = workdir / "r.covr"
    code, _, _ = run(capsys, "make-raster", "--height", 18, "--width", 19, "--replicates", 30, "--out", r)
    assert code == 0
    code, out, _ = run(capsys, "window-scan", "--in", r, "--method", "ml30", "--grid", workdir / "grid.csv",
                       "--out", workdir / "scan")
    assert code == 0 and out.startswith("12 estimates (3x4)")
    assert read_raster(workdir / "scan_theta.covr").values.shape == (1, 3, 4)
    code, _, err = run(capsys, "window-scan", "--in", r, "--method", "nv30", "--out", workdir / "scan")
    assert code == 1 and "--weights" in err


def test_evaluate_and_benchmark(capsys, workdir, nv30_file):
    args = ["--ml", "--train-grid", workdir / "grid.csv", "--seed", 2]
    code, out, _ = run(capsys, "evaluate", *args, "--n-configs", 10, "--fields-per-config", 1, "--out", workdir / "ev")
    assert code == 0 and out.startswith("ML:")
    assert (workdir / "ev_summary.csv").exists() and (workdir / "ev_raw.csv").exists()
    code, out, _ = run(capsys, "benchmark", *args, "--samples", 2, "--repetitions", 1,
                       "--weights", nv30_file, "--replicates", 30, "--out", workdir / "t.csv")
    assert code == 0 and "speedup ML30 / NV30" in out


def test_thread_budget(monkeypatch):
    monkeypatch.delenv("COVEST_THREADS", raising=False)
    assert thread_budget() == 1 and thread_budget(4) == 4
    monkeypatch.setenv("COVEST_THREADS", "2")
    assert thread_budget() == 2 and thread_budget(8) == 2 and thread_budget(1) == 1
    monkeypatch.setenv("COVEST_THREADS", "lots")
    with pytest.raises(InputError):
        thread_budget()
