import csv
import json

import numpy as np
import pytest

from stochl96 import cli, config, report
from stochl96.evaluation import ForecastConfig, MetricSeries
from stochl96.training import TrainConfig


def _series(n_leads=5, scale=1.0):
    leads = np.arange(n_leads) * 0.5
    return MetricSeries(leads, scale * leads, scale * leads / 2, scale * leads, scale * leads / 3, members=4)


# -- report ------------------------------------------------------------------------------

def test_empty_report(tmp_path):
    assert report.write_report([], tmp_path) == {}
    assert json.loads((tmp_path / "summary.json").read_text()) == {}
    assert cli.main(["report", "--out", str(tmp_path / "r")]) == 0


def test_report_rows_and_header(tmp_path):
    rec = report.ForecastRecord("c4", False, {"a": _series(), "b": _series(scale=2.0)})
    summary = report.write_report([rec], tmp_path)
    for metric in MetricSeries.METRICS:
        lines = (tmp_path / f"{metric}.csv").read_text().splitlines()
        assert lines[0].startswith(f"# {metric}:")
        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == 5 * 2
        assert set(rows[0]) == {"lead_mtu", "metric", "value", "model", "case"}
        assert {r["case"] for r in rows} == {"c4/perfect"}
    assert summary["forecast"]["c4/perfect"]["b"]["mse@1"] == 2.0
    assert "mse@2" in summary["forecast"]["c4/perfect"]["a"]


def test_record_round_trip(tmp_path):
    rec = report.ForecastRecord("c10", True, {"a": _series()})
    report.save_record(rec, tmp_path / "f.json")
    back = report.load_record(tmp_path / "f.json")
    assert back.case == "c10" and back.perturbed
    np.testing.assert_array_equal(back.series["a"].crps, rec.series["a"].crps)
    (tmp_path / "x.json").write_text("{}")
    with pytest.raises(ValueError):
        report.load_record(tmp_path / "x.json")


def test_climate_summary(tmp_path):
    rec = report.ClimateRecord("c4", 10.0, {"m": {"ks": 0.1, "hellinger": 0.2}}, [0.0, 1.0],
                               {"truth": [1.0], "m": [1.0]})
    report.save_record(rec, tmp_path / "c.json")
    summary = report.write_report([report.load_record(tmp_path / "c.json")], tmp_path / "out")
    assert summary == {"climate": {"c4": {"m": {"ks": 0.1, "hellinger": 0.2}}}}


# -- config ---------------------------------------------------------------------------------

def test_config_parsing(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nn_steps = 4\nlearning_rate = 0.003\nbatch_size = none\n"
                    "trainable_start = yes\n\n[forecast]\nmembers = 12\nperturbation = 0.1\n")
    vals = config.read_config(path)
    assert vals["train"] == {"n_steps": 4, "learning_rate": 0.003, "batch_size": None,
                             "trainable_start": True}
    tc = config.build(TrainConfig, vals["train"], {"n_steps": 2, "alpha": None})
    assert tc.n_steps == 2 and tc.learning_rate == 0.003 and tc.alpha == 1.0
    fc = config.build(ForecastConfig, vals["forecast"], {})
    assert fc.members == 12 and fc.perturbation == 0.1


@pytest.mark.parametrize("text", ["[train]\nbogus = 1\n", "[other]\nx = 1\n", "[train]\nn_steps = two\n",
                                  "[train]\ntrainable_start = maybe\n"])
def test_config_errors(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(config.ConfigError):
        config.read_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(config.ConfigError):
        config.read_config(tmp_path / "absent.ini")


# -- command line --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["generate", "--seed", "4", "--spinup", "5", "--production", "20",
                     "--out", str(d / "truth.bin")]) == 0
    assert cli.main(["fit", "--data", str(d / "truth.bin"), "--out", str(d / "fit")]) == 0
    return d


def test_cli_fit_outputs(workdir):
    names = {p.name for p in (workdir / "fit").iterdir()}
    bins = {"pod_basis.bin", "poly_gauss.bin", "poly_ou.bin", "svd_gauss.bin", "svd_ou.bin"}
    # every binary carries a metadata sidecar
    assert names == bins | {b + ".json" for b in bins} | {"fit.json"}
    fit = json.loads((workdir / "fit" / "fit.json").read_text())
    assert len(fit["coefficients"]) == 4 and 0 < fit["phi"] < 1


def test_cli_train_with_config(workdir):
    ini = workdir / "train.ini"
    ini.write_text("[train]\nbatch_size = 4\nmembers = 3\n")
    out = workdir / "train"
    code = cli.main(["train", "--data", str(workdir / "truth.bin"), "--basis", str(workdir / "fit" / "pod_basis.bin"),
                     "--nt", "2", "--epochs", "1", "--batches", "2", "--config", str(ini), "--out", str(out)])
    assert code == 0
    assert {"model.bin", "best.bin", "last.bin", "loss.csv"} <= {p.name for p in out.iterdir()}
    assert len((out / "loss.csv").read_text().splitlines()) == 3


def test_cli_forecast_climate_report(workdir):
    fit = workdir / "fit"
    rec = workdir / "fc.json"
    assert cli.main(["forecast", "--data", str(workdir / "truth.bin"), f"sg={fit / 'svd_gauss.bin'}",
                     str(fit / "poly_ou.bin"), "--perturbed", "--members", "3", "--n-ic", "2",
                     "--horizon", "0.1", "--out", str(rec)]) == 0
    d = json.loads(rec.read_text())
    assert d["perturbed"] and set(d["models"]) == {"sg", "poly_ou"}
    clim = workdir / "cl.json"
    assert cli.main(["climate", "--data", str(workdir / "truth.bin"), str(fit / "svd_gauss.bin"),
                     "--length", "2", "--out", str(clim)]) == 0
    assert cli.main(["report", str(rec), str(clim), "--out", str(workdir / "rep")]) == 0
    summary = json.loads((workdir / "rep" / "summary.json").read_text())
    assert set(summary["climate"]["c4"]["svd_gauss"]) == {"ks", "hellinger"}
    rows = (workdir / "rep" / "crps.csv").read_text().splitlines()
    assert len(rows) == 2 + 21 * 2


def test_cli_alpha_sweep(workdir):
    out = workdir / "sweep"
    assert cli.main(["alpha-sweep", "--data", str(workdir / "truth.bin"), "--alphas", "0", "1",
                     "--nt", "2", "--epochs", "1", "--batches", "1", "--train-members", "3",
                     "--members", "3", "--n-ic", "1", "--horizon", "0.05", "--out", str(out)]) == 0
    assert (out / "alpha_0" / "model.bin").exists() and (out / "alpha_1" / "loss.csv").exists()
    d = json.loads((out / "forecast.json").read_text())
    assert set(d["models"]) == {"crps_mult2_alpha0", "crps_mult2_alpha1"}


def test_cli_reports_bad_input(tmp_path):
    assert cli.main(["fit", "--data", str(tmp_path / "missing.bin"), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit):
        cli.main(["train", "--form", "cubic", "--out", str(tmp_path)])
