import csv
import json

import numpy as np
import pytest

from switchreg import cli


@pytest.fixture(scope="module")
def series_csv(tmp_path_factory):
    rng = np.random.default_rng(21)
    x = np.linspace(0.0, 10.0, 50)
    z = (rng.random(50) < 0.5).astype(int)
    y = np.sin(x) + 3.0 * z + rng.normal(0.0, 0.25, 50)
    path = tmp_path_factory.mktemp("data") / "series.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y"])
        writer.writerows(zip(x, y))
    return path


def run_fit(series_csv, out, *extra):
    return cli.main([
        "fit", "--input", str(series_csv), "--approach", "penalized",
        "--latent", "iid", "--out", str(out), *extra,
    ])


def test_fit_writes_the_report_bundle(tmp_path, series_csv):
    out = tmp_path / "fit"
    assert run_fit(series_csv, out, "--j", "2") == 0
    for name in ("result.json", "plotdata.csv", "summary.txt", "fit.png"):
        assert (out / name).exists()
    payload = json.loads((out / "result.json").read_text())
    assert payload["j"] == 2
    assert payload["latent"] == "iid"
    assert payload["converged"] is True
    assert payload["stderr"] is not None


def test_fit_requires_a_regime_count(tmp_path, series_csv):
    with pytest.raises(SystemExit) as exc:
        run_fit(series_csv, tmp_path / "x")
    assert exc.value.code == 2


def test_regime_count_sweep_reports_the_choice(tmp_path, series_csv):
    out = tmp_path / "sweep"
    assert run_fit(series_csv, out, "--select-j", "1..2") == 0
    payload = json.loads((out / "result.json").read_text())
    assert payload["selection"]["best"] == 2
    assert set(payload["selection"]["aic"]) == {"1", "2"}


def test_sweep_range_is_validated(tmp_path, series_csv):
    for bad in ("3..2", "0..2", "1..9", "two"):
        with pytest.raises(SystemExit) as exc:
            run_fit(series_csv, tmp_path / "y", "--select-j", bad)
        assert exc.value.code == 2


def test_kernel_formulation_end_to_end(tmp_path, series_csv):
    out = tmp_path / "bayes"
    code = cli.main([
        "fit", "--input", str(series_csv), "--approach", "bayes",
        "--latent", "iid", "--j", "2", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads((out / "result.json").read_text())
    assert payload["approach"] == "bayes"
    assert all(v > 0 for v in payload["lambdas"])


def test_missing_input_file_is_an_input_error(tmp_path):
    code = cli.main([
        "fit", "--input", str(tmp_path / "nope.csv"), "--approach", "penalized",
        "--latent", "iid", "--j", "2", "--out", str(tmp_path / "o"),
    ])
    assert code == 2


def test_malformed_input_is_an_input_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n1.0,2.0\n1.5,oops\n")
    code = cli.main([
        "fit", "--input", str(bad), "--approach", "penalized",
        "--latent", "iid", "--j", "2", "--out", str(tmp_path / "o"),
    ])
    assert code == 2


def test_unconverged_fits_exit_three_but_write_outputs(tmp_path, series_csv, monkeypatch):
    real = cli.fit_series

    def stubborn(series, config):
        res = real(series, config)
        res.converged = False
        return res

    monkeypatch.setattr(cli, "fit_series", stubborn)
    out = tmp_path / "rough"
    assert run_fit(series_csv, out, "--j", "2") == 3
    assert (out / "result.json").exists()
    payload = json.loads((out / "result.json").read_text())
    assert payload["converged"] is False


def test_config_file_supplies_defaults(tmp_path, series_csv):
    out = tmp_path / "from_config"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "input": str(series_csv), "approach": "penalized", "latent": "iid",
        "j": 2, "out": str(out), "seed": 3,
    }))
    assert cli.main(["fit", "--config", str(cfg)]) == 0
    assert json.loads((out / "result.json").read_text())["j"] == 2


def test_flags_override_the_config_file(tmp_path, series_csv):
    out_cfg = tmp_path / "cfg_out"
    out_flag = tmp_path / "flag_out"
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "input": str(series_csv), "approach": "penalized", "latent": "iid",
        "j": 1, "out": str(out_cfg),
    }))
    assert cli.main(["fit", "--config", str(cfg), "--j", "2", "--out", str(out_flag)]) == 0
    assert not out_cfg.exists()
    assert json.loads((out_flag / "result.json").read_text())["j"] == 2


def test_unknown_config_keys_are_rejected(tmp_path, series_csv):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"inputs": str(series_csv)}))
    with pytest.raises(SystemExit) as exc:
        cli.main(["fit", "--config", str(cfg)])
    assert exc.value.code == 2


def test_missing_config_file_is_an_input_error(tmp_path):
    code = cli.main(["fit", "--config", str(tmp_path / "absent.json")])
    assert code == 2


def test_simulate_writes_the_study_bundle(tmp_path):
    out = tmp_path / "study"
    code = cli.main([
        "simulate", "--design", "1", "--replicates", "2",
        "--approach", "penalized", "--out", str(out),
    ])
    assert code == 0
    for name in ("study.json", "replicates.csv", "emse.csv", "emse.png"):
        assert (out / name).exists()
    study = json.loads((out / "study.json").read_text())
    assert study["design"] == 1
    assert study["completed"] == 2
    with open(out / "replicates.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3
