import csv
import json

import numpy as np
import pytest

from switchreg import (
    FitConfig,
    ObservedSeries,
    em_fit,
    estimate_signal_variance,
    jitter_duplicates,
    load_csv,
    make_initial,
    motorcycle_series,
    write_fit_outputs,
)
from switchreg.errors import (
    EmptyFile,
    IoError,
    NonPositiveU,
    ParseError,
    TooFewPoints,
    UnresolvableTies,
)
from switchreg.io import fit_result_dict, write_json


def test_packaged_series_loads_with_jittered_times(motorcycle):
    assert motorcycle.n == 133
    assert np.all(np.diff(motorcycle.x) > 0)
    again = motorcycle_series(seed=0)
    np.testing.assert_array_equal(again.x, motorcycle.x)


def test_header_rows_are_skipped(tmp_path):
    p = tmp_path / "data.csv"
    p.write_text("time,accel\n1.0,2.0\n2.0,3.0\n\n3.0,4.0\n")
    x, y = load_csv(p)
    np.testing.assert_array_equal(x, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(y, [2.0, 3.0, 4.0])


def test_bad_cell_reports_its_line(tmp_path):
    rows = ["x,y"] + [f"{i},{i}" for i in range(1, 6)] + ["6,banana", "7,7"]
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(ParseError, match="line 7"):
        load_csv(p)


def test_degenerate_files_rejected(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("\n\n")
    with pytest.raises(EmptyFile):
        load_csv(empty)
    narrow = tmp_path / "narrow.csv"
    narrow.write_text("1.0\n2.0\n")
    with pytest.raises(ParseError):
        load_csv(narrow)
    with pytest.raises(IoError):
        load_csv(tmp_path / "missing.csv")


def test_distinct_inputs_pass_through_unchanged():
    x = np.array([3.0, 1.0, 2.0])
    y = np.array([30.0, 10.0, 20.0])
    jx, jy = jitter_duplicates(x, y)
    np.testing.assert_array_equal(jx, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(jy, [10.0, 20.0, 30.0])


def test_ties_are_broken_within_a_hundredth_of_the_smallest_gap():
    raw_x, raw_y = load_csv_as_arrays()
    jx, jy = jitter_duplicates(raw_x, raw_y, seed=0)
    assert np.all(np.diff(jx) > 0)
    order = np.argsort(raw_x, kind="stable")
    sorted_x = raw_x[order]
    gaps = np.diff(np.unique(sorted_x))
    g = gaps.min()
    assert np.max(np.abs(jx - sorted_x)) < g / 100.0
    jx2, _ = jitter_duplicates(raw_x, raw_y, seed=0)
    np.testing.assert_array_equal(jx, jx2)


def load_csv_as_arrays():
    from importlib import resources

    ref = resources.files("switchreg").joinpath("data/motorcycle.csv")
    with resources.as_file(ref) as path:
        return load_csv(path)


def test_identical_inputs_cannot_be_separated():
    x = np.full(5, 2.0)
    with pytest.raises(UnresolvableTies):
        jitter_duplicates(x, np.arange(5.0))


def test_signal_variance_of_a_noiseless_curve_is_its_variance():
    x = np.linspace(0.0, 10.0, 120)
    y = np.sin(x) * 3.0
    u = estimate_signal_variance(x, y)
    assert u == pytest.approx(np.var(y, ddof=1), rel=0.05)


def test_pure_noise_has_no_recoverable_signal():
    rng = np.random.default_rng(2)
    x = np.linspace(0.0, 10.0, 120)
    y = rng.normal(0.0, 1.0, 120)
    with pytest.raises(NonPositiveU):
        estimate_signal_variance(x, y)


def test_signal_variance_needs_enough_points():
    with pytest.raises(TooFewPoints):
        estimate_signal_variance(np.arange(5.0), np.arange(5.0))


def test_impact_series_signal_variance_baseline(motorcycle):
    u = estimate_signal_variance(motorcycle.x, motorcycle.y)
    assert 0.0 < u < np.var(motorcycle.y, ddof=1)
    assert u == pytest.approx(1817.0681210358525, rel=1e-9)


@pytest.fixture(scope="module")
def small_fit():
    rng = np.random.default_rng(1)
    x = np.linspace(0.0, 10.0, 50)
    z = (rng.random(50) < 0.5).astype(int)
    y = np.sin(x) + 3.0 * z + rng.normal(0.0, 0.25, 50)
    series = ObservedSeries(x=x, y=y)
    config = FitConfig(approach="penalized", latent="iid", j=2, max_iter=40)
    result = em_fit(series, config, make_initial(series, config))
    return series, config, result


def test_fit_outputs_written_and_reparsable(tmp_path, small_fit):
    series, config, result = small_fit
    out = tmp_path / "fit"
    write_fit_outputs(out, series, result, config, None)
    for name in ("result.json", "plotdata.csv", "summary.txt", "fit.png"):
        assert (out / name).exists()
    payload = json.loads((out / "result.json").read_text())
    assert payload["approach"] == "penalized"
    assert payload["j"] == 2
    assert len(payload["variances"]) == 2
    with open(out / "plotdata.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    assert header[:2] == ["x", "y"]
    assert len(body) == series.n
    xs = np.array([float(r[0]) for r in body])
    ys = np.array([float(r[1]) for r in body])
    np.testing.assert_array_equal(xs, series.x)
    np.testing.assert_array_equal(ys, series.y)
    text = (out / "summary.txt").read_text()
    assert "regimes" in text


def test_fit_payload_reports_selection_when_present(small_fit):
    series, config, result = small_fit
    payload = fit_result_dict(
        series, result, config, {"aic": {"2": 1.0}, "failures": {}, "best": 2}
    )
    assert payload["selection"]["best"] == 2
    assert "aic_components" in payload
    total = (
        payload["aic_components"]["hat_trace_total"]
        + payload["aic_components"]["n_variances"]
        + payload["aic_components"]["free_latent"]
    )
    assert payload["aic"] == pytest.approx(-2.0 * result.loglik + 2.0 * total)


def test_json_writes_are_stable(tmp_path):
    obj = {"b": [1.0, 2.5], "a": {"z": 1, "y": 2.0}}
    p1, p2 = tmp_path / "one.json", tmp_path / "two.json"
    write_json(p1, obj)
    write_json(p2, {"a": {"y": 2.0, "z": 1}, "b": [1.0, 2.5]})
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_bytes().endswith(b"\n")
