import json
import math

import numpy as np
import pytest

from ebsc.cli import main, read_data_file
from ebsc.exceptions import DataParseError, DataValidationError

FAST_FIT = ["--q-max", "3", "--max-iter", "20", "--draws", "500"]
FIT_FILES = ("fit.json", "curve.csv", "spectrum.csv", "autocorr.csv", "tq.csv", "residuals.csv")


def run_fit(data_file, out, *extra):
    return main(["fit", str(data_file), "--out", str(out), *FAST_FIT, *extra])


def test_fit_writes_all_artifacts(data_file, tmp_path):
    out = tmp_path / "out"

    assert run_fit(data_file, out, "--seed", "3") == 0

    for name in FIT_FILES:
        assert (out / name).exists()
    payload = json.loads((out / "fit.json").read_text())
    assert payload["q_hat"] in (1, 2, 3)
    assert payload["meta"]["seed"] == 3
    header = (out / "curve.csv").read_text().splitlines()[0]
    assert header.startswith("# ebsc 0.1.0 config=")
    assert header.endswith("seed=3")
    assert (out / "curve.csv").read_text().splitlines()[1] == "t,y,fhat,band_lo,band_hi"


def test_fixed_order(data_file, tmp_path):
    assert run_fit(data_file, tmp_path, "--fixed-q", "2") == 0

    payload = json.loads((tmp_path / "fit.json").read_text())
    assert list(payload["per_q"]) == ["2"]


def test_fit_outputs_are_byte_identical(data_file, tmp_path):
    assert run_fit(data_file, tmp_path / "a", "--seed", "1") == 0
    assert run_fit(data_file, tmp_path / "b", "--seed", "1") == 0

    for name in FIT_FILES:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_falls_back_to_environment(data_file, tmp_path, monkeypatch):
    monkeypatch.setenv("EBSC_SEED", "42")

    assert run_fit(data_file, tmp_path) == 0
    assert json.loads((tmp_path / "fit.json").read_text())["meta"]["seed"] == 42


def test_two_column_input_with_design(tmp_path, noisy_signal):
    path = tmp_path / "design.csv"
    t = np.linspace(0.0, 1.0, noisy_signal.size)
    path.write_text("\n".join(f"{a:.10f},{b:.10f}" for a, b in zip(t, noisy_signal)))

    data = read_data_file(str(path))

    assert data.has_design
    assert data.n == noisy_signal.size


def test_curve_keeps_the_design_column(tmp_path, noisy_signal):
    path = tmp_path / "design.csv"
    t = 0.1 * np.arange(noisy_signal.size)
    path.write_text("\n".join(f"{a:.10f},{b:.10f}" for a, b in zip(t, noisy_signal)) + "\n")
    out = tmp_path / "out"

    assert run_fit(path, out, "--seed", "3") == 0

    rows = (out / "curve.csv").read_text().splitlines()[2:]
    written = np.array([float(row.split(",")[0]) for row in rows])
    np.testing.assert_allclose(written, t, rtol=1e-10)


def test_parse_error_names_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y\n1.0\nabc\n2.0\n")

    with pytest.raises(DataParseError, match="line 3"):
        read_data_file(str(path))
    assert main(["fit", str(path), "--out", str(tmp_path)]) == 2


def test_uneven_design_is_rejected(tmp_path):
    path = tmp_path / "uneven.csv"
    path.write_text("\n".join(f"{t},{t}" for t in [0.0, 0.1, 0.3, 0.4]))

    with pytest.raises(DataValidationError):
        read_data_file(str(path))


def test_short_series_exits_with_precondition_code(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("\n".join(str(value) for value in range(10)))

    assert main(["fit", str(path), "--out", str(tmp_path)]) == 3


def test_missing_values_need_explicit_interpolation(tmp_path, noisy_signal):
    path = tmp_path / "missing.csv"
    values = [f"{value:.10f}" for value in noisy_signal]
    values[10] = "NA"
    path.write_text("\n".join(values))

    assert run_fit(path, tmp_path / "plain") == 3
    assert run_fit(path, tmp_path / "filled", "--interpolate-missing") == 0
    payload = json.loads((tmp_path / "filled" / "fit.json").read_text())
    assert "interpolated-missing" in payload["flags"]
    assert run_fit(path, tmp_path / "strict", "--interpolate-missing", "--strict") == 4


def test_credible_from_saved_fit(data_file, tmp_path):
    assert run_fit(data_file, tmp_path) == 0
    fit_json = str(tmp_path / "fit.json")

    assert main(["credible", fit_json, "--draws", "1000", "--out", str(tmp_path / "c05")]) == 0
    assert main(["credible", fit_json, "--draws", "1000", "--alpha", "0.32", "--out", str(tmp_path / "c32")]) == 0

    wide = json.loads((tmp_path / "c05" / "credible.json").read_text())
    narrow = json.loads((tmp_path / "c32" / "credible.json").read_text())
    assert wide["retained"] == math.ceil(0.95 * 1000)
    assert all(
        w["lo"] <= n["lo"] and w["hi"] >= n["hi"] for w, n in zip(wide["bands"], narrow["bands"])
    )
    assert (tmp_path / "c05" / "bands.csv").exists()


def test_credible_rejects_malformed_fit(tmp_path):
    path = tmp_path / "fit.json"
    path.write_text('{"q_hat": 2}')

    assert main(["credible", str(path), "--out", str(tmp_path)]) == 2


SIMULATE = ["simulate", "--f", "f3", "--noise", "iid", "--n", "60", "--M", "2", "--fixed-q", "2"]


def test_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        argv = [*SIMULATE, "--seed", "7", "--threads", "1", "--max-iter", "10", "--out", str(tmp_path / name)]
        assert main(argv) == 0

    for name in ("table1_row.csv", "scenario.json", "distributions.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    scenario = json.loads((tmp_path / "a" / "scenario.json").read_text())
    assert scenario["results"][0]["noise"] == "iid"
    assert scenario["config"]["M"] == 2


@pytest.mark.parametrize("argv", [["--noise", "ar1:1.5"], ["--f", "f9"]])
def test_simulate_rejects_invalid_scenarios(tmp_path, argv):
    base = ["simulate", "--n", "60", "--M", "1", "--threads", "1", "--out", str(tmp_path)]

    assert main([*base, *argv]) == 2
