import json
import os

import numpy as np
import pytest

from tndve import io as tio
from tndve.errors import DataWarning, IoError, ParseError, SchemaError
from tndve.estimators import VeCurve
from tndve.montecarlo import CurveSummary, McSummary
from tndve.simulate import Reason, ScenarioConfig, generate_dataset

HEADER = "x1,x2,h,v,c,i,reason,tested\n"


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_round_trip(tmp_path):
    d = generate_dataset(ScenarioConfig(n_subjects=3000, missing_reason_rate=0.2), 5)
    tio.save_dataset_csv(d, tmp_path / "d.csv")
    back = tio.load_dataset_csv(tmp_path / "d.csv")
    assert back == d
    assert (tmp_path / "d.csv").read_text().startswith(HEADER)


def test_h_optional_and_blank(tmp_path):
    p = _write(tmp_path, "x1,x2,v,c,i,reason,tested\n0.7,0,1,0,1,symptoms,1\n0.8,1,0,1,0,cct,0\n")
    d = tio.load_dataset_csv(p)
    assert list(d.h) == [-1, -1]
    assert list(d.reason) == [Reason.SYMPTOMS, Reason.CCT]
    p = _write(tmp_path, HEADER + "0.7,0,,1,0,1,unrelated,1\n")
    assert tio.load_dataset_csv(p).h[0] == -1
    tio.save_dataset_csv(tio.load_dataset_csv(p), tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_text() == HEADER + "0.7,0,,1,0,1,unrelated,1\n"


def test_unknown_reason_becomes_missing(tmp_path):
    p = _write(tmp_path, HEADER + "0.7,0,1,1,0,1,screening,1\n0.6,0,1,1,0,0,symptoms,1\n")
    report = tio.LoadReport()
    with pytest.warns(DataWarning, match="1 unknown reason"):
        d = tio.load_dataset_csv(p, report)
    assert d.reason[0] == Reason.MISSING and report.unknown_reasons == 1 and report.n_rows == 2


def test_out_of_range_age_accepted_with_warning(tmp_path):
    p = _write(tmp_path, HEADER + "0.3,0,1,1,0,1,unrelated,1\n")
    report = tio.LoadReport()
    with pytest.warns(DataWarning, match="outside"):
        d = tio.load_dataset_csv(p, report)
    assert d.x1[0] == 0.3 and report.x1_out_of_range == 1


@pytest.mark.parametrize("row, line", [
    ("abc,0,1,1,0,1,unrelated,1", 2),
    ("0.7,2,1,1,0,1,unrelated,1", 2),
    ("0.7,0,1,1,0,1,unrelated", 2),
    ("0.7,0,1,1,0,1,nottested,1", 2),
    ("0.7,0,1,1,0,1,symptoms,0", 2),
    ("nan,0,1,1,0,1,symptoms,1", 2),
])
def test_parse_errors_carry_line_numbers(tmp_path, row, line):
    p = _write(tmp_path, HEADER + row + "\n")
    with pytest.raises(ParseError) as info:
        tio.load_dataset_csv(p)
    assert info.value.line == line


def test_parse_error_later_line(tmp_path):
    p = _write(tmp_path, HEADER + "0.7,0,1,1,0,1,unrelated,1\n\n0.7,0,1,1,0,x,unrelated,1\n")
    with pytest.raises(ParseError, match="line 4"):
        tio.load_dataset_csv(p)


def test_schema_errors(tmp_path):
    with pytest.raises(SchemaError):
        tio.load_dataset_csv(_write(tmp_path, ""))
    with pytest.raises(SchemaError):
        tio.load_dataset_csv(_write(tmp_path, "x1,x2,v,c,i,tested\n"))
    with pytest.raises(SchemaError):
        tio.load_dataset_csv(_write(tmp_path, "x1,x1,x2,v,c,i,reason,tested\n"))
    with pytest.raises(IoError):
        tio.load_dataset_csv(tmp_path / "absent.csv")
    with pytest.raises(ParseError):
        tio.load_dataset_csv(_write_bytes(tmp_path, b"x1,x2,v,c,i,reason,tested\n\xff\xfe,0\n"))


def _write_bytes(tmp_path, data):
    p = tmp_path / "bin.csv"
    p.write_bytes(data)
    return p


def test_atomic_write_leaves_nothing_on_failure(tmp_path):
    target = tmp_path / "out.txt"
    target.write_text("old")
    with pytest.raises(RuntimeError):
        with tio.atomic_open(target) as fh:
            fh.write("partial")
            raise RuntimeError("interrupted")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["out.txt"]


def test_atomic_write_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(IoError):
        tio.write_text_atomic(blocker / "sub" / "x.txt", "data")


def test_results_table_formats(tmp_path):
    rows = tio.results_rows("high", [McSummary("stratified", 0.39, 0.001, 0.02, 0.021, 0.94, 20.0, 1000, 0),
                                     McSummary("odds_ratio_s", 0.39, -0.003, 0.09, 0.09, 0.95, 1.0, 1000, 0)])
    tio.write_results(rows, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "scenario,estimator,bias,empirical_se,avg_se,coverage,relative_efficiency"
    assert lines[1] == "high,stratified,0.001,0.02,0.021,0.94,20.0"
    tio.write_results(rows, tmp_path / "r.json", "json", {"note": 1})
    payload = json.loads((tmp_path / "r.json").read_text())
    assert payload["results"][1]["estimator"] == "odds_ratio_s" and payload["note"] == 1
    assert "stratified" in tio.format_table(rows)


def test_plot_data_sorted_and_blank(tmp_path):
    curve = VeCurve(np.array([0.8, 0.6, 0.7]), np.array([0.3, np.nan, 0.35]), np.array([0.2, np.nan, 0.25]),
                    np.array([0.4, np.nan, 0.45]), np.array([0.05, np.nan, 0.05]))
    tio.emit_plot_data(curve, tmp_path / "c.csv", truth=1 - np.exp(-0.5))
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "x1,estimate,ci_low,ci_high,truth"
    assert [float(l.split(",")[0]) for l in lines[1:]] == [0.6, 0.7, 0.8]
    assert lines[1].split(",")[1:4] == ["", "", ""]
    assert {l.split(",")[4] for l in lines[1:]} == {repr(float(1 - np.exp(-0.5)))}


def test_plot_data_from_summary(tmp_path):
    grid = np.array([0.6, 0.7])
    s = CurveSummary(estimand="VE_marginal", grid=grid, truth=np.full(2, 0.3935), mean_estimate=np.array([0.39, 0.4]),
                     mean_ci_low=np.array([0.3, 0.31]), mean_ci_high=np.array([0.45, 0.46]),
                     coverage=np.ones(2), empirical_se=np.ones(2), avg_estimated_se=np.ones(2),
                     n_available=np.array([5, 5]), n_replicates=5)
    tio.emit_plot_data(s, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "0.6,0.39,0.3,0.45,0.3935"
    with pytest.raises(ValueError):
        tio.plot_data_text([], [], [], [], [])
