import csv
import json
import subprocess
import sys

import pytest

from gridcert import grids
from gridcert.cli import EXIT_INPUT, EXIT_OK, EXIT_PRECONDITION, EXIT_UNKNOWN, run
from gridcert.grid import grid_to_dict


@pytest.fixture
def files(tmp_path):
    def put(name, data):
        p = tmp_path / name
        p.write_text(json.dumps(data))
        return str(p)

    zero = {"re": 0.0, "im": 0.0}
    return {
        "dir": tmp_path,
        "grid": put("grid.json", grid_to_dict(grids.two_bus())),
        "sec": put("sec.json", {"vmin": 0.9, "vmax": 1.1, "imax": 10.0}),
        "single": put("single.json", {"buses": [{"point": zero}]}),
        "box": put("box.json", {"buses": [{"half_planes": [[1, 0, 0], [-1, 0, 0.3], [0, 1, 0], [0, -1, 0]]}]}),
        "small_box": put("small.json", {"buses": [{"half_planes": [[1, 0, 0], [-1, 0, 0.08], [0, 1, 0], [0, -1, 0]]}]}),
        "template": put("tpl.json", {"kappa_template": True, "buses": [{"half_planes": [[1, 0, 0], [-1, 0, 1], [0, 1, 0], [0, -1, 0]]}]}),
        "low_v": put("low.json", {"v": [{"re": 0.85, "im": 0.0}]}),
        "inj": put("inj.json", {"s": [{"re": -0.2, "im": 0.0}]}),
        "inj_bad": put("inj_bad.json", {"s": [{"re": -0.3, "im": 0.0}]}),
    }


def report(files, name):
    return json.loads((files["dir"] / name).read_text())


def common(files, uncertainty, name):
    return ["--grid", files["grid"], "--security", files["sec"], "--uncertainty", files[uncertainty], "--report", str(files["dir"] / name)]


def test_admissibility_exit_codes(files):
    assert run(["admissibility", *common(files, "single", "a.json"), "--order", "2"]) == EXIT_OK
    r = report(files, "a.json")
    assert r["schema"] == 1 and r["command"] == "admissibility" and r["result"]["result"] == "Admissible"
    assert run(["admissibility", *common(files, "box", "b.json")]) == EXIT_UNKNOWN
    assert report(files, "b.json")["result"]["failure"] == "BoundaryNotExcluded"
    assert run(["admissibility", *common(files, "box", "c.json"), "--initial", files["low_v"]]) == EXIT_PRECONDITION


def test_missing_and_bad_input(files):
    assert run(["admissibility", "--grid", "nope.json", "--security", files["sec"], "--uncertainty", files["single"]]) == EXIT_INPUT
    assert run(["admissibility", *common(files, "template", "x.json")]) == EXIT_INPUT
    assert run(["admissibility"]) == EXIT_INPUT
    (files["dir"] / "broken.json").write_text("{")
    assert run(["vset", "--grid", str(files["dir"] / "broken.json"), "--security", files["sec"]]) == EXIT_INPUT


def test_vset(files):
    out = str(files["dir"] / "v.json")
    assert run(["vset", "--grid", files["grid"], "--security", files["sec"], "--lambda-start", "0.1", "--lambda-step", "0.1", "--report", out]) == EXIT_OK
    r = json.loads(open(out).read())
    assert r["result"]["lambda_star"] == 0.4 and r["result"]["n_aux"] == 3 and len(r["result"]["constraints"]) == 7
    assert run(["vset", "--grid", files["grid"], "--security", files["sec"], "--lambda-start", "0.5", "--lambda-step", "0.1", "--report", out]) == EXIT_UNKNOWN


def test_max_kappa(files):
    assert run(["max-kappa", *common(files, "template", "k.json"), "--resolution", "0.01", "--kappa-max", "1"]) == EXIT_OK
    r = report(files, "k.json")
    assert r["result"]["kappa_star"] == 0.08 and r["result"]["bracket"] == [0.08, 0.09]
    assert run(["max-kappa", *common(files, "single", "k2.json")]) == EXIT_INPUT


def test_oracle_probes(files):
    assert run(["oracle", "paths", *common(files, "box", "p.json"), "--n-paths", "20", "--n-steps", "50", "--csv-dir", str(files["dir"] / "csv")]) == EXIT_OK
    assert report(files, "p.json")["result"]["violations"]
    rows = list(csv.reader(open(files["dir"] / "csv" / "path_0000.csv")))
    assert rows[0] == ["t", "re_v1", "im_v1"] and len(rows) == 52
    assert run(["oracle", "boundary", *common(files, "small_box", "h.json"), "--samples", "5000"]) == EXIT_OK
    assert report(files, "h.json")["result"]["hits"] == []
    assert run(["oracle", "uniqueness", *common(files, "single", "u.json"), "--trials", "50"]) == EXIT_OK
    assert report(files, "u.json")["result"]["collisions"] == []


def test_loadflow(files):
    out = str(files["dir"] / "lf.json")
    assert run(["loadflow", "--grid", files["grid"], "--injection", files["inj"], "--report", out]) == EXIT_OK
    r = json.loads(open(out).read())
    assert abs(r["result"]["v"][0]["re"] - (1 + 0.2**0.5) / 2) < 1e-9
    assert run(["loadflow", "--grid", files["grid"], "--injection", files["inj_bad"], "--report", out]) == EXIT_UNKNOWN
    trace = str(files["dir"] / "trace.csv")
    assert run(["loadflow", "--grid", files["grid"], "--injection", files["inj_bad"], "--steps", "30", "--csv", trace, "--report", out]) == EXIT_UNKNOWN
    assert json.loads(open(out).read())["result"]["status"] == "PathLost"
    assert len(list(csv.reader(open(trace)))) > 2


def test_report_byte_stable(files):
    a, b = str(files["dir"] / "r1.json"), str(files["dir"] / "r2.json")
    for path in (a, b):
        run(["admissibility", "--grid", files["grid"], "--security", files["sec"], "--uncertainty", files["single"], "--no-timings", "--report", path])
    text = open(a).read()
    assert text == open(b).read()
    assert "wall_time" not in text and "NaN" not in text


def test_seeded_oracle_reports_repeat(files):
    outs = []
    for k in range(2):
        name = f"s{k}.json"
        run(["oracle", "paths", *common(files, "box", name), "--n-paths", "10", "--seed", "3", "--no-timings"])
        outs.append((files["dir"] / name).read_text())
    assert outs[0] == outs[1]


def test_console_entry_point(files):
    proc = subprocess.run(
        [sys.executable, "-m", "gridcert.cli", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0 and "gridcert" in proc.stdout
