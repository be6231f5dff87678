import csv
import io
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from sectionflow.cli import build_parser, main
from sectionflow.flow import t_star
from sectionflow.geometry import derive_scales, region_family


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_k_below_two_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--k", "1"])
    assert info.value.code == 2
    assert "k" in capsys.readouterr().err


def test_unknown_check_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "--construction", "section3", "--check", "P6"])
    assert info.value.code == 2


@pytest.mark.parametrize("bad", [["--grid", "0"], ["--density", "-1"], ["--slab", "0"]])
def test_nonpositive_numbers_rejected(bad):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["report", *bad])


def test_list_checks(capsys):
    code, out, _ = _run(["verify", "--construction", "section4", "--list"], capsys)
    assert code == 0
    names = out.split()
    assert names[:2] == ["cutoffs", "P1"] and "P7" in names and "sections" in names


def test_verify_translation_check(capsys):
    code, out, err = _run(["verify", "--construction", "section4", "--k", "2", "--check", "P6"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["passed"] and doc["failed"] == []
    (chk,) = doc["checks"]
    assert chk["name"] == "P6" and chk["status"] == "pass" and chk["value"] < 1e-5
    assert err.startswith("PASS P6")


def test_verify_section3_k4_full_suite(tmp_path, capsys):
    out = tmp_path / "v.json"
    code, _, err = _run(["verify", "--construction", "section3", "--k", "4", "--out", str(out)], capsys)
    assert code == 0, err
    doc = json.loads(out.read_text())
    sec = next(c for c in doc["checks"] if c["name"] == "sections")
    assert sec["value"] <= 3 * derive_scales(4).eps
    assert all(c["status"] == "pass" for c in doc["checks"])


def test_trajectory_passes_marker_at_t_star(capsys):
    code, out, _ = _run(["trajectory", "--k", "2", "--i", "1"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["t", "u", "v", "x", "y"]
    data = np.array(rows[1:], dtype=float)
    p = derive_scales(2)
    fam = region_family(p)
    ts = t_star(p, 1)
    near = data[np.argmin(np.abs(data[:, 0] - ts))]
    assert near[3:] == pytest.approx([p.delta, fam.y_check[0] + p.delta - p.nu], abs=1e-3)
    assert near[1:3] == pytest.approx(fam.R2[0].center)


def test_trajectory_fixed_start_gives_constant_rows(capsys):
    p = derive_scales(4)
    fam = region_family(p)
    y0 = fam.y_check[0] - 0.05
    code, out, _ = _run(["trajectory", "--k", "4", "--x0", "0.1", "--y0", str(y0)], capsys)
    assert code == 0
    data = np.loadtxt(io.StringIO(out), delimiter=",", skiprows=1)
    assert np.all(data[:, 3:] == data[0, 3:])


def test_trajectory_reverse_time_round_trip(tmp_path, capsys):
    fwd = tmp_path / "f.csv"
    x0, y0 = 0.5, region_family(derive_scales(2)).y_check[0] + 0.05
    assert main(["trajectory", "--k", "2", "--x0", str(x0), "--y0", str(y0), "--out", str(fwd)]) == 0
    end = np.loadtxt(fwd, delimiter=",", skiprows=1)[-1]
    code, out, _ = _run(["trajectory", "--k", "2", "--x0", repr(float(end[3])), "--y0", repr(float(end[4])),
                         "--t-end", "-1"], capsys)
    assert code == 0
    data = np.loadtxt(io.StringIO(out), delimiter=",", skiprows=1)
    assert data[0, 0] == -1.0
    assert data[0, 3:] == pytest.approx([x0, y0], abs=1e-6)


@pytest.mark.parametrize("argv", [["--t-end", "0"], ["--i", "5"]])
def test_trajectory_rejects_bad_arguments(argv):
    with pytest.raises(SystemExit):
        main(["trajectory", "--k", "2", *argv])


def test_report_is_deterministic(tmp_path):
    docs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        assert main(["report", "--k", "4", "--grid", "48", "--out", str(path)]) == 0
        docs.append(path.read_bytes())
    assert docs[0] == docs[1]
    doc = json.loads(docs[0])
    for key in ("k", "eps", "sup_outer", "sup_hull", "energy", "sigma_upper"):
        assert key in doc
    assert doc["P_set"]["argmax_outer"] is not None


def test_report_emits_one_pgm_per_requested_slab(tmp_path):
    out = tmp_path / "rep.json"
    argv = ["report", "--k", "4", "--grid", "48", "--out", str(out), "--emit-raster",
            "--raster-slab", "0,3", "--raster-slab", "1,20", "--no-slabs"]
    assert main(argv) == 0
    doc = json.loads(out.read_text())
    assert "slabs" not in doc["P_set"]
    names = sorted(r["path"] for r in doc["rasters"])
    assert names == sorted(f"rep_{s}_a{a}_b{b}.pgm" for s in "PQ" for a, b in ((0, 3), (1, 20)))
    for name in names:
        data = (tmp_path / name).read_bytes()
        assert data.startswith(b"P5\n")


def test_report_default_rasters_are_argmax_slabs(tmp_path):
    out = tmp_path / "rep.json"
    assert main(["report", "--construction", "section3", "--k", "4", "--grid", "64", "--out", str(out),
                 "--emit-raster"]) == 0
    doc = json.loads(out.read_text())
    kinds = [r["set"] for r in doc["rasters"]]
    assert kinds == ["P", "Q"]
    a, b = doc["P_set"]["argmax_outer"]
    assert doc["rasters"][0]["a"] == a and doc["rasters"][0]["b"] == b


def test_report_section3_Q_hull_within_three_eps(capsys):
    code, out, _ = _run(["report", "--construction", "section3", "--k", "4", "--no-slabs"], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["sup_hull"] <= 3 * doc["eps"]


def test_unwritable_output_is_reported(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = _run(["trajectory", "--k", "2", "--out", str(blocker / "sub" / "t.csv")], capsys)
    assert code == 1
    assert str(blocker) in err


@pytest.mark.skipif(shutil.which("sectionflow") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["sectionflow", "verify", "--k", "1"], capture_output=True, text=True)
    assert res.returncode == 2
    res = subprocess.run([sys.executable, "-m", "sectionflow.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
