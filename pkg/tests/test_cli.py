import csv
import json

import pytest

from morphfit.cli import main

from conftest import run_pipeline


def read_body(path):
    return "".join(ln for ln in path.read_text().splitlines(True) if not ln.startswith("#"))


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert err.startswith("morphfit: error kind=")
    return err


def test_full_pipeline(tmp_path):
    out = run_pipeline(tmp_path)
    for name in ("report.csv", "averages.csv", "pvalues.csv"):
        assert (out / name).exists()
    rows = list(csv.DictReader(read_body(out / "report.csv").splitlines()))
    assert len(rows) == 1 * 5 * 2 * 2
    assert all(float(r["rmse"]) >= 0 for r in rows)
    fit_rows = list(csv.DictReader(read_body(tmp_path / "fit.csv").splitlines()))
    assert len(fit_rows) == 16 and "alpha_1" in fit_rows[0]
    assert (tmp_path / "fit.cameras.csv").exists()
    classes = list(csv.DictReader(read_body(tmp_path / "classes.csv").splitlines()))
    assert len(classes) == 5 * 12
    assert {r["core"] for r in classes} <= {"low", "middle", "high"}
    mapping = json.loads((tmp_path / "syn" / "mapping.json").read_text())
    assert "_generator" in mapping and mapping["nasion"] >= 0


def test_rerun_is_byte_identical(tmp_path):
    out = run_pipeline(tmp_path)
    first = {p.name: p.read_bytes() for p in out.rglob("*.csv")}
    run_pipeline(tmp_path)
    second = {p.name: p.read_bytes() for p in out.rglob("*.csv")}
    assert first == second


def test_header_carries_version_and_config(tmp_path):
    run_pipeline(tmp_path, extra=())
    head = (tmp_path / "indices.csv").read_text().splitlines()[:3]
    assert head[0] == "# morphfit 0.1.0"
    assert head[1].startswith("# timestamp ")
    assert head[2].startswith("# config {")


def test_missing_required_flag_is_usage_error(tmp_path, capsys):
    assert main(["fit", "--mapping", "m.json", "--track", "t.csv", "--out", str(tmp_path / "x.csv")]) == 1
    err = error_line(capsys)
    assert "kind=usage" in err and "--model" in err and "usage:" in err
    assert not (tmp_path / "x.csv").exists()


def test_missing_file_kind(tmp_path, capsys):
    assert main(["build-model", "--meshes", str(tmp_path / "nope"), "--out", str(tmp_path / "m")]) == 1
    assert "kind=missing-file" in error_line(capsys)


def test_parse_error_kind(tmp_path, capsys):
    d = tmp_path / "meshes"
    d.mkdir()
    (d / "a.obj").write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3 4\n")
    (d / "b.obj").write_text("v 0 0 0\n")
    assert main(["build-model", "--meshes", str(d), "--out", str(tmp_path / "m")]) == 1
    err = error_line(capsys)
    assert "kind=parse" in err and "a.obj:5" in err


def test_correspondence_error_kind(tmp_path, capsys):
    d = tmp_path / "meshes"
    d.mkdir()
    (d / "a.obj").write_text("v 0 0 0\nv 1 0 0\n")
    (d / "b.obj").write_text("v 0 0 0\n")
    assert main(["build-model", "--meshes", str(d), "--out", str(tmp_path / "m")]) == 1
    err = error_line(capsys)
    assert "kind=correspondence" in err and "mesh 1" in err


def test_validation_error_kind(tmp_path, capsys):
    run_pipeline(tmp_path)
    argv = ["classify", "--indices", str(tmp_path / "indices.csv"), "--confidence", "1.5", "--out", str(tmp_path / "c.csv")]
    assert main(argv) == 1
    assert "kind=validation" in error_line(capsys)


def test_no_partial_outputs_on_failure(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"subjects": [{"subject_id": "ok"}, {"subject_id": "bad", "mouth_height_scale": -1}]}))
    assert main(["synth", "--spec", str(spec), "--poses", "3", "--frames", "4", "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists() or not any((tmp_path / "o").rglob("*.*"))


def test_classify_needs_five(tmp_path, capsys):
    run_pipeline(tmp_path)
    lines = (tmp_path / "indices.csv").read_text().splitlines()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(lines[:-2]) + "\n")
    assert main(["classify", "--indices", str(short), "--out", str(tmp_path / "c.csv")]) == 1
    assert "at least 5" in error_line(capsys)


def test_threads_env_does_not_change_output(tmp_path, monkeypatch):
    out = run_pipeline(tmp_path)
    serial = read_body(out / "report.csv")
    monkeypatch.setenv("MORPHFIT_THREADS", "3")
    run_pipeline(tmp_path)
    assert read_body(out / "report.csv") == serial


@pytest.mark.parametrize("argv", [["--version"]])
def test_version(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 0
    assert "0.1.0" in capsys.readouterr().out
