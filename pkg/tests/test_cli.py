import csv
import json

import pytest

from pohozaev_lab.cli import EXIT_CONFIG, EXIT_OK, fit_rate, main


def _write(path, text):
    path.write_text(text)
    return str(path)


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def _files_match_manifest(out):
    man = _manifest(out)
    on_disk = sorted(p.name for p in out.iterdir())
    assert on_disk == sorted(man["files"])
    assert not any(name.endswith(".tmp") for name in on_disk)


def test_pohozaev_zero_field(tmp_path):
    out = tmp_path / "p"
    assert main(["pohozaev", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "pohozaev.csv")))
    assert rows and all(float(r["residual"]) == 0.0 for r in rows)
    _files_match_manifest(out)


def test_radial_sweep_and_report(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep", "--mode", "radial", "--eps", "1e-2,1e-3,1e-4", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert len(rows) == 3
    l3 = [float(r["l3_norm"]) for r in rows]
    assert l3[0] > l3[1] > l3[2]
    _files_match_manifest(out)
    rep = tmp_path / "r"
    assert main(["report", str(out / "manifest.json"), "--out", str(rep)]) == EXIT_OK
    assert (rep / "report.csv").is_file()
    _files_match_manifest(rep)


def test_sweep_without_eps_is_config_error(tmp_path):
    out = tmp_path / "bad"
    assert main(["sweep", "--out", str(out)]) == EXIT_CONFIG
    man = _manifest(out)
    assert man["status"] == EXIT_CONFIG and man["error"]["type"] == "ConfigError"


@pytest.mark.parametrize("argv", [["sweep", "--eps", "1e-3,1e-2"], ["sweep", "--eps", "0.5,1e-2"],
                                  ["construct", "--eps", "abc"], ["bogus"], ["report"]])
def test_bad_arguments(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_bad_config_file(tmp_path):
    cfg = _write(tmp_path / "c.ini", "[h]\nspec = poly:1,,\n")
    assert main(["pohozaev", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["pohozaev", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG


def test_report_rejects_other_manifests(tmp_path):
    out = tmp_path / "p"
    main(["pohozaev", "--out", str(out)])
    assert main(["report", str(out / "manifest.json"), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_extract_is_deterministic(tmp_path):
    cfg = _write(tmp_path / "e.ini", "[extract]\nspacing = 1/32\ncenters = 0.40625,0,0; -0.40625,0,0\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["extract", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["extract", "--config", cfg, "--out", str(b)]) == EXIT_OK
    assert (a / "points.csv").read_bytes() == (b / "points.csv").read_bytes()
    assert _manifest(a)["results"]["n_points"] == 2


def test_two_bubble_sweep_reproducible(tmp_path):
    cfg = _write(tmp_path / "s.ini", "[sweep]\nn_samples = 4000\n")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["sweep", "--config", cfg, "--mode", "two-bubble", "--eps", "1e-2,1e-3",
                     "--seed", "5", "--out", str(out)]) == EXIT_OK
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()


def test_green_and_construct(tmp_path):
    g = tmp_path / "g"
    cfg = _write(tmp_path / "g.ini", "[green]\nsource = 0.2,0,0\npoints = 0.2,0,0; -0.3,0,0\n")
    assert main(["green", "--config", cfg, "--out", str(g)]) == EXIT_OK
    exp = json.loads((g / "expansion.json").read_text())
    assert exp["mass"] < 0
    c = tmp_path / "c"
    assert main(["construct", "--eps", "1e-2", "--out", str(c)]) == EXIT_OK
    assert (c / "family.csv").is_file()
    _files_match_manifest(c)


def test_fit_rate():
    import math
    eps = [1e-2, 1e-3, 1e-4]
    C, resid = fit_rate(eps, [3.0 / math.log(1 / e) for e in eps])[:2]
    assert C == pytest.approx(3.0)


def test_star_domain_config(tmp_path):
    cfg = _write(tmp_path / "d.ini", "[domain]\nkind = star_shaped\ncoefficients = 0,0: 1; 2,0: 0.1\n"
                                     "[h]\nspec = constant: 1\n")
    out = tmp_path / "o"
    assert main(["pohozaev", "--config", cfg, "--out", str(out)]) == EXIT_OK
    man = _manifest(out)
    assert man["config"]["domain"] == "star_shaped"
    assert man["results"]["identities"]["P4"]["residual"] == 0.0
