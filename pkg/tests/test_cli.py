import json
import subprocess
import sys

import pytest

from hocurve.cli import EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, main
from hocurve.fileio import read_curved_mesh


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["fixtures", "bullet", "--h", "1.0", "--out-dir", str(d)]) == EXIT_OK
    return d


def _inputs(d):
    return [str(d / "bullet.msh"), str(d / "bullet_geometry.json"),
            str(d / "bullet_classification.json")]


def test_fixture_files(fixture_dir):
    names = {p.name for p in fixture_dir.iterdir()}
    assert {"bullet.msh", "bullet_geometry.json", "bullet_classification.json"} <= names
    cls = json.loads((fixture_dir / "bullet_classification.json").read_text())
    assert cls["farfield"] == [4]


def test_curve_then_check(fixture_dir, capsys):
    out = fixture_dir / "q2.msh"
    code = main(["curve", *_inputs(fixture_dir), "--degree", "2", "--out", str(out),
                 "--viz-level", "2"])
    assert code == EXIT_OK
    m = read_curved_mesh(out)
    assert m.degree == 2
    rep = json.loads(out.with_suffix(".json").read_text())
    assert rep["convergence"]["converged"] and rep["quality"]["q_S"]["min"] > 0
    assert out.with_suffix(".csv").is_file() and out.with_suffix(".vtu").is_file()
    capsys.readouterr()
    assert main(["check", str(out), *_inputs(fixture_dir)[1:], "--report",
                 str(fixture_dir / "chk.json")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "q^S" in text and "d_inf" in text
    chk = json.loads((fixture_dir / "chk.json").read_text())
    assert chk["quality"]["q_S"]["min"] == pytest.approx(rep["quality"]["q_S"]["min"], rel=1e-12)


def test_not_converged_exit_code(fixture_dir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[solver]\nmax_stages = 1\n")
    out = tmp_path / "nc.msh"
    code = main(["curve", *_inputs(fixture_dir), "--degree", "2", "--config", str(cfg),
                 "--out", str(out)])
    assert code == EXIT_NOT_CONVERGED and out.is_file()


def test_input_errors(fixture_dir, tmp_path, capsys):
    ins = _inputs(fixture_dir)
    assert main(["curve", str(tmp_path / "none.msh"), *ins[1:]]) == EXIT_INPUT
    bad = tmp_path / "bad.msh"
    bad.write_text("$MeshFormat\n9.9 0 8\n$EndMeshFormat\n")
    assert main(["curve", str(bad), *ins[1:]]) == EXIT_INPUT
    assert main(["curve", *ins, "--degree", "7"]) == EXIT_INPUT
    assert main(["fixtures", "bullet", "--h", "-1"]) == EXIT_INPUT
    assert main(["bogus"]) == EXIT_INPUT
    assert main([]) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_console_script_runs():
    r = subprocess.run([sys.executable, "-m", "hocurve.cli", "fixtures"], capture_output=True,
                       text=True)
    assert r.returncode == EXIT_INPUT
