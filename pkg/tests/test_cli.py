import numpy as np
import pytest

from platelab.cli import ConfigError, main, parse_config
from platelab.geometry import write_polygons
from platelab.tables import csv_text

BASE = """\
domain = rectangle 0 0 1 1
lambda = 1.0
mu = 1.0
h = 1.0
target_size = 0.25
load = pure_bending a=1
timestamp = off
"""


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _sq_poly(tmp_path, name="incl.poly", lo=0.25, hi=0.75):
    path = tmp_path / name
    write_polygons(str(path), [np.array(
        [[lo, lo], [hi, lo], [hi, hi], [lo, hi]], dtype=float)])
    return str(path)


# config grammar


def test_parse_config_grammar(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("# comment\n\nkey = value\nnum=3   # trailing\n")
    cfg = parse_config(str(path))
    assert cfg == {"key": "value", "num": "3"}


def test_parse_config_duplicate_key(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("k = 1\nk = 2\n")
    with pytest.raises(ConfigError):
        parse_config(str(path))


def test_parse_config_bad_line(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("just words\n")
    with pytest.raises(ConfigError):
        parse_config(str(path))


def test_csv_text_schema_and_no_timestamp():
    text = csv_text("demo", ["a", "b"], [(1.0, 2.0)], timestamp=False)
    lines = text.splitlines()
    assert lines[0] == "# schema=platelab.demo.v1"
    assert lines[1] == "a,b"
    assert "written=" not in text


# happy paths per subcommand


def test_solve_writes_outputs(tmp_path, capsys):
    cfg = _cfg(tmp_path, BASE)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 2
    state = (tmp_path / "solve_state.csv").read_text()
    assert state.startswith("# schema=platelab.state.v1")
    quants = (tmp_path / "solve_quantities.csv").read_text()
    assert "stability_ratio" in quants and "equilibrium_residual" in quants


def test_work_command(tmp_path):
    cfg = _cfg(tmp_path, BASE)
    assert main(["work", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "work_quantities.csv").exists()


def test_energy_lemma_command(tmp_path):
    poly = _sq_poly(tmp_path)
    cfg = _cfg(tmp_path, BASE + f"inclusion = {poly}\nkappa = 2.0\n")
    assert main(["energy-lemma", "--config", cfg, "--out", str(tmp_path)]) == 0
    text = (tmp_path / "energy_lemma_quantities.csv").read_text()
    assert "lhs" in text and "passed" in text


def test_size_command_soft(tmp_path):
    poly = _sq_poly(tmp_path)
    cfg = _cfg(tmp_path, BASE + f"inclusion = {poly}\nkappa = 0.5\n")
    assert main(["size", "--config", cfg, "--out", str(tmp_path)]) == 0
    text = (tmp_path / "size_quantities.csv").read_text()
    assert "lower" in text and "upper" in text


def test_three_spheres_command(tmp_path):
    cfg = _cfg(tmp_path, BASE.replace("target_size = 0.25",
                                      "target_size = 0.0625")
               + "rho0 = 0.1\nrho = 0.04\npitch = 0.02\n")
    assert main(["three-spheres", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "three_spheres_three_spheres.csv").exists()


def test_lps_command(tmp_path):
    cfg = _cfg(tmp_path, BASE.replace("target_size = 0.25",
                                      "target_size = 0.04")
               + "rho = 0.04\n")
    assert main(["lps", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "lps_rho0p04_lps.csv").exists()


def test_convergence_command(tmp_path):
    cfg = _cfg(tmp_path, BASE + "refinements = 3\n")
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 0
    text = (tmp_path / "convergence_convergence.csv").read_text()
    assert "order" in text


def test_calibrate_command_parallel(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for i, hi in enumerate((0.55, 0.65, 0.75)):
        poly = _sq_poly(tmp_path, f"incl{i}.poly", 0.25, hi)
        (corpus / f"case{i}.cfg").write_text(
            BASE + f"inclusion = {poly}\nkappa = 2.0\nname = case{i}\n")
    cfg = _cfg(tmp_path, f"corpus = {corpus}\ntimestamp = off\n")
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path),
                 "--jobs", "2"]) == 0
    text = (tmp_path / "calibrate_corpus.csv").read_text()
    assert text.count("\n") >= 4  # header, schema, 3 cases
    assert (tmp_path / "calibrate_calibration.csv").exists()


# exit codes


def test_unknown_command_is_config_error(tmp_path):
    cfg = _cfg(tmp_path, BASE)
    assert main(["frobnicate", "--config", cfg]) == 1


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.cfg")]) == 1


def test_help_exits_zero():
    assert main(["--help"]) == 0


def test_kappa_one_rejected(tmp_path):
    poly = _sq_poly(tmp_path)
    cfg = _cfg(tmp_path, BASE + f"inclusion = {poly}\nkappa = 1.0\n")
    assert main(["size", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_inclusion_without_polygons_rejected(tmp_path):
    cfg = _cfg(tmp_path, BASE + "kappa = 2.0\n")
    assert main(["size", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_dense_oracle_cap_is_numerical_failure(tmp_path):
    cfg = _cfg(tmp_path, BASE.replace("target_size = 0.25",
                                      "target_size = 0.05"))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path),
                 "--dense-oracle"]) == 2


def test_lps_zero_field_fails_check(tmp_path):
    cfg = _cfg(tmp_path, BASE.replace("load = pure_bending a=1",
                                      "load = pure_bending a=0")
               .replace("target_size = 0.25", "target_size = 0.04")
               + "rho = 0.04\n")
    assert main(["lps", "--config", cfg, "--out", str(tmp_path)]) == 3


def test_convergence_unreachable_order_fails(tmp_path):
    cfg = _cfg(tmp_path, BASE + "min_order = 99\nwork_rtol = 1e-30\n")
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 3


# output routing and determinism


def test_out_env_var(tmp_path, monkeypatch):
    target = tmp_path / "routed"
    monkeypatch.setenv("PLATELAB_OUT", str(target))
    cfg = _cfg(tmp_path, BASE)
    assert main(["work", "--config", cfg]) == 0
    assert (target / "work_quantities.csv").exists()


def test_out_flag_beats_env(tmp_path, monkeypatch):
    monkeypatch.setenv("PLATELAB_OUT", str(tmp_path / "loser"))
    winner = tmp_path / "winner"
    cfg = _cfg(tmp_path, BASE)
    assert main(["work", "--config", cfg, "--out", str(winner)]) == 0
    assert (winner / "work_quantities.csv").exists()
    assert not (tmp_path / "loser").exists()


def test_full_integration_flag(tmp_path):
    cfg = _cfg(tmp_path, BASE)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path),
                 "--full-integration"]) == 0


def test_reruns_byte_identical(tmp_path):
    poly = _sq_poly(tmp_path)
    text = BASE + f"inclusion = {poly}\nkappa = 2.0\n"
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    for out in (out1, out2):
        cfg = _cfg(tmp_path, text, name=f"{out.name}.cfg")
        assert main(["size", "--config", cfg, "--out", str(out)]) == 0
    for fname in ("size_quantities.csv",):
        assert (out1 / fname).read_bytes() == (out2 / fname).read_bytes()
