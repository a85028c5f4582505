import pytest

from fieldroad import __version__
from fieldroad.cli import main
from fieldroad.config import Config, ConfigError, parse_config, parse_text

CBRR4 = 2.26928922534


def _cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ------------------------------------------------------------------ parse_config

def test_minimal_file(tmp_path):
    cfg = parse_config(_cfg(tmp_path, "d = 1\nD = 4\nmu = 1\nnu = 1\nreaction = logistic\n"
                                      "geometry = hyperbola\na = 1\n"))
    assert cfg.geometry == "hyperbola" and cfg.a == 1.0 and cfg.D == 4.0
    assert cfg.hx == Config().hx and cfg.seed == 0
    assert cfg.geometry_obj().kind == "hyperbola"


def test_comments_and_lists():
    cfg = parse_text("# header\nL_values = 5, 10  # trailing\ngeometries = exact_cone:0, hyperbola:1\n"
                     "store_field = yes\n")
    assert cfg.L_values == (5.0, 10.0)
    assert cfg.geometries == (("exact_cone", 0.0), ("hyperbola", 1.0))
    assert cfg.store_field is True


def test_negative_D_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_text("D = -1\n")
    assert exc.value.key == "D" and "D" in str(exc.value)


def test_duplicate_key_cites_both_lines():
    with pytest.raises(ConfigError) as exc:
        parse_text("d = 1\nmu = 1\nd = 2\n")
    assert exc.value.line == 3 and "line 1" in str(exc.value) and "line 3" in str(exc.value)


@pytest.mark.parametrize("text,key,line", [
    ("bogus = 1\n", "bogus", 1),
    ("d = 1\nhx = abc\n", "hx", 2),
    ("outer_bc = periodic\n", "outer_bc", None),
    ("safety = 1.5\n", "safety", None),
    ("hx = 0.3\n", "hx", None),
    ("delta = 2\n", "delta", None),
    ("geometries = cone:1\n", "geometries", None),
])
def test_validation_errors(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_text(text)
    assert exc.value.key == key and exc.value.line == line


def test_missing_equals_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_text("d = 1\n\njust words\n")
    assert exc.value.line == 3


def test_lines_roundtrip():
    cfg = parse_text("geometries = hyperbola:1\nspeeds = 2.5\nD = 5\n")
    assert parse_text("\n".join(cfg.lines())) == cfg


# ------------------------------------------------------------------ main

def _header_ok(path, command):
    lines = path.read_text().splitlines()
    assert lines[0] == f"# fieldroad {__version__}"
    assert lines[1] == f"# command = {command}"
    assert any(l == "# seed = 0" for l in lines)


def test_dispersion_command(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "d = 1\nD = 4\nmu = 1\nnu = 1\nL_values = 10\n")
    assert main(["dispersion", "--config", cfg, "--out", str(out)]) == 0
    _header_ok(out / "speeds.csv", "dispersion")
    rows = dict(l.split(",") for l in (out / "speeds.csv").read_text().splitlines()
                if not l.startswith("#"))
    assert float(rows["c_kpp"]) == 2.0
    assert float(rows["c_brr"]) == pytest.approx(CBRR4, abs=1e-8)
    disp = [l for l in (out / "dispersion.csv").read_text().splitlines() if not l.startswith("#")]
    assert disp[0] == "c,alpha,beta,gamma,eta,eps,residual"
    assert float(disp[1].split(",")[0]) == pytest.approx(CBRR4, abs=1e-8)
    assert float(disp[1].split(",")[-1]) <= 1e-10
    assert "c_brr = 2.26928922" in capsys.readouterr().out


def test_certify_super_below_cbrr(tmp_path, capsys):
    cfg = _cfg(tmp_path, f"c = {0.9 * CBRR4!r}\nkind = conical\n")
    assert main(["certify-super", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "no perturbed witness" in capsys.readouterr().out
    assert "valid: False" in (tmp_path / "certificate.txt").read_text()


def test_certify_super_valid(tmp_path):
    cfg = _cfg(tmp_path, "kind = asymptotic\ngeometry = hyperbola\na = 1\nc_factor = 1.1\n")
    assert main(["certify-super", "--config", cfg, "--out", str(tmp_path)]) == 0
    _header_ok(tmp_path / "margins.csv", "certify-super")


def test_certify_sub(tmp_path):
    cfg = _cfg(tmp_path, "geometry = bump\nL = 20\nc_factor = 0.95\n")
    assert main(["certify-sub", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "Lambda: " in (tmp_path / "certificate.txt").read_text()


def test_usage_and_config_errors(tmp_path, capsys):
    assert main(["nonsense"]) == 2
    assert main(["dispersion", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = _cfg(tmp_path, "D = -1\n")
    assert main(["dispersion", "--config", bad]) == 2
    assert "D" in capsys.readouterr().err


SMALL = ("x_min = -20\nx_max = 20\ny_max = 10\nt_final = 2\nnt_report = 20\n"
         "geometry = hyperbola\na = 1\ndatum_radius = 3\n")


def test_simulate_deterministic(tmp_path):
    cfg = _cfg(tmp_path, SMALL + "store_field = true\n")
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["simulate", "--config", cfg, "--out", str(o), "--seed", "7"]) == 0
    for name in ("road.csv", "field.csv", "diagnostics.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert "# seed = 7" in (outs[0] / "road.csv").read_text().splitlines()


def test_mass_check(tmp_path, capsys):
    cfg = _cfg(tmp_path, SMALL + "n_steps = 2000\n")
    assert main(["mass-check", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert "ok" in capsys.readouterr().out
    _header_ok(tmp_path / "mass.csv", "mass-check")


def test_speed_command(tmp_path):
    cfg = _cfg(tmp_path, "x_min = -100\nx_max = 100\ny_max = 20\nt_final = 30\nnt_report = 40\n"
                         "geometries = exact_cone:0, hyperbola:1\nt_min = 10\n")
    assert main(["speed", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = [l.split(",") for l in (tmp_path / "speeds.csv").read_text().splitlines()
            if not l.startswith("#")]
    assert rows[0][0] == "geometry" and len(rows) == 5
    for r in rows[1:]:
        assert 1.5 < float(r[4]) < 2.6


def test_properties_command(tmp_path, capsys):
    cfg = _cfg(tmp_path, "trials = 2\nn_steps = 100\n")
    assert main(["properties", "--config", cfg, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("passed") == 12 and "2/2 passed" in out
